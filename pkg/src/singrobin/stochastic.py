"""Reflected Brownian motion in boxes and Monte Carlo checks of the path representation.

The process has generator Delta (X = x + sqrt(2) W, reflected at the faces),
which is the diffusion of the energy int grad u . grad v for a = I.  The
boundary local time L is the Skorokhod pushing term; its Revuz measure is the
surface measure, so the killing functional is A = int beta dL.

Within one step the position is simulated exactly (folding a free Gaussian
step into the box).  The local time picked up at a face is not simulated; its
conditional law given the endpoints is known in closed form for a Brownian
bridge, so each step uses the exact conditional expectations

    E[exp(-b dL)]                = 1 - b J
    E[int exp(-b L) dL]          = J
    J = sqrt(pi s / 2) exp((c^2 - a^2) / (2 s)) erfcx((a + b s) / sqrt(2 s))

with s = 2 * step, z0 the start distance to the face, z1 the signed free
endpoint distance, a = z0 + |z1| and c = z0 - z1.  ``local_time_scale``
multiplies L everywhere; its analytic value is 1.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .greenop import solve_linear_robin
from .measures import ProblemData
from .mesh import Mesh

__all__ = [
    "PathConfig",
    "FKEstimate",
    "Calibration",
    "step_reflected",
    "estimate_representation",
    "calibrate_local_time",
    "feller_diagnostic",
    "grid_values",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
# away from the boundary the step is dist^2 / _LAYER (clamped to [dt, max_dt])
_LAYER = 4.0


@dataclass(frozen=True)
class PathConfig:
    dt: float = 1e-4                 # smallest step, used near the boundary
    horizon_eps: float = 1e-3        # stop once the survival weight drops below this
    n_paths: int = 10_000
    seed: int = 0
    local_time_scale: float = 1.0
    max_dt: float = 1e-2             # largest step far from the boundary
    t_cap: float = 1e3               # hard time limit per path

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0 < self.horizon_eps < 1:
            raise ValueError("horizon_eps must lie in (0, 1)")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.max_dt < self.dt:
            raise ValueError("max_dt must be >= dt")

    def with_(self, **changes) -> "PathConfig":
        return replace(self, **changes)


@dataclass
class FKEstimate:
    mean: float
    stderr: float
    n_paths: int
    interior_mean: float = 0.0
    boundary_mean: float = 0.0
    bias_bound: float = 0.0          # bound on the effect of horizon truncation
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean, "stderr": self.stderr, "n_paths": self.n_paths,
            "interior_mean": self.interior_mean, "boundary_mean": self.boundary_mean,
            "bias_bound": self.bias_bound, "notes": list(self.notes),
        }


# ---------------------------------------------------------------- numba core

@numba.njit(cache=True, inline="always")
def _next_u64(state):
    state = state + _GOLDEN
    return state, _mix64(state)


@numba.njit(cache=True, error_model="numpy")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, error_model="numpy")
def _path_state(seed, p):
    """Scrambled start state so that streams of different paths do not overlap."""
    return _mix64(_mix64(np.uint64(seed) + _GOLDEN) ^ _mix64(np.uint64(p) * _GOLDEN + np.uint64(1)))


@numba.njit(cache=True, error_model="numpy")
def _uniform(state):
    state, z = _next_u64(state)
    return state, (float(z >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True, error_model="numpy")
def _normals(state, out):
    """Fill ``out`` with standard normals (Box-Muller)."""
    i = 0
    n = out.shape[0]
    while i < n:
        state, u1 = _uniform(state)
        state, u2 = _uniform(state)
        r = math.sqrt(-2.0 * math.log(u1))
        out[i] = r * math.cos(2.0 * math.pi * u2)
        if i + 1 < n:
            out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        i += 2
    return state


@numba.njit(cache=True, error_model="numpy")
def _erfcx(z):
    if z < 20.0:
        return math.exp(z * z) * math.erfc(z)
    iz2 = 1.0 / (z * z)
    return (1.0 - 0.5 * iz2 * (1.0 - 1.5 * iz2 * (1.0 - 2.5 * iz2 * (1.0 - 3.5 * iz2)))) / (z * math.sqrt(math.pi))


@numba.njit(cache=True, error_model="numpy")
def _bridge_local_time(z0, z1, s, b):
    """J = E[(1 - exp(-b dL)) / b] given start distance z0 and free endpoint z1."""
    a = z0 + abs(z1)
    c = z0 - z1
    expo = (c * c - a * a) / (2.0 * s)
    if expo < -40.0:
        return 0.0
    return math.sqrt(math.pi * s / 2.0) * math.exp(expo) * _erfcx((a + b * s) / math.sqrt(2.0 * s))


@numba.njit(cache=True, error_model="numpy")
def _fold(y, lo, hi):
    for k in range(y.shape[0]):
        while y[k] < lo[k] or y[k] > hi[k]:
            if y[k] < lo[k]:
                y[k] = 2.0 * lo[k] - y[k]
            if y[k] > hi[k]:
                y[k] = 2.0 * hi[k] - y[k]


@numba.njit(cache=True, error_model="numpy")
def _interp(vals, n, lo, hi, x, xi, order, strides):
    """P1 interpolation on the Kuhn subdivision of a uniform n^d grid.

    ``xi``, ``order`` and ``strides`` are scratch arrays of length d.
    """
    d = x.shape[0]
    base = 0
    stride = 1
    for k in range(d):
        t = (x[k] - lo[k]) / (hi[k] - lo[k]) * n
        i = int(math.floor(t))
        if i < 0:
            i = 0
        if i > n - 1:
            i = n - 1
        xi[k] = min(max(t - i, 0.0), 1.0)
        strides[k] = stride
        base += i * stride
        stride *= n + 1
        order[k] = k
    for i in range(1, d):          # insertion sort, descending xi
        j = i
        while j > 0 and xi[order[j]] > xi[order[j - 1]]:
            tmp = order[j]
            order[j] = order[j - 1]
            order[j - 1] = tmp
            j -= 1
    cur = base
    val = (1.0 - xi[order[0]]) * vals[cur]
    for j in range(d):
        cur += strides[order[j]]
        nxt = xi[order[j + 1]] if j + 1 < d else 0.0
        val += (xi[order[j]] - nxt) * vals[cur]
    return val


@numba.njit(cache=True, parallel=True, error_model="numpy", fastmath={"contract", "afn", "arcp", "nsz", "reassoc"})
def _paths(x0, lo, hi, n, f, q, beta, f_zero, q_zero, beta_const, c_scale, dt, max_dt, eps, t_end, t_cap,
           seed, n_paths, interior, boundary, weight):
    d = x0.shape[0]
    for p in numba.prange(n_paths):
        state = _path_state(seed, p)
        x = x0.copy()
        y = np.empty(d)
        pt = np.empty(d)
        z = np.empty(d)
        free = np.empty(d)
        xi = np.empty(d)
        order = np.empty(d, dtype=np.int64)
        strides = np.empty(d, dtype=np.int64)
        w = 1.0
        t = 0.0
        acc_i = 0.0
        acc_b = 0.0
        f_old = 0.0 if f_zero else _interp(f, n, lo, hi, x, xi, order, strides)
        while t < t_end and t < t_cap and w >= eps:
            dist = np.inf
            for k in range(d):
                dist = min(dist, x[k] - lo[k], hi[k] - x[k])
            step = max(dt, min(max_dt, dist * dist / _LAYER))
            if t + step > t_end:
                step = t_end - t
            state = _normals(state, z)
            sd = math.sqrt(2.0 * step)
            for k in range(d):
                free[k] = x[k] + sd * z[k]
                y[k] = free[k]
            _fold(y, lo, hi)
            s = 2.0 * step
            kill = 1.0
            inc = 0.0
            for k in range(d):
                for side in range(2):
                    if side == 0:
                        z0 = x[k] - lo[k]
                        z1 = free[k] - lo[k]
                        face = lo[k]
                    else:
                        z0 = hi[k] - x[k]
                        z1 = hi[k] - free[k]
                        face = hi[k]
                    span = z0 + abs(z1)
                    if (z0 - z1) * (z0 - z1) - span * span < -80.0 * s:
                        continue        # far from this face: negligible local time
                    for m in range(d):
                        pt[m] = y[m]
                    pt[k] = face
                    if beta_const >= 0.0:
                        b = c_scale * beta_const
                    else:
                        b = c_scale * _interp(beta, n, lo, hi, pt, xi, order, strides)
                    J = _bridge_local_time(z0, z1, s, b)
                    if J == 0.0:
                        continue
                    if not q_zero:
                        inc += w * kill * c_scale * _interp(q, n, lo, hi, pt, xi, order, strides) * J
                    kill *= 1.0 - b * J
            f_new = 0.0 if f_zero else _interp(f, n, lo, hi, y, xi, order, strides)
            acc_i += 0.5 * step * w * (f_old + kill * f_new)
            acc_b += inc
            w *= kill
            for k in range(d):
                x[k] = y[k]
            f_old = f_new
            t += step
        interior[p] = acc_i
        boundary[p] = acc_b
        weight[p] = w


# ------------------------------------------------------------- python layer

def grid_values(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Reorder vertex values of a Kuhn box mesh into grid order (first axis fastest)."""
    if mesh.box is None:
        raise ValueError("Monte Carlo needs a generated box mesh")
    box = mesh.box
    n = int(box.divisions)
    lo = np.asarray(box.lower, dtype=float)
    hi = np.asarray(box.upper, dtype=float)
    idx = np.rint((mesh.vertices - lo) / (hi - lo) * n).astype(np.int64)
    flat = np.zeros(mesh.n_vertices, dtype=np.int64)
    stride = 1
    for k in range(mesh.dim):
        flat += idx[:, k] * stride
        stride *= n + 1
    if mesh.n_vertices != (n + 1) ** mesh.dim or np.unique(flat).size != mesh.n_vertices:
        raise ValueError("mesh vertices do not form the full uniform grid of its box")
    out = np.empty(mesh.n_vertices)
    out[flat] = np.asarray(values, dtype=float)
    return out


def step_reflected(x, dw, lower, upper, dt: float, local_time_scale: float = 1.0):
    """One reflected step of X = x + sqrt(2) W.

    ``dw`` is the Brownian increment over ``dt``.  Returns the folded position
    and, per face (ordered lower_0, upper_0, lower_1, ...), the expected local
    time picked up during the step given both endpoints.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo = np.atleast_1d(np.asarray(lower, dtype=float))
    hi = np.atleast_1d(np.asarray(upper, dtype=float))
    if np.any(x < lo) or np.any(x > hi):
        raise ValueError("start point outside the box")
    free = x + math.sqrt(2.0) * np.atleast_1d(np.asarray(dw, dtype=float))
    y = free.copy()
    _fold(y, lo, hi)
    s = 2.0 * dt
    inc = np.zeros(2 * x.size)
    for k in range(x.size):
        inc[2 * k] = local_time_scale * _bridge_local_time(x[k] - lo[k], free[k] - lo[k], s, 0.0)
        inc[2 * k + 1] = local_time_scale * _bridge_local_time(hi[k] - x[k], hi[k] - free[k], s, 0.0)
    return y, inc


def _run(mesh: Mesh, x, f, q, beta, cfg: PathConfig, t_end: float = math.inf):
    box = mesh.box
    lo = np.asarray(box.lower, dtype=float)
    hi = np.asarray(box.upper, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape != (mesh.dim,) or np.any(x < lo) or np.any(x > hi):
        raise ValueError(f"probe point {x.tolist()} outside the box")
    n = cfg.n_paths
    interior, boundary, weight = np.zeros(n), np.zeros(n), np.zeros(n)
    f, q, beta = (np.asarray(v, dtype=float) for v in (f, q, beta))
    bvals = beta[mesh.boundary_vertex_flags]
    beta_const = float(bvals[0]) if np.all(bvals == bvals[0]) else -1.0
    with warnings.catch_warnings():
        # numba reports an outdated TBB once and falls back to another threading layer
        warnings.filterwarnings("ignore", message=".*TBB.*", category=numba.NumbaWarning)
        _paths(x, lo, hi, int(box.divisions), grid_values(mesh, f), grid_values(mesh, q), grid_values(mesh, beta),
               not np.any(f), not np.any(q), beta_const, float(cfg.local_time_scale), float(cfg.dt),
               float(cfg.max_dt), float(cfg.horizon_eps), float(t_end), float(cfg.t_cap),
               int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, n, interior, boundary, weight)
    return interior, boundary, weight


def _check_mc_data(mesh: Mesh, data: ProblemData) -> list:
    notes = []
    d = mesh.dim
    if not np.allclose(data.coeff_a, np.eye(d)):
        raise ValueError("Monte Carlo supports only a = I")
    if np.any(data.F != 0):
        raise ValueError("Monte Carlo does not represent the divergence part of mu")
    if data.atoms:
        notes.append("atoms excluded from the Monte Carlo estimate")
    beta = data.beta[mesh.boundary_vertex_flags]
    if not np.any(beta > 0) or np.any(beta < 0):
        raise ValueError("Monte Carlo needs beta >= 0 with positive mass")
    return notes


def estimate_representation(x, mesh: Mesh, data: ProblemData, g, u_field: np.ndarray, cfg: PathConfig) -> FKEstimate:
    """Monte Carlo estimate of the path representation at ``x`` with g(u) frozen at ``u_field``."""
    notes = _check_mc_data(mesh, data)
    u_field = np.asarray(u_field, dtype=float)
    act = mesh.boundary_vertex_flags & (data.h > 0)
    if np.any(u_field[act] <= 0):
        raise ValueError("u_field must be strictly positive on the boundary where h > 0")
    q = np.zeros(mesh.n_vertices)
    if g is not None:
        q[act] = data.h[act] * np.asarray(g(u_field[act]))
    interior, boundary, weight = _run(mesh, x, data.f, q, data.beta, cfg)
    total = interior + boundary
    n = cfg.n_paths
    stderr = float(total.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    bound = float(np.max(np.abs(u_field))) if u_field.size else 0.0
    return FKEstimate(
        mean=float(total.mean()), stderr=stderr, n_paths=n,
        interior_mean=float(interior.mean()), boundary_mean=float(boundary.mean()),
        bias_bound=float(weight.mean()) * bound, notes=notes,
    )


@dataclass
class Calibration:
    local_time_scale: float
    stderr: float                   # stderr of the calibrated constant
    fem_value: float
    mc_value: float
    mc_stderr: float
    probe: list
    dt: float
    half_dt_scale: float | None = None

    @property
    def drift(self) -> float | None:
        if self.half_dt_scale is None:
            return None
        return abs(self.half_dt_scale - self.local_time_scale) / self.local_time_scale

    def to_dict(self) -> dict:
        return {
            "local_time_scale": self.local_time_scale, "stderr": self.stderr, "fem_value": self.fem_value,
            "mc_value": self.mc_value, "mc_stderr": self.mc_stderr, "probe": self.probe, "dt": self.dt,
            "half_dt_scale": self.half_dt_scale, "drift": self.drift,
        }


def calibration_data(mesh: Mesh, beta_const: float) -> ProblemData:
    """Linear reference instance for calibration: f = 1, h = 1, constant beta, g = 1."""
    return ProblemData.from_values(mesh, f=1.0, beta=float(beta_const), h=1.0)


def _calibrate_once(mesh: Mesh, data: ProblemData, fem_value: float, probe, cfg: PathConfig, bracket):
    """Secant iteration on c -> MC(c) - FEM with common random numbers."""
    one = lambda y: np.ones_like(np.asarray(y, dtype=float))
    u_ref = np.ones(mesh.n_vertices)
    lo, hi = bracket

    def mc(c):
        return estimate_representation(probe, mesh, data, one, u_ref, cfg.with_(local_time_scale=c))

    c0, c1 = 1.0, 1.1
    e0, e1 = mc(c0), mc(c1)
    r0, r1 = e0.mean - fem_value, e1.mean - fem_value
    for _ in range(30):
        if r1 == r0:
            break
        slope = (r1 - r0) / (c1 - c0)
        c2 = c1 - r1 / slope
        if not lo <= c2 <= hi:
            raise RuntimeError(
                f"calibration failed: no local time scale in [{lo}, {hi}] matches the reference {fem_value:.6g} "
                f"(Monte Carlo gives {e0.mean:.6g} at {c0:.4g} and {e1.mean:.6g} at {c1:.4g})"
            )
        c0, e0, r0 = c1, e1, r1
        c1 = c2
        e1 = mc(c1)
        r1 = e1.mean - fem_value
        if abs(c1 - c0) <= 1e-6 * abs(c1):
            break
    slope = (r1 - r0) / (c1 - c0) if c1 != c0 else 0.0
    c_err = e1.stderr / abs(slope) if slope != 0 else math.inf
    return c1, c_err, e1


def calibrate_local_time(mesh: Mesh, cfg: PathConfig, beta_const: float = 1.0, probe=None,
                         bracket=(0.25, 4.0), check_half_dt: bool = True) -> Calibration:
    """Fit the local time scale so the Monte Carlo value at ``probe`` matches the FEM value.

    The reference instance is the linear problem with f = 1, h = 1 and g = 1;
    with common random numbers the estimate is a smooth function of the scale
    and a root finder is used.  With ``check_half_dt`` the fit is repeated at
    dt / 2 to measure drift.
    """
    if not beta_const > 0:
        raise ValueError("calibration needs a positive constant beta")
    box = mesh.box
    if probe is None:
        probe = 0.5 * (np.asarray(box.lower) + np.asarray(box.upper))
    probe = np.asarray(probe, dtype=float)
    data = calibration_data(mesh, beta_const)
    u_fem = solve_linear_robin(mesh, data, 1.0)
    fem_value = float(mesh.interpolate(u_fem, probe[None, :])[0])
    c, c_err, est = _calibrate_once(mesh, data, fem_value, probe, cfg, bracket)
    cal = Calibration(c, c_err, fem_value, est.mean, est.stderr, probe.tolist(), cfg.dt)
    if check_half_dt:
        cal.half_dt_scale = _calibrate_once(mesh, data, fem_value, probe, cfg.with_(dt=cfg.dt / 2), bracket)[0]
    return cal


def feller_diagnostic(mesh: Mesh, beta: np.ndarray, t_values, probes, cfg: PathConfig) -> list[dict]:
    """For each t the largest probe estimate of E_x(1 - exp(-A_t)) with its stderr."""
    beta = np.asarray(beta, dtype=float)
    zeros = np.zeros(mesh.n_vertices)
    out = []
    for t in t_values:
        best = {"t": float(t), "value": 0.0, "stderr": 0.0, "probe": None}
        if t > 0 and np.any(beta > 0):
            for x in probes:
                _, _, w = _run(mesh, x, zeros, zeros, beta, cfg.with_(horizon_eps=1e-300), t_end=float(t))
                v = 1.0 - w
                m = float(v.mean())
                if best["probe"] is None or m > best["value"]:
                    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
                    best = {"t": float(t), "value": m, "stderr": se, "probe": [float(c) for c in x]}
        out.append(best)
    return out
