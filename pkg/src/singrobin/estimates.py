"""Quantitative checks on solved fields: energy bounds, tails, exponents, stability."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .forms import energy
from .mesh import Mesh
from .measures import ProblemData, interior_load
from .nonlinearity import Nonlinearity, truncate

__all__ = [
    "EstimateVerdict",
    "check_energy_truncation",
    "check_power_energy",
    "ratios_within",
    "tail_exponent",
    "weak_solution_exponents",
    "check_stability",
    "comparison_gap",
    "comparison_batch",
    "lumped_weights",
]


@dataclass
class EstimateVerdict:
    """lhs <= rhs (1 + tol) + allowance; ``slack`` is the raw ratio lhs / rhs."""

    name: str
    lhs: float
    rhs: float
    tol: float = 0.0
    allowance: float = 0.0
    context: dict = field(default_factory=dict)

    @property
    def slack(self) -> float:
        if self.rhs == 0:
            return 0.0 if self.lhs <= 0 else math.inf
        return self.lhs / self.rhs

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs * (1 + self.tol) + self.allowance)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["slack"] = self.slack
        out["passed"] = self.passed
        return out


def _hg(problem, g, u: np.ndarray) -> np.ndarray:
    w = np.zeros(problem.n)
    act = problem.h > 0
    w[act] = problem.h[act] * np.asarray(g(u[act]))
    return w


def check_energy_truncation(problem, g, u: np.ndarray, k_grid=None, tol: float = 1e-6,
                            allowance_constant: float = 1.0) -> list[EstimateVerdict]:
    """E^kappa(T_k u, T_k u) <= k (mu(D) + ||h g(u)||_L1(sigma)) for each k.

    The allowance is ``allowance_constant * mesh_size * rhs`` and vanishes on
    graph instances.
    """
    u = np.asarray(u, dtype=float)
    if k_grid is None:
        top = float(np.max(u))
        k_grid = np.geomspace(top / 64, 2 * top, 10)
    hg = float(np.sum(problem.S @ _hg(problem, g, u)))
    out = []
    for k in k_grid:
        tk = truncate(float(k), u)
        lhs = energy(problem, tk, tk)
        rhs = float(k) * (problem.mu_mass + hg)
        out.append(EstimateVerdict(
            "energy_truncation", lhs, rhs, tol, allowance_constant * problem.mesh_size * rhs,
            {"k": float(k), "mesh_size": problem.mesh_size},
        ))
    return out


def check_power_energy(problem, u: np.ndarray, gamma: float) -> EstimateVerdict:
    """Ratio E^kappa(v, v) / ||h||_L1(sigma) with v = u^((1+gamma)/2); requires mu = 0."""
    u = np.asarray(u, dtype=float)
    if np.any(problem.load != 0) or problem.mu_mass != 0:
        raise ValueError("power energy check needs mu = 0")
    if np.any(u <= 0):
        raise ValueError("power energy check needs u > 0 at every vertex")
    v = u ** ((1 + gamma) / 2)
    lhs = energy(problem, v, v)
    rhs = problem.l1_boundary(problem.h)
    return EstimateVerdict("power_energy", lhs, rhs, context={"gamma": gamma, "mesh_size": problem.mesh_size,
                                                              "c_emp": lhs / rhs})


def ratios_within(values, factor: float = 2.0) -> bool:
    """True when max/min of positive values is at most ``factor``."""
    v = np.asarray(values, dtype=float)
    return bool(np.all(v > 0) and v.max() <= factor * v.min())


def lumped_weights(mesh: Mesh) -> np.ndarray:
    """Row sums of the volume mass matrix (vertex volume shares)."""
    return np.bincount(mesh.simplices.ravel(), np.repeat(mesh.volumes / (mesh.dim + 1), mesh.dim + 1),
                       minlength=mesh.n_vertices)


def tail_exponent(values, weights, r_claim: float, n_grid: int = 40, span: float = 1e4) -> dict:
    """Distribution tail lambda(t) = sum of weights over {value >= t}.

    Returns sup_t t^r lambda(t) over a log grid on [max/span, max], the fitted
    log-log slope of lambda on the upper half of the grid and the table.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if np.any(values < 0) or np.any(weights <= 0):
        raise ValueError("tail needs nonnegative values and positive weights")
    top = float(values.max())
    if top == 0:
        return {"sup": 0.0, "slope": math.nan, "t": [], "lambda": [], "weighted": []}
    t = np.geomspace(top / span, top, n_grid)
    order = np.argsort(values)
    sv, sw = values[order], weights[order]
    tail = np.concatenate([np.cumsum(sw[::-1])[::-1], [0.0]])
    lam = tail[np.searchsorted(sv, t, side="left")]
    weighted = t**r_claim * lam
    upper = slice(n_grid // 2, None)
    mask = lam[upper] > 0
    slope = math.nan
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(t[upper][mask]), np.log(lam[upper][mask]), 1)[0])
    return {"sup": float(weighted.max()), "slope": slope, "t": t.tolist(), "lambda": lam.tolist(),
            "weighted": weighted.tolist()}


def _frac(x) -> Fraction:
    if isinstance(x, (int, Fraction)):
        return Fraction(x)
    return Fraction(str(x)) if isinstance(x, str) else Fraction(x).limit_denominator(10**9)


def weak_solution_exponents(d: int, gamma) -> dict:
    """Integrability exponents for weak solutions and Marcinkiewicz orders.

    p = 2d/(d+2), q = 2(d-1)/d, r = 2(d-1)/(d + gamma(d-2)),
    m_interior = d/(d-2), m_grad = d/(d-1), m_boundary = (d-1)/(d-2).
    Orders with a zero denominator are returned as ``math.inf``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    g = _frac(gamma)
    if not g > 0:
        raise ValueError("gamma must be positive")
    D = Fraction(d)

    def div(a, b):
        return a / b if b != 0 else math.inf

    return {
        "p": 2 * D / (D + 2),
        "q": 2 * (D - 1) / D,
        "r": 2 * (D - 1) / (D + g * (D - 2)),
        "m_interior": div(D, D - 2),
        "m_grad": div(D, D - 1),
        "m_boundary": div(D - 1, D - 2),
        "in_regime": d >= 3,
    }


def check_stability(problem, loads, g, tol: float = 1e-10, solve_kwargs=None) -> dict:
    """|u_n - u| <= G |b_n - b| vertexwise for perturbed interior loads b_n.

    Returns verdicts (lhs = max(|u_n - u| - majorant), rhs = 0 with
    allowance ``tol``), sup-norm differences and whether they decrease strictly.
    """
    from .solver import solve

    if not g.is_nonincreasing():
        raise ValueError("stability check needs a nonincreasing nonlinearity")
    kw = {"tol": 1e-13} | (solve_kwargs or {})
    u = solve(problem, g, **kw).u
    verdicts, sups = [], []
    for j, b in enumerate(loads):
        b = np.asarray(b, dtype=float)
        un = solve(problem.with_load(b), g, **kw).u
        majorant = problem.op(np.abs(b - problem.load))
        excess = float(np.max(np.abs(un - u) - majorant))
        verdicts.append(EstimateVerdict("stability", excess, 0.0, allowance=tol, context={"index": j}))
        sups.append(float(np.max(np.abs(un - u))))
    decreasing = all(b < a for a, b in zip(sups, sups[1:]))
    return {"verdicts": verdicts, "sup_differences": sups, "strictly_decreasing": decreasing}


def comparison_gap(problem_lo, g_lo, problem_hi, g_hi, **solve_kwargs) -> float:
    """max_i (u_lo - u_hi)_i for two solved problems (<= 0 when ordered)."""
    from .solver import solve

    u1 = solve(problem_lo, g_lo, **solve_kwargs).u
    u2 = solve(problem_hi, g_hi, **solve_kwargs).u
    return float(np.max(u1 - u2))


def comparison_batch(mesh: Mesh, n_pairs: int = 50, seed: int = 0, tol: float = 1e-8) -> dict:
    """Random ordered data pairs (f1 <= f2, h1 <= h2, g1 <= g2) on one mesh.

    Both problems share beta; g_i = c_i y^-gamma with c1 <= c2.
    """
    from .forms import assemble
    from .greenop import GreenOperator
    from .solver import DiscreteProblem

    rng = np.random.default_rng(seed)
    flags = mesh.boundary_vertex_flags
    nv = mesh.n_vertices
    gaps = []
    for _ in range(n_pairs):
        beta = np.where(flags, rng.uniform(0.2, 2.0, nv), 0.0)
        f1 = rng.uniform(0, 1, nv) * (rng.random(nv) < 0.6)
        f2 = f1 + rng.uniform(0, 1, nv) * (rng.random(nv) < 0.5)
        h1 = np.where(flags, rng.uniform(0, 1, nv) * (rng.random(nv) < 0.7), 0.0)
        h2 = h1 + np.where(flags, rng.uniform(0, 1, nv) * (rng.random(nv) < 0.5), 0.0)
        if not h1.any():
            h1[np.flatnonzero(flags)[0]] = 0.5
            h2 = np.maximum(h2, h1)
        gamma = float(rng.choice([0.5, 1.0, 2.0]))
        c1 = float(rng.uniform(0.3, 1.0))
        c2 = c1 * float(rng.uniform(1.0, 2.0))
        d1 = ProblemData.from_values(mesh, f=f1, beta=beta, h=h1)
        d2 = d1.replace(f=f2, h=h2)
        form = assemble(mesh, d1)
        op = GreenOperator(form, tol=1e-13, mode="dense" if nv <= 2000 else "iterative")
        probs = []
        for d in (d1, d2):
            b = interior_load(mesh, d)
            probs.append(DiscreteProblem(op, b, d.h, form.sigma_mass, float(b.sum()), mesh.size, mesh, d, form))
        gaps.append(comparison_gap(probs[0], Nonlinearity.power(gamma, c1), probs[1],
                                   Nonlinearity.power(gamma, c2), tol=1e-11))
    gaps = np.array(gaps)
    return {"n_pairs": n_pairs, "max_gap": float(gaps.max()), "violations": int(np.sum(gaps > tol))}
