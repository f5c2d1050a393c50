"""Dense reference implementation on small weighted graphs and coarse meshes.

Everything here uses explicit dense inverses and plain damped iteration so
that it shares no code path with the production solver.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DiscreteForm",
    "path3",
    "random_graph",
    "green_dense",
    "fixed_point_exact",
    "symmetric_scalar_fixed_point",
    "MAX_DENSE",
]

MAX_DENSE = 2000


@dataclass
class DiscreteForm:
    """Energy u^T (L + K) u with boundary weights S, measure vector mu and boundary h.

    L is Laplacian-like (L 1 = 0), K the kappa part and S the sigma part; on
    graphs K and S are diagonal, for exported meshes they are the boundary
    mass matrices.
    """

    L: np.ndarray
    K: np.ndarray
    S: np.ndarray
    mu: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.L = np.asarray(self.L, dtype=float)
        n = self.L.shape[0]
        self.K = _as_matrix(self.K, n)
        self.S = _as_matrix(self.S, n)
        self.mu = np.asarray(self.mu, dtype=float).reshape(n)
        self.h = np.asarray(self.h, dtype=float).reshape(n)
        if n > MAX_DENSE:
            raise ValueError(f"dense oracle capped at {MAX_DENSE} vertices")

    @property
    def n(self) -> int:
        return self.L.shape[0]

    @property
    def operator(self) -> np.ndarray:
        return self.L + self.K

    def invariant_violations(self, graph: bool = True) -> list[str]:
        out = []
        if not np.allclose(self.L, self.L.T, atol=1e-12):
            out.append("L not symmetric")
        if np.max(np.abs(self.L @ np.ones(self.n))) > 1e-10 * max(1.0, np.abs(self.L).max()):
            out.append("L 1 != 0")
        if graph and np.any(self.L[~np.eye(self.n, dtype=bool)] > 0):
            out.append("positive off-diagonal in L")
        if np.any(np.diag(self.K) < 0) or not np.sum(self.K) > 0:
            out.append("kappa weights must be nonnegative with positive total")
        return out

    def source(self, g, u: np.ndarray) -> np.ndarray:
        """mu + S (h g(u)) with g evaluated only where h > 0."""
        w = np.zeros(self.n)
        act = self.h > 0
        w[act] = self.h[act] * np.asarray(g(u[act]))
        return self.mu + self.S @ w

    @classmethod
    def from_problem(cls, problem) -> "DiscreteForm":
        """Export an assembled mesh problem (anything with op, S, load, h)."""
        form = problem.form
        return cls(
            L=form.stiffness.toarray(),
            K=form.boundary_mass.toarray(),
            S=problem.S.toarray(),
            mu=problem.load,
            h=problem.h,
        )

    def to_problem(self, tol: float = 1e-13, mode: str = "dense"):
        """The same instance as a solver problem."""
        from .greenop import GreenOperator
        from .solver import DiscreteProblem

        op = GreenOperator(self.operator, tol=tol, mode=mode)
        return DiscreteProblem(op=op, load=self.mu.copy(), h=self.h.copy(), S=sp.csr_matrix(self.S),
                               mu_mass=float(self.mu.sum()), form=self)

    def with_(self, **changes) -> "DiscreteForm":
        vals = dict(L=self.L, K=self.K, S=self.S, mu=self.mu, h=self.h)
        vals.update(changes)
        return DiscreteForm(**vals)


def _as_matrix(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.diag(x) if x.ndim == 1 else x.reshape(n, n)


def graph_laplacian(n: int, edges, weights=None) -> np.ndarray:
    L = np.zeros((n, n))
    weights = np.ones(len(edges)) if weights is None else weights
    for (i, j), w in zip(edges, weights):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w
    return L


def path3(beta=(1.0, 1.0), h=(1.0, 1.0), mu=(0.0, 0.0, 0.0)) -> DiscreteForm:
    """Path 0 - 1 - 2 with unit edges; the end vertices carry unit sigma weight."""
    L = graph_laplacian(3, [(0, 1), (1, 2)])
    sigma = np.array([1.0, 0.0, 1.0])
    return DiscreteForm(
        L=L,
        K=sigma * np.array([beta[0], 0.0, beta[1]]),
        S=sigma,
        mu=np.asarray(mu, dtype=float),
        h=np.array([h[0], 0.0, h[1]]),
    )


def random_graph(n: int, seed: int, extra_edges: float = 1.0, boundary_fraction: float = 0.4,
                 mu_scale: float = 1.0, h_scale: float = 1.0) -> DiscreteForm:
    """A connected weighted graph with random admissible data."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    edges = {tuple(sorted((int(perm[k]), int(perm[rng.integers(0, k)])))) for k in range(1, n)}
    for _ in range(int(extra_edges * n)):
        i, j = rng.choice(n, size=2, replace=False)
        edges.add(tuple(sorted((int(i), int(j)))))
    edges = sorted(edges)
    L = graph_laplacian(n, edges, rng.uniform(0.2, 2.0, len(edges)))
    nb = max(1, int(round(boundary_fraction * n)))
    bnd = rng.choice(n, size=nb, replace=False)
    sigma = np.zeros(n)
    sigma[bnd] = rng.uniform(0.1, 1.0, nb)
    beta = np.zeros(n)
    beta[bnd] = rng.uniform(0.2, 2.0, nb)
    h = np.zeros(n)
    h[bnd] = h_scale * rng.uniform(0.0, 2.0, nb)
    mu = mu_scale * rng.uniform(0.0, 1.0, n) * (rng.random(n) < 0.5)
    if not (mu.sum() + (sigma * h).sum()) > 0:
        mu[0] = 1.0
    return DiscreteForm(L=L, K=beta * sigma, S=sigma, mu=mu, h=h)


def green_dense(form: DiscreteForm) -> np.ndarray:
    """(L + K)^-1 by direct elimination."""
    M = form.operator
    if np.linalg.matrix_rank(M) < form.n:
        raise np.linalg.LinAlgError("L + K is singular")
    return np.linalg.inv(M)


def fixed_point_exact(form: DiscreteForm, g, tol: float = 1e-14, max_iter: int = 200000,
                      u0: np.ndarray | None = None) -> np.ndarray:
    """Solve u = G (mu + S h g(u)) by damped iteration with adaptive damping.

    The damping factor is halved whenever a step would leave the positive cone
    where h > 0 or increase the relative residual, and slowly relaxed back
    after accepted steps.
    """
    G = green_dense(form)
    act = form.h > 0

    def phi(v):
        return G @ form.source(g, v)

    u = G @ (form.mu + form.S @ np.where(act, form.h, 0.0)) if u0 is None else np.array(u0, dtype=float)
    u = np.where(act & (u <= 0), 1.0, u)

    def rel_res(v):
        p = phi(v)
        return np.max(np.abs(v - p)) / max(np.max(np.abs(v)), 1e-300), p

    r, p = rel_res(u)
    omega = 1.0
    for _ in range(max_iter):
        if r <= tol:
            return u
        cand = (1 - omega) * u + omega * p
        if np.all(cand[act] > 0):
            rc, pc = rel_res(cand)
            if rc < r:
                u, r, p = cand, rc, pc
                omega = min(1.0, omega * 1.25)
                continue
        omega *= 0.5
        if omega < 1e-12:
            break
    raise RuntimeError(f"oracle fixed point did not converge (relative residual {r:.3e})")


def symmetric_scalar_fixed_point(a: float, c: float, g, lo: float = 1e-12, hi: float = 1e6, tol: float = 1e-15) -> float:
    """Root of a s = c g(s) for decreasing g by bisection.

    Covers instances where the solution is constant, e.g. the path graph with
    equal end data: (L + K) s 1 = s kappa and the source is sigma h g(s).
    """
    f = lambda s: a * s - c * g(s)
    if f(lo) > 0 or f(hi) < 0:
        raise ValueError("no sign change in the bracket")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= tol * hi:
            break
    return 0.5 * (lo + hi)
