"""Problem data: the interior measure, boundary coefficients and their discretization.

The interior measure is ``mu = f dx - div(F) + sum of vertex atoms``; it is
paired with a hat function ``phi_i`` as

    <mu, phi_i> = int f phi_i dx + int F . grad(phi_i) dx + atom mass at vertex i.

``beta`` and ``h`` live on boundary vertices and are interpolated linearly on
boundary facets.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _p1
from .expressions import parse
from .mesh import Mesh

__all__ = [
    "ProblemData",
    "validate_data",
    "interior_load",
    "boundary_load",
    "sigma_mass",
    "weighted_boundary_mass",
    "volume_mass",
    "mu_total",
    "boundary_integral",
]


@dataclass
class ProblemData:
    f: np.ndarray                      # (nv,) density at vertices
    F: np.ndarray                      # (ns, d) piecewise constant flux field
    beta: np.ndarray                   # (nv,) zero away from the boundary
    h: np.ndarray                      # (nv,) zero away from the boundary
    coeff_a: np.ndarray                # (ns, d, d)
    atoms: list = field(default_factory=list)   # [(vertex, mass), ...]
    Lambda: float | None = None

    @classmethod
    def from_values(cls, mesh: Mesh, f=0.0, F=None, beta=1.0, h=0.0, a=None, atoms=(), Lambda=None):
        """Build data from constants, expression strings, or per-vertex arrays."""
        nv, ns, d = mesh.n_vertices, mesh.n_simplices, mesh.dim
        centroids = mesh.vertices[mesh.simplices].mean(axis=1)

        def nodal(v):
            if isinstance(v, np.ndarray):
                return np.asarray(v, dtype=float).reshape(nv).copy()
            return parse(v)(mesh.vertices)

        if F is None:
            Fv = np.zeros((ns, d))
        elif isinstance(F, np.ndarray):
            Fv = np.asarray(F, dtype=float).reshape(ns, d)
        else:
            Fv = np.stack([parse(c)(centroids) for c in F], axis=1)
        if a is None:
            av = np.broadcast_to(np.eye(d), (ns, d, d)).copy()
        elif isinstance(a, np.ndarray) and a.ndim == 3:
            av = a.astype(float)
        else:
            av = np.empty((ns, d, d))
            for i in range(d):
                for j in range(d):
                    av[:, i, j] = parse(a[i][j])(centroids)
        flags = mesh.boundary_vertex_flags
        return cls(
            f=nodal(f),
            F=Fv,
            beta=np.where(flags, nodal(beta), 0.0),
            h=np.where(flags, nodal(h), 0.0),
            coeff_a=av,
            atoms=[(int(i), float(m)) for i, m in atoms],
            Lambda=Lambda,
        )

    def replace(self, **changes) -> "ProblemData":
        vals = dict(self.__dict__)
        vals.update(changes)
        return ProblemData(**vals)


def volume_mass(mesh: Mesh) -> sp.csr_matrix:
    m = mesh.dim + 1
    blocks = mesh.volumes[:, None, None] * _p1.mass_reference(m)
    return _p1.scatter(blocks, mesh.simplices, mesh.n_vertices)


def sigma_mass(mesh: Mesh) -> sp.csr_matrix:
    """Boundary mass matrix S_ij = int phi_i phi_j dsigma."""
    m = mesh.dim
    blocks = mesh.facet_measures[:, None, None] * _p1.mass_reference(m)
    return _p1.scatter(blocks, mesh.boundary_facets, mesh.n_vertices)


def weighted_boundary_mass(mesh: Mesh, weight: np.ndarray) -> sp.csr_matrix:
    """int weight phi_i phi_j dsigma with weight piecewise linear (exact)."""
    conn = mesh.boundary_facets
    trip = _p1.triple_reference(mesh.dim)
    w = np.asarray(weight, dtype=float)[conn]                    # (nf, m)
    blocks = mesh.facet_measures[:, None, None] * np.einsum("abc,fc->fab", trip, w)
    return _p1.scatter(blocks, conn, mesh.n_vertices)


def boundary_integral(mesh: Mesh, w: np.ndarray) -> float:
    """int w dsigma for a piecewise linear w given at vertices."""
    w = np.asarray(w, dtype=float)
    return float((mesh.facet_measures * w[mesh.boundary_facets].mean(axis=1)).sum())


def mu_total(mesh: Mesh, data: ProblemData) -> float:
    """mu(D): the flux part integrates to zero against the constant 1."""
    fint = float((mesh.volumes * data.f[mesh.simplices].mean(axis=1)).sum())
    return fint + sum(m for _, m in data.atoms)


def interior_load(mesh: Mesh, data: ProblemData) -> np.ndarray:
    nv = mesh.n_vertices
    b = volume_mass(mesh) @ data.f
    if np.any(data.F):
        grads = _p1.barycentric_gradients(mesh.vertices, mesh.simplices)
        contrib = mesh.volumes[:, None] * np.einsum("sad,sd->sa", grads, data.F)
        b = b + np.bincount(mesh.simplices.ravel(), contrib.ravel(), minlength=nv)
    for vertex, mass in data.atoms:
        if not 0 <= vertex < nv:
            raise ValueError(f"atom at unknown vertex {vertex}")
        b[vertex] += mass
    return b


def boundary_load(mesh: Mesh, w: np.ndarray) -> np.ndarray:
    """b_i = int w phi_i dsigma for nonnegative boundary values w."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError(f"negative boundary weight at vertex {int(np.flatnonzero(w < 0)[0])}")
    return sigma_mass(mesh) @ np.where(mesh.boundary_vertex_flags, w, 0.0)


def validate_data(mesh: Mesh, data: ProblemData, require_nonnegative_f: bool = True) -> list[str]:
    """Return the violated admissibility conditions (empty list when admissible)."""
    out = []
    arrays = {"f": data.f, "F": data.F, "beta": data.beta, "h": data.h, "a": data.coeff_a}
    for name, arr in arrays.items():
        if not np.all(np.isfinite(arr)):
            out.append(f"finite_data: {name} has non-finite entries")
    bflags = mesh.boundary_vertex_flags
    if np.any(data.beta[bflags] < 0):
        out.append("beta_nonnegative: beta < 0 on the boundary")
    beta_l1 = boundary_integral(mesh, np.abs(data.beta))
    if not beta_l1 > 0:
        out.append("beta_nontrivial: ||beta||_L1(sigma) = 0; make beta positive on part of the boundary")
    if np.any(data.h[bflags] < 0):
        out.append("h_nonnegative: h < 0 on the boundary")
    if any(m < 0 for _, m in data.atoms):
        out.append("atoms_nonnegative: negative atom mass")
    if any(not 0 <= i < mesh.n_vertices for i, _ in data.atoms):
        out.append("atoms_valid: atom at unknown vertex")
    if require_nonnegative_f and np.any(data.f < 0):
        out.append("f_nonnegative: f < 0 somewhere")
    total = mu_total(mesh, data) + boundary_integral(mesh, np.abs(data.h))
    if not total > 0:
        out.append("data_nontrivial: mu(D) + ||h||_L1(sigma) = 0")
    elif not np.isfinite(total):
        out.append("data_finite: mu(D) + ||h||_L1(sigma) is infinite")

    a = data.coeff_a
    if not np.allclose(a, np.transpose(a, (0, 2, 1)), rtol=0, atol=1e-12):
        out.append("ellipticity: coefficient matrix not symmetric")
    else:
        ev = np.linalg.eigvalsh(a)
        lam = data.Lambda
        if lam is None:
            lam = max(ev.max(), 1.0 / ev.min()) if ev.min() > 0 else np.inf
        if not (ev.min() >= 1.0 / lam - 1e-12 and ev.max() <= lam + 1e-12 and np.isfinite(lam)):
            out.append(f"ellipticity: eigenvalues of a outside [1/Lambda, Lambda] for Lambda={lam}")
    return out
