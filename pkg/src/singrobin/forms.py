"""Stiffness and boundary-perturbed energy forms on P1 spaces."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _p1
from .measures import ProblemData, sigma_mass, volume_mass, weighted_boundary_mass
from .mesh import Mesh

__all__ = ["AssembledForm", "assemble", "stiffness_matrix", "energy", "norm_equivalence_bounds"]


@dataclass(frozen=True)
class AssembledForm:
    """Assembled matrices of one (mesh, data) pair.

    ``stiffness`` is A with coefficient a, ``boundary_mass`` is int beta phi_i phi_j,
    ``mass`` is the volume mass matrix, ``sigma_mass`` the boundary mass with
    beta = 1 and ``stiffness_identity`` the a = I stiffness used for H^1 norms.
    """

    stiffness: sp.csr_matrix
    boundary_mass: sp.csr_matrix
    mass: sp.csr_matrix
    sigma_mass: sp.csr_matrix
    stiffness_identity: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    @cached_property
    def operator(self) -> sp.csr_matrix:
        """A + M_kappa."""
        return (self.stiffness + self.boundary_mass).tocsr()


def stiffness_matrix(mesh: Mesh, coeff_a: np.ndarray | None = None) -> sp.csr_matrix:
    grads = _p1.barycentric_gradients(mesh.vertices, mesh.simplices)
    if coeff_a is None:
        blocks = np.einsum("sad,sbd->sab", grads, grads)
    else:
        coeff_a = np.asarray(coeff_a, dtype=float)
        ev = np.linalg.eigvalsh(0.5 * (coeff_a + np.transpose(coeff_a, (0, 2, 1))))
        bad = np.flatnonzero(ev[:, 0] <= 0)
        if bad.size:
            raise ValueError(f"coefficient a is not elliptic on simplex {int(bad[0])}")
        blocks = np.einsum("sad,sde,sbe->sab", grads, coeff_a, grads)
    blocks *= mesh.volumes[:, None, None]
    return _p1.scatter(blocks, mesh.simplices, mesh.n_vertices)


def assemble(mesh: Mesh, data: ProblemData) -> AssembledForm:
    A_id = stiffness_matrix(mesh)
    a = data.coeff_a
    is_identity = np.array_equal(a, np.broadcast_to(np.eye(mesh.dim), a.shape))
    A = A_id if is_identity else stiffness_matrix(mesh, a)
    return AssembledForm(
        stiffness=A,
        boundary_mass=weighted_boundary_mass(mesh, data.beta),
        mass=volume_mass(mesh),
        sigma_mass=sigma_mass(mesh),
        stiffness_identity=A_id,
    )


def energy(form, u, v) -> float:
    """E^kappa(u, v) = u^T (A + M_kappa) v; ``form`` is anything with ``operator``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != (form.n,) or v.shape != (form.n,):
        raise ValueError(f"field shapes {u.shape}, {v.shape} do not match {form.n} vertices")
    return float(u @ (form.operator @ v))


def norm_equivalence_bounds(form: AssembledForm, dense_limit: int = 2000) -> tuple[float, float]:
    """Extremal square roots of u^T K u / u^T (A_I + M) u.

    Dense generalized eigenvalues for small meshes, Lanczos otherwise.
    """
    K = form.operator
    H = (form.stiffness_identity + form.mass).tocsr()
    if form.n <= dense_limit:
        ev = scipy.linalg.eigh(K.toarray(), H.toarray(), eigvals_only=True)
        lo, hi = ev[0], ev[-1]
    else:
        hi = spla.eigsh(K, k=1, M=H, which="LA", return_eigenvectors=False)[0]
        lo = spla.eigsh(K, k=1, M=H, sigma=0.0, which="LM", return_eigenvectors=False)[0]
    return float(np.sqrt(max(lo, 0.0))), float(np.sqrt(hi))
