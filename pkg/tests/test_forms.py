import numpy as np
import pytest

from singrobin.forms import assemble, energy, norm_equivalence_bounds, stiffness_matrix
from singrobin.measures import ProblemData
from singrobin.mesh import build_box_mesh
from singrobin.oracle import path3


def test_constants_in_kernel(square1):
    A = stiffness_matrix(square1)
    assert np.all(A @ np.ones(4) == 0)


def test_stiffness_unit_square_values(square1):
    # every vertex of the two-triangle square has a unit diagonal entry
    A = stiffness_matrix(square1).toarray()
    np.testing.assert_allclose(np.diag(A), [1, 1, 1, 1])
    np.testing.assert_allclose(A, A.T)


def test_boundary_mass_total(square8):
    form = assemble(square8, ProblemData.from_values(square8, beta=1.0))
    one = np.ones(square8.n_vertices)
    assert one @ form.boundary_mass @ one == pytest.approx(4.0, rel=1e-14)


def test_coefficient_linearity(square8):
    ns = square8.n_simplices
    A1 = stiffness_matrix(square8)
    A2 = stiffness_matrix(square8, np.broadcast_to(2 * np.eye(2), (ns, 2, 2)))
    assert abs(A2 - 2 * A1).max() < 1e-13


def test_non_elliptic_coefficient(square1):
    a = np.broadcast_to(np.diag([1.0, -1.0]), (2, 2, 2))
    with pytest.raises(ValueError, match="not elliptic"):
        stiffness_matrix(square1, a)


def test_energy_constant(square8):
    form = assemble(square8, ProblemData.from_values(square8, beta=1.0))
    one = np.ones(square8.n_vertices)
    assert energy(form, one, one) == pytest.approx(4.0, rel=1e-14)
    assert energy(form, 0 * one, 0 * one) == 0.0


def test_energy_oracle_path():
    assert energy(path3(), np.ones(3), np.ones(3)) == pytest.approx(2.0, abs=1e-15)


def test_energy_shape_mismatch(square1):
    form = assemble(square1, ProblemData.from_values(square1))
    with pytest.raises(ValueError):
        energy(form, np.ones(3), np.ones(4))


def test_energy_symmetric(cube2, rng):
    d = ProblemData.from_values(cube2, beta="1 + x1", a=[["2", "0.5", "0"], ["0.5", "1", "0"], ["0", "0", "1 + x3"]])
    form = assemble(cube2, d)
    u, v = rng.standard_normal((2, cube2.n_vertices))
    assert energy(form, u, v) == pytest.approx(energy(form, v, u), rel=1e-12)
    assert energy(form, u, u) > 0


def test_norm_bounds_beta_zero(square8):
    lo, hi = norm_equivalence_bounds(assemble(square8, ProblemData.from_values(square8, beta=0.0)))
    assert lo < 1e-6 and hi > 0


def test_norm_bounds_positive(square8):
    lo, hi = norm_equivalence_bounds(assemble(square8, ProblemData.from_values(square8, beta=1.0)))
    assert 0 < lo <= hi


def test_norm_bounds_beta_scaling(square8):
    _, hi1 = norm_equivalence_bounds(assemble(square8, ProblemData.from_values(square8, beta=1.0)))
    _, hi4 = norm_equivalence_bounds(assemble(square8, ProblemData.from_values(square8, beta=4.0)))
    assert hi1 <= hi4 <= 2 * hi1


def test_norm_bounds_sparse_path():
    m = build_box_mesh(2, (0, 0), (1, 1), 6)
    form = assemble(m, ProblemData.from_values(m, beta=1.0))
    dense = norm_equivalence_bounds(form)
    sparse = norm_equivalence_bounds(form, dense_limit=10)
    np.testing.assert_allclose(sparse, dense, rtol=1e-6)


def test_zero_energy_only_for_zero(square8):
    # with beta > 0 on part of the boundary the kernel is trivial
    d = ProblemData.from_values(square8, beta="x1")
    form = assemble(square8, d)
    w = np.linalg.eigvalsh(form.operator.toarray())
    assert w[0] > 1e-8


def test_norm_bounds_hold_on_random_vectors(square8, rng):
    form = assemble(square8, ProblemData.from_values(square8, beta="1 + x1"))
    lo, hi = norm_equivalence_bounds(form)
    H = form.stiffness_identity + form.mass
    for u in rng.standard_normal((20, square8.n_vertices)):
        e = np.sqrt(energy(form, u, u))
        h1 = np.sqrt(u @ H @ u)
        assert lo * h1 * (1 - 1e-10) <= e <= hi * h1 * (1 + 1e-10)


def test_assembly_additive_over_simplices(square1):
    from singrobin.mesh import load_mesh

    full = stiffness_matrix(square1).toarray()
    parts = np.zeros_like(full)
    for s in square1.simplices:
        pts = "\n".join(" ".join(map(str, square1.vertices[i])) for i in s)
        local = stiffness_matrix(load_mesh(f"2 3 1 0\n{pts}\n0 1 2\n")).toarray()
        parts[np.ix_(s, s)] += local
    np.testing.assert_allclose(parts, full, atol=1e-15)
