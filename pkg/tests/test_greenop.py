import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from singrobin.forms import assemble
from singrobin.greenop import GreenOperator, SolverError, pcg, positivity_floor, solve_linear_robin
from singrobin.measures import ProblemData
from singrobin.mesh import build_box_mesh
from singrobin.oracle import path3


@pytest.fixture
def path_op():
    return GreenOperator(path3().operator)


def test_zero_load(path_op):
    np.testing.assert_array_equal(path_op(np.zeros(3)), 0.0)


def test_path_unit_middle(path_op):
    np.testing.assert_allclose(path_op(np.array([0.0, 1.0, 0.0])), [0.5, 1.0, 0.5], rtol=1e-12)


def test_path_ends(path_op):
    np.testing.assert_allclose(path_op(np.array([1.0, 0.0, 1.0])), [1.0, 1.0, 1.0], rtol=1e-12)


def test_path_atom_as_data():
    form = path3(mu=(0.0, 1.0, 0.0))
    np.testing.assert_allclose(GreenOperator(form.operator)(form.mu), [0.5, 1.0, 0.5], rtol=1e-12)


def test_floor(path_op):
    delta, i = positivity_floor(path_op, np.array([0.0, 1.0, 0.0]))
    assert delta == pytest.approx(0.5) and i in (0, 2)


def test_floor_rejects_zero(path_op):
    with pytest.raises(ValueError):
        positivity_floor(path_op, np.zeros(3))


def test_floor_unit_square(square8):
    from singrobin.measures import interior_load

    d = ProblemData.from_values(square8, f=1.0, beta=1.0)
    delta, i = positivity_floor(GreenOperator(assemble(square8, d)), interior_load(square8, d))
    assert delta > 0 and 0 <= i < square8.n_vertices


def test_dense_and_iterative_agree(cube2, rng):
    form = assemble(cube2, ProblemData.from_values(cube2, beta="1 + x2"))
    b = rng.random(cube2.n_vertices)
    u1 = GreenOperator(form)(b)
    u2 = GreenOperator(form, mode="dense")(b)
    np.testing.assert_allclose(u1, u2, rtol=1e-10)


def test_singular_operator_detected(square1):
    form = assemble(square1, ProblemData.from_values(square1, beta=0.0))
    with pytest.raises(SolverError):
        GreenOperator(form, mode="dense")


def test_unknown_mode(path_op):
    with pytest.raises(ValueError):
        GreenOperator(path_op.matrix, mode="magic")


def test_pcg_iteration_budget():
    K = sp.diags([-1, 2.001, -1], [-1, 0, 1], shape=(200, 200)).tocsr()
    with pytest.raises(SolverError, match="did not reach"):
        pcg(K, np.ones(200), max_iter=3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_green_symmetry(seed):
    rng = np.random.default_rng(seed)
    m = build_box_mesh(2, (0, 0), (1, 1), 5)
    op = GreenOperator(assemble(m, ProblemData.from_values(m, beta=rng.uniform(0.1, 3))))
    b1, b2 = rng.random((2, m.n_vertices))
    lhs, rhs = b2 @ op(b1), b1 @ op(b2)
    assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_green_positive(seed):
    rng = np.random.default_rng(seed)
    m = build_box_mesh(2, (0, 0), (1, 1), 4)
    op = GreenOperator(assemble(m, ProblemData.from_values(m, beta=1.0)), mode="dense")
    b = rng.random(m.n_vertices) * (rng.random(m.n_vertices) < 0.3)
    b[0] += 0.1
    assert np.all(op(b) > 0)


def test_linear_robin_constant_solution(square8):
    # f = 0, beta = 1, h g = 1 gives u = 1 exactly in the discrete space
    u = solve_linear_robin(square8, ProblemData.from_values(square8, f=0.0, beta=1.0, h=1.0), 1.0)
    np.testing.assert_allclose(u, 1.0, rtol=1e-10)


def test_iterations_recorded(square8):
    op = GreenOperator(assemble(square8, ProblemData.from_values(square8)))
    op(np.ones(square8.n_vertices))
    assert len(op.iterations) == 1 and op.iterations[0] > 0
