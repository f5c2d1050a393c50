import math

import numpy as np
import pytest

from singrobin.measures import ProblemData
from singrobin.mesh import build_box_mesh
from singrobin.nonlinearity import Nonlinearity
from singrobin.oracle import fixed_point_exact, path3, random_graph, symmetric_scalar_fixed_point
from singrobin.solver import (
    DataError,
    bracket_solutions,
    discretize,
    manufactured_data,
    renormalized_defect,
    solve,
    solve_fixed_n,
    solve_mixed,
)

INV = Nonlinearity.power(1.0)


def test_path_closed_form():
    u = solve(path3().to_problem(), INV, tol=1e-13).u
    np.testing.assert_allclose(u, 1.0, rtol=1e-10)


def test_path_closed_form_beta2():
    u = solve(path3(beta=(2, 2)).to_problem(), INV, tol=1e-13).u
    np.testing.assert_allclose(u, 1 / math.sqrt(2), rtol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 4, 16])
def test_regularized_stage_closed_form(n):
    # by symmetry u = s 1 with s = 1 / (s + 1/n)
    s = (-1 / n + math.sqrt(1 / n**2 + 4)) / 2
    st = solve_fixed_n(path3().to_problem(), INV, n, tol=1e-13)
    np.testing.assert_allclose(st.u, s, rtol=1e-10)


def test_regularized_sequence_increases():
    rep = solve(path3().to_problem(), INV, schedule=(1, 2, 4, 8, 16), tol=1e-13)
    node = [st.u[0] for st in rep.stages]
    assert node[0] == pytest.approx((math.sqrt(5) - 1) / 2, rel=1e-10)
    assert all(b > a for a, b in zip(node, node[1:-1]))
    gaps = np.diff(node[:-1])
    assert np.all(gaps[1:] < gaps[:-1])
    assert node[-1] == pytest.approx(1.0, rel=1e-10)
    assert rep.monotone


def test_inactive_nonlinearity_is_linear():
    form = path3(h=(0, 0), mu=(0, 1, 0))
    u = solve(form.to_problem(), INV).u
    np.testing.assert_allclose(u, [0.5, 1.0, 0.5], rtol=1e-10)


def test_inactive_nonlinearity_fem(square8):
    d = ProblemData.from_values(square8, f=0.0, h=0.0, atoms=[(40, 1.0)])
    p = discretize(square8, d)
    np.testing.assert_allclose(solve(p, INV).u, p.op(p.load), rtol=1e-10)


def test_validation_before_solve(square1):
    with pytest.raises(DataError) as exc:
        discretize(square1, ProblemData.from_values(square1, f=0.0, h=0.0))
    assert any(v.startswith("data_nontrivial") for v in exc.value.violations)


def test_increasing_g_noted():
    g = Nonlinearity.custom(lambda y: (2 + np.sin(y)) / y, 1.0, 1.0, 3.0)
    rep = solve(path3().to_problem(), g)
    assert any("uniqueness not guaranteed" in n for n in rep.notes)


def test_bracket_pure_power_degenerate():
    p = path3().to_problem()
    lo, hi, viol = bracket_solutions(p, INV, solve(p, INV).u)
    np.testing.assert_allclose(lo, hi)
    assert viol == []


def test_bracket_closed_forms():
    g = Nonlinearity.custom(lambda y: 1.5 / y, 1.0, 1.0, 2.0)
    p = path3().to_problem()
    u = solve(p, g, tol=1e-12).u
    lo, hi, viol = bracket_solutions(p, g, u, tol=1e-12)
    np.testing.assert_allclose(lo, 1.0, rtol=1e-9)
    np.testing.assert_allclose(hi, math.sqrt(2), rtol=1e-9)
    np.testing.assert_allclose(u, math.sqrt(1.5), rtol=1e-9)
    assert viol == [] and np.all(lo > 0)


def test_mixed_additivity():
    p = path3(beta=(1.0, 2.0), h=(1.0, 0.5), mu=(0.1, 0.0, 0.0)).to_problem()
    u_mix = solve(p, Nonlinearity.mixed_power(0.7, 0.7, 0.8, 0.8), tol=1e-12).u
    u_one = solve(p, Nonlinearity.power(0.7, 1.6), tol=1e-12).u
    np.testing.assert_allclose(u_mix, u_one, rtol=1e-9)


def test_mixed_scalar_oracle():
    g = Nonlinearity.mixed_power(1.0, 2.0)
    s = symmetric_scalar_fixed_point(1.0, 1.0, g)
    assert s**3 == pytest.approx(s + 1, rel=1e-12)
    rep = solve_mixed(path3().to_problem(), *g.parts(), tol=1e-13)
    np.testing.assert_allclose(rep.u, s, rtol=1e-12)
    assert all(c["comparison_ok"] and c["envelope_ok"] for c in rep.extras["mixed_checks"])


def test_mixed_inactive():
    form = path3(h=(0, 0), mu=(1, 0, 0))
    rep = solve_mixed(form.to_problem(), Nonlinearity.power(1.0), Nonlinearity.power(2.0))
    np.testing.assert_allclose(rep.u, np.linalg.solve(form.operator, form.mu), rtol=1e-10)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("gamma", [0.5, 2.0])
def test_random_graphs_match_oracle(seed, gamma):
    form = random_graph(30, seed)
    g = Nonlinearity.power(gamma)
    ref = fixed_point_exact(form, g)
    u = solve(form.to_problem(), g, tol=1e-13).u
    np.testing.assert_allclose(u, ref, rtol=1e-10)


def test_newton_and_picard_agree(square8):
    p = discretize(square8, ProblemData.from_values(square8, f=1.0, h="1 + x1"))
    g = Nonlinearity.power(2.0)
    a = solve_fixed_n(p, g, 8, tol=1e-11)
    b = solve_fixed_n(p, g, 8, tol=1e-11, newton=False, max_iter=5000)
    np.testing.assert_allclose(a.u, b.u, rtol=1e-9)


def test_schedule_must_increase():
    with pytest.raises(ValueError):
        solve(path3().to_problem(), INV, schedule=(1, 4, 2))


def test_defect_at_top():
    p = path3().to_problem()
    u = solve(p, INV, tol=1e-13).u
    _, total = renormalized_defect(p, INV, u, float(u.max()))
    assert total <= 10 * 1e-13 * (0 + 2)


def test_defect_half():
    # T_0.5(u) = 0.5 * 1: (L + K) 0.5 1 = (0.5, 0, 0.5) and the source is (1, 0, 1)
    p = path3().to_problem()
    nu, total = renormalized_defect(p, INV, np.ones(3), 0.5)
    np.testing.assert_allclose(nu, [-0.5, 0.0, -0.5], atol=1e-15)
    assert total == pytest.approx(1.0)


def test_manufactured_faces():
    m = build_box_mesh(2, (0, 0), (1, 1), 4)
    d = manufactured_data(m, "1 + x1", INV)
    x = m.vertices
    np.testing.assert_allclose(d.f, 0.0, atol=1e-14)
    left = np.isclose(x[:, 0], 0) & (x[:, 1] > 0) & (x[:, 1] < 1)
    right = np.isclose(x[:, 0], 1) & (x[:, 1] > 0) & (x[:, 1] < 1)
    horiz = (np.isclose(x[:, 1], 0) | np.isclose(x[:, 1], 1)) & (x[:, 0] > 0) & (x[:, 0] < 1)
    np.testing.assert_allclose(d.h[left], 0.0, atol=1e-14)
    np.testing.assert_allclose(d.h[right], 6.0, rtol=1e-14)
    np.testing.assert_allclose(d.h[horiz], (1 + x[horiz, 0]) ** 2, rtol=1e-14)


def test_manufactured_constant():
    m = build_box_mesh(3, (0, 0, 0), (1, 1, 1), 2)
    d = manufactured_data(m, "2", INV, beta=3.0)
    np.testing.assert_allclose(d.f, 0.0, atol=1e-14)
    np.testing.assert_allclose(d.h[m.boundary_vertex_flags], 12.0, rtol=1e-14)


def test_manufactured_rejects_negative_h(square8):
    with pytest.raises(ValueError):
        manufactured_data(square8, "1 + 5*x1", INV, beta=0.1)


def test_manufactured_rejects_nonpositive(square8):
    with pytest.raises(ValueError):
        manufactured_data(square8, "x1 - 0.5", INV)


def test_mms_converges():
    errs = []
    for n in (4, 8, 16):
        m = build_box_mesh(2, (0, 0), (1, 1), n)
        p = discretize(m, manufactured_data(m, "1 + x1", INV))
        e = solve(p, INV).u - (1 + m.vertices[:, 0])
        H = p.form.stiffness_identity + p.form.mass
        errs.append(math.sqrt(e @ H @ e))
    assert errs[0] / errs[1] > 1.8 and errs[1] / errs[2] > 1.8


def test_report_summary_without_timings():
    rep = solve(path3().to_problem(), INV)
    assert "seconds" not in rep.summary()
    assert rep.summary()["n_values"][-1] == "inf"
