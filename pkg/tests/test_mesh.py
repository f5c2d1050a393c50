import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from singrobin.mesh import MeshError, build_box_mesh, dump_mesh, load_mesh, refine_uniform


@pytest.mark.parametrize(
    "dim, divisions, nv, ns, nf, area",
    [(2, 1, 4, 2, 4, 4.0), (3, 1, 8, 6, 12, 6.0), (2, 2, 9, 8, 8, 4.0)],
)
def test_box_counts(dim, divisions, nv, ns, nf, area):
    m = build_box_mesh(dim, [0] * dim, [1] * dim, divisions)
    assert (m.n_vertices, m.n_simplices, len(m.boundary_facets)) == (nv, ns, nf)
    assert m.facet_measures.sum() == pytest.approx(area, rel=1e-14)


def test_unit_square_edges_have_length_one(square1):
    np.testing.assert_allclose(square1.facet_measures, 1.0)


@settings(max_examples=25, deadline=None)
@given(
    dim=st.sampled_from([2, 3]),
    n=st.integers(1, 4),
    lo=st.floats(-3, 3),
    width=st.lists(st.floats(0.1, 5), min_size=3, max_size=3),
)
def test_volumes_sum_to_box(dim, n, lo, width):
    upper = [lo + w for w in width[:dim]]
    m = build_box_mesh(dim, [lo] * dim, upper, n)
    assert np.all(m.volumes > 0)
    assert m.volumes.sum() == pytest.approx(np.prod(width[:dim]), rel=1e-12)


def test_normals_point_inward(cube2):
    centre = np.full(3, 0.5)
    fc = cube2.vertices[cube2.boundary_facets].mean(axis=1)
    assert np.all(np.einsum("ij,ij->i", centre - fc, cube2.facet_normals) > 0)


def test_round_trip(square1):
    m2 = load_mesh(dump_mesh(square1))
    np.testing.assert_array_equal(m2.vertices, square1.vertices)
    np.testing.assert_array_equal(m2.simplices, square1.simplices)
    assert dump_mesh(m2) == dump_mesh(square1)


def test_round_trip_3d(cube2):
    assert dump_mesh(load_mesh(dump_mesh(cube2))) == dump_mesh(cube2)


def test_unknown_vertex():
    text = "2 3 1 0\n0 0\n1 0\n0 1\n0 1 7\n"
    with pytest.raises(MeshError, match="unknown vertex"):
        load_mesh(text)


def test_duplicate_triangle():
    text = "2 3 2 0\n0 0\n1 0\n0 1\n0 1 2\n0 1 2\n"
    with pytest.raises(MeshError, match="non-manifold facet"):
        load_mesh(text)


def test_bad_header():
    with pytest.raises(MeshError):
        load_mesh("two 3 1 0")


def test_refine_counts(square1):
    r = refine_uniform(square1)
    assert (r.n_vertices, r.n_simplices) == (9, 8)
    assert r.facet_measures.sum() == pytest.approx(4.0)


@pytest.mark.parametrize("dim", [2, 3])
def test_refine_twice_matches_box4(dim):
    m = build_box_mesh(dim, [0] * dim, [1] * dim, 1)
    r = refine_uniform(refine_uniform(m))
    b = build_box_mesh(dim, [0] * dim, [1] * dim, 4)
    key = lambda v: set(map(tuple, np.round(v, 12)))
    assert key(r.vertices) == key(b.vertices)
    assert r.volumes.sum() == pytest.approx(1.0, rel=1e-12)
    assert r.facet_measures.sum() == pytest.approx(2.0 * dim, rel=1e-12)


def test_interpolate_reproduces_linear(square8, rng):
    vals = 2 + 3 * square8.vertices[:, 0] - square8.vertices[:, 1]
    pts = rng.random((50, 2))
    np.testing.assert_allclose(square8.interpolate(vals, pts), 2 + 3 * pts[:, 0] - pts[:, 1], atol=1e-12)
