"""Simplicial meshes of boxes and polytopes in two and three dimensions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "build_box_mesh",
    "load_mesh",
    "dump_mesh",
    "refine_uniform",
    "simplex_volumes",
]


class MeshError(ValueError):
    """Raised for malformed or non-conforming meshes."""


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple
    divisions: int

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / self.divisions


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming simplicial mesh.

    ``boundary_facets`` rows are vertex index tuples of the facets lying on the
    boundary, ``facet_normals`` the matching unit normals pointing *into* the
    domain and ``facet_measures`` their length (2D) or area (3D).  ``box`` is
    set for meshes of axis-aligned boxes built with the Kuhn pattern.
    """

    vertices: np.ndarray
    simplices: np.ndarray
    boundary_facets: np.ndarray
    facet_normals: np.ndarray
    facet_measures: np.ndarray
    boundary_vertex_flags: np.ndarray
    box: Box | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_simplices(self) -> int:
        return self.simplices.shape[0]

    @property
    def volumes(self) -> np.ndarray:
        if "volumes" not in self._cache:
            self._cache["volumes"] = simplex_volumes(self.vertices, self.simplices)
        return self._cache["volumes"]

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_vertex_flags)

    @property
    def size(self) -> float:
        """Largest edge length."""
        if "size" not in self._cache:
            edges = _unique_edges(self.simplices)
            d = self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]]
            self._cache["size"] = float(np.sqrt((d * d).sum(axis=1)).max())
        return self._cache["size"]

    def volume(self) -> float:
        return float(self.volumes.sum())

    def surface_measure(self) -> float:
        return float(self.facet_measures.sum())

    def barycentric(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Locate points; returns (simplex index or -1, barycentric coordinates)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        X = self.vertices[self.simplices]
        T = np.transpose(X[:, 1:] - X[:, :1], (0, 2, 1))
        Tinv = np.linalg.inv(T)
        found = np.full(len(points), -1)
        lam_out = np.zeros((len(points), self.dim + 1))
        for i, p in enumerate(points):
            lam = np.einsum("sij,sj->si", Tinv, p - X[:, 0])
            lam = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
            ok = np.flatnonzero(lam.min(axis=1) >= -1e-12)
            if ok.size:
                found[i] = ok[0]
                lam_out[i] = lam[ok[0]]
        return found, lam_out

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.barycentric(points)[0] >= 0

    def interpolate(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Evaluate the P1 field with vertex values ``values`` at ``points``."""
        idx, lam = self.barycentric(points)
        if np.any(idx < 0):
            raise ValueError("point outside mesh")
        return (np.asarray(values)[self.simplices[idx]] * lam).sum(axis=1)

    def facet_centroids(self) -> np.ndarray:
        return self.vertices[self.boundary_facets].mean(axis=1)


def simplex_volumes(vertices: np.ndarray, simplices: np.ndarray, signed: bool = False) -> np.ndarray:
    X = vertices[simplices]
    d = vertices.shape[1]
    det = np.linalg.det(X[:, 1:] - X[:, :1])
    vol = det / math.factorial(d)
    return vol if signed else np.abs(vol)


def _unique_edges(simplices: np.ndarray) -> np.ndarray:
    pairs = itertools.combinations(range(simplices.shape[1]), 2)
    e = np.concatenate([simplices[:, [a, b]] for a, b in pairs])
    return np.unique(np.sort(e, axis=1), axis=0)


def _facet_normal(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals (unsigned) and measures of facets given their vertex coordinates."""
    d = points.shape[2]
    if d == 2:
        t = points[:, 1] - points[:, 0]
        n = np.stack([-t[:, 1], t[:, 0]], axis=1)
        meas = np.linalg.norm(t, axis=1)
    else:
        n = np.cross(points[:, 1] - points[:, 0], points[:, 2] - points[:, 0])
        meas = 0.5 * np.linalg.norm(n, axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True), meas


def _from_arrays(
    vertices: np.ndarray,
    simplices: np.ndarray,
    facets: np.ndarray | None = None,
    box: Box | None = None,
    reorient: bool = True,
) -> Mesh:
    vertices = np.ascontiguousarray(vertices, dtype=float)
    simplices = np.ascontiguousarray(simplices, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] not in (2, 3):
        raise MeshError("dimension must be 2 or 3")
    d = vertices.shape[1]
    nv = len(vertices)
    if simplices.ndim != 2 or simplices.shape[1] != d + 1:
        raise MeshError(f"simplices must have {d + 1} vertices")
    bad = np.flatnonzero((simplices < 0).any(axis=1) | (simplices >= nv).any(axis=1))
    if bad.size:
        raise MeshError(f"unknown vertex referenced by simplex {bad[0]}")
    used = np.zeros(nv, dtype=bool)
    used[simplices.ravel()] = True
    if not used.all():
        raise MeshError(f"dangling vertex {np.flatnonzero(~used)[0]}")

    vol = simplex_volumes(vertices, simplices, signed=True)
    scale = np.ptp(vertices, axis=0).prod()
    degenerate = np.flatnonzero(np.abs(vol) <= 1e-14 * scale)
    if degenerate.size:
        raise MeshError(f"degenerate simplex {degenerate[0]}")
    if (vol < 0).any():
        if not reorient:
            raise MeshError(f"inverted simplex {np.flatnonzero(vol < 0)[0]}")
        simplices = simplices.copy()
        neg = vol < 0
        simplices[neg, -2], simplices[neg, -1] = simplices[neg, -1], simplices[neg, -2].copy()

    srt = np.sort(simplices, axis=1)
    _, first, counts = np.unique(srt, axis=0, return_index=True, return_counts=True)
    if (counts > 1).any():
        raise MeshError(f"non-manifold facet: simplex {first[np.argmax(counts > 1)]} is duplicated")

    # faces: drop local vertex j; opposite vertex is simplices[:, j]
    faces = np.concatenate([np.delete(simplices, j, axis=1) for j in range(d + 1)])
    opposite = np.concatenate([simplices[:, j] for j in range(d + 1)])
    keys = np.sort(faces, axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if (counts > 2).any():
        k = np.flatnonzero(counts > 2)[0]
        raise MeshError(f"non-manifold facet {tuple(uniq[k])}")
    # interior faces must separate their two opposite vertices
    interior = np.flatnonzero(counts == 2)
    if interior.size:
        grouped = np.argsort(inverse, kind="stable")
        pos = np.searchsorted(inverse[grouped], interior)
        a, b = grouped[pos], grouped[pos + 1]
        P = vertices[faces[a]]
        n, _ = _facet_normal(P)
        sa = np.einsum("ij,ij->i", vertices[opposite[a]] - P[:, 0], n)
        sb = np.einsum("ij,ij->i", vertices[opposite[b]] - P[:, 0], n)
        wrong = np.flatnonzero(sa * sb >= 0)
        if wrong.size:
            raise MeshError(f"non-manifold facet {tuple(uniq[interior[wrong[0]]])}")

    bmask = counts[inverse] == 1
    bfaces = faces[bmask]
    bopp = opposite[bmask]
    order = np.lexsort(np.sort(bfaces, axis=1).T[::-1])
    bfaces, bopp = bfaces[order], bopp[order]
    P = vertices[bfaces]
    normals, meas = _facet_normal(P)
    side = np.einsum("ij,ij->i", vertices[bopp] - P[:, 0], normals)
    normals = normals * np.sign(side)[:, None]

    if facets is not None and len(facets):
        given = {tuple(sorted(f)) for f in np.asarray(facets, dtype=np.int64)}
        found = {tuple(sorted(f)) for f in bfaces}
        if given != found:
            extra = sorted(given - found) or sorted(found - given)
            raise MeshError(f"boundary facet markers disagree with mesh at facet {extra[0]}")

    flags = np.zeros(nv, dtype=bool)
    flags[bfaces.ravel()] = True
    return Mesh(vertices, simplices, bfaces, normals, meas, flags, box)


def _kuhn_cells(dim: int, n: int) -> np.ndarray:
    """Kuhn (Freudenthal) subdivision of an n^dim grid into simplices of vertex ids."""
    strides = np.array([(n + 1) ** k for k in range(dim)])
    cells = np.array(list(itertools.product(range(n), repeat=dim)))[:, ::-1]
    base = cells @ strides
    out = []
    for perm in itertools.permutations(range(dim)):
        idx = [base]
        cur = base
        for axis in perm:
            cur = cur + strides[axis]
            idx.append(cur)
        out.append(np.stack(idx, axis=1))
    return np.concatenate(out)


def build_box_mesh(dim: int, lower, upper, divisions: int) -> Mesh:
    """Kuhn-subdivided mesh of the box [lower, upper] with ``divisions`` cells per axis.

    Vertex ``i`` has grid index ``(i % (n+1), (i // (n+1)) % (n+1), ...)`` with
    the first axis varying fastest.
    """
    if dim not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {dim}")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != (dim,) or upper.shape != (dim,):
        raise MeshError("box corners must have dim coordinates")
    if not np.all(lower < upper):
        raise MeshError("degenerate box: need lower < upper componentwise")
    n = int(divisions)
    if n < 1:
        raise MeshError("divisions must be >= 1")
    axes = [np.linspace(lower[k], upper[k], n + 1) for k in range(dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.transpose().ravel() for g in grid], axis=1)
    simplices = _kuhn_cells(dim, n)
    box = Box(tuple(lower.tolist()), tuple(upper.tolist()), n)
    return _from_arrays(vertices, simplices, box=box)


def _strip_comments(text: str) -> list[str]:
    tokens = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    return tokens


def load_mesh(text: str) -> Mesh:
    """Parse the ASCII mesh format written by :func:`dump_mesh`."""
    tok = _strip_comments(text)
    try:
        d, nv, ns, nf = (int(t) for t in tok[:4])
    except (ValueError, IndexError) as exc:
        raise MeshError("header must be 'dim nv ns nf'") from exc
    if d not in (2, 3):
        raise MeshError(f"dimension must be 2 or 3, got {d}")
    need = 4 + nv * d + ns * (d + 1) + nf * d
    if len(tok) != need:
        raise MeshError(f"expected {need} tokens, found {len(tok)}")
    pos = 4
    try:
        vertices = np.array(tok[pos:pos + nv * d], dtype=float).reshape(nv, d)
        pos += nv * d
        simplices = np.array(tok[pos:pos + ns * (d + 1)], dtype=np.int64).reshape(ns, d + 1)
        pos += ns * (d + 1)
        facets = np.array(tok[pos:pos + nf * d], dtype=np.int64).reshape(nf, d)
    except ValueError as exc:
        raise MeshError(f"parse failure: {exc}") from exc
    if nf and ((facets < 0) | (facets >= nv)).any():
        raise MeshError(f"unknown vertex in facet {np.flatnonzero(((facets < 0) | (facets >= nv)).any(axis=1))[0]}")
    return _from_arrays(vertices, simplices, facets=facets, reorient=False)


def dump_mesh(mesh: Mesh) -> str:
    lines = [f"{mesh.dim} {mesh.n_vertices} {mesh.n_simplices} {len(mesh.boundary_facets)}"]
    lines += [" ".join(f"{x:.17g}" for x in v) for v in mesh.vertices]
    lines += [" ".join(str(i) for i in s) for s in mesh.simplices]
    lines += [" ".join(str(i) for i in f) for f in mesh.boundary_facets]
    return "\n".join(lines) + "\n"


# Bey's red refinement of a tetrahedron with local vertices 0..3 and edge
# midpoints labelled (a, b).
_BEY_CHILDREN = [
    (0, (0, 1), (0, 2), (0, 3)),
    ((0, 1), 1, (1, 2), (1, 3)),
    ((0, 2), (1, 2), 2, (2, 3)),
    ((0, 3), (1, 3), (2, 3), 3),
    ((0, 1), (0, 2), (0, 3), (1, 3)),
    ((0, 1), (0, 2), (1, 2), (1, 3)),
    ((0, 2), (0, 3), (1, 3), (2, 3)),
    ((0, 2), (1, 2), (1, 3), (2, 3)),
]
_TRI_CHILDREN = [
    (0, (0, 1), (0, 2)),
    ((0, 1), 1, (1, 2)),
    ((0, 2), (1, 2), 2),
    ((0, 1), (1, 2), (0, 2)),
]


def refine_uniform(mesh: Mesh) -> Mesh:
    """Split every simplex at its edge midpoints (4 children in 2D, 8 in 3D)."""
    V, S = mesh.vertices, mesh.simplices
    # order local vertices by coordinate sum so that Kuhn simplices refine into Kuhn simplices
    key = V[S].sum(axis=2)
    S = np.take_along_axis(S, np.argsort(key, axis=1, kind="stable"), axis=1)
    edges = _unique_edges(S)
    nv = len(V)
    mids = 0.5 * (V[edges[:, 0]] + V[edges[:, 1]])
    lookup = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}

    children = _BEY_CHILDREN if mesh.dim == 3 else _TRI_CHILDREN
    new = np.empty((len(S) * len(children), mesh.dim + 1), dtype=np.int64)
    row = 0
    for s in S:
        for ch in children:
            for j, item in enumerate(ch):
                if isinstance(item, tuple):
                    a, b = sorted((int(s[item[0]]), int(s[item[1]])))
                    new[row, j] = lookup[(a, b)]
                else:
                    new[row, j] = s[item]
            row += 1
    box = None
    if mesh.box is not None:
        box = Box(mesh.box.lower, mesh.box.upper, 2 * mesh.box.divisions)
    return _from_arrays(np.concatenate([V, mids]), new, box=box)
