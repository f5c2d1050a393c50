"""Exact element integrals for P1 (hat function) spaces."""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp


def barycentric_gradients(vertices: np.ndarray, simplices: np.ndarray) -> np.ndarray:
    """Gradients of the barycentric coordinates, shape (ns, d+1, d)."""
    X = vertices[simplices]
    T = X[:, 1:] - X[:, :1]                      # rows are edge vectors
    G = np.linalg.inv(T)                          # columns are grad lambda_1..d
    grads = np.transpose(G, (0, 2, 1))
    return np.concatenate([-grads.sum(axis=1, keepdims=True), grads], axis=1)


def mass_reference(m: int) -> np.ndarray:
    """int_S lambda_a lambda_b / |S| on a simplex with m vertices."""
    return (np.ones((m, m)) + np.eye(m)) / (m * (m + 1))


def triple_reference(m: int) -> np.ndarray:
    """int_S lambda_a lambda_b lambda_c / |S| on a simplex with m vertices."""
    k = m - 1
    out = np.empty((m, m, m))
    for a in range(m):
        for b in range(m):
            for c in range(m):
                mult = np.bincount([a, b, c], minlength=m)
                num = math.factorial(k) * np.prod([math.factorial(int(e)) for e in mult])
                out[a, b, c] = num / math.factorial(k + 3)
    return out


def scatter(blocks: np.ndarray, conn: np.ndarray, n: int) -> sp.csr_matrix:
    """Sum element blocks (ne, m, m) into an n x n sparse matrix."""
    m = conn.shape[1]
    rows = np.repeat(conn, m, axis=1).ravel()
    cols = np.tile(conn, (1, m)).ravel()
    mat = sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat
