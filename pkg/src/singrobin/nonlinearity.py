"""Singular boundary nonlinearities g, their truncations and regularizations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["Nonlinearity", "Regularized", "truncate", "regularize", "ENVELOPE_GRID"]

ENVELOPE_GRID = np.logspace(-8, 8, 321)


def truncate(k: float, s):
    """T_k(s) = max(-k, min(s, k)); works on scalars and arrays."""
    if not k > 0:
        raise ValueError("truncation level must be positive")
    out = np.clip(s, -k, k)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Nonlinearity:
    """A positive continuous g on (0, inf) with c1 <= g(y) y^gamma <= c2.

    kind "power":  g(y) = c1 * y^-gamma (c1 == c2)
    kind "custom": user callable ``fn`` with declared envelope constants
    kind "mixed":  g = g1 + g2 for two single-exponent components; gamma and
                   gamma2 are their exponents, c1/c2 the common envelope bounds
    """

    kind: str
    gamma: float
    c1: float = 1.0
    c2: float = 1.0
    gamma2: float | None = None
    fn: Callable | None = None
    dfn: Callable | None = None
    components: tuple = ()

    def __post_init__(self):
        if self.kind not in ("power", "mixed", "custom"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.c1 <= self.c2:
            raise ValueError("envelope constants must satisfy 0 < c1 <= c2")
        if self.kind == "power" and self.c1 != self.c2:
            raise ValueError("a pure power has c1 == c2")
        if self.kind == "mixed" and len(self.components) != 2:
            raise ValueError("mixed nonlinearity needs exactly two components")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom nonlinearity needs a callable")

    @classmethod
    def power(cls, gamma: float, c: float = 1.0) -> "Nonlinearity":
        return cls("power", gamma, c, c)

    @classmethod
    def custom(cls, fn: Callable, gamma: float, c1: float, c2: float, dfn: Callable | None = None) -> "Nonlinearity":
        return cls("custom", gamma, c1, c2, fn=fn, dfn=dfn)

    @classmethod
    def mixed(cls, g1: "Nonlinearity", g2: "Nonlinearity") -> "Nonlinearity":
        if g1.kind == "mixed" or g2.kind == "mixed":
            raise ValueError("mixed components must have a single exponent")
        return cls(
            "mixed", g1.gamma, min(g1.c1, g2.c1), max(g1.c2, g2.c2), gamma2=g2.gamma, components=(g1, g2)
        )

    @classmethod
    def mixed_power(cls, gamma1: float, gamma2: float, c1: float = 1.0, c2: float = 1.0) -> "Nonlinearity":
        """g = c1 y^-gamma1 + c2 y^-gamma2."""
        return cls.mixed(cls.power(gamma1, c1), cls.power(gamma2, c2))

    def parts(self) -> list["Nonlinearity"]:
        return list(self.components) if self.kind == "mixed" else [self]

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "power":
                out = self.c1 * y ** (-self.gamma)
            elif self.kind == "mixed":
                out = np.asarray(self.components[0](y)) + np.asarray(self.components[1](y))
            else:
                out = np.asarray(self.fn(y), dtype=float)
        return float(out) if out.ndim == 0 else out

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "power":
                out = -self.gamma * self.c1 * y ** (-self.gamma - 1)
            elif self.kind == "mixed":
                out = np.asarray(self.components[0].derivative(y)) + np.asarray(self.components[1].derivative(y))
            elif self.dfn is not None:
                out = np.asarray(self.dfn(y), dtype=float)
            else:
                step = 1e-6 * np.maximum(y, 1e-12)
                out = (np.asarray(self.fn(y + step)) - np.asarray(self.fn(y - step))) / (2 * step)
        return float(out) if out.ndim == 0 else out

    def envelope_violations(self, grid: np.ndarray = ENVELOPE_GRID, rtol: float = 1e-12) -> list[float]:
        """Grid points where c1 <= g(y) y^gamma <= c2 fails (per component for mixed)."""
        bad = []
        for part in self.parts():
            vals = np.asarray(part(grid)) * grid ** part.gamma
            lo = vals < part.c1 * (1 - rtol)
            hi = vals > part.c2 * (1 + rtol)
            bad.extend(grid[lo | hi | ~np.isfinite(vals)].tolist())
        return sorted(set(bad))

    def is_nonincreasing(self, grid: np.ndarray = ENVELOPE_GRID) -> bool:
        if self.kind == "power":
            return True
        if self.kind == "mixed":
            return all(p.is_nonincreasing(grid) for p in self.components)
        vals = np.asarray(self(grid))
        return bool(np.all(np.diff(vals) <= 1e-12 * np.abs(vals[:-1])))


@dataclass(frozen=True)
class Regularized:
    """g_n(y) = g(y + 1/n) for y > 0 and g(1/n) for y <= 0; n = inf gives g itself."""

    g: Nonlinearity
    n: float

    @property
    def shift(self) -> float:
        return 0.0 if math.isinf(self.n) else 1.0 / self.n

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if math.isinf(self.n):
            out = np.where(y > 0, self.g(np.where(y > 0, y, 1.0)), np.inf)
        else:
            out = np.asarray(self.g(np.maximum(y, 0.0) + self.shift))
        return float(out) if out.ndim == 0 else out

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        inner = np.where(y > 0, y, 1.0) + self.shift
        out = np.where(y > 0, self.g.derivative(inner), 0.0)
        return float(out) if out.ndim == 0 else out


def regularize(g: Nonlinearity, n: float) -> Regularized:
    if not n >= 1:
        raise ValueError("regularization index must be >= 1")
    return Regularized(g, float(n))
