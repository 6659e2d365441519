"""Quadrature rules on reference cells.

Reference cells: the unit interval [0, 1], the triangle
{x, y >= 0, x + y <= 1}, the tetrahedron {x, y, z >= 0, x + y + z <= 1}
and the prism triangle x [0, 1].  Rules return ``(points, weights)`` with
weights summing to the reference measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureSpec:
    volume_degree: int = 4
    line_points: int = 3
    facet_degree: int = 2

    def __post_init__(self):
        if min(self.volume_degree, self.line_points, self.facet_degree) < 1:
            raise ValueError("quadrature degrees must be >= 1")


def _points_for_degree(degree: int) -> int:
    return max(1, math.ceil((degree + 1) / 2))


@lru_cache(maxsize=None)
def gauss_interval(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre rule on [0, 1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _gauss_jacobi01(n: int, alpha: int) -> tuple[np.ndarray, np.ndarray]:
    # weight (1 - u)^alpha on [0, 1]
    x, w = roots_jacobi(n, alpha, 0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


_DUNAVANT4 = (
    (0.445948490915965, 0.223381589678011),
    (0.091576213509771, 0.109951743655322),
)


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree <= 1:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5])
    if degree == 2:
        pts = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])
        return pts, np.full(3, 1.0 / 6.0)
    if degree in (3, 4):
        pts, wts = [], []
        for a, w in _DUNAVANT4:
            b = 1.0 - 2.0 * a
            pts += [[a, a], [b, a], [a, b]]
            wts += [0.5 * w] * 3
        return np.array(pts), np.array(wts)
    # collapsed (Duffy) Gauss-Jacobi
    n = _points_for_degree(degree)
    u, wu = _gauss_jacobi01(n, 1)
    v, wv = gauss_interval(n)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.stack([U.ravel(), (V * (1.0 - U)).ravel()], axis=1)
    return pts, np.outer(wu, wv).ravel()


@lru_cache(maxsize=None)
def tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    if degree <= 1:
        return np.array([[0.25, 0.25, 0.25]]), np.array([1.0 / 6.0])
    n = _points_for_degree(degree)
    u, wu = _gauss_jacobi01(n, 2)
    v, wv = _gauss_jacobi01(n, 1)
    w, ww = gauss_interval(n)
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    x = U
    y = V * (1.0 - U)
    z = W * (1.0 - U) * (1.0 - V)
    pts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    wts = (wu[:, None, None] * wv[None, :, None] * ww[None, None, :]).ravel()
    return pts, wts


@lru_cache(maxsize=None)
def prism_rule(tri_degree: int, z_points: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Tensor rule triangle x interval; ``z_points`` defaults to match the degree."""
    tp, tw = triangle_rule(tri_degree)
    zp, zw = gauss_interval(z_points or _points_for_degree(tri_degree))
    pts = np.concatenate(
        [np.repeat(tp, len(zp), axis=0), np.tile(zp, len(tp))[:, None]], axis=1
    )
    return pts, np.repeat(tw, len(zp)) * np.tile(zw, len(tp))


@lru_cache(maxsize=None)
def quad_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss rule on the unit square."""
    n = _points_for_degree(degree)
    g, w = gauss_interval(n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    return np.stack([X.ravel(), Y.ravel()], axis=1), np.outer(w, w).ravel()
