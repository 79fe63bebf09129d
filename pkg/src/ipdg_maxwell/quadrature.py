"""Tensor-product Gauss-Legendre rules on the reference cube and square.

Reference coordinates live in ``[-1/2, 1/2]^d`` so that the rules line up
with the centered monomial basis used by :mod:`ipdg_maxwell.space`.
Weights sum to the reference measure 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_POINTS = 20

# Target a priori bound for the Gauss remainder of a plane-wave factor
# exp(i*theta*xi) on a unit interval; see oscillatory_order.
_OSC_TOL = 1e-12


@dataclass(frozen=True)
class QuadRule:
    """Quadrature points (``(npts, d)``) and positive weights (``(npts,)``)."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.weights)


@lru_cache(maxsize=None)
def gauss_1d(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights mapped to [-1/2, 1/2]."""
    if not 1 <= n <= MAX_POINTS:
        raise ValueError(f"number of 1D Gauss points must be in [1, {MAX_POINTS}], got {n}")
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * x
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_rule(n: int, d: int) -> QuadRule:
    """Tensor-product rule with ``n**d`` points on ``[-1/2, 1/2]^d``.

    The last coordinate varies fastest.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    x, w = gauss_1d(n)
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wgrids = np.meshgrid(*([w] * d), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    points.setflags(write=False)
    weights.setflags(write=False)
    return QuadRule(points, weights)


def face_points(rule: QuadRule, axis: int, side: float) -> np.ndarray:
    """Embed a 2D rule into the cube face ``xi[axis] = side``.

    ``side`` is +1/2 or -1/2.  The two tangential axes are filled in
    increasing order.
    """
    tangential = [a for a in range(3) if a != axis]
    pts = np.empty((len(rule), 3))
    pts[:, axis] = side
    pts[:, tangential[0]] = rule.points[:, 0]
    pts[:, tangential[1]] = rule.points[:, 1]
    return pts


def _gauss_remainder_bound(n: int, theta: float) -> float:
    # |int f - Q_n f| <= (n!)^4 / ((2n+1) ((2n)!)^3) * max|f^(2n)| on a unit interval
    log_c = 4 * math.lgamma(n + 1) - math.log(2 * n + 1) - 3 * math.lgamma(2 * n + 1)
    if theta == 0.0:
        return 0.0
    return math.exp(log_c + 2 * n * math.log(theta))


def oscillatory_order(k: float, h: float) -> int:
    """1D point count for integrals involving a plane wave of wave number ``k``.

    Picks the smallest ``n >= 3`` whose Gauss remainder bound for
    ``exp(i*k*h*xi)`` over one element falls below 1e-12, plus one point of
    margin for the polynomial factor; capped at :data:`MAX_POINTS`.
    """
    if k < 0 or h <= 0:
        raise ValueError("need k >= 0 and h > 0")
    theta = k * h
    n = 3
    while n < MAX_POINTS and _gauss_remainder_bound(n, theta) > _OSC_TOL:
        n += 1
    if theta > 0:
        n = min(n + 1, MAX_POINTS)
    return max(3, n)
