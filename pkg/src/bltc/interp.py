"""One-dimensional Chebyshev grids and the barycentric Lagrange basis.

A grid of degree ``n`` holds the n+1 Chebyshev points of the second kind
mapped to an interval [a, b], stored in descending order (the native
order of ``cos(pi*k/n)`` for k = 0..n).  The basis is evaluated in
barycentric form,

    L_k(x) = (w_k / (x - s_k)) / sum_k' (w_k' / (x - s_k')),

with simplified weights w_k = (-1)^k * delta_k, delta_k = 1/2 at the two
endpoints and 1 elsewhere.  The weights do not depend on the interval:
the interval-dependent factors cancel between numerator and denominator.

Evaluation points that land exactly on a grid node would divide by zero,
so any ``|x - s_k|`` below :data:`NODE_COINCIDENCE_TOL` (the smallest
positive normal double) takes the exact Kronecker-delta branch instead.
Because box bounds are taken directly from particle coordinates, such
collisions are routine rather than exceptional.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Smallest positive normal IEEE-754 double.  Differences below this can
# only arise from exact bit equality or a subnormal gap.
NODE_COINCIDENCE_TOL = 2.2250738585072014e-308


class DegenerateGrid(ValueError):
    """Raised when basis evaluation is requested on a zero-length interval."""


def chebyshev_points(n: int, interval: tuple[float, float]) -> np.ndarray:
    """Chebyshev points of the second kind on ``interval``, descending.

    The points are cos(pi*k/n) for k = 0..n mapped affinely onto [a, b].
    They are computed in the numerically symmetric sine form and the two
    endpoints are pinned to exactly ``b`` and ``a``, which guarantees
    that particles sitting on a minimal bounding box face coincide
    bitwise with the outermost grid node.  For n = 0 the single point is
    the interval midpoint.
    """
    if n < 0:
        raise ValueError("degree must be >= 0")
    a, b = float(interval[0]), float(interval[1])
    center = 0.5 * (a + b)
    if n == 0:
        return np.array([center])
    k = np.arange(n + 1)
    s = np.sin(np.pi * (n - 2 * k) / (2 * n))   # == cos(pi*k/n), fp-symmetric
    pts = center + (0.5 * (b - a)) * s
    pts[0] = b
    pts[n] = a
    return pts


def barycentric_weights(n: int) -> np.ndarray:
    """Simplified barycentric weights for second-kind points of degree ``n``."""
    if n < 0:
        raise ValueError("degree must be >= 0")
    delta = np.ones(n + 1)
    delta[0] = 0.5
    delta[n] = 0.5
    signs = np.where(np.arange(n + 1) % 2 == 0, 1.0, -1.0)
    return signs * delta


@dataclass(frozen=True, eq=False)
class ChebyshevGrid1D:
    """Degree-``n`` Chebyshev grid on [a, b] with its barycentric weights."""

    degree: int
    a: float
    b: float
    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def build(cls, degree: int, a: float, b: float) -> "ChebyshevGrid1D":
        return cls(degree, float(a), float(b),
                   chebyshev_points(degree, (a, b)),
                   barycentric_weights(degree))


def lagrange_basis_all(grid: ChebyshevGrid1D, x: float) -> np.ndarray:
    """Values of all n+1 Lagrange basis polynomials of ``grid`` at ``x``.

    Returns the exact delta vector when ``x`` coincides with a node.
    Raises :class:`DegenerateGrid` when the grid interval has collapsed
    to a point (a == b), where the basis is undefined.
    """
    if grid.a == grid.b:
        raise DegenerateGrid(f"grid interval [{grid.a}, {grid.b}] has zero length")
    diff = x - grid.points
    adiff = np.abs(diff)
    if adiff.min() < NODE_COINCIDENCE_TOL:
        # Nearest node wins; more than one can qualify only on intervals
        # of subnormal width, where the grid spacing itself is below the
        # coincidence tolerance.
        out = np.zeros(grid.degree + 1)
        out[int(adiff.argmin())] = 1.0
        return out
    terms = grid.weights / diff
    return terms / terms.sum()
