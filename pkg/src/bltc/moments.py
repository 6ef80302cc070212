"""Cluster moments: modified charges on tensor-product Chebyshev grids.

For a cluster with 1-D grids (s^1, s^2, s^3) and weights w, the moment
at grid node k = (k1, k2, k3) is

    q_hat_k = sum_j L_k1(y_j1) * L_k2(y_j2) * L_k3(y_j3) * q_j,

the source charges pushed onto the grid by the Lagrange basis.  The sum
is evaluated in two stages that factor out the shared barycentric
denominators: first the intermediate charges

    q_tilde_j = q_j / (D_1(y_j) * D_2(y_j) * D_3(y_j)),
    D_l(y)    = sum_k w_k / (y_l - s^l_k),

then the node accumulation

    q_hat_k = sum_j  prod_l ( w_kl / (y_jl - s^l_kl) ) * q_tilde_j.

When a source coordinate coincides with a grid node (routine for the
particles that define the minimal box faces) the affected dimension
degenerates to a Kronecker delta: its D factor is bypassed in stage one
and its per-node factor becomes the delta vector in stage two.

Moments are stored flat in row-major node order with k1 outermost:
``q_hat[(k1*(n+1) + k2) * (n+1) + k3]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .interp import NODE_COINCIDENCE_TOL
from .tree import Cluster, SourceTree


class IneligibleCluster(ValueError):
    """Raised when moments are requested for a degenerate cluster."""


@dataclass(eq=False)
class ClusterMoments:
    cluster_index: int
    q_hat: np.ndarray   # flat, (n+1)**3, k1-major


@njit(cache=True, nogil=True)
def _axis_denominator(yv, pts, w, tol):
    """(D, hit): barycentric denominator of one coordinate, or its node hit."""
    acc = 0.0
    for k in range(pts.shape[0]):
        d = yv - pts[k]
        if abs(d) < tol:
            return 0.0, k
        acc += w[k] / d
    return acc, -1


@njit(cache=True, nogil=True)
def _intermediate_kernel(sx, sy, sz, q, start, stop, p1, p2, p3, w, tol):
    nc = stop - start
    qtilde = np.empty(nc)
    flags = np.full((nc, 3), -1, dtype=np.int64)
    for jj in range(nc):
        j = start + jj
        denom = 1.0
        d1, h1 = _axis_denominator(sx[j], p1, w, tol)
        d2, h2 = _axis_denominator(sy[j], p2, w, tol)
        d3, h3 = _axis_denominator(sz[j], p3, w, tol)
        if h1 < 0:
            denom *= d1
        if h2 < 0:
            denom *= d2
        if h3 < 0:
            denom *= d3
        flags[jj, 0] = h1
        flags[jj, 1] = h2
        flags[jj, 2] = h3
        qtilde[jj] = q[j] / denom
    return qtilde, flags


@njit(cache=True, nogil=True)
def _axis_factors(yv, pts, w, hit, out):
    if hit >= 0:
        out[:] = 0.0
        out[hit] = 1.0
    else:
        for k in range(pts.shape[0]):
            out[k] = w[k] / (yv - pts[k])


@njit(cache=True, nogil=True)
def _moments_kernel(sx, sy, sz, start, stop, p1, p2, p3, w, qtilde, flags):
    m = p1.shape[0]
    q_hat = np.zeros(m * m * m)
    t1 = np.empty(m)
    t2 = np.empty(m)
    t3 = np.empty(m)
    for jj in range(stop - start):
        j = start + jj
        _axis_factors(sx[j], p1, w, flags[jj, 0], t1)
        _axis_factors(sy[j], p2, w, flags[jj, 1], t2)
        _axis_factors(sz[j], p3, w, flags[jj, 2], t3)
        qt = qtilde[jj]
        idx = 0
        for k1 in range(m):
            a = t1[k1] * qt
            for k2 in range(m):
                b = a * t2[k2]
                for k3 in range(m):
                    q_hat[idx] += b * t3[k3]
                    idx += 1
    return q_hat


def compute_intermediate(cluster: Cluster, tree: SourceTree):
    """Intermediate charges q_tilde plus per-particle coincidence flags.

    ``flags[j, l]`` is the grid node index source ``j`` hits in dimension
    ``l``, or -1; a flagged dimension's denominator factor is bypassed.
    """
    g1, g2, g3 = cluster.grids
    pts = tree.points
    return _intermediate_kernel(pts.x, pts.y, pts.z, tree.charges,
                                cluster.start, cluster.stop,
                                g1.points, g2.points, g3.points, g1.weights,
                                NODE_COINCIDENCE_TOL)


def compute_modified_charges(cluster: Cluster, tree: SourceTree) -> ClusterMoments:
    """Moments of one cluster; raises :class:`IneligibleCluster` if degenerate."""
    if not cluster.eligible:
        raise IneligibleCluster(
            f"cluster {cluster.index} has a degenerate box extent; "
            "it is evaluated directly, never approximated")
    qtilde, flags = compute_intermediate(cluster, tree)
    g1, g2, g3 = cluster.grids
    pts = tree.points
    q_hat = _moments_kernel(pts.x, pts.y, pts.z, cluster.start, cluster.stop,
                            g1.points, g2.points, g3.points, g1.weights,
                            qtilde, flags)
    return ClusterMoments(cluster.index, q_hat)


def compute_all_moments(tree: SourceTree) -> list[ClusterMoments | None]:
    """Moments for every eligible cluster, indexed by cluster index."""
    return [compute_modified_charges(c, tree) if c.eligible else None
            for c in tree.clusters]
