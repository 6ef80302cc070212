"""Interaction engine: acceptance test, interaction lists, evaluation.

For every target batch the cluster tree is walked once with the
batch-uniform multipole acceptance criterion

    (r_B + r_C) / R < theta      and      (n+1)^3 < N_C,

where R is the distance between batch and cluster centers.  Accepted
clusters land on the batch's approximation list; a geometry failure
recurses (or, at a leaf, falls back to a direct sum); a size failure
means the cluster is too small for interpolation to pay off, so it is
summed directly without recursing.  Ineligible (degenerate) clusters are
treated as geometry failures: recursion continues into their children
until direct sums take over.

Evaluation then reduces to two tile kernels per batch: the approximation
tile sums kernel values against the (n+1)^3 grid-node moments, and the
direct tile sums over actual sources with the singular-pair exclusion.
Each batch owns a disjoint slice of the output and accumulates in a
fixed order (approximation list first, then direct list), so results are
bitwise reproducible regardless of how batches are scheduled.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .kernels import SINGULAR_PAIR_THRESHOLD_SQ, KernelSpec, coulomb
from .moments import ClusterMoments, compute_all_moments
from .particles import ParticleSystem, Points
from .tree import (BatchSet, SourceTree, TargetBatch,
                   build_source_tree, build_target_batches)


class MacFailure(enum.Enum):
    GEOMETRY = "geometry"
    SIZE = "size"


@dataclass(frozen=True)
class EvalConfig:
    """Treecode parameters for one run."""

    theta: float
    degree: int
    leaf_size: int = 2000
    batch_size: int = 2000
    kernel: KernelSpec = field(default_factory=coulomb)

    def __post_init__(self):
        if not (0.0 < self.theta <= 1.0):
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if self.leaf_size < 1 or self.batch_size < 1:
            raise ValueError("leaf_size and batch_size must be >= 1")


def mac_accept(batch: TargetBatch, cluster, config: EvalConfig):
    """(accepted, failure reason) for one batch/cluster pair.

    ``cluster`` only needs center, radius, particle count, and the
    eligibility flag, so fetched remote cluster records work unchanged.
    The geometry test is evaluated cross-multiplied, which keeps an
    overlapping pair (R == 0) a plain geometry failure instead of a
    division by zero.  Geometry takes precedence in the reported reason.
    """
    bc, cc = batch.center, cluster.center
    dx = float(bc[0]) - float(cc[0])
    dy = float(bc[1]) - float(cc[1])
    dz = float(bc[2]) - float(cc[2])
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if not (batch.radius + cluster.radius < config.theta * dist):
        return False, MacFailure.GEOMETRY
    if not cluster.eligible:
        return False, MacFailure.GEOMETRY
    if not ((config.degree + 1) ** 3 < cluster.num_particles):
        return False, MacFailure.SIZE
    return True, None


@dataclass(eq=False)
class InteractionLists:
    """Per-batch cluster index lists (parallel to the batch list)."""

    approx: list[list[int]]
    direct: list[list[int]]


def _walk(batch: TargetBatch, cluster, config: EvalConfig,
          approx: list[int], direct: list[int]) -> None:
    accepted, reason = mac_accept(batch, cluster, config)
    if accepted:
        approx.append(cluster.index)
    elif reason is MacFailure.SIZE:
        direct.append(cluster.index)
    elif cluster.is_leaf:
        direct.append(cluster.index)
    else:
        for child in cluster.children:
            _walk(batch, child, config, approx, direct)


def lists_against_root(batches: list[TargetBatch], root,
                       config: EvalConfig) -> InteractionLists:
    """Interaction lists for each batch against one cluster hierarchy.

    ``root`` may be a local :class:`~bltc.tree.Cluster` or a view over a
    fetched remote tree; only geometry, counts, eligibility, and child
    links are consulted.
    """
    lists = InteractionLists([], [])
    for batch in batches:
        approx: list[int] = []
        direct: list[int] = []
        _walk(batch, root, config, approx, direct)
        lists.approx.append(approx)
        lists.direct.append(direct)
    return lists


def build_interaction_lists(batch_set: BatchSet, tree: SourceTree,
                            config: EvalConfig) -> InteractionLists:
    return lists_against_root(batch_set.batches, tree.root, config)


def count_pairs(lists: InteractionLists, batches: list[TargetBatch],
                cluster_sizes: np.ndarray, degree: int) -> tuple[int, int]:
    """(direct_pairs, approx_pairs) implied by the interaction lists."""
    per_node = (degree + 1) ** 3
    direct_pairs = 0
    approx_pairs = 0
    for batch, approx, direct in zip(batches, lists.approx, lists.direct):
        nt = batch.num_targets
        direct_pairs += nt * int(sum(int(cluster_sizes[c]) for c in direct))
        approx_pairs += nt * per_node * len(approx)
    return direct_pairs, approx_pairs


# ---------------------------------------------------------------------------
# Compiled tile kernels.  Kernel dispatch is by integer code (0 Coulomb,
# 1 Yukawa, 2 constant) hoisted outside the inner loops.  No fast-math:
# the accumulation order is part of the reproducibility contract.

@njit(cache=True, nogil=True)
def _direct_tile(tx, ty, tz, i0, i1, sx, sy, sz, q, j0, j1, kind, kappa,
                 out, carry):
    # Direct sums use Neumaier-compensated accumulation: every addition's
    # rounding loss is recovered exactly (whichever of the two operands
    # dominates) and pooled per target in `carry`, to be added back once
    # at the very end.  A sum split across many cluster tiles therefore
    # behaves like one continuous compensated stream, and the result is
    # the exact sum of the rounded pair terms to within an ulp.  Without
    # this, a near-cancelling target turns plain left-to-right rounding
    # into a visible order dependence between runs that tile the sources
    # differently.
    for i in range(i0, i1):
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        acc = out[i]
        comp = carry[i]
        if kind == 0:
            for j in range(j0, j1):
                dx = xi - sx[j]
                dy = yi - sy[j]
                dz = zi - sz[j]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 >= SINGULAR_PAIR_THRESHOLD_SQ:
                    t = q[j] / math.sqrt(d2)
                    s = acc + t
                    if abs(acc) >= abs(t):
                        comp += (acc - s) + t
                    else:
                        comp += (t - s) + acc
                    acc = s
        elif kind == 1:
            for j in range(j0, j1):
                dx = xi - sx[j]
                dy = yi - sy[j]
                dz = zi - sz[j]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 >= SINGULAR_PAIR_THRESHOLD_SQ:
                    r = math.sqrt(d2)
                    t = math.exp(-kappa * r) * q[j] / r
                    s = acc + t
                    if abs(acc) >= abs(t):
                        comp += (acc - s) + t
                    else:
                        comp += (t - s) + acc
                    acc = s
        else:
            for j in range(j0, j1):
                dx = xi - sx[j]
                dy = yi - sy[j]
                dz = zi - sz[j]
                d2 = dx * dx + dy * dy + dz * dz
                if d2 >= SINGULAR_PAIR_THRESHOLD_SQ:
                    t = q[j]
                    s = acc + t
                    if abs(acc) >= abs(t):
                        comp += (acc - s) + t
                    else:
                        comp += (t - s) + acc
                    acc = s
        out[i] = acc
        carry[i] = comp


@njit(cache=True, nogil=True)
def _approx_tile(tx, ty, tz, i0, i1, p1, p2, p3, q_hat, kind, kappa, out):
    m = p1.shape[0]
    for i in range(i0, i1):
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        acc = 0.0
        idx = 0
        if kind == 0:
            for k1 in range(m):
                dx = xi - p1[k1]
                for k2 in range(m):
                    dy = yi - p2[k2]
                    for k3 in range(m):
                        dz = zi - p3[k3]
                        d2 = dx * dx + dy * dy + dz * dz
                        acc += q_hat[idx] / math.sqrt(d2)
                        idx += 1
        elif kind == 1:
            for k1 in range(m):
                dx = xi - p1[k1]
                for k2 in range(m):
                    dy = yi - p2[k2]
                    for k3 in range(m):
                        dz = zi - p3[k3]
                        d2 = dx * dx + dy * dy + dz * dz
                        r = math.sqrt(d2)
                        acc += math.exp(-kappa * r) * q_hat[idx] / r
                        idx += 1
        else:
            for k1 in range(m):
                for k2 in range(m):
                    for k3 in range(m):
                        acc += q_hat[idx]
                        idx += 1
        out[i] += acc


def eval_batch_direct(batch: TargetBatch, targets: Points, cluster,
                      sources: Points, charges: np.ndarray,
                      kernel: KernelSpec, out: np.ndarray,
                      carry: np.ndarray | None = None) -> None:
    """Accumulate the direct sum of one cluster into the batch's targets.

    Pairs closer than the singular-pair threshold are skipped, which is
    what removes self-interaction when targets and sources coincide.
    ``carry`` pools the per-target compensation between calls and must
    be added to ``out`` once all sums are in.  Without it the recovered
    rounding losses of this one call are folded into ``out`` directly.
    """
    if carry is None:
        scratch = np.zeros_like(out)
        _direct_tile(targets.x, targets.y, targets.z, batch.start, batch.stop,
                     sources.x, sources.y, sources.z, charges,
                     cluster.start, cluster.stop, kernel.code, kernel.kappa,
                     out, scratch)
        out += scratch
        return
    _direct_tile(targets.x, targets.y, targets.z, batch.start, batch.stop,
                 sources.x, sources.y, sources.z, charges,
                 cluster.start, cluster.stop, kernel.code, kernel.kappa,
                 out, carry)


def eval_batch_approx(batch: TargetBatch, targets: Points, grids,
                      q_hat: np.ndarray, kernel: KernelSpec,
                      out: np.ndarray) -> None:
    """Accumulate one cluster approximation into the batch's targets.

    Sums kernel values against the moments over the (n+1)^3 tensor grid.
    Acceptance guarantees batch and cluster balls are disjoint, so grid
    nodes never collide with targets and no singular test is needed.
    """
    g1, g2, g3 = grids
    _approx_tile(targets.x, targets.y, targets.z, batch.start, batch.stop,
                 g1.points, g2.points, g3.points, q_hat,
                 kernel.code, kernel.kappa, out)


def _run_batch(batch: TargetBatch, targets: Points, tree: SourceTree,
               moments: list[ClusterMoments | None], approx: list[int],
               direct: list[int], kind: int, kappa: float,
               out: np.ndarray, carry: np.ndarray) -> None:
    tx, ty, tz = targets.x, targets.y, targets.z
    sp = tree.points
    for ci in approx:
        c = tree.clusters[ci]
        g1, g2, g3 = c.grids
        _approx_tile(tx, ty, tz, batch.start, batch.stop,
                     g1.points, g2.points, g3.points, moments[ci].q_hat,
                     kind, kappa, out)
    for ci in direct:
        c = tree.clusters[ci]
        _direct_tile(tx, ty, tz, batch.start, batch.stop,
                     sp.x, sp.y, sp.z, tree.charges,
                     c.start, c.stop, kind, kappa, out, carry)


def compute_potentials(batch_set: BatchSet, tree: SourceTree,
                       moments: list[ClusterMoments | None],
                       lists: InteractionLists, config: EvalConfig,
                       threads: int = 1) -> np.ndarray:
    """Potentials for all targets, returned in the original input order."""
    out = np.zeros(len(batch_set.points))
    carry = np.zeros_like(out)
    kind, kappa = config.kernel.code, config.kernel.kappa

    def task(b: TargetBatch) -> None:
        _run_batch(b, batch_set.points, tree, moments,
                   lists.approx[b.index], lists.direct[b.index],
                   kind, kappa, out, carry)

    if threads <= 1:
        for b in batch_set.batches:
            task(b)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(task, batch_set.batches))
    return (out + carry)[batch_set.perm]


@dataclass(eq=False)
class RunStats:
    n_clusters: int
    n_batches: int
    direct_pairs: int
    approx_pairs: int
    setup_s: float
    precompute_s: float
    compute_s: float
    total_s: float


def treecode_potentials(system: ParticleSystem, config: EvalConfig,
                        threads: int = 1) -> tuple[np.ndarray, RunStats]:
    """Full single-process pipeline: tree, batches, lists, moments, sums."""
    t0 = time.perf_counter()
    tree = build_source_tree(system.sources, system.charges,
                             config.leaf_size, config.degree)
    batch_set = build_target_batches(system.targets, config.batch_size)
    lists = build_interaction_lists(batch_set, tree, config)
    t1 = time.perf_counter()
    moments = compute_all_moments(tree)
    t2 = time.perf_counter()
    phi = compute_potentials(batch_set, tree, moments, lists, config, threads)
    t3 = time.perf_counter()

    sizes = np.array([c.num_particles for c in tree.clusters])
    direct_pairs, approx_pairs = count_pairs(lists, batch_set.batches,
                                             sizes, config.degree)
    stats = RunStats(n_clusters=len(tree.clusters),
                     n_batches=len(batch_set.batches),
                     direct_pairs=direct_pairs, approx_pairs=approx_pairs,
                     setup_s=t1 - t0, precompute_s=t2 - t1,
                     compute_s=t3 - t2, total_s=t3 - t0)
    return phi, stats
