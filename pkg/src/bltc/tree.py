"""Source cluster tree and target batches.

Both structures come from the same recursive space partition: a box is
split at its midpoint along every dimension whose extent exceeds
``L_max / sqrt(2)`` (so a split never produces children with aspect
ratio worse than sqrt(2)), child boxes are shrunk to the minimal
bounding box of their particles, and recursion stops once a node holds
at most ``max_count`` particles.  Empty octants are dropped.

Particles are physically reordered during construction so that every
cluster (and every target batch) owns one contiguous index range; the
evaluation loops then stream straight through memory.  The permutation
mapping original to reordered indices is kept alongside the arrays.

Cluster boxes with an extent below :data:`DEGENERATE_EXTENT` in some
dimension cannot carry a usable interpolation grid in that dimension and
are marked ineligible; the interaction engine never approximates them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .interp import ChebyshevGrid1D
from .particles import Points

ASPECT_LIMIT = math.sqrt(2.0)
DEGENERATE_EXTENT = 1e-14


class ZeroExtent(ValueError):
    """Raised when a box has collapsed to a point in every dimension."""


@dataclass(frozen=True, eq=False)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    @property
    def extents(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> float:
        """Half the box diagonal."""
        return 0.5 * float(np.sqrt(np.sum((self.hi - self.lo) ** 2)))


def split_dimensions(box: BoundingBox) -> list[int]:
    """Dimensions to cut: those with extent strictly above L_max / sqrt(2).

    The longest dimension always qualifies; when all extents are equal
    all three do.  Raises :class:`ZeroExtent` when every extent is below
    the degeneracy threshold, in which case no useful cut exists.
    """
    ext = box.extents
    if bool((ext < DEGENERATE_EXTENT).all()):
        raise ZeroExtent(f"box extents {ext} all below {DEGENERATE_EXTENT}")
    cutoff = float(ext.max()) / ASPECT_LIMIT
    return [d for d in range(3) if float(ext[d]) > cutoff]


@dataclass(eq=False)
class Cluster:
    """One node of the source tree over a contiguous particle range."""

    index: int
    box: BoundingBox
    start: int
    stop: int
    center: np.ndarray
    radius: float
    eligible: bool
    grids: tuple[ChebyshevGrid1D, ChebyshevGrid1D, ChebyshevGrid1D]
    children: list["Cluster"] = field(default_factory=list)

    @property
    def num_particles(self) -> int:
        return self.stop - self.start

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(eq=False)
class SourceTree:
    """Cluster hierarchy plus the reordered source arrays it indexes."""

    points: Points
    charges: np.ndarray
    perm: np.ndarray          # original index -> reordered index
    root: Cluster
    clusters: list[Cluster]   # breadth-first order; clusters[c.index] is c
    degree: int
    leaf_size: int


@dataclass(eq=False)
class TargetBatch:
    """A contiguous run of targets with its bounding-ball geometry."""

    index: int
    start: int
    stop: int
    center: np.ndarray
    radius: float

    @property
    def num_targets(self) -> int:
        return self.stop - self.start


@dataclass(eq=False)
class BatchSet:
    points: Points            # reordered targets
    perm: np.ndarray          # original index -> reordered index
    batches: list[TargetBatch]
    batch_size: int


@dataclass(eq=False)
class _Node:
    start: int
    stop: int
    lo: np.ndarray
    hi: np.ndarray
    children: list["_Node"] = field(default_factory=list)


def _minimal_bounds(x, y, z, idx):
    lo = np.array([x[idx].min(), y[idx].min(), z[idx].min()])
    hi = np.array([x[idx].max(), y[idx].max(), z[idx].max()])
    return lo, hi


def _split_recursive(x, y, z, order, start, stop, max_count) -> _Node:
    idx = order[start:stop]
    lo, hi = _minimal_bounds(x, y, z, idx)
    node = _Node(start, stop, lo, hi)
    if stop - start <= max_count:
        return node
    try:
        dims = split_dimensions(BoundingBox(lo, hi))
    except ZeroExtent:
        # All particles numerically coincide; an oversized leaf is the
        # only option.  It is ineligible downstream, so always summed
        # directly.
        return node
    mid = 0.5 * (lo + hi)
    coords = (x, y, z)
    code = np.zeros(stop - start, dtype=np.int64)
    for d in dims:
        code = 2 * code + (coords[d][idx] >= mid[d])
    counts = np.bincount(code, minlength=2 ** len(dims))
    if int((counts > 0).sum()) < 2:
        # A midpoint cut of a minimal box can only fail to separate when
        # the extent is a handful of ulps; collapsing the trivial level
        # into this node avoids infinite recursion.
        return node
    order[start:stop] = idx[np.argsort(code, kind="stable")]
    offset = start
    for c in range(counts.shape[0]):
        cnt = int(counts[c])
        if cnt == 0:
            continue
        node.children.append(
            _split_recursive(x, y, z, order, offset, offset + cnt, max_count))
        offset += cnt
    return node


def _partition(x, y, z, max_count):
    n = x.shape[0]
    if n == 0:
        raise ValueError("cannot partition an empty particle set")
    order = np.arange(n)
    root = _split_recursive(x, y, z, order, 0, n, max_count)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = np.arange(n)
    return root, order, perm


def build_source_tree(points: Points, charges: np.ndarray,
                      leaf_size: int, degree: int) -> SourceTree:
    """Build the source cluster tree and reorder sources cluster-contiguously."""
    if leaf_size < 1:
        raise ValueError("leaf_size must be >= 1")
    root_node, order, perm = _partition(points.x, points.y, points.z, leaf_size)

    clusters: list[Cluster] = []
    queue: list[tuple[_Node, Cluster | None]] = [(root_node, None)]
    head = 0
    while head < len(queue):
        node, parent = queue[head]
        head += 1
        box = BoundingBox(node.lo, node.hi)
        ext = box.extents
        eligible = bool((ext >= DEGENERATE_EXTENT).all())
        grids = tuple(ChebyshevGrid1D.build(degree, float(node.lo[d]), float(node.hi[d]))
                      for d in range(3))
        cluster = Cluster(index=len(clusters), box=box,
                          start=node.start, stop=node.stop,
                          center=box.center, radius=box.radius,
                          eligible=eligible, grids=grids)
        clusters.append(cluster)
        if parent is not None:
            parent.children.append(cluster)
        for child in node.children:
            queue.append((child, cluster))

    reordered = Points(points.x[order], points.y[order], points.z[order])
    return SourceTree(points=reordered, charges=charges[order], perm=perm,
                      root=clusters[0], clusters=clusters,
                      degree=degree, leaf_size=leaf_size)


def build_target_batches(points: Points, batch_size: int) -> BatchSet:
    """Partition targets into geometrically compact batches.

    Batches are the leaves of the same recursive split used for the
    source tree, so with identical point sets and identical size limits
    the batch ranges coincide with the source leaf ranges.  Each batch
    carries its minimal box center and half-diagonal radius for the
    batch-uniform acceptance test.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    root_node, order, perm = _partition(points.x, points.y, points.z, batch_size)

    batches: list[TargetBatch] = []

    def collect(node: _Node) -> None:
        if node.children:
            for child in node.children:
                collect(child)
            return
        box = BoundingBox(node.lo, node.hi)
        batches.append(TargetBatch(index=len(batches),
                                   start=node.start, stop=node.stop,
                                   center=box.center, radius=box.radius))

    collect(root_node)
    reordered = Points(points.x[order], points.y[order], points.z[order])
    return BatchSet(points=reordered, perm=perm, batches=batches,
                    batch_size=batch_size)


def max_depth(cluster: Cluster) -> int:
    """Depth of the subtree under ``cluster`` (a lone leaf has depth 0)."""
    if cluster.is_leaf:
        return 0
    return 1 + max(max_depth(child) for child in cluster.children)
