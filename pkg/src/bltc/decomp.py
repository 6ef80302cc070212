"""Simulated distributed execution: RCB ranks, windows, locally essential trees.

Ranks are concurrent tasks in one process.  Each rank owns a contiguous
slab of particles from recursive coordinate bisection, builds its own
source tree and moments, and publishes them as read-only windows.  After
a global publish barrier every rank performs one-sided reads: step one
fetches each remote tree array and runs the usual acceptance recursion
against it, step two fetches exactly the moments and source particles
its interaction lists reference.  Evaluation is then fully local.

The orchestration runs in four rounds (trees, moments, LET construction,
evaluation) with the publish barrier between rounds two and three; the
extra round boundaries only serve phase timing and change no results.
Every batch writes a disjoint output slice in a fixed order (local tree
first, then remote ranks ascending), so potentials are bitwise
reproducible for any thread count, and a single-rank run reproduces the
serial engine exactly.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import (EvalConfig, InteractionLists, _run_batch, _approx_tile,
                     _direct_tile, build_interaction_lists, count_pairs,
                     lists_against_root)
from .interp import ChebyshevGrid1D
from .moments import compute_all_moments
from .particles import ParticleSystem, Points
from .tree import (BatchSet, BoundingBox, SourceTree, build_source_tree,
                   build_target_batches)


class WindowNotReady(RuntimeError):
    """Raised on a window read attempted before the global publish barrier."""


# ---------------------------------------------------------------------------
# Recursive coordinate bisection


@dataclass(eq=False)
class CutNode:
    """One hyperplane cut: ranks below go left, the rest go right."""

    axis: int
    value: float
    left: "CutNode | int"
    right: "CutNode | int"


@dataclass(eq=False)
class RcbPartition:
    assignment: np.ndarray       # original index -> rank id
    order: np.ndarray            # original indices grouped rank-contiguously
    rank_start: np.ndarray       # length R+1 offsets into order
    regions: list[BoundingBox]   # rank slabs tiling the root box
    cuts: CutNode | int

    def rank_indices(self, rank: int) -> np.ndarray:
        return self.order[self.rank_start[rank]:self.rank_start[rank + 1]]

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.rank_start)


def _cut_axis(lo: np.ndarray, hi: np.ndarray) -> int:
    ext = hi - lo
    return int(np.argmax(ext))   # ties resolve to the lowest axis


def rcb_partition(points: Points, ranks: int) -> RcbPartition:
    """Assign every particle to a rank by recursive coordinate bisection.

    Ranks split into floor/ceil halves; the cut is placed at an exact
    order statistic of the coordinate along the longest extent of the
    current slab, so each rank group receives its fair share of the
    particle count and the final per-rank counts differ by at most one.
    """
    n = len(points)
    if ranks < 1:
        raise ValueError("ranks must be >= 1")
    if n < ranks:
        raise ValueError(f"need at least one particle per rank ({n} < {ranks})")

    coords = (points.x, points.y, points.z)
    root_lo = np.array([c.min() for c in coords])
    root_hi = np.array([c.max() for c in coords])

    order = np.arange(n)
    assignment = np.empty(n, dtype=np.int64)
    # Fair-share targets: rank r gets (N(r+1))//R - (Nr)//R particles.
    shares = np.array([(n * (r + 1)) // ranks - (n * r) // ranks
                       for r in range(ranks)], dtype=np.int64)
    regions: list[BoundingBox | None] = [None] * ranks

    def recurse(start: int, stop: int, r0: int, r1: int,
                lo: np.ndarray, hi: np.ndarray):
        if r1 - r0 == 1:
            assignment[order[start:stop]] = r0
            regions[r0] = BoundingBox(lo.copy(), hi.copy())
            return r0
        rm = r0 + (r1 - r0) // 2
        n_left = int(shares[r0:rm].sum())
        axis = _cut_axis(lo, hi)
        idx = order[start:stop]
        vals = coords[axis][idx]
        part = np.argpartition(vals, n_left - 1) if n_left > 0 else None
        if part is not None:
            idx = idx[part]
            order[start:stop] = idx
        left_max = float(coords[axis][idx[:n_left]].max())
        right_min = float(coords[axis][idx[n_left:]].min())
        cut = 0.5 * (left_max + right_min)
        lo_hi = hi.copy()
        lo_hi[axis] = cut
        hi_lo = lo.copy()
        hi_lo[axis] = cut
        left = recurse(start, start + n_left, r0, rm, lo, lo_hi)
        right = recurse(start + n_left, stop, rm, r1, hi_lo, hi)
        return CutNode(axis=axis, value=cut, left=left, right=right)

    cuts = recurse(0, n, 0, ranks, root_lo, root_hi)
    rank_start = np.concatenate(([0], np.cumsum(shares)))
    return RcbPartition(assignment=assignment, order=order,
                        rank_start=rank_start, regions=regions, cuts=cuts)


# ---------------------------------------------------------------------------
# Published windows


@dataclass(eq=False)
class TreeArray:
    """Flattened breadth-first cluster records of one rank's source tree.

    Child indices are contiguous runs because clusters are numbered in
    breadth-first order.  Box bounds ride along so a reader can rebuild
    the interpolation grids without a second round trip, and particle
    ranges let it fetch direct-sum source slices by cluster id.
    """

    center: np.ndarray       # (nc, 3)
    radius: np.ndarray       # (nc,)
    count: np.ndarray        # (nc,)
    eligible: np.ndarray     # (nc,) bool
    child_start: np.ndarray  # (nc,)
    child_count: np.ndarray  # (nc,)
    box_lo: np.ndarray       # (nc, 3)
    box_hi: np.ndarray       # (nc, 3)
    range_start: np.ndarray  # (nc,) particle slice in the owner's arrays
    range_stop: np.ndarray   # (nc,)

    @property
    def n_clusters(self) -> int:
        return self.center.shape[0]

    @classmethod
    def from_tree(cls, tree: SourceTree) -> "TreeArray":
        nc = len(tree.clusters)
        center = np.empty((nc, 3))
        radius = np.empty(nc)
        count = np.empty(nc, dtype=np.int64)
        eligible = np.empty(nc, dtype=bool)
        child_start = np.zeros(nc, dtype=np.int64)
        child_count = np.zeros(nc, dtype=np.int64)
        box_lo = np.empty((nc, 3))
        box_hi = np.empty((nc, 3))
        range_start = np.empty(nc, dtype=np.int64)
        range_stop = np.empty(nc, dtype=np.int64)
        for c in tree.clusters:
            i = c.index
            center[i] = c.center
            radius[i] = c.radius
            count[i] = c.num_particles
            eligible[i] = c.eligible
            if c.children:
                child_start[i] = c.children[0].index
                child_count[i] = len(c.children)
            box_lo[i] = c.box.lo
            box_hi[i] = c.box.hi
            range_start[i] = c.start
            range_stop[i] = c.stop
        return cls(center, radius, count, eligible, child_start, child_count,
                   box_lo, box_hi, range_start, range_stop)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(eq=False)
class RankWindows:
    """One rank's published, immutable data: tree array, sources, moments."""

    rank: int
    degree: int
    tree: TreeArray
    source_x: np.ndarray
    source_y: np.ndarray
    source_z: np.ndarray
    charges: np.ndarray
    moments: np.ndarray      # (nc, (n+1)^3), zero rows for ineligible clusters


class WindowRegistry:
    """Holds every rank's windows behind a global publish barrier."""

    def __init__(self, ranks: int):
        self.ranks = ranks
        self._windows: dict[int, RankWindows] = {}
        self._open = False

    def publish(self, windows: RankWindows) -> None:
        if self._open:
            raise RuntimeError("registry already opened for reading")
        self._windows[windows.rank] = windows

    def open(self) -> None:
        missing = [r for r in range(self.ranks) if r not in self._windows]
        if missing:
            raise RuntimeError(f"ranks {missing} have not published")
        self._open = True

    def get(self, owner: int) -> RankWindows:
        if not self._open:
            raise WindowNotReady(
                f"window of rank {owner} read before the publish barrier")
        return self._windows[owner]


@dataclass(eq=False)
class RankDomain:
    """Everything one simulated rank owns locally."""

    rank: int
    region: BoundingBox
    original_indices: np.ndarray
    system: ParticleSystem
    tree: SourceTree
    batch_set: BatchSet
    moments: list | None = None
    windows: RankWindows | None = None


def publish_windows(domain: RankDomain, registry: WindowRegistry) -> None:
    """Freeze the rank's tree array, sources, and moments and publish them."""
    tree = domain.tree
    nc = len(tree.clusters)
    m = (tree.degree + 1) ** 3
    moments = np.zeros((nc, m))
    for cm in domain.moments:
        if cm is not None:
            moments[cm.cluster_index] = cm.q_hat
    ta = TreeArray.from_tree(tree)
    for arr in (ta.center, ta.radius, ta.count, ta.eligible, ta.child_start,
                ta.child_count, ta.box_lo, ta.box_hi, ta.range_start,
                ta.range_stop):
        _freeze(arr)
    windows = RankWindows(rank=domain.rank, degree=tree.degree, tree=ta,
                          source_x=_freeze(tree.points.x.copy()),
                          source_y=_freeze(tree.points.y.copy()),
                          source_z=_freeze(tree.points.z.copy()),
                          charges=_freeze(tree.charges.copy()),
                          moments=_freeze(moments))
    domain.windows = windows
    registry.publish(windows)


# ---------------------------------------------------------------------------
# Locally essential tree


class RemoteClusterView:
    """Cluster-shaped view over one fetched tree-array record.

    Exposes exactly the attributes the acceptance recursion reads, so
    `engine.mac_accept` and the list builder run unchanged on remote
    metadata.
    """

    __slots__ = ("_ta", "index", "children")

    def __init__(self, ta: TreeArray, index: int):
        self._ta = ta
        self.index = index
        self.children: list[RemoteClusterView] = []

    @property
    def center(self) -> np.ndarray:
        return self._ta.center[self.index]

    @property
    def radius(self) -> float:
        return float(self._ta.radius[self.index])

    @property
    def eligible(self) -> bool:
        return bool(self._ta.eligible[self.index])

    @property
    def num_particles(self) -> int:
        return int(self._ta.count[self.index])

    @property
    def is_leaf(self) -> bool:
        return not self.children


def remote_tree_views(ta: TreeArray) -> RemoteClusterView:
    """Rebuild the cluster hierarchy of a fetched tree array; returns its root."""
    views = [RemoteClusterView(ta, i) for i in range(ta.n_clusters)]
    for i, v in enumerate(views):
        s = int(ta.child_start[i])
        v.children = views[s:s + int(ta.child_count[i])]
    return views[0]


@dataclass(eq=False)
class FetchStats:
    """One-sided read volume between one origin/owner rank pair."""

    tree_records: int = 0
    clusters: int = 0
    moments: int = 0
    particles: int = 0


@dataclass(eq=False)
class RemoteData:
    """Everything fetched from one remote rank, keyed by its cluster ids."""

    owner: int
    tree: TreeArray
    lists: InteractionLists
    moments: dict[int, np.ndarray]
    grids: dict[int, tuple]
    particles: dict[int, tuple]
    stats: FetchStats


@dataclass(eq=False)
class LocallyEssentialTree:
    origin: int
    local_lists: InteractionLists
    remotes: dict[int, RemoteData] = field(default_factory=dict)


def build_let(domain: RankDomain, registry: WindowRegistry,
              config: EvalConfig) -> LocallyEssentialTree:
    """Two-step LET construction by one-sided reads of published windows.

    Step one fetches each remote rank's tree array and runs the local
    batches' acceptance recursion against it, yielding per-batch remote
    interaction lists.  Step two fetches the moment rows of every
    approximation-list cluster and the source slices of every
    direct-list cluster, each exactly once.
    """
    local_lists = build_interaction_lists(domain.batch_set, domain.tree, config)
    let = LocallyEssentialTree(origin=domain.rank, local_lists=local_lists)
    for owner in range(registry.ranks):
        if owner == domain.rank:
            continue
        win = registry.get(owner)
        ta = win.tree
        root = remote_tree_views(ta)
        lists = lists_against_root(domain.batch_set.batches, root, config)
        stats = FetchStats(tree_records=ta.n_clusters)

        approx_ids = sorted({ci for lst in lists.approx for ci in lst})
        direct_ids = sorted({ci for lst in lists.direct for ci in lst})
        stats.clusters = len(set(approx_ids) | set(direct_ids))

        moments: dict[int, np.ndarray] = {}
        grids: dict[int, tuple] = {}
        for ci in approx_ids:
            moments[ci] = win.moments[ci]
            grids[ci] = tuple(
                ChebyshevGrid1D.build(win.degree, float(ta.box_lo[ci][d]),
                                      float(ta.box_hi[ci][d]))
                for d in range(3))
        stats.moments = len(approx_ids)

        particles: dict[int, tuple] = {}
        for ci in direct_ids:
            s, e = int(ta.range_start[ci]), int(ta.range_stop[ci])
            particles[ci] = (win.source_x[s:e], win.source_y[s:e],
                             win.source_z[s:e], win.charges[s:e])
            stats.particles += e - s

        let.remotes[owner] = RemoteData(owner=owner, tree=ta, lists=lists,
                                        moments=moments, grids=grids,
                                        particles=particles, stats=stats)
    return let


def let_violations(let: LocallyEssentialTree) -> dict[str, int]:
    """Count sufficiency and minimality violations of a built LET.

    Sufficiency: every cluster referenced by some batch list has its
    moments (approximation lists) or particles (direct lists) present.
    Minimality: nothing was fetched that no batch references.
    """
    sufficiency = 0
    minimality = 0
    for rd in let.remotes.values():
        ref_a = {ci for lst in rd.lists.approx for ci in lst}
        ref_d = {ci for lst in rd.lists.direct for ci in lst}
        sufficiency += len(ref_a - set(rd.moments))
        sufficiency += len(ref_d - set(rd.particles))
        minimality += len(set(rd.moments) - ref_a)
        minimality += len(set(rd.particles) - ref_d)
    return {"sufficiency": sufficiency, "minimality": minimality}


# ---------------------------------------------------------------------------
# Per-rank evaluation and the orchestrator


def _eval_rank(domain: RankDomain, let: LocallyEssentialTree,
               config: EvalConfig) -> np.ndarray:
    """Potentials of the rank's own targets, in the rank's original order.

    Per batch: local tree contributions first, then each remote rank's
    fetched data in ascending rank order, matching the serial engine's
    accumulation order when no remotes exist.
    """
    batch_set = domain.batch_set
    out = np.zeros(len(batch_set.points))
    carry = np.zeros_like(out)
    kind, kappa = config.kernel.code, config.kernel.kappa
    owners = sorted(let.remotes)
    tx, ty, tz = batch_set.points.x, batch_set.points.y, batch_set.points.z
    for b in batch_set.batches:
        _run_batch(b, batch_set.points, domain.tree, domain.moments,
                   let.local_lists.approx[b.index],
                   let.local_lists.direct[b.index], kind, kappa, out, carry)
        for owner in owners:
            rd = let.remotes[owner]
            for ci in rd.lists.approx[b.index]:
                g1, g2, g3 = rd.grids[ci]
                _approx_tile(tx, ty, tz, b.start, b.stop,
                             g1.points, g2.points, g3.points,
                             rd.moments[ci], kind, kappa, out)
            for ci in rd.lists.direct[b.index]:
                px, py, pz, pq = rd.particles[ci]
                _direct_tile(tx, ty, tz, b.start, b.stop,
                             px, py, pz, pq, 0, px.shape[0],
                             kind, kappa, out, carry)
    return (out + carry)[batch_set.perm]


@dataclass(eq=False)
class RankTimings:
    rank: int
    tree_s: float
    moments_s: float
    let_s: float
    eval_s: float


@dataclass(eq=False)
class DistributedStats:
    n_ranks: int
    rank_counts: np.ndarray
    n_clusters: int
    n_batches: int
    direct_pairs: int
    approx_pairs: int
    fetch_stats: dict[tuple[int, int], FetchStats]
    rank_timings: list[RankTimings]
    setup_s: float
    precompute_s: float
    compute_s: float
    total_s: float


def run_distributed(system: ParticleSystem, config: EvalConfig, ranks: int,
                    threads: int = 1) -> tuple[np.ndarray, DistributedStats]:
    """Run the full pipeline over simulated ranks; one rank reproduces
    the serial engine bitwise.

    Rounds: per-rank tree and batch construction, per-rank moments, the
    publish barrier, per-rank LET construction, per-rank evaluation,
    final gather.  `threads` caps the rank task pool; results do not
    depend on it.
    """
    if not system.coincident:
        raise ValueError("distributed runs require targets and sources "
                         "to be the same particle set")
    t_start = time.perf_counter()
    part = rcb_partition(system.sources, ranks)

    def run_round(fn, items):
        if threads <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    timings = {r: [0.0, 0.0, 0.0, 0.0] for r in range(ranks)}

    def build_domain(rank: int) -> RankDomain:
        t0 = time.perf_counter()
        idx = part.rank_indices(rank)
        pts = Points(system.sources.x[idx], system.sources.y[idx],
                     system.sources.z[idx])
        sub = ParticleSystem.from_single_set(pts, system.charges[idx])
        tree = build_source_tree(sub.sources, sub.charges,
                                 config.leaf_size, config.degree)
        batch_set = build_target_batches(sub.targets, config.batch_size)
        domain = RankDomain(rank=rank, region=part.regions[rank],
                            original_indices=idx, system=sub,
                            tree=tree, batch_set=batch_set)
        timings[rank][0] = time.perf_counter() - t0
        return domain

    t0 = time.perf_counter()
    domains = run_round(build_domain, range(ranks))
    t_trees = time.perf_counter() - t0

    def make_moments(domain: RankDomain) -> None:
        t0 = time.perf_counter()
        domain.moments = compute_all_moments(domain.tree)
        timings[domain.rank][1] = time.perf_counter() - t0

    t0 = time.perf_counter()
    run_round(make_moments, domains)
    t_moments = time.perf_counter() - t0

    registry = WindowRegistry(ranks)
    for domain in domains:
        publish_windows(domain, registry)
    registry.open()

    def make_let(domain: RankDomain) -> LocallyEssentialTree:
        t0 = time.perf_counter()
        let = build_let(domain, registry, config)
        timings[domain.rank][2] = time.perf_counter() - t0
        return let

    t0 = time.perf_counter()
    lets = run_round(make_let, domains)
    t_lets = time.perf_counter() - t0

    def evaluate(pair) -> np.ndarray:
        domain, let = pair
        t0 = time.perf_counter()
        phi = _eval_rank(domain, let, config)
        timings[domain.rank][3] = time.perf_counter() - t0
        return phi

    t0 = time.perf_counter()
    rank_phis = run_round(evaluate, list(zip(domains, lets)))
    t_eval = time.perf_counter() - t0

    phi = np.empty(len(system.targets))
    for domain, rphi in zip(domains, rank_phis):
        phi[domain.original_indices] = rphi

    direct_pairs = 0
    approx_pairs = 0
    n_clusters = 0
    n_batches = 0
    fetch_stats: dict[tuple[int, int], FetchStats] = {}
    for domain, let in zip(domains, lets):
        sizes = np.array([c.num_particles for c in domain.tree.clusters])
        d, a = count_pairs(let.local_lists, domain.batch_set.batches,
                           sizes, config.degree)
        direct_pairs += d
        approx_pairs += a
        for owner, rd in let.remotes.items():
            d, a = count_pairs(rd.lists, domain.batch_set.batches,
                               rd.tree.count, config.degree)
            direct_pairs += d
            approx_pairs += a
            fetch_stats[(domain.rank, owner)] = rd.stats
        n_clusters += len(domain.tree.clusters)
        n_batches += len(domain.batch_set.batches)

    total = time.perf_counter() - t_start
    stats = DistributedStats(
        n_ranks=ranks, rank_counts=part.counts, n_clusters=n_clusters,
        n_batches=n_batches, direct_pairs=direct_pairs,
        approx_pairs=approx_pairs, fetch_stats=fetch_stats,
        rank_timings=[RankTimings(r, *timings[r]) for r in range(ranks)],
        setup_s=t_trees + t_lets, precompute_s=t_moments,
        compute_s=t_eval, total_s=total)
    return phi, stats
