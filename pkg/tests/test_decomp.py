"""Distributed-memory simulation tests: RCB partition, windows, LETs.

The rank pipeline here is rebuilt step by step (partition, domains,
moments, publish, open, LET) where a test needs to poke at the
intermediate state; `run_distributed` covers the orchestrated path.
"""
import numpy as np
import pytest
from conftest import build_rank_state, direct_oracle, random_system

from bltc.decomp import (
    WindowNotReady,
    build_let,
    let_violations,
    rcb_partition,
    run_distributed,
)
from bltc.engine import EvalConfig, treecode_potentials
from bltc.kernels import coulomb
from bltc.particles import ParticleSystem, Points


# ---------------------------------------------------------------------------
# recursive coordinate bisection


def test_rcb_eight_corners_two_ranks():
    corners = np.array([[sx, sy, sz]
                        for sx in (-0.5, 0.5)
                        for sy in (-0.5, 0.5)
                        for sz in (-0.5, 0.5)])
    part = rcb_partition(Points.from_array(corners), 2)
    np.testing.assert_array_equal(part.counts, [4, 4])
    # The cut separates the x halves; each rank gets one sign of x.
    for r in (0, 1):
        xs = corners[part.rank_indices(r), 0]
        assert len(set(xs)) == 1


def test_rcb_four_ranks_quadrants():
    rng = np.random.default_rng(51)
    pts = rng.uniform(-1, 1, (4000, 3))
    pts[:, 2] = 0.0
    part = rcb_partition(Points.from_array(pts), 4)
    np.testing.assert_array_equal(part.counts, [1000, 1000, 1000, 1000])
    # Every point sits inside its rank's region slab.
    for r in range(4):
        idx = part.rank_indices(r)
        region = part.regions[r]
        for d in range(3):
            coords = pts[idx, d]
            assert coords.min() >= region.lo[d] - 1e-12
            assert coords.max() <= region.hi[d] + 1e-12


def test_rcb_indices_partition_everything():
    rng = np.random.default_rng(53)
    pts = Points.from_array(rng.uniform(-1, 1, (5000, 3)))
    part = rcb_partition(pts, 5)
    all_idx = np.concatenate([part.rank_indices(r) for r in range(5)])
    assert np.array_equal(np.sort(all_idx), np.arange(5000))


def test_rcb_fair_shares_100k_six_ranks():
    rng = np.random.default_rng(57)
    pts = Points.from_array(rng.uniform(-1, 1, (100_000, 3)))
    part = rcb_partition(pts, 6)
    assert set(part.counts.tolist()) == {16666, 16667}
    assert part.counts.sum() == 100_000


def test_rcb_counts_within_one_awkward_sizes():
    rng = np.random.default_rng(59)
    for n, ranks in ((1003, 7), (97, 13), (64, 64), (100, 3)):
        pts = Points.from_array(rng.uniform(-1, 1, (n, 3)))
        part = rcb_partition(pts, ranks)
        counts = part.counts
        assert counts.sum() == n
        assert counts.max() - counts.min() <= 1


def test_rcb_single_rank_owns_everything():
    rng = np.random.default_rng(61)
    pts = Points.from_array(rng.uniform(-1, 1, (200, 3)))
    part = rcb_partition(pts, 1)
    assert np.all(part.assignment == 0)
    np.testing.assert_array_equal(part.counts, [200])


def test_rcb_rejects_more_ranks_than_points():
    pts = Points.from_array(np.random.default_rng(0).uniform(-1, 1, (3, 3)))
    with pytest.raises(ValueError):
        rcb_partition(pts, 4)
    with pytest.raises(ValueError):
        rcb_partition(pts, 0)


def test_rcb_deterministic():
    rng = np.random.default_rng(63)
    pts = Points.from_array(rng.uniform(-1, 1, (3000, 3)))
    a = rcb_partition(pts, 8).assignment
    b = rcb_partition(pts, 8).assignment
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# publication windows


def test_windows_unreadable_before_open():
    system = random_system(600, 71)
    cfg = EvalConfig(theta=0.7, degree=3, leaf_size=100, batch_size=100)
    part, registry, domains = build_rank_state(system, cfg, 2)
    with pytest.raises(WindowNotReady):
        registry.get(1)
    registry.open()
    assert registry.get(1).rank == 1


def test_published_windows_are_frozen():
    system = random_system(600, 73)
    cfg = EvalConfig(theta=0.7, degree=3, leaf_size=100, batch_size=100)
    part, registry, domains = build_rank_state(system, cfg, 2)
    registry.open()
    win = registry.get(0)
    with pytest.raises(ValueError):
        win.source_x[0] = 99.0
    with pytest.raises(ValueError):
        win.moments[0, 0] = 99.0
    with pytest.raises(ValueError):
        win.tree.center[0, 0] = 99.0


# ---------------------------------------------------------------------------
# locally essential trees


def test_let_is_sufficient_and_minimal():
    system = random_system(12_000, 77)
    cfg = EvalConfig(theta=0.7, degree=4, leaf_size=300, batch_size=300)
    part, registry, domains = build_rank_state(system, cfg, 3)
    registry.open()
    for domain in domains:
        let = build_let(domain, registry, cfg)
        assert let_violations(let) == {"sufficiency": 0, "minimality": 0}


def test_let_violation_counters_detect_tampering():
    system = random_system(8000, 79)
    cfg = EvalConfig(theta=0.7, degree=4, leaf_size=300, batch_size=300)
    part, registry, domains = build_rank_state(system, cfg, 2)
    registry.open()
    let = build_let(domains[0], registry, cfg)
    rd = let.remotes[1]
    assert rd.moments, "expected at least one approximated remote cluster"
    rd.moments.pop(next(iter(rd.moments)))
    rd.particles[10**6] = ()
    v = let_violations(let)
    assert v["sufficiency"] == 1
    assert v["minimality"] == 1


def test_fetch_stats_match_let_contents():
    system = random_system(10_000, 83)
    cfg = EvalConfig(theta=0.7, degree=4, leaf_size=250, batch_size=250)
    part, registry, domains = build_rank_state(system, cfg, 3)
    registry.open()
    let = build_let(domains[1], registry, cfg)
    for owner, rd in let.remotes.items():
        assert rd.stats.tree_records == rd.tree.n_clusters
        assert rd.stats.moments == len(rd.moments)
        assert rd.stats.clusters == len(set(rd.moments) | set(rd.particles))
        assert rd.stats.particles == sum(p[0].shape[0]
                                         for p in rd.particles.values())


def test_face_neighbor_fetches_more_particles_than_edge_neighbor():
    # With four ranks the first cut splits x, the second each y: ranks 0
    # and 1 share a face while ranks 0 and 3 only meet along an edge, so
    # the direct-sum halo pulled from rank 1 is larger.
    system = random_system(20_000, 99)
    cfg = EvalConfig(theta=0.7, degree=5, leaf_size=400, batch_size=400)
    part, registry, domains = build_rank_state(system, cfg, 4)
    registry.open()
    let = build_let(domains[0], registry, cfg)
    assert let.remotes[1].stats.particles > let.remotes[3].stats.particles


def test_fetch_volume_grows_sublinearly():
    cfg = EvalConfig(theta=0.7, degree=5, leaf_size=400, batch_size=400)
    totals = []
    for n in (20_000, 40_000):
        system = random_system(n, 99)
        part, registry, domains = build_rank_state(system, cfg, 4)
        registry.open()
        particles = 0
        remote_total = 0
        for domain in domains:
            let = build_let(domain, registry, cfg)
            particles += sum(rd.stats.particles
                             for rd in let.remotes.values())
            remote_total += n - domain.tree.charges.shape[0]
        totals.append((particles, particles / remote_total))
    # Doubling N far less than doubles the fetched halo, and the halo's
    # share of the remote particles shrinks.
    assert totals[1][0] < 2.0 * totals[0][0]
    assert totals[1][1] < totals[0][1]


# ---------------------------------------------------------------------------
# the orchestrated runs


def test_single_rank_reproduces_serial_engine_bitwise():
    system = random_system(5000, 91)
    cfg = EvalConfig(theta=0.7, degree=5, leaf_size=250, batch_size=250)
    serial, _ = treecode_potentials(system, cfg)
    distributed, stats = run_distributed(system, cfg, ranks=1)
    np.testing.assert_array_equal(distributed, serial)
    assert stats.n_ranks == 1
    assert stats.fetch_stats == {}


def test_multirank_accuracy_against_brute_force():
    system = random_system(8000, 93)
    cfg = EvalConfig(theta=0.7, degree=7, leaf_size=300, batch_size=300)
    phi, stats = run_distributed(system, cfg, ranks=4)
    ref = direct_oracle(system, coulomb())
    err = np.linalg.norm(phi - ref) / np.linalg.norm(ref)
    assert err <= 1e-5
    np.testing.assert_array_equal(np.sort(stats.rank_counts), [2000] * 4)
    assert set(stats.fetch_stats) == {(o, w) for o in range(4)
                                      for w in range(4) if o != w}


def test_distributed_thread_count_does_not_change_bits():
    system = random_system(6000, 95)
    cfg = EvalConfig(theta=0.7, degree=5, leaf_size=250, batch_size=250)
    phi1, _ = run_distributed(system, cfg, ranks=3, threads=1)
    phi4, _ = run_distributed(system, cfg, ranks=3, threads=4)
    np.testing.assert_array_equal(phi1, phi4)


def test_distributed_requires_coincident_sets():
    rng = np.random.default_rng(97)
    targets = Points.from_array(rng.uniform(-1, 1, (100, 3)))
    sources = Points.from_array(rng.uniform(-1, 1, (100, 3)))
    system = ParticleSystem(targets=targets, sources=sources,
                            charges=rng.uniform(-1, 1, 100))
    cfg = EvalConfig(theta=0.7, degree=3)
    with pytest.raises(ValueError):
        run_distributed(system, cfg, ranks=2)
