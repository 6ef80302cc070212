"""Shared test helpers.

`direct_oracle` is the reference brute-force summation used across the
test modules.  It is written with numpy broadcasting and numpy's own
reduction order, sharing no code with the compiled evaluation tiles.
`moments_reference` likewise evaluates the moment definition directly,
without the factored barycentric denominators of the production path.
"""
import numpy as np

from bltc.decomp import RankDomain, WindowRegistry, publish_windows, rcb_partition
from bltc.interp import lagrange_basis_all
from bltc.moments import compute_all_moments
from bltc.particles import ParticleSystem, Points
from bltc.tree import build_source_tree, build_target_batches


def direct_oracle(system, kernel, chunk=512):
    """Brute-force potentials by broadcasting, chunked over targets."""
    t, s, q = system.targets, system.sources, system.charges
    n = len(t)
    phi = np.empty(n)
    for i0 in range(0, n, chunk):
        i1 = min(i0 + chunk, n)
        dx = t.x[i0:i1, None] - s.x[None, :]
        dy = t.y[i0:i1, None] - s.y[None, :]
        dz = t.z[i0:i1, None] - s.z[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        sing = d2 < 1e-28
        d = np.sqrt(np.where(sing, 1.0, d2))
        if kernel.code == 0:
            g = 1.0 / d
        elif kernel.code == 1:
            g = np.exp(-kernel.kappa * d) / d
        else:
            g = np.ones_like(d)
        g[sing] = 0.0
        phi[i0:i1] = g @ q
    return phi


def random_system(n, seed, lo=-1.0, hi=1.0):
    """A coincident target/source cloud with seeded uniform charges."""
    rng = np.random.default_rng(seed)
    pts = Points.from_array(rng.uniform(lo, hi, (n, 3)))
    return ParticleSystem.from_single_set(pts, rng.uniform(-1, 1, n))


def moments_reference(cluster, tree):
    """Moments straight from the definition: basis outer products per source."""
    g1, g2, g3 = cluster.grids
    m = g1.degree + 1
    q_hat = np.zeros(m * m * m)
    for j in range(cluster.start, cluster.stop):
        b1 = lagrange_basis_all(g1, float(tree.points.x[j]))
        b2 = lagrange_basis_all(g2, float(tree.points.y[j]))
        b3 = lagrange_basis_all(g3, float(tree.points.z[j]))
        q_hat += tree.charges[j] * np.einsum("a,b,c->abc", b1, b2, b3).ravel()
    return q_hat


def build_rank_state(system, config, ranks):
    """Partition, per-rank domains with moments, published (unopened) windows."""
    part = rcb_partition(system.sources, ranks)
    registry = WindowRegistry(ranks)
    domains = []
    for r in range(ranks):
        idx = part.rank_indices(r)
        pts = Points(system.sources.x[idx], system.sources.y[idx],
                     system.sources.z[idx])
        sub = ParticleSystem.from_single_set(pts, system.charges[idx])
        tree = build_source_tree(sub.sources, sub.charges,
                                 config.leaf_size, config.degree)
        batch_set = build_target_batches(sub.targets, config.batch_size)
        domain = RankDomain(rank=r, region=part.regions[r],
                            original_indices=idx, system=sub,
                            tree=tree, batch_set=batch_set)
        domain.moments = compute_all_moments(tree)
        publish_windows(domain, registry)
        domains.append(domain)
    return part, registry, domains
