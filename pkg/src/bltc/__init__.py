"""Kernel-independent barycentric Lagrange treecode.

Computes N-body potential sums phi_i = sum_j G(x_i, y_j) q_j in
O(N log N) by interpolating well-separated particle-cluster interactions
at Chebyshev grids, with a simulated multi-rank distributed mode built
on recursive coordinate bisection and locally essential trees.
"""

from .cli import (OracleTooLarge, RunRecord, ZeroReference,
                  direct_sum_oracle, generate_particles, relative_error,
                  run_benchmark)
from .decomp import (DistributedStats, FetchStats, LocallyEssentialTree,
                     RankDomain, RankWindows, RcbPartition, TreeArray,
                     WindowNotReady, WindowRegistry, build_let,
                     let_violations, publish_windows, rcb_partition,
                     run_distributed)
from .engine import (EvalConfig, InteractionLists, MacFailure, RunStats,
                     build_interaction_lists, compute_potentials,
                     eval_batch_approx, eval_batch_direct, mac_accept,
                     treecode_potentials)
from .interp import (ChebyshevGrid1D, DegenerateGrid, NODE_COINCIDENCE_TOL,
                     barycentric_weights, chebyshev_points, lagrange_basis_all)
from .kernels import (KernelKind, KernelSpec, SingularPair,
                      SINGULAR_PAIR_THRESHOLD_SQ, coulomb, eval_kernel,
                      test_constant, yukawa)
from .moments import (ClusterMoments, IneligibleCluster, compute_all_moments,
                      compute_intermediate, compute_modified_charges)
from .particles import (ParticleSystem, Points, read_particles_csv,
                        write_particles_csv)
from .tree import (BatchSet, BoundingBox, Cluster, SourceTree, TargetBatch,
                   ZeroExtent, build_source_tree, build_target_batches,
                   split_dimensions)

__version__ = "0.1.0"
