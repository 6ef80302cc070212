"""Benchmark and validation harness with a command-line front end.

Subcommands:

* ``bltc run``     one treecode run, optionally verified against the oracle
* ``bltc sweep``   a theta x degree grid of runs sharing one particle set
* ``bltc verify``  one run with verification always on

Particles are generated uniformly in the [-1, 1]^3 cube with charges
uniform in [-1, 1], or read from a CSV with header ``x,y,z,q``.  Runs
are reported as records carrying the full parameter set, per-phase wall
times (setup: tree, batches, interaction lists; precompute: moments;
compute: potential evaluation), the interaction pair counts, and, when
requested, the sampled relative 2-norm error against an independent
direct-sum oracle.  Records are emitted as JSON (an array of objects) or
CSV with dotted column names.

Reproducibility: particle generation draws from a Philox counter-based
generator through two independent child streams of one seed sequence
(positions first, charges second), and verification sampling uses a
third child stream, so identical seeds give identical runs everywhere.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass

import numpy as np
from numba import njit
from numpy.random import Generator, Philox, SeedSequence

from .decomp import run_distributed
from .engine import EvalConfig, treecode_potentials
from .kernels import (SINGULAR_PAIR_THRESHOLD_SQ, KernelSpec, coulomb,
                      yukawa)
from .particles import ParticleSystem, Points, read_particles_csv

FULL_ORACLE_LIMIT = 1_000_000


class OracleTooLarge(RuntimeError):
    """Raised when a full direct sum would be prohibitively expensive."""


class ZeroReference(ValueError):
    """Raised when the reference potentials have zero norm."""


def generate_particles(n: int, seed: int) -> ParticleSystem:
    """Uniform particles in [-1,1]^3 with charges in [-1,1], from one seed."""
    if n < 0:
        raise ValueError("n must be >= 0")
    streams = SeedSequence(seed).spawn(2)
    positions = Generator(Philox(streams[0])).uniform(-1.0, 1.0, (n, 3))
    charges = Generator(Philox(streams[1])).uniform(-1.0, 1.0, n)
    return ParticleSystem.from_single_set(Points.from_array(positions),
                                          charges)


def _sample_rng(seed: int) -> Generator:
    return Generator(Philox(SeedSequence(seed).spawn(3)[2]))


# The oracle deliberately reimplements the brute-force sum instead of
# reusing the engine's tile kernels, so that an engine bug cannot cancel
# out of the comparison.  Same pair-exclusion threshold, same
# Neumaier-compensated accumulation discipline.
@njit(cache=True, nogil=True)
def _oracle_kernel(tx, ty, tz, idx, sx, sy, sz, q, kind, kappa):
    out = np.empty(idx.shape[0])
    for a in range(idx.shape[0]):
        i = idx[a]
        xi = tx[i]
        yi = ty[i]
        zi = tz[i]
        acc = 0.0
        comp = 0.0
        if kind == 0:
            for j in range(sx.shape[0]):
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
            for j in range(sx.shape[0]):
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
            for j in range(sx.shape[0]):
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
        out[a] = acc + comp
    return out


def direct_sum_oracle(system: ParticleSystem, kernel: KernelSpec,
                      sample_indices: np.ndarray | None = None,
                      allow_full: bool = False) -> np.ndarray:
    """Brute-force potentials at the sampled targets (or all of them).

    The full N x N sum is refused above one million particles unless
    ``allow_full`` overrides; pass ``sample_indices`` to stay O(N*M).
    """
    n = len(system.targets)
    if sample_indices is None:
        if n > FULL_ORACLE_LIMIT and not allow_full:
            raise OracleTooLarge(
                f"full direct sum over {n} particles; sample targets or "
                "pass allow_full=True")
        idx = np.arange(n, dtype=np.int64)
    else:
        idx = np.asarray(sample_indices, dtype=np.int64)
    t, s = system.targets, system.sources
    return _oracle_kernel(t.x, t.y, t.z, idx, s.x, s.y, s.z,
                          system.charges, kernel.code, kernel.kappa)


def relative_error(ds: np.ndarray, tc: np.ndarray) -> float:
    """Relative 2-norm error of ``tc`` against the reference ``ds``."""
    if ds.shape != tc.shape:
        raise ValueError(f"shape mismatch: {ds.shape} vs {tc.shape}")
    ref = float(np.linalg.norm(ds))
    if ref == 0.0:
        raise ZeroReference("reference potentials have zero norm")
    return float(np.linalg.norm(ds - tc)) / ref


# ---------------------------------------------------------------------------
# Run records


_CSV_COLUMNS = ["n_particles", "kernel", "kappa", "theta", "degree",
                "leaf_size", "batch_size", "ranks", "seed",
                "times.setup_s", "times.precompute_s", "times.compute_s",
                "times.total_s", "error.value", "error.sample_size",
                "interaction_counts.direct_pairs",
                "interaction_counts.approx_pairs", "fetch_stats"]


@dataclass
class RunRecord:
    """One benchmark run, flat enough to serialize and compare."""

    n_particles: int
    kernel: str
    kappa: float
    theta: float
    degree: int
    leaf_size: int
    batch_size: int
    ranks: int
    seed: int
    times: dict
    error: dict | None
    interaction_counts: dict
    fetch_stats: dict | None = None

    def to_dict(self) -> dict:
        return {
            "n_particles": self.n_particles, "kernel": self.kernel,
            "kappa": self.kappa, "theta": self.theta, "degree": self.degree,
            "leaf_size": self.leaf_size, "batch_size": self.batch_size,
            "ranks": self.ranks, "seed": self.seed,
            "times": dict(self.times),
            "error": None if self.error is None else dict(self.error),
            "interaction_counts": dict(self.interaction_counts),
            "fetch_stats": (None if self.fetch_stats is None
                            else {k: dict(v) for k, v in self.fetch_stats.items()}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(n_particles=d["n_particles"], kernel=d["kernel"],
                   kappa=d["kappa"], theta=d["theta"], degree=d["degree"],
                   leaf_size=d["leaf_size"], batch_size=d["batch_size"],
                   ranks=d["ranks"], seed=d["seed"], times=d["times"],
                   error=d["error"],
                   interaction_counts=d["interaction_counts"],
                   fetch_stats=d.get("fetch_stats"))


def records_to_json(records: list[RunRecord]) -> str:
    return json.dumps([r.to_dict() for r in records], indent=2)


def records_from_json(text: str) -> list[RunRecord]:
    return [RunRecord.from_dict(d) for d in json.loads(text)]


def _csv_row(r: RunRecord) -> list:
    err_v = "" if r.error is None else repr(r.error["value"])
    err_m = "" if r.error is None else r.error["sample_size"]
    fetch = "" if r.fetch_stats is None else json.dumps(r.fetch_stats)
    return [r.n_particles, r.kernel, repr(r.kappa), repr(r.theta),
            r.degree, r.leaf_size, r.batch_size, r.ranks, r.seed,
            repr(r.times["setup_s"]), repr(r.times["precompute_s"]),
            repr(r.times["compute_s"]), repr(r.times["total_s"]),
            err_v, err_m,
            r.interaction_counts["direct_pairs"],
            r.interaction_counts["approx_pairs"], fetch]


def _write_csv(records: list[RunRecord], stream) -> None:
    writer = csv.writer(stream)
    writer.writerow(_CSV_COLUMNS)
    for r in records:
        writer.writerow(_csv_row(r))


def write_records(records: list[RunRecord], path: str, fmt: str) -> None:
    if fmt == "json":
        with open(path, "w") as f:
            f.write(records_to_json(records))
            f.write("\n")
    elif fmt == "csv":
        with open(path, "w", newline="") as f:
            _write_csv(records, f)
    else:
        raise ValueError(f"unknown format {fmt!r}")


# ---------------------------------------------------------------------------
# Benchmark driver


def _fetch_stats_dict(stats) -> dict | None:
    if getattr(stats, "fetch_stats", None) is None:
        return None
    return {f"{o}->{w}": {"tree_records": fs.tree_records,
                          "clusters": fs.clusters,
                          "moments": fs.moments,
                          "particles": fs.particles}
            for (o, w), fs in stats.fetch_stats.items()}


def run_benchmark(system: ParticleSystem, config: EvalConfig, seed: int,
                  ranks: int = 1, threads: int = 1,
                  verify: int | None = None,
                  sweep: tuple[list[float], list[int]] | None = None
                  ) -> list[RunRecord]:
    """One record per parameter point; the oracle is evaluated only once.

    With ``sweep`` given as (thetas, degrees), theta and degree of
    ``config`` are overridden pointwise over the grid.  ``verify`` is
    the oracle sample size; the same sampled reference is shared by all
    runs since the particle set and kernel are fixed.
    """
    n = len(system.targets)
    points = [(config.theta, config.degree)] if sweep is None else \
        [(th, dg) for th in sweep[0] for dg in sweep[1]]

    reference = None
    sample = None
    if verify is not None:
        m = min(int(verify), n)
        sample = np.sort(_sample_rng(seed).choice(n, size=m, replace=False))
        t0 = time.perf_counter()
        reference = direct_sum_oracle(system, config.kernel, sample)
        oracle_s = time.perf_counter() - t0
        print(f"oracle: {m} targets in {oracle_s:.2f} s", file=sys.stderr)

    records = []
    for theta, degree in points:
        cfg = EvalConfig(theta=theta, degree=degree,
                         leaf_size=config.leaf_size,
                         batch_size=config.batch_size, kernel=config.kernel)
        if ranks == 1:
            phi, stats = treecode_potentials(system, cfg, threads=threads)
        else:
            phi, stats = run_distributed(system, cfg, ranks=ranks,
                                         threads=threads)
        error = None
        if reference is not None:
            error = {"value": relative_error(reference, phi[sample]),
                     "sample_size": int(sample.shape[0])}
        records.append(RunRecord(
            n_particles=n, kernel=cfg.kernel.kind.value,
            kappa=cfg.kernel.kappa, theta=theta, degree=degree,
            leaf_size=cfg.leaf_size, batch_size=cfg.batch_size,
            ranks=ranks, seed=seed,
            times={"setup_s": stats.setup_s,
                   "precompute_s": stats.precompute_s,
                   "compute_s": stats.compute_s,
                   "total_s": stats.total_s},
            error=error,
            interaction_counts={"direct_pairs": stats.direct_pairs,
                                "approx_pairs": stats.approx_pairs},
            fetch_stats=_fetch_stats_dict(stats)))
    return records


# ---------------------------------------------------------------------------
# Command line


def _parse_list(text: str, cast):
    return [cast(tok) for tok in text.split(",") if tok.strip() != ""]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-particles", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--kernel", choices=["coulomb", "yukawa"],
                   default="coulomb")
    p.add_argument("--kappa", type=float, default=0.5,
                   help="Yukawa screening parameter")
    p.add_argument("--theta", type=float, default=0.8)
    p.add_argument("--degree", type=int, default=8)
    p.add_argument("--leaf-size", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=2000)
    p.add_argument("--ranks", type=int, default=1,
                   help="simulated distributed ranks")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--particles", metavar="PATH",
                   help="read particles from a CSV (x,y,z,q) instead of "
                        "generating them")
    p.add_argument("--output", metavar="PATH",
                   help="write run records to this file")
    p.add_argument("--format", choices=["json", "csv"], default="json")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bltc",
        description="Barycentric Lagrange treecode benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="a single treecode run")
    _add_common(run)
    run.add_argument("--verify", type=int, metavar="M",
                     help="sample M targets and report the error against "
                          "the direct-sum oracle")

    sweep = sub.add_parser("sweep", help="grid of runs over theta and degree")
    _add_common(sweep)
    sweep.add_argument("--thetas", default="0.5,0.7,0.9",
                       help="comma-separated MAC parameters")
    sweep.add_argument("--degrees", default="1,3,5,7,9,11,13",
                       help="comma-separated interpolation degrees")
    sweep.add_argument("--verify", type=int, metavar="M")

    verify = sub.add_parser("verify",
                            help="a single run checked against the oracle")
    _add_common(verify)
    verify.add_argument("--verify", type=int, metavar="M",
                        help="oracle sample size (default min(N, 10000))")
    return parser


def _system_from_args(args) -> ParticleSystem:
    if args.particles:
        return read_particles_csv(args.particles)
    return generate_particles(args.n_particles, args.seed)


def _kernel_from_args(args) -> KernelSpec:
    if args.kernel == "yukawa":
        return yukawa(args.kappa)
    return coulomb()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    system = _system_from_args(args)
    config = EvalConfig(theta=args.theta, degree=args.degree,
                        leaf_size=args.leaf_size, batch_size=args.batch_size,
                        kernel=_kernel_from_args(args))

    verify = getattr(args, "verify", None)
    if args.command == "verify" and verify is None:
        verify = min(len(system.targets), 10_000)
    sweep = None
    if args.command == "sweep":
        sweep = (_parse_list(args.thetas, float),
                 _parse_list(args.degrees, int))

    records = run_benchmark(system, config, seed=args.seed, ranks=args.ranks,
                            threads=args.threads, verify=verify, sweep=sweep)

    if args.output:
        write_records(records, args.output, args.format)
        print(f"wrote {len(records)} record(s) to {args.output}",
              file=sys.stderr)
    elif args.format == "csv":
        _write_csv(records, sys.stdout)
    else:
        print(records_to_json(records))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
