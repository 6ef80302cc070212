"""Particle containers and the plain-text particle file format.

Positions and charges are kept as separate contiguous float64 arrays
(structure of arrays) because every hot loop in the evaluation kernels
walks one coordinate at a time.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Points:
    """Coordinates of a point set, one array per axis."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    @classmethod
    def from_array(cls, xyz: np.ndarray) -> "Points":
        """Build from an (N, 3) array; columns are copied to contiguous 1-D arrays."""
        xyz = np.asarray(xyz, dtype=np.float64)
        return cls(np.ascontiguousarray(xyz[:, 0]),
                   np.ascontiguousarray(xyz[:, 1]),
                   np.ascontiguousarray(xyz[:, 2]))

    def take(self, idx: np.ndarray) -> "Points":
        return Points(self.x[idx], self.y[idx], self.z[idx])


@dataclass(frozen=True, eq=False)
class ParticleSystem:
    """Targets, sources, and source charges for one potential computation.

    In the standard benchmark configuration targets and sources are the
    same point set; the engine does not require that.
    """

    targets: Points
    sources: Points
    charges: np.ndarray

    def __post_init__(self):
        if len(self.sources) != self.charges.shape[0]:
            raise ValueError("one charge per source particle required")

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def coincident(self) -> bool:
        return self.targets is self.sources

    @classmethod
    def from_single_set(cls, points: Points, charges: np.ndarray) -> "ParticleSystem":
        """System where every particle is both a target and a source."""
        return cls(points, points, np.ascontiguousarray(charges, dtype=np.float64))


def write_particles_csv(path, system: ParticleSystem) -> None:
    """Write sources as CSV with header ``x,y,z,q``.

    Values are written with shortest round-trip precision (at most 17
    significant digits), so reading the file back reproduces the exact
    IEEE doubles.
    """
    pts, q = system.sources, system.charges
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "q"])
        for i in range(len(pts)):
            writer.writerow([repr(float(pts.x[i])), repr(float(pts.y[i])),
                             repr(float(pts.z[i])), repr(float(q[i]))])


def read_particles_csv(path) -> ParticleSystem:
    """Read a ``x,y,z,q`` CSV written by :func:`write_particles_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip() for c in header] != ["x", "y", "z", "q"]:
            raise ValueError(f"expected header x,y,z,q, got {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64).reshape(-1, 4)
    points = Points.from_array(data[:, :3])
    return ParticleSystem.from_single_set(points, data[:, 3])
