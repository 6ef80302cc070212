"""Pairwise interaction kernels.

Every kernel is a scalar function G(x, y) of two 3-D points; the
treecode machinery only ever calls kernel evaluations, so swapping the
kernel never touches the tree, moments, or evaluation code.

Supported kernels:

* Coulomb:        G = 1 / |x - y|
* Yukawa:         G = exp(-kappa * |x - y|) / |x - y|   (screened Coulomb;
                  kappa is the inverse screening length)
* test constant:  G = 1, used only by tests: interpolation reproduces a
                  constant exactly, so treecode and direct sums must agree.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

# Pairs with squared separation below this are treated as singular: the
# scalar evaluator refuses them and the batch evaluators skip them
# (self-interaction exclusion).  The test is on distance, not on index
# identity, so duplicated coordinates are excluded as well.
SINGULAR_PAIR_THRESHOLD_SQ = 1e-28


class SingularPair(ValueError):
    """Raised when a kernel is evaluated at (numerically) coincident points."""


class KernelKind(enum.Enum):
    COULOMB = "coulomb"
    YUKAWA = "yukawa"
    TEST_CONSTANT = "test_constant"


# Integer codes handed to the compiled evaluation loops.
_KIND_CODES = {KernelKind.COULOMB: 0, KernelKind.YUKAWA: 1, KernelKind.TEST_CONSTANT: 2}


@dataclass(frozen=True)
class KernelSpec:
    """A kernel choice plus its parameters."""

    kind: KernelKind
    kappa: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.kappa) or self.kappa < 0.0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")

    @property
    def code(self) -> int:
        return _KIND_CODES[self.kind]


def coulomb() -> KernelSpec:
    return KernelSpec(KernelKind.COULOMB)


def yukawa(kappa: float) -> KernelSpec:
    return KernelSpec(KernelKind.YUKAWA, kappa)


def test_constant() -> KernelSpec:
    return KernelSpec(KernelKind.TEST_CONSTANT)


def eval_kernel(kernel: KernelSpec, x, y) -> float:
    """Evaluate G(x, y) for one pair of points.

    Raises :class:`SingularPair` when the squared separation falls below
    :data:`SINGULAR_PAIR_THRESHOLD_SQ`.
    """
    dx = float(x[0]) - float(y[0])
    dy = float(x[1]) - float(y[1])
    dz = float(x[2]) - float(y[2])
    d2 = dx * dx + dy * dy + dz * dz
    if d2 < SINGULAR_PAIR_THRESHOLD_SQ:
        raise SingularPair(f"points coincide within tolerance: |x-y|^2 = {d2}")
    if kernel.kind is KernelKind.COULOMB:
        return 1.0 / math.sqrt(d2)
    if kernel.kind is KernelKind.YUKAWA:
        r = math.sqrt(d2)
        # For kappa == 0 this reduces bitwise to the Coulomb value:
        # exp(-0.0) is exactly 1.0 and 1.0 / r is the same division.
        return math.exp(-kernel.kappa * r) / r
    return 1.0
