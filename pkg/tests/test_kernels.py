"""Kernel evaluation tests: frozen values, symmetry, singular-pair policy."""
import math

import numpy as np
import pytest

from bltc.kernels import (
    SINGULAR_PAIR_THRESHOLD_SQ,
    KernelKind,
    KernelSpec,
    SingularPair,
    coulomb,
    eval_kernel,
    test_constant as constant_kernel,
    yukawa,
)


def test_coulomb_unit_separation():
    assert eval_kernel(coulomb(), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0)) == 1.0


def test_coulomb_known_distance():
    # |x - y| = 5 for the 3-4-0 right triangle.
    got = eval_kernel(coulomb(), (0.0, 0.0, 0.0), (3.0, 4.0, 0.0))
    assert got == 1.0 / 5.0


def test_yukawa_frozen_value():
    # kappa = 0.5 at distance 2: exp(-1) / 2.
    got = eval_kernel(yukawa(0.5), (0.0, 0.0, 0.0), (2.0, 0.0, 0.0))
    assert got == pytest.approx(0.18393972058572117, rel=0, abs=1e-17)
    assert got == math.exp(-1.0) / 2.0


def test_constant_kernel_is_one_everywhere():
    rng = np.random.default_rng(3)
    for _ in range(10):
        x, y = rng.uniform(-5, 5, (2, 3))
        assert eval_kernel(constant_kernel(), x, y) == 1.0


def test_coincident_points_raise():
    with pytest.raises(SingularPair):
        eval_kernel(coulomb(), (0.25, -1.0, 3.0), (0.25, -1.0, 3.0))


def test_singular_threshold_is_on_distance_not_identity():
    # Distinct array objects with equal coordinates still count as singular.
    x = np.array([1.0, 2.0, 3.0])
    y = x.copy()
    with pytest.raises(SingularPair):
        eval_kernel(yukawa(1.0), x, y)


def test_threshold_boundary():
    # Separation just above the 1e-14 distance threshold evaluates...
    d = 1.001e-14
    assert d * d >= SINGULAR_PAIR_THRESHOLD_SQ
    got = eval_kernel(coulomb(), (0.0, 0.0, 0.0), (d, 0.0, 0.0))
    assert math.isfinite(got)
    # ...and just below it raises.
    d = 0.999e-14
    assert d * d < SINGULAR_PAIR_THRESHOLD_SQ
    with pytest.raises(SingularPair):
        eval_kernel(coulomb(), (0.0, 0.0, 0.0), (d, 0.0, 0.0))


def test_symmetry_exact():
    rng = np.random.default_rng(17)
    kernels = [coulomb(), yukawa(0.7), constant_kernel()]
    for _ in range(25):
        x, y = rng.uniform(-3, 3, (2, 3))
        for k in kernels:
            assert eval_kernel(k, x, y) == eval_kernel(k, y, x)


def test_yukawa_zero_kappa_is_bitwise_coulomb():
    rng = np.random.default_rng(23)
    for _ in range(50):
        x, y = rng.uniform(-2, 2, (2, 3))
        assert eval_kernel(yukawa(0.0), x, y) == eval_kernel(coulomb(), x, y)


def test_positivity():
    rng = np.random.default_rng(31)
    for _ in range(50):
        x, y = rng.uniform(-2, 2, (2, 3))
        assert eval_kernel(coulomb(), x, y) > 0.0
        assert eval_kernel(yukawa(2.5), x, y) > 0.0


def test_yukawa_decays_faster_than_coulomb():
    x = np.zeros(3)
    y = np.array([3.0, 0.0, 0.0])
    assert eval_kernel(yukawa(1.0), x, y) < eval_kernel(coulomb(), x, y)


def test_kernel_spec_rejects_bad_kappa():
    for bad in (-0.5, math.nan, math.inf):
        with pytest.raises(ValueError):
            KernelSpec(KernelKind.YUKAWA, bad)


def test_kind_codes_stable():
    # The compiled loops dispatch on these integers.
    assert coulomb().code == 0
    assert yukawa(1.0).code == 1
    assert constant_kernel().code == 2
