from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reps.dp_core import (
    CompositionLedger,
    PrivacyBudget,
    calibrate_sigma,
    default_delta,
    derive_seed,
    gaussian_release,
    hockey_stick_delta,
    split_budget,
)
from reps.errors import InvalidBudget, MissingStage


def test_sigma_closed_form():
    sigma = calibrate_sigma(1.0, PrivacyBudget(1.0, 0.125))
    assert sigma == pytest.approx(math.sqrt(2 * math.log(10)), rel=1e-15)
    assert sigma == pytest.approx(2.145966, abs=5e-7)


def test_sigma_linearity():
    b = PrivacyBudget(1.0, 1e-5)
    assert calibrate_sigma(1.0, PrivacyBudget(2.0, 1e-5)) == pytest.approx(calibrate_sigma(1.0, b) / 2)
    assert calibrate_sigma(2.0, b) == pytest.approx(2 * calibrate_sigma(1.0, b))


@pytest.mark.parametrize("eps,delta", [(0.0, 0.1), (-1.0, 0.1), (1.0, 0.0), (1.0, 1.0), (float("nan"), 0.1)])
def test_invalid_budget(eps, delta):
    with pytest.raises(InvalidBudget):
        PrivacyBudget(eps, delta)


def test_invalid_sensitivity():
    with pytest.raises(InvalidBudget):
        calibrate_sigma(0.0, PrivacyBudget(1.0, 0.1))


def test_release_sigma_zero_is_identity():
    v = np.array([1.5, -2.0, 3.25])
    out = gaussian_release(v, 0.0, 1)
    assert np.array_equal(out, v) and out is not v


def test_release_moments():
    sigma, m = 2.0, 100_000
    x = np.zeros(m)
    out = gaussian_release(x, sigma, 99)
    assert abs(out.mean()) < 4 * sigma / math.sqrt(m)
    assert abs(out.var() / sigma**2 - 1) < 0.05


def test_release_seed_behaviour():
    v = np.arange(8.0)
    assert np.array_equal(gaussian_release(v, 1.0, 5), gaussian_release(v, 1.0, 5))
    assert not np.array_equal(gaussian_release(v, 1.0, 5), gaussian_release(v, 1.0, 6))


def test_default_delta():
    assert default_delta(3360) == pytest.approx(8.859e-8, rel=1e-3)
    assert default_delta(2) == 0.25
    assert default_delta(100) > default_delta(101)


def test_split_budget():
    s = split_budget(PrivacyBudget(1.0, 1e-6))
    assert s.scoring.epsilon == pytest.approx(0.1) and s.synthesis.epsilon == pytest.approx(0.9)
    assert s.scoring.delta == 5e-7 and s.synthesis.delta == 5e-7


@given(st.floats(1e-3, 50.0), st.floats(1e-12, 0.5))
def test_split_recomposes_exactly(eps, delta):
    s = split_budget(PrivacyBudget(eps, delta))
    assert s.scoring.epsilon + s.synthesis.epsilon == eps
    assert s.total.delta == pytest.approx(delta, rel=1e-15)


def test_ledger_sums_and_lookup():
    ledger = CompositionLedger()
    ledger.record("scoring", PrivacyBudget(0.25, 1e-7))
    ledger.record("synthesis", PrivacyBudget(0.75, 3e-7))
    assert ledger.totals() == (1.0, 4e-7)
    assert ledger.stage("synthesis").epsilon == 0.75
    with pytest.raises(MissingStage):
        ledger.stage("missing")


def test_hockey_stick_zero_distance():
    assert hockey_stick_delta(0.0, 1.0, 0.5) == 0.0


def test_hockey_stick_at_calibration_example():
    assert hockey_stick_delta(1.0, 2.145966, 1.0) <= 0.125


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
@pytest.mark.parametrize("delta", [1e-6, 1e-2])
@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_hockey_stick_certifies_classical_calibration(alpha, delta, eps):
    sigma = calibrate_sigma(alpha, PrivacyBudget(eps, delta))
    assert hockey_stick_delta(alpha, sigma, eps) <= delta


@given(st.floats(0.01, 10), st.floats(0.1, 10), st.floats(0, 5), st.floats(0, 5))
def test_hockey_stick_non_increasing_in_epsilon(alpha, sigma, e1, e2):
    lo, hi = sorted((e1, e2))
    assert hockey_stick_delta(alpha, sigma, hi) <= hockey_stick_delta(alpha, sigma, lo) + 1e-15


def test_hockey_stick_large_epsilon_is_finite():
    assert hockey_stick_delta(1.0, 0.5, 400.0) == 0.0


def test_derive_seed():
    a = derive_seed(0, "sim", 1.0, 3, "scoring")
    assert a == derive_seed(0, "sim", 1.0, 3, "scoring")
    assert a != derive_seed(0, "sim", 1.0, 3, "synthesis")
    assert a != derive_seed(1, "sim", 1.0, 3, "scoring")
    assert 0 <= a < 2**63
