from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_dataset
from reps.accounting import (
    end_to_end,
    epsilon_from_influence,
    influence,
    influence_closed_form,
    per_instance_epsilon,
    verify_bound,
)
from reps.dp_core import CompositionLedger, PrivacyBudget, calibrate_sigma, split_budget
from reps.synthesis import StatEncoding, clip, weighted_aggregate
from reps.weighting import targeted_weights


def random_instance(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    data = random_dataset(rng, n=n, n_cont=int(rng.integers(1, 4)), cat_sizes=(2, 3), scale=2.0)
    phi = StatEncoding(data.schema).encode(data)
    w = rng.uniform(0, 1, n)
    w[rng.integers(0, n)] = 1.0
    clip_c = float(rng.uniform(0.5, 8.0))
    return phi, w, clip_c


@pytest.mark.parametrize("seed", range(100))
def test_influence_identity(seed):
    phi, w, clip_c = random_instance(seed)
    n = len(phi)
    closed = influence_closed_form(phi, w, clip_c)
    for i in range(n):
        assert abs(influence(phi, w, clip_c, i) - closed[i]) <= 1e-12
        assert closed[i] <= w[i] * clip_c / n + 1e-15


def test_influence_saturation_and_zero_weight():
    phi = np.array([[30.0, 40.0], [0.1, 0.0]])
    w = np.array([0.5, 0.0])
    alpha = influence_closed_form(phi, w, 20.0)
    assert alpha[0] == pytest.approx(0.5 * 20.0 / 2)
    assert alpha[1] == 0.0
    with pytest.raises(IndexError):
        influence(phi, w, 20.0, 5)


def test_global_sensitivity_with_targeting():
    phi = np.full((10, 3), 50.0)
    w = targeted_weights([0, 1, 2], 5.0, 20.0, 10)
    assert influence_closed_form(phi, w, 20.0).max() == pytest.approx(20.0 / 10)


@pytest.mark.parametrize("n", [10, 137, 3360])
@pytest.mark.parametrize("eps_t", [0.09, 0.45, 0.9, 1.8, 3.6])
@pytest.mark.parametrize("clip_c", [1.0, 20.0])
def test_unit_weight_recovers_stage_epsilon_exactly(n, eps_t, clip_c):
    delta_t = 0.5 / n**2
    sigma = calibrate_sigma(clip_c / n, PrivacyBudget(eps_t, delta_t))
    assert per_instance_epsilon(1.0, clip_c, n, sigma, delta_t, eps_t) == eps_t
    assert per_instance_epsilon(1.0, clip_c, n, sigma, delta_t) == pytest.approx(eps_t, rel=1e-14)


def test_halving_weight_halves_epsilon():
    e1 = per_instance_epsilon(0.8, 20.0, 100, 0.3, 1e-6)
    assert per_instance_epsilon(0.4, 20.0, 100, 0.3, 1e-6) == pytest.approx(e1 / 2)


def test_targeted_weight_gives_eps_out():
    n, clip_c, tau, delta_t = 500, 20.0, 5.0, 1e-6
    sigma = calibrate_sigma(clip_c / n, PrivacyBudget(0.9, delta_t))
    eps_i = per_instance_epsilon(tau / clip_c, clip_c, n, sigma, delta_t)
    assert eps_i == pytest.approx(tau / (n * sigma) * math.sqrt(2 * math.log(1.25 / delta_t)))
    assert eps_i == pytest.approx(0.9 / 4)


@given(st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.1, 50), st.integers(2, 5000),
       st.floats(1e-3, 10), st.floats(1e-9, 0.1))
def test_epsilon_monotonicity(w1, w2, clip_c, n, sigma, delta_t):
    lo, hi = sorted((w1, w2))
    assert per_instance_epsilon(lo, clip_c, n, sigma, delta_t) <= per_instance_epsilon(hi, clip_c, n, sigma, delta_t)
    base = per_instance_epsilon(w1, clip_c, n, sigma, delta_t)
    assert per_instance_epsilon(w1, clip_c * 2, n, sigma, delta_t) > base
    assert per_instance_epsilon(w1, clip_c, n + 1, sigma, delta_t) < base
    assert per_instance_epsilon(w1, clip_c, n, sigma * 2, delta_t) < base


def test_verify_bound_examples():
    assert verify_bound(0.0, 1.0, 0.0, 1e-9)
    assert not verify_bound(0.5, 1.0, 0.0, 1e-6)


@pytest.mark.parametrize("w", [0.05, 0.3, 0.7, 1.0])
@pytest.mark.parametrize("clip_c", [1.0, 20.0])
@pytest.mark.parametrize("n", [50, 3360])
@pytest.mark.parametrize("delta_t", [1e-8, 1e-4, 1e-2])
def test_verify_bound_certifies_low_epsilon_grid(w, clip_c, n, delta_t):
    for eps_t in (0.2, 0.5, 1.0):
        sigma = calibrate_sigma(clip_c / n, PrivacyBudget(eps_t, delta_t))
        eps_i = per_instance_epsilon(w, clip_c, n, sigma, delta_t)
        assert eps_i <= 1.0
        assert verify_bound(w * clip_c / n, sigma, eps_i, delta_t)


@pytest.mark.parametrize("seed", range(100))
def test_bias_bound(seed):
    phi, w, clip_c = random_instance(seed + 1000)
    n = len(phi)
    clipped = clip(phi, clip_c)
    lhs = np.linalg.norm(weighted_aggregate(phi, w, clip_c) - phi.mean(axis=0))
    rhs = (np.sum((1 - w) * np.linalg.norm(clipped, axis=1)) + np.sum(np.linalg.norm(phi - clipped, axis=1))) / n
    assert lhs <= rhs + 1e-12


def _ledger(eps, delta):
    split = split_budget(PrivacyBudget(eps, delta))
    ledger = CompositionLedger()
    ledger.record("scoring", split.scoring)
    ledger.record("synthesis", split.synthesis)
    return ledger, split


def test_end_to_end_uniform():
    n, clip_c = 200, 20.0
    ledger, split = _ledger(1.0, 1 / n**2)
    sigma = calibrate_sigma(clip_c / n, split.synthesis)
    rep = end_to_end(ledger, np.ones(n), clip_c, n, sigma)
    assert np.all(rep.eps_total == 1.0)
    assert rep.epsilon_global == 1.0 and rep.delta_total == pytest.approx(1 / n**2)


def test_end_to_end_targeted():
    n, clip_c, tau = 200, 20.0, 4.0
    ledger, split = _ledger(2.0, 1 / n**2)
    sigma = calibrate_sigma(clip_c / n, split.synthesis)
    high = np.zeros(n, dtype=bool)
    high[:20] = True
    w = targeted_weights(high, tau, clip_c, n)
    rep = end_to_end(ledger, w, clip_c, n, sigma, high_risk=high)
    eps_out = split.synthesis.epsilon * tau / clip_c
    assert rep.eps_out == pytest.approx(eps_out)
    assert np.allclose(rep.eps_total[high], split.scoring.epsilon + eps_out)
    assert np.all(rep.eps_total[high] < 2.0)
    assert np.all(rep.eps_synth <= split.synthesis.epsilon)


def test_end_to_end_data_dependent_bound(rng):
    data = random_dataset(rng, n=50)
    phi = StatEncoding(data.schema).encode(data)
    ledger, split = _ledger(1.0, 1e-4)
    sigma = calibrate_sigma(20.0 / 50, split.synthesis)
    w = rng.uniform(0.1, 1.0, 50)
    rep = end_to_end(ledger, w, 20.0, 50, sigma, encodings=phi)
    assert np.all(rep.eps_synth_data <= rep.eps_synth + 1e-15)
    assert np.allclose(rep.eps_synth_data, epsilon_from_influence(influence_closed_form(phi, w, 20.0), sigma, split.synthesis.delta))


@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=30))
def test_total_non_decreasing_in_weight(ws):
    w = np.sort(np.asarray(ws))
    ledger, split = _ledger(1.0, 1e-6)
    rep = end_to_end(ledger, w, 20.0, len(w), calibrate_sigma(20.0 / len(w), split.synthesis))
    assert np.all(np.diff(rep.eps_total) >= 0)


def test_report_csv(tmp_path):
    ledger, split = _ledger(1.0, 1e-6)
    rep = end_to_end(ledger, np.array([1.0, 0.5]), 20.0, 2, calibrate_sigma(10.0, split.synthesis),
                     high_risk=np.array([False, True]))
    rep.to_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "record_index,w,alpha,eps_synth,eps_total,in_high_risk_set"
    assert len(lines) == 3 and lines[2].endswith(",1")
