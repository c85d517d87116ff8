from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reps.errors import InvalidTarget
from reps.weighting import cap_weights, hinge_exp_weights, select_gamma, shuffle_weights, targeted_weights

score_lists = st.lists(st.floats(0.0, 200.0), min_size=1, max_size=60)


def test_cap_examples():
    assert cap_weights([0.0], 2.0)[0] == 1.0
    assert cap_weights([2.0], 2.0)[0] == 0.5
    w = cap_weights([0.5, 1.0, 3.0], 1.0)
    assert w[0] > w[1] > w[2]


def test_hinge_examples():
    s = np.array([0.0, 1.0, 2.0])
    assert np.all(hinge_exp_weights(s, 3.0, t=2.0) == 1.0)
    assert np.all(hinge_exp_weights(s, 0.0) == 1.0)
    assert hinge_exp_weights([3.0], math.log(2), t=2.0)[0] == pytest.approx(0.5)


def test_hinge_default_threshold_is_90th_percentile():
    s = np.arange(100.0)
    w = hinge_exp_weights(s, 1.0)
    assert np.all(w[:90] == 1.0) and np.all(w[90:] < 1.0)


def test_targeted_examples():
    assert np.all(targeted_weights([], 5.0, 20.0, 4) == 1.0)
    assert np.all(targeted_weights([0, 2], 20.0, 20.0, 4) == 1.0)
    w = targeted_weights([1, 3], 5.0, 20.0, 4)
    assert w.tolist() == [1.0, 0.25, 1.0, 0.25]
    with pytest.raises(InvalidTarget):
        targeted_weights([0], 30.0, 20.0, 2)
    with pytest.raises(InvalidTarget):
        targeted_weights([0], 0.0, 20.0, 2)


def test_select_gamma_examples():
    assert select_gamma({0.5: 0.70, 1.0: 0.70, 2.0: 0.69, 4.0: 0.66}, 0.70) == 2.0
    assert select_gamma({0.5: 0.70, 1.0: 0.70, 2.0: 0.69, 4.0: 0.69}, 0.70) == 4.0
    assert select_gamma({0.5: 0.60, 1.0: 0.60, 2.0: 0.60, 4.0: 0.60}, 0.70) == 0.5
    # boundary: exactly 0.02 below the baseline still qualifies
    assert select_gamma({0.5: 0.70, 1.0: 0.70, 2.0: 0.70, 4.0: 0.68}, 0.70) == 4.0


def test_shuffle():
    w = np.array([1.0, 0.5, 0.25, 1.0, 0.1])
    out = shuffle_weights(w, 3)
    assert sorted(out) == sorted(w)
    assert np.array_equal(out, shuffle_weights(w, 3))
    assert np.all(shuffle_weights(np.ones(6), 1) == 1.0)


@given(score_lists, st.floats(1e-3, 50.0))
def test_cap_range_and_monotone(scores, tau):
    s = np.sort(np.asarray(scores))
    w = cap_weights(s, tau)
    assert np.all((w > 0) & (w <= 1))
    assert np.all(np.diff(w) <= 1e-15)


@given(score_lists, st.floats(0.0, 10.0))
def test_hinge_range_and_monotone(scores, gamma):
    s = np.sort(np.asarray(scores))
    w = hinge_exp_weights(s, gamma)
    assert np.all((w > 0) & (w <= 1))
    assert np.all(np.diff(w) <= 0)


@given(st.integers(1, 50), st.floats(1e-3, 1.0), st.integers(0, 2**31))
def test_equalization_rule(n, frac, seed):
    clip_c = 20.0
    tau_out = frac * clip_c
    rng = np.random.default_rng(seed)
    high = rng.random(n) < 0.3
    w = targeted_weights(high, tau_out, clip_c, n)
    alpha_proxy = rng.uniform(0, clip_c / n, n)
    assert np.all(w[high] * clip_c <= tau_out * (1 + 1e-12))
    assert np.all(w * alpha_proxy <= clip_c / n)
