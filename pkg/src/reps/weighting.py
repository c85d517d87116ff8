"""Score-to-weight maps, the targeted protection schedule and gamma selection."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidTarget
from .scoring import top_decile_threshold

GAMMA_CANDIDATES = (0.5, 1.0, 2.0, 4.0)
UTILITY_TOLERANCE = 0.02

_TINY = np.finfo(float).tiny


def cap_weights(scores, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ValueError("tau must be positive")
    s = np.asarray(scores, dtype=float)
    return np.minimum(1.0, tau / (s + tau))


def hinge_exp_weights(scores, gamma: float, t: float | None = None) -> np.ndarray:
    """w = exp(-gamma * (s - t)_+); ``t`` defaults to the 90th-percentile score."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    s = np.asarray(scores, dtype=float)
    if t is None:
        t = top_decile_threshold(s)
    w = np.exp(-gamma * np.maximum(s - t, 0.0))
    # keep weights strictly positive even when the exponent underflows
    return np.maximum(w, _TINY)


def targeted_weights(high_risk, tau_out: float, clip_c: float, n_records: int) -> np.ndarray:
    """tau_out / C on the high-risk set, 1 elsewhere."""
    if not 0 < tau_out <= clip_c:
        raise InvalidTarget(f"need 0 < tau_out <= C, got tau_out={tau_out}, C={clip_c}")
    w = np.ones(n_records)
    idx = np.asarray(high_risk)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    w[idx.astype(np.int64)] = tau_out / clip_c
    return w


def select_gamma(validation_tstr: Mapping[float, float], baseline_tstr: float,
                 candidates: Sequence[float] = GAMMA_CANDIDATES,
                 tolerance: float = UTILITY_TOLERANCE) -> float:
    """Largest candidate whose validation TSTR is within ``tolerance`` of the baseline.

    Falls back to the smallest candidate when none qualifies. A small slack
    absorbs float rounding in the comparison (0.70 - 0.02 vs 0.68).
    """
    ok = [g for g in candidates if validation_tstr[g] >= baseline_tstr - tolerance - 1e-12]
    return max(ok) if ok else min(candidates)


def shuffle_weights(weights, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.permutation(np.asarray(weights, dtype=float))
