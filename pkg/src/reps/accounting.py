"""Per-instance privacy accounting for the weighted Gaussian release."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import _atomic_write_text
from .dp_core import CompositionLedger, PrivacyBudget, calibrate_sigma, hockey_stick_delta
from .synthesis import clip, weighted_aggregate


def influence(encodings: np.ndarray, weights, clip_c: float, i: int, n: int | None = None) -> float:
    """alpha_i = ||f_w(D) - f_w(D^(-i))||_2, with record i replaced by the null record."""
    phi = np.asarray(encodings, dtype=float)
    if not 0 <= i < len(phi):
        raise IndexError(f"record index {i} out of range for {len(phi)} records")
    n = len(phi) if n is None else n
    without = phi.copy()
    without[i] = 0.0
    full = weighted_aggregate(phi, weights, clip_c, n=n)
    removed = weighted_aggregate(without, weights, clip_c, n=n)
    return float(np.linalg.norm(full - removed))


def influence_closed_form(encodings: np.ndarray, weights, clip_c: float, n: int | None = None) -> np.ndarray:
    """w_i ||clip(phi_i, C)|| / n for every record."""
    phi = np.asarray(encodings, dtype=float)
    n = len(phi) if n is None else n
    return np.asarray(weights, dtype=float) * np.linalg.norm(clip(phi, clip_c), axis=1) / n


def per_instance_epsilon(w, clip_c: float, n: int, sigma: float, delta_t: float,
                         epsilon_t: float | None = None):
    """epsilon_i = (w_i C / (n sigma)) sqrt(2 ln(1.25 / delta_t)); works elementwise.

    When the stage budget ``epsilon_t`` is known the factor is computed as
    epsilon_t * sigma_cal / sigma, where sigma_cal is the calibrated noise for
    (epsilon_t, delta_t). The two forms are algebraically equal; the second
    returns epsilon_t bit-for-bit for w = 1 when sigma came from calibration.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if epsilon_t is None:
        factor = (clip_c / n) * math.sqrt(2.0 * math.log(1.25 / delta_t)) / sigma
    else:
        sigma_cal = calibrate_sigma(clip_c / n, PrivacyBudget(epsilon_t, delta_t))
        factor = epsilon_t if sigma_cal == sigma else epsilon_t * (sigma_cal / sigma)
    if np.ndim(w) == 0:
        return float(w) * factor
    return np.asarray(w, dtype=float) * factor


def epsilon_from_influence(alpha, sigma: float, delta_t: float):
    return np.asarray(alpha, dtype=float) / sigma * math.sqrt(2.0 * math.log(1.25 / delta_t))


def verify_bound(alpha: float, sigma: float, epsilon_i: float, delta_t: float) -> bool:
    """True when the two-Gaussian pair at distance alpha is (epsilon_i, delta_t)-indistinguishable."""
    return hockey_stick_delta(alpha, sigma, epsilon_i) <= delta_t


@dataclass
class PerInstanceReport:
    weights: np.ndarray
    alpha: np.ndarray
    eps_synth: np.ndarray
    eps_synth_data: np.ndarray
    eps_total: np.ndarray
    epsilon_scoring: float
    epsilon_synthesis: float
    delta_scoring: float
    delta_synthesis: float
    high_risk: np.ndarray
    eps_out: float | None = None

    @property
    def delta_total(self) -> float:
        return self.delta_scoring + self.delta_synthesis

    @property
    def epsilon_global(self) -> float:
        return self.epsilon_scoring + self.epsilon_synthesis

    @property
    def max_total(self) -> float:
        return float(self.eps_total.max()) if len(self.eps_total) else 0.0

    @property
    def max_total_high_risk(self) -> float:
        if not self.high_risk.any():
            return float("nan")
        return float(self.eps_total[self.high_risk].max())

    @property
    def max_to_median(self) -> float:
        """Informational spread of the synthesis-stage bounds."""
        med = float(np.median(self.eps_synth))
        return float(self.eps_synth.max()) / med if med > 0 else float("inf")

    def summary(self) -> dict:
        return {
            "epsilon": self.epsilon_global,
            "delta": self.delta_total,
            "epsilon_scoring": self.epsilon_scoring,
            "epsilon_synthesis": self.epsilon_synthesis,
            "max_eps_total": self.max_total,
            "max_eps_total_high_risk": None if math.isnan(self.max_total_high_risk) else self.max_total_high_risk,
            "mean_eps_synth": float(np.mean(self.eps_synth)) if len(self.eps_synth) else 0.0,
            "eps_out": self.eps_out,
            "n_high_risk": int(self.high_risk.sum()),
            "max_to_median_eps_synth": self.max_to_median,
        }

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record_index", "w", "alpha", "eps_synth", "eps_total", "in_high_risk_set"])
        for i in range(len(self.weights)):
            w.writerow([i, repr(float(self.weights[i])), repr(float(self.alpha[i])),
                        repr(float(self.eps_synth[i])), repr(float(self.eps_total[i])),
                        int(bool(self.high_risk[i]))])
        _atomic_write_text(Path(path), buf.getvalue())


def end_to_end(ledger: CompositionLedger, weights, clip_c: float, n: int, sigma: float,
               encodings: np.ndarray | None = None, high_risk=None,
               scoring_stage: str | None = "scoring", synthesis_stage: str = "synthesis") -> PerInstanceReport:
    """Per-record bounds eps_i,tot = eps_s + eps_i,t from a two-stage ledger.

    ``eps_synth`` is the weight-based bound (w_i C / n); ``eps_synth_data``
    uses the realized influence when encodings are supplied. Pass
    ``scoring_stage=None`` for single-stage releases.
    """
    if scoring_stage is None:
        eps_s, delta_s = 0.0, 0.0
    else:
        scoring = ledger.stage(scoring_stage)
        eps_s, delta_s = scoring.epsilon, scoring.delta
    synthesis = ledger.stage(synthesis_stage)
    w = np.asarray(weights, dtype=float)
    eps_t = per_instance_epsilon(w, clip_c, n, sigma, synthesis.delta, synthesis.epsilon)
    if encodings is not None:
        alpha = influence_closed_form(encodings, w, clip_c, n)
    else:
        alpha = w * clip_c / n
    eps_data = epsilon_from_influence(alpha, sigma, synthesis.delta)
    hr = np.zeros(len(w), dtype=bool) if high_risk is None else np.asarray(high_risk, dtype=bool)
    eps_out = float(eps_t[hr].max()) if hr.any() else None
    return PerInstanceReport(
        weights=w,
        alpha=alpha,
        eps_synth=eps_t,
        eps_synth_data=eps_data,
        eps_total=eps_s + eps_t,
        epsilon_scoring=eps_s,
        epsilon_synthesis=synthesis.epsilon,
        delta_scoring=delta_s,
        delta_synthesis=synthesis.delta,
        high_risk=hr,
        eps_out=eps_out,
    )

