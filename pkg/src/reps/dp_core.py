"""Gaussian mechanism primitives, budget bookkeeping and seed derivation.

Noise is calibrated with the classical bound
``sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon``. The classical
theorem only covers epsilon < 1; larger epsilons are accepted and calibrated
with the same formula, and :func:`hockey_stick_delta` can be used to check
what a given (sigma, epsilon) pair actually guarantees.

Randomness: every stochastic step takes an explicit seed. Seeds for the
stages of one experiment cell are derived with :func:`derive_seed`, which
hashes the master seed together with string/number keys (SHA-256, first
8 bytes), so streams for scoring, synthesis noise, sampling, attacks and
shuffling never overlap and do not depend on execution order.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import InvalidBudget, MissingStage

SCORING_FRACTION = 0.1


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        eps, delta = float(self.epsilon), float(self.delta)
        if not (math.isfinite(eps) and eps > 0):
            raise InvalidBudget(f"epsilon must be positive, got {self.epsilon!r}")
        if not 0 < delta < 1:
            raise InvalidBudget(f"delta must lie in (0, 1), got {self.delta!r}")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "delta", delta)


@dataclass(frozen=True)
class BudgetSplit:
    scoring: PrivacyBudget
    synthesis: PrivacyBudget

    @property
    def total(self) -> PrivacyBudget:
        return PrivacyBudget(
            self.scoring.epsilon + self.synthesis.epsilon,
            self.scoring.delta + self.synthesis.delta,
        )


@dataclass
class CompositionLedger:
    """Basic (additive) composition over named stages."""

    entries: list[tuple[str, PrivacyBudget]] = field(default_factory=list)

    def record(self, stage: str, budget: PrivacyBudget) -> None:
        self.entries.append((stage, budget))

    @property
    def epsilon(self) -> float:
        return sum(b.epsilon for _, b in self.entries)

    @property
    def delta(self) -> float:
        return sum(b.delta for _, b in self.entries)

    def totals(self) -> tuple[float, float]:
        return self.epsilon, self.delta

    def stage(self, name: str) -> PrivacyBudget:
        for stage, budget in self.entries:
            if stage == name:
                return budget
        raise MissingStage(name)

    def to_list(self) -> list[dict]:
        return [{"stage": s, "epsilon": b.epsilon, "delta": b.delta} for s, b in self.entries]


def calibrate_sigma(l2_sensitivity: float, budget: PrivacyBudget) -> float:
    if not isinstance(budget, PrivacyBudget):
        raise InvalidBudget("budget must be a PrivacyBudget")
    if not l2_sensitivity > 0:
        raise InvalidBudget(f"sensitivity must be positive, got {l2_sensitivity!r}")
    return l2_sensitivity * math.sqrt(2.0 * math.log(1.25 / budget.delta)) / budget.epsilon


def gaussian_release(vector, sigma: float, seed) -> np.ndarray:
    """Add i.i.d. N(0, sigma^2) noise per coordinate; ``sigma == 0`` returns a copy."""
    v = np.asarray(vector, dtype=float)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return v.copy()
    rng = np.random.default_rng(seed)
    return v + rng.normal(0.0, sigma, size=v.shape)


def default_delta(n: int) -> float:
    if n < 2:
        raise ValueError("default delta needs n >= 2")
    return 1.0 / (float(n) * float(n))


def split_budget(total: PrivacyBudget, scoring_fraction: float = SCORING_FRACTION) -> BudgetSplit:
    eps = total.epsilon
    if scoring_fraction <= 0.5:
        # the larger share is rounded and the smaller one is the exact remainder
        # (Sterbenz), so eps_s + eps_t == eps holds in floating point
        eps_t = (1.0 - scoring_fraction) * eps
        eps_s = eps - eps_t
    else:
        eps_s = scoring_fraction * eps
        eps_t = eps - eps_s
    half = total.delta / 2.0
    return BudgetSplit(PrivacyBudget(eps_s, half), PrivacyBudget(eps_t, half))


def hockey_stick_delta(alpha: float, sigma: float, epsilon: float) -> float:
    """Exact E_eps divergence between N(alpha, sigma^2) and N(0, sigma^2).

    delta = Phi(a/2s - eps s/a) - e^eps Phi(-a/2s - eps s/a); the second term
    is evaluated in log space so large epsilons do not overflow.
    """
    if alpha < 0 or sigma <= 0:
        raise ValueError("need alpha >= 0 and sigma > 0")
    if alpha == 0:
        return 0.0
    r = alpha / sigma
    first = norm.cdf(r / 2.0 - epsilon / r)
    second = math.exp(epsilon + norm.logcdf(-r / 2.0 - epsilon / r))
    return max(0.0, float(first - second))


def derive_seed(master: int, *keys) -> int:
    """Deterministic 63-bit sub-seed from a master seed and a tuple of keys."""
    text = "|".join([str(int(master))] + [_key_text(k) for k in keys])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _key_text(k) -> str:
    if isinstance(k, float):
        return repr(k)
    return str(k)
