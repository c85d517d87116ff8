"""Weighted clipped sufficient statistics and the conditional Gaussian Naive Bayes synthesizer.

Each record is encoded as a sparse vector phi(z):

* label block (2): one-hot label;
* per categorical feature (2 * K): one-hot category inside the block of the record's label;
* per continuous feature (4): (x, x^2) inside the block of the record's label.

The weighted aggregate ``f_w = (1/n) sum_i w_i clip(phi(z_i), C)`` is released
once with Gaussian noise calibrated to sensitivity C / n, and the Naive Bayes
parameters are read off the noisy vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import truncnorm

from .data_model import CLIP_RANGE, Dataset, Schema
from .dp_core import CompositionLedger, PrivacyBudget, calibrate_sigma, gaussian_release
from .errors import LengthMismatch
from .scoring import top_decile_mask

DEFAULT_CLIP_C = 20.0
VAR_FLOOR = 1e-3


@dataclass(frozen=True)
class StatEncoding:
    schema: Schema

    @property
    def category_sizes(self) -> tuple[int, ...]:
        return tuple(len(f.categories) for f in self.schema.categorical)

    @property
    def n_continuous(self) -> int:
        return len(self.schema.continuous)

    @property
    def k(self) -> int:
        return 2 + sum(2 * s for s in self.category_sizes) + 4 * self.n_continuous

    def categorical_offsets(self) -> list[int]:
        offs, o = [], 2
        for s in self.category_sizes:
            offs.append(o)
            o += 2 * s
        return offs

    def continuous_offset(self, j: int) -> int:
        return 2 + sum(2 * s for s in self.category_sizes) + 4 * j

    def encode(self, data: Dataset) -> np.ndarray:
        """Encoding matrix of shape (n, k)."""
        n = data.n
        out = np.zeros((n, self.k))
        rows = np.arange(n)
        y = data.labels
        out[rows, y] = 1.0
        for j, (off, size) in enumerate(zip(self.categorical_offsets(), self.category_sizes)):
            out[rows, off + y * size + data.categorical[:, j]] = 1.0
        for j in range(self.n_continuous):
            off = self.continuous_offset(j) + 2 * y
            x = data.continuous[:, j]
            out[rows, off] = x
            out[rows, off + 1] = x * x
        return out

    def encode_null(self) -> np.ndarray:
        return np.zeros(self.k)


def clip(u, clip_c: float) -> np.ndarray:
    """Rescale ``u`` (or each row of a matrix) to l2 norm at most ``clip_c``."""
    if not clip_c > 0:
        raise ValueError("clip norm must be positive")
    u = np.asarray(u, dtype=float)
    norms = np.linalg.norm(u, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > clip_c, clip_c / norms, 1.0)
    return u * scale


def weighted_aggregate(encodings: np.ndarray, weights, clip_c: float, n: int | None = None) -> np.ndarray:
    """f_w = (1/n) sum_i w_i clip(phi_i, C).

    ``n`` defaults to the number of rows; passing a larger n keeps the
    normalization fixed when rows are dropped (null-record padding).
    """
    phi = np.asarray(encodings, dtype=float)
    w = np.asarray(weights, dtype=float)
    if phi.ndim != 2 or len(w) != len(phi):
        raise LengthMismatch(f"{len(w)} weights for {len(phi)} records")
    n = len(phi) if n is None else int(n)
    return (w[:, None] * clip(phi, clip_c)).sum(axis=0) / n


@dataclass
class NoisyStats:
    vector: np.ndarray
    sigma: float
    weights: np.ndarray
    n: int
    clip_c: float
    encoding: StatEncoding
    budget: PrivacyBudget | None = None

    @property
    def sensitivity(self) -> float:
        return self.clip_c / self.n


def release_stats(train: Dataset, weights, clip_c: float, budget: PrivacyBudget | None, seed,
                  ledger: CompositionLedger | None = None, n: int | None = None,
                  stage: str = "synthesis") -> NoisyStats:
    """One Gaussian release of the weighted clipped aggregate.

    ``budget=None`` gives the non-private release (sigma = 0, no ledger entry).
    """
    enc = StatEncoding(train.schema)
    n = train.n if n is None else int(n)
    w = np.asarray(weights, dtype=float)
    f = weighted_aggregate(enc.encode(train), w, clip_c, n=n)
    if budget is None:
        sigma = 0.0
    else:
        sigma = calibrate_sigma(clip_c / n, budget)
        if ledger is not None:
            ledger.record(stage, budget)
    return NoisyStats(gaussian_release(f, sigma, seed), sigma, w, n, clip_c, enc, budget)


@dataclass
class SynthModel:
    schema: Schema
    label_probs: np.ndarray
    cat_probs: list[np.ndarray]
    cont_mean: np.ndarray
    cont_var: np.ndarray
    var_floor: float = VAR_FLOOR


def _normalize(v: np.ndarray) -> np.ndarray:
    v = np.maximum(v, 0.0)
    s = v.sum()
    if s > 0:
        return v / s
    return np.full(len(v), 1.0 / len(v))


def fit_model(stats: NoisyStats, var_floor: float = VAR_FLOOR, mass_floor: float | None = None) -> SynthModel:
    enc = stats.encoding
    f = stats.vector
    mass_floor = 1.0 / stats.n if mass_floor is None else mass_floor
    label_probs = _normalize(f[:2].copy())
    mass = np.maximum(f[:2], mass_floor)
    cat_probs = []
    for off, size in zip(enc.categorical_offsets(), enc.category_sizes):
        block = f[off:off + 2 * size].reshape(2, size)
        cat_probs.append(np.vstack([_normalize(block[y].copy()) for y in (0, 1)]))
    p = enc.n_continuous
    mean = np.zeros((2, p))
    var = np.zeros((2, p))
    for j in range(p):
        block = f[enc.continuous_offset(j):enc.continuous_offset(j) + 4].reshape(2, 2)
        mean[:, j] = block[:, 0] / mass
        var[:, j] = np.maximum(block[:, 1] / mass - mean[:, j] ** 2, var_floor)
    return SynthModel(enc.schema, label_probs, cat_probs, mean, var, var_floor)


def sample(model: SynthModel, m: int, seed) -> Dataset:
    """Draw m i.i.d. records; continuous values come from normals truncated to [-3, 3]."""
    rng = np.random.default_rng(seed)
    schema = model.schema
    y = (rng.random(m) < model.label_probs[1]).astype(np.int64)
    cats = np.zeros((m, len(schema.categorical)), dtype=np.int64)
    for j, table in enumerate(model.cat_probs):
        cdf = np.cumsum(table, axis=1)
        u = rng.random(m)
        idx = (u[:, None] >= cdf[y]).sum(axis=1)
        cats[:, j] = np.minimum(idx, table.shape[1] - 1)
    p = len(schema.continuous)
    cont = np.zeros((m, p))
    if m and p:
        loc = model.cont_mean[y]
        scale = np.sqrt(model.cont_var[y])
        a = (-CLIP_RANGE - loc) / scale
        b = (CLIP_RANGE - loc) / scale
        cont = truncnorm.rvs(a, b, loc=loc, scale=scale, size=(m, p), random_state=rng)
        cont = np.clip(cont, -CLIP_RANGE, CLIP_RANGE)
    return Dataset(schema, cont, cats, y)


def hard_removal_synthesis(train: Dataset, scores, budget: PrivacyBudget, clip_c: float,
                           noise_seed, sample_seed, ledger: CompositionLedger | None = None
                           ) -> tuple[Dataset, NoisyStats]:
    """Drop records above the 90th-percentile score, then run the uniform pipeline.

    Normalization and sensitivity keep the original n.
    """
    keep = ~top_decile_mask(scores)
    kept = train.subset(keep)
    stats = release_stats(kept, np.ones(kept.n), clip_c, budget, noise_seed, ledger=ledger, n=train.n)
    synthetic = sample(fit_model(stats), train.n, sample_seed)
    return synthetic, stats
