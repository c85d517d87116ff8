"""DP histogram release and per-record rarity scores."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .data_model import CLIP_RANGE, Dataset, Schema, _atomic_write_text
from .dp_core import CompositionLedger, PrivacyBudget, calibrate_sigma, gaussian_release
from .errors import EmptyTrainSplit, LengthMismatch

CONTINUOUS_BINS = 16
DEFAULT_P_MIN = 1e-4


@dataclass(frozen=True)
class HistogramLayout:
    """Bin layout: 16 uniform bins over [-3, 3] per continuous feature, one bin per category."""

    schema: Schema
    edges: np.ndarray
    bin_counts: tuple[int, ...]

    @classmethod
    def for_schema(cls, schema: Schema, n_bins: int = CONTINUOUS_BINS) -> "HistogramLayout":
        edges = np.linspace(-CLIP_RANGE, CLIP_RANGE, n_bins + 1)
        counts = tuple(n_bins for _ in schema.continuous) + tuple(len(f.categories) for f in schema.categorical)
        return cls(schema, edges, counts)

    @property
    def d(self) -> int:
        return len(self.bin_counts)

    @property
    def dim(self) -> int:
        return int(sum(self.bin_counts))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.bin_counts)[:-1]]).astype(np.int64)

    def local_bins(self, dataset: Dataset) -> np.ndarray:
        """Per-feature bin index, shape (n, d); continuous features first."""
        inner = self.edges[1:-1]
        cont = np.searchsorted(inner, dataset.continuous, side="right")
        return np.hstack([cont, dataset.categorical]).astype(np.int64)

    def coordinates(self, dataset: Dataset) -> np.ndarray:
        return self.local_bins(dataset) + self.offsets

    def counts(self, dataset: Dataset) -> np.ndarray:
        return np.bincount(self.coordinates(dataset).ravel(), minlength=self.dim).astype(float)

    def blocks(self, vector: np.ndarray) -> list[np.ndarray]:
        return [vector[o:o + b] for o, b in zip(self.offsets, self.bin_counts)]


@dataclass
class NoisyHistogram:
    counts: np.ndarray
    sigma: float
    sensitivity: float
    layout: HistogramLayout


@dataclass
class RiskScores:
    scores: np.ndarray
    probabilities: list[np.ndarray]
    p_min: float
    histogram: NoisyHistogram | None = None

    def __len__(self) -> int:
        return len(self.scores)


def release_histograms(train: Dataset, layout: HistogramLayout, budget: PrivacyBudget, seed,
                       ledger: CompositionLedger | None = None, stage: str = "scoring") -> NoisyHistogram:
    """Release all per-feature histograms as one vector with l2 sensitivity sqrt(d)."""
    if train.n == 0:
        raise EmptyTrainSplit("cannot score an empty train split")
    sensitivity = math.sqrt(layout.d)
    sigma = calibrate_sigma(sensitivity, budget)
    noisy = gaussian_release(layout.counts(train), sigma, seed)
    if ledger is not None:
        ledger.record(stage, budget)
    return NoisyHistogram(noisy, sigma, sensitivity, layout)


def marginal_probabilities(counts: np.ndarray, layout: HistogramLayout, p_min: float) -> list[np.ndarray]:
    probs = []
    for block in layout.blocks(np.asarray(counts, dtype=float)):
        clamped = np.maximum(block, 0.0)
        total = clamped.sum()
        if total > 0:
            probs.append(clamped / total)
        else:
            probs.append(np.full(len(block), p_min))
    return probs


def rarity_scores(noisy: NoisyHistogram | np.ndarray, train: Dataset, p_min: float = DEFAULT_P_MIN,
                  layout: HistogramLayout | None = None) -> RiskScores:
    """Score_i = -sum_j ln max(p_j[bin_ij], p_min). Pure post-processing of the release."""
    if isinstance(noisy, NoisyHistogram):
        counts, layout, hist = noisy.counts, noisy.layout, noisy
    else:
        if layout is None:
            raise ValueError("a layout is required when passing raw counts")
        counts, hist = np.asarray(noisy, dtype=float), None
    probs = marginal_probabilities(counts, layout, p_min)
    bins = layout.local_bins(train)
    scores = np.zeros(train.n)
    for j, p in enumerate(probs):
        scores -= np.log(np.maximum(p[bins[:, j]], p_min))
    return RiskScores(scores, probs, p_min, hist)


def top_decile_mask(scores: np.ndarray) -> np.ndarray:
    """Records strictly above the 90th-percentile score (nearest-rank).

    With distinct scores this flags exactly ceil(0.1 n) records; with all
    scores equal it flags none.
    """
    s = np.asarray(scores, dtype=float)
    return s > top_decile_threshold(s)


def top_decile_threshold(scores: np.ndarray) -> float:
    s = np.sort(np.asarray(scores, dtype=float))
    n = len(s)
    if n == 0:
        return 0.0
    k = math.ceil(0.1 * n)
    return float(s[n - k - 1]) if n - k - 1 >= 0 else float(s[0]) - 1.0


def _top_decile_indices(scores: np.ndarray) -> set[int]:
    n = len(scores)
    k = math.ceil(0.1 * n)
    order = np.argsort(-np.asarray(scores, dtype=float), kind="stable")
    return set(order[:k].tolist())


def scorer_quality(dp_scores, oracle_scores) -> tuple[float, float]:
    """Spearman correlation (average ranks) and Recall@Top-10% against an oracle."""
    a = np.asarray(dp_scores, dtype=float)
    b = np.asarray(oracle_scores, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape} vs {b.shape}")
    if len(a) < 2:
        raise LengthMismatch("scorer quality needs at least 2 records")
    rho = spearmanr(a, b).statistic
    rho = 0.0 if not np.isfinite(rho) else float(rho)
    top_dp, top_oracle = _top_decile_indices(a), _top_decile_indices(b)
    recall = len(top_dp & top_oracle) / len(top_oracle)
    return rho, recall


def write_scores_csv(path, scores: np.ndarray, weights: np.ndarray | None = None) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_index", "score"] + (["weight"] if weights is not None else []))
    for i, s in enumerate(scores):
        row = [i, repr(float(s))]
        if weights is not None:
            row.append(repr(float(weights[i])))
        w.writerow(row)
    _atomic_write_text(Path(path), buf.getvalue())
