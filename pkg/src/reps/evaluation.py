"""Threat model and metrics: outlier deciles, membership inference attacks, TSTR.

All distances use one mixed-type embedding: standardized continuous values
followed by one-hot categorical indicators, compared with plain Euclidean
distance (a category mismatch adds 2 to the squared distance).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .data_model import Dataset
from .errors import (
    DegenerateSyntheticWarning,
    EmptyDecile,
    EmptySynthetic,
    SingleClass,
    TooFewRecords,
    TooFewRows,
)

KNN_K = 10
DOMIAS_K = 5
N_DECILES = 10
LOGREG_L2 = 1e-4
LOGREG_TOL = 1e-6
LOGREG_MAX_ITER = 1000

_CHUNK = 1024
_EPS = np.finfo(float).eps


def embed(data: Dataset) -> np.ndarray:
    blocks = [data.continuous]
    for j, f in enumerate(data.schema.categorical):
        onehot = np.zeros((data.n, len(f.categories)))
        onehot[np.arange(data.n), data.categorical[:, j]] = 1.0
        blocks.append(onehot)
    return np.hstack(blocks)


def _k_smallest_distances(queries: np.ndarray, points: np.ndarray, k: int,
                          exclude_self: bool = False) -> np.ndarray:
    """Sorted distances to the k nearest points, shape (len(queries), k)."""
    out = np.empty((len(queries), k))
    for start in range(0, len(queries), _CHUNK):
        stop = min(start + _CHUNK, len(queries))
        d = cdist(queries[start:stop], points)
        if exclude_self:
            d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        part = np.partition(d, k - 1, axis=1)[:, :k] if k < d.shape[1] else d
        out[start:stop] = np.sort(part, axis=1)[:, :k]
    return out


@dataclass
class DecileAssignment:
    scores: np.ndarray
    deciles: np.ndarray
    k: int = KNN_K

    def members_of(self, decile: int) -> np.ndarray:
        return np.flatnonzero(self.deciles == decile)


def knn_outlier_scores(train: Dataset, k: int = KNN_K) -> np.ndarray:
    """Mean distance to the k nearest other train records (exact brute force)."""
    if train.n <= k:
        raise TooFewRecords(f"need more than k={k} records, got {train.n}")
    x = embed(train)
    return _k_smallest_distances(x, x, k, exclude_self=True).mean(axis=1)


def assign_deciles(scores, n_deciles: int = N_DECILES) -> np.ndarray:
    """Rank-based deciles 1..10 (10 = highest scores), ties broken by index."""
    s = np.asarray(scores, dtype=float)
    n = len(s)
    rank = np.empty(n, dtype=np.int64)
    rank[np.argsort(s, kind="stable")] = np.arange(n)
    return rank * n_deciles // n + 1


def knn_outlier_deciles(train: Dataset, k: int = KNN_K) -> DecileAssignment:
    scores = knn_outlier_scores(train, k)
    return DecileAssignment(scores, assign_deciles(scores), k)


@dataclass
class AttackScores:
    scores: np.ndarray
    is_member: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        self.is_member = np.asarray(self.is_member, dtype=bool)

    @property
    def member_scores(self) -> np.ndarray:
        return self.scores[self.is_member]

    @property
    def nonmember_scores(self) -> np.ndarray:
        return self.scores[~self.is_member]


def distance_mia(synthetic: Dataset, queries: Dataset) -> np.ndarray:
    """Negative distance to the closest synthetic row; closer means 'member'."""
    if synthetic.n == 0:
        raise EmptySynthetic("distance attack needs synthetic rows")
    d = _k_smallest_distances(embed(queries), embed(synthetic), 1)
    return -d[:, 0]


def domias_mia(synthetic: Dataset, reference: Dataset, queries: Dataset, k: int = DOMIAS_K) -> np.ndarray:
    """Mean kNN distance to the reference set over mean kNN distance to the synthetic set."""
    if synthetic.n < k or reference.n < k:
        raise TooFewRows(f"need at least k={k} synthetic and reference rows")
    q = embed(queries)
    to_ref = _k_smallest_distances(q, embed(reference), k).mean(axis=1)
    to_syn = _k_smallest_distances(q, embed(synthetic), k).mean(axis=1)
    return to_ref / np.maximum(to_syn, _EPS)


def auc(scores, labels) -> float:
    """Mann-Whitney AUROC with average ranks for ties (labels: truthy = positive)."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(labels).astype(bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def advantage(scores, labels) -> float:
    return abs(2.0 * auc(scores, labels) - 1.0)


@dataclass
class AdvantageMetrics:
    overall: float
    per_decile: np.ndarray
    top_decile: float
    inequality_ratio: float


def advantage_metrics(member_scores, member_deciles, nonmember_scores,
                      n_deciles: int = N_DECILES) -> AdvantageMetrics:
    """Overall, per-decile and top/median advantages.

    Each decile's advantage compares that decile's members against the full
    non-member pool. The ratio's denominator is the median of the per-decile
    advantages.
    """
    m = np.asarray(member_scores, dtype=float)
    dec = np.asarray(member_deciles)
    nm = np.asarray(nonmember_scores, dtype=float)
    labels = np.r_[np.ones(len(m), dtype=bool), np.zeros(len(nm), dtype=bool)]
    overall = advantage(np.r_[m, nm], labels)
    per = np.empty(n_deciles)
    for d in range(1, n_deciles + 1):
        sel = m[dec == d]
        if len(sel) == 0:
            raise EmptyDecile(f"decile {d} has no member queries")
        per[d - 1] = advantage(np.r_[sel, nm], np.r_[np.ones(len(sel), dtype=bool), np.zeros(len(nm), dtype=bool)])
    top = float(per[-1])
    ratio = top / max(float(np.median(per)), 1e-12)
    return AdvantageMetrics(float(overall), per, top, ratio)


def classifier_features(data: Dataset) -> np.ndarray:
    return embed(data)


def fit_logistic(x: np.ndarray, y: np.ndarray, l2: float = LOGREG_L2, tol: float = LOGREG_TOL,
                 max_iter: int = LOGREG_MAX_ITER) -> np.ndarray:
    """L2-penalized logistic regression (intercept unpenalized); returns [w..., b]."""
    x = np.asarray(x, dtype=float)
    sign = np.where(np.asarray(y) > 0, 1.0, -1.0)
    n, p = x.shape

    def objective(theta):
        w, b = theta[:p], theta[p]
        z = sign * (x @ w + b)
        loss = np.logaddexp(0.0, -z).mean() + 0.5 * l2 * (w @ w)
        g = -sign * np.exp(-np.logaddexp(0.0, z)) / n
        return loss, np.r_[x.T @ g + l2 * w, g.sum()]

    res = minimize(objective, np.zeros(p + 1), jac=True, method="L-BFGS-B",
                   options={"gtol": tol, "maxiter": max_iter})
    return res.x


def tstr(synthetic: Dataset, real_test: Dataset) -> float:
    """Train logistic regression on synthetic rows, return AUROC on real rows."""
    if synthetic.n == 0 or len(np.unique(synthetic.labels)) < 2:
        warnings.warn("synthetic data has a single label class; TSTR set to 0.5",
                      DegenerateSyntheticWarning, stacklevel=2)
        return 0.5
    theta = fit_logistic(classifier_features(synthetic), synthetic.labels)
    x = classifier_features(real_test)
    return auc(x @ theta[:-1] + theta[-1], real_test.labels == 1)


@dataclass
class MetricsReport:
    tstr_auroc: float
    mia_advantage: float
    top_decile_advantage: float
    inequality_ratio: float
    per_decile_advantage: list[float]
    domias_overall_advantage: float | None = None
    distance_top_decile_advantage: float | None = None
    distance_inequality_ratio: float | None = None
    spearman: float | None = None
    recall_top10: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)
