"""Experiment orchestration: the two-stage mechanism, baselines, ablations and grids.

Seeding. A master seed derives every random stream through
:func:`reps.dp_core.derive_seed`:

* data generation / split:  (master, dataset, "data" | "split", seed_index)
* scoring noise:            (master, dataset, epsilon, seed_index, "scoring")
* synthesis noise:          (master, dataset, epsilon, seed_index, "synthesis")
* synthetic sampling:       (master, dataset, epsilon, seed_index, "sampling")
* weight shuffling:         (master, dataset, epsilon, seed_index, "shuffle")

Methods in one (dataset, epsilon, seed_index) cell share noise and sampling
streams, so differences between methods come from the weights alone. The
non-private method uses epsilon = None in its keys because it does not depend
on the budget. Gamma is tuned once per (dataset, epsilon) on the validation
split of seed index 0 with a dedicated "tune" stream; this tuning is not part
of the DP accounting.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .accounting import PerInstanceReport, end_to_end
from .data_model import (
    TEST,
    TRAIN,
    VALIDATION,
    Dataset,
    _atomic_write_text,
    load_csv,
    quantile_bin,
    simulate_dataset,
    split,
    standardize,
)
from .dp_core import (
    CompositionLedger,
    PrivacyBudget,
    default_delta,
    derive_seed,
    split_budget,
)
from .errors import UnknownKind
from .evaluation import (
    DOMIAS_K,
    KNN_K,
    DecileAssignment,
    MetricsReport,
    advantage_metrics,
    distance_mia,
    domias_mia,
    knn_outlier_deciles,
    tstr,
)
from .scoring import DEFAULT_P_MIN, HistogramLayout, RiskScores, rarity_scores, release_histograms, scorer_quality, top_decile_mask
from .synthesis import DEFAULT_CLIP_C, NoisyStats, fit_model, hard_removal_synthesis, release_stats, sample
from .weighting import GAMMA_CANDIDATES, hinge_exp_weights, select_gamma, shuffle_weights

log = logging.getLogger(__name__)

NON_PRIVATE = "non_private"
DP_UNIFORM_FULL = "dp_uniform_full"
DP_UNIFORM_SPLIT = "dp_uniform_split"
REPS = "reps"
RANDOM_DOWNWEIGHT = "random_downweight"
HARD_REMOVAL = "hard_removal"
METHODS = (NON_PRIVATE, DP_UNIFORM_FULL, DP_UNIFORM_SPLIT, REPS, RANDOM_DOWNWEIGHT, HARD_REMOVAL)
BASELINES = (NON_PRIVATE, DP_UNIFORM_FULL, DP_UNIFORM_SPLIT, RANDOM_DOWNWEIGHT, HARD_REMOVAL)
GAMMA_METHODS = (REPS, RANDOM_DOWNWEIGHT, HARD_REMOVAL)
EPSILONS = (0.5, 1.0, 2.0, 4.0)

RESULT_COLUMNS = ("dataset", "epsilon", "method", "gamma", "tstr", "mia_adv", "top10_adv",
                  "top_med_ratio", "spearman", "recall_top10")


# --------------------------------------------------------------------------
# data preparation
# --------------------------------------------------------------------------

SHARED = "shared"
DISJOINT = "disjoint"
QUERY_PROTOCOLS = (SHARED, DISJOINT)


@dataclass
class PreparedData:
    """Standardized splits plus the attack query sets.

    Two query protocols are supported. ``shared``: the whole test split is the
    DOMIAS reference set and also the non-member query set, so non-member
    queries find themselves in the reference set. ``disjoint``: the test
    split is halved (stratified) into a reference half and a non-member query
    half, which removes the self-match.
    """

    name: str
    data: Dataset
    train: Dataset
    validation: Dataset
    test: Dataset
    test_reference_half: Dataset
    test_query_half: Dataset
    deciles: DecileAssignment

    @property
    def n_train(self) -> int:
        return self.train.n

    @property
    def delta(self) -> float:
        return default_delta(self.train.n)

    def attack_sets(self, protocol: str = SHARED) -> tuple[Dataset, Dataset]:
        """(reference, non-member queries) for a query protocol."""
        if protocol == SHARED:
            return self.test, self.test
        if protocol == DISJOINT:
            return self.test_reference_half, self.test_query_half
        raise ValueError(f"unknown query protocol {protocol!r}")


def partition_test(test: Dataset, seed) -> tuple[Dataset, Dataset]:
    """Stratified 50/50 split of the test rows into (reference, non-member queries)."""
    rng = np.random.default_rng(seed)
    ref = np.zeros(test.n, dtype=bool)
    for c in (0, 1):
        ix = rng.permutation(np.flatnonzero(test.labels == c))
        ref[ix[: len(ix) // 2]] = True
    return test.subset(ref), test.subset(~ref)


def prepare(dataset: Dataset, split_seed, name: str = "data", knn_k: int = KNN_K) -> PreparedData:
    data = dataset.with_split(split(dataset, split_seed))
    data, _ = standardize(data)
    test = data.part(TEST)
    reference, queries = partition_test(test, derive_seed(split_seed, "reference"))
    train = data.part(TRAIN)
    return PreparedData(name, data, train, data.part(VALIDATION), test, reference, queries,
                        knn_outlier_deciles(train, knn_k))


# --------------------------------------------------------------------------
# single runs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StageSeeds:
    scoring: int
    synthesis: int
    sampling: int
    shuffle: int

    @classmethod
    def derive(cls, master: int, *keys) -> "StageSeeds":
        return cls(*(derive_seed(master, *keys, stage) for stage in ("scoring", "synthesis", "sampling", "shuffle")))


@dataclass
class MethodRun:
    method: str
    synthetic: Dataset
    weights: np.ndarray
    stats: NoisyStats
    ledger: CompositionLedger
    epsilon: float | None
    delta: float | None
    clip_c: float
    gamma: float | None = None
    risk: RiskScores | None = None
    high_risk: np.ndarray | None = None

    @property
    def sigma(self) -> float:
        return self.stats.sigma

    def per_instance(self) -> PerInstanceReport | None:
        if self.method == NON_PRIVATE:
            return None
        has_scoring = any(stage == "scoring" for stage, _ in self.ledger.entries)
        weights = self.weights
        if self.method == HARD_REMOVAL:
            # dropped records have zero influence
            weights = np.where(self.high_risk, 0.0, 1.0)
        return end_to_end(self.ledger, weights, self.clip_c, self.stats.n, self.sigma,
                          high_risk=self.high_risk,
                          scoring_stage="scoring" if has_scoring else None)


def score_records(train: Dataset, budget: PrivacyBudget, seed, p_min: float = DEFAULT_P_MIN,
                  ledger: CompositionLedger | None = None) -> RiskScores:
    layout = HistogramLayout.for_schema(train.schema)
    hist = release_histograms(train, layout, budget, seed, ledger=ledger)
    return rarity_scores(hist, train, p_min)


def run_reps(train: Dataset, epsilon: float, delta: float, gamma: float, clip_c: float,
             seeds: StageSeeds, p_min: float = DEFAULT_P_MIN) -> MethodRun:
    """Score with (0.1 eps, delta/2), weight by hinge-exp, release with (0.9 eps, delta/2)."""
    total = PrivacyBudget(epsilon, delta)
    budgets = split_budget(total)
    ledger = CompositionLedger()
    risk = score_records(train, budgets.scoring, seeds.scoring, p_min, ledger)
    weights = hinge_exp_weights(risk.scores, gamma)
    stats = release_stats(train, weights, clip_c, budgets.synthesis, seeds.synthesis, ledger=ledger)
    synthetic = sample(fit_model(stats), train.n, seeds.sampling)
    return MethodRun(REPS, synthetic, weights, stats, ledger, epsilon, delta, clip_c, gamma, risk,
                     top_decile_mask(risk.scores))


def run_baseline(kind: str, train: Dataset, epsilon: float | None, delta: float | None, clip_c: float,
                 seeds: StageSeeds, gamma: float | None = None, p_min: float = DEFAULT_P_MIN) -> MethodRun:
    if kind not in BASELINES:
        raise UnknownKind(kind)
    n = train.n
    ones = np.ones(n)
    if kind == NON_PRIVATE:
        ledger = CompositionLedger()
        stats = release_stats(train, ones, clip_c, None, seeds.synthesis)
        synthetic = sample(fit_model(stats), n, seeds.sampling)
        return MethodRun(kind, synthetic, ones, stats, ledger, None, None, clip_c)

    total = PrivacyBudget(epsilon, delta)
    budgets = split_budget(total)
    ledger = CompositionLedger()
    if kind == DP_UNIFORM_FULL:
        stats = release_stats(train, ones, clip_c, total, seeds.synthesis, ledger=ledger)
        synthetic = sample(fit_model(stats), n, seeds.sampling)
        return MethodRun(kind, synthetic, ones, stats, ledger, epsilon, delta, clip_c)
    if kind == DP_UNIFORM_SPLIT:
        stats = release_stats(train, ones, clip_c, budgets.synthesis, seeds.synthesis, ledger=ledger)
        synthetic = sample(fit_model(stats), n, seeds.sampling)
        return MethodRun(kind, synthetic, ones, stats, ledger, epsilon, delta, clip_c)

    if gamma is None:
        raise ValueError(f"{kind} needs a gamma")
    risk = score_records(train, budgets.scoring, seeds.scoring, p_min, ledger)
    high_risk = top_decile_mask(risk.scores)
    if kind == RANDOM_DOWNWEIGHT:
        weights = shuffle_weights(hinge_exp_weights(risk.scores, gamma), seeds.shuffle)
        stats = release_stats(train, weights, clip_c, budgets.synthesis, seeds.synthesis, ledger=ledger)
        synthetic = sample(fit_model(stats), n, seeds.sampling)
        return MethodRun(kind, synthetic, weights, stats, ledger, epsilon, delta, clip_c, gamma, risk,
                         weights < 1.0)
    synthetic, stats = hard_removal_synthesis(train, risk.scores, budgets.synthesis, clip_c,
                                              seeds.synthesis, seeds.sampling, ledger=ledger)
    return MethodRun(kind, synthetic, np.where(high_risk, 0.0, 1.0), stats, ledger, epsilon, delta,
                     clip_c, gamma, risk, high_risk)


def run_method(method: str, train: Dataset, epsilon: float | None, delta: float | None, clip_c: float,
               seeds: StageSeeds, gamma: float | None = None, p_min: float = DEFAULT_P_MIN) -> MethodRun:
    if method == REPS:
        return run_reps(train, epsilon, delta, gamma, clip_c, seeds, p_min)
    return run_baseline(method, train, epsilon, delta, clip_c, seeds, gamma, p_min)


def _domias_metrics(prep: PreparedData, synthetic: Dataset, protocol: str, k: int):
    reference, nonmember = prep.attack_sets(protocol)
    members = domias_mia(synthetic, reference, prep.train, k)
    others = domias_mia(synthetic, reference, nonmember, k)
    return advantage_metrics(members, prep.deciles.deciles, others)


def evaluate_run(prep: PreparedData, run: MethodRun, domias_k: int = DOMIAS_K,
                 protocol: str = SHARED) -> MetricsReport:
    """TSTR on the test split, both attacks, and scorer diagnostics.

    ``mia_advantage`` is the overall advantage of the distance attack;
    the decile metrics come from the DOMIAS-style attack under ``protocol``.
    DOMIAS metrics under the other protocol are kept in ``extras``.
    """
    dom = _domias_metrics(prep, run.synthetic, protocol, domias_k)
    other = DISJOINT if protocol == SHARED else SHARED
    alt = _domias_metrics(prep, run.synthetic, other, domias_k)
    _, nonmember = prep.attack_sets(protocol)
    dist = advantage_metrics(distance_mia(run.synthetic, prep.train), prep.deciles.deciles,
                             distance_mia(run.synthetic, nonmember))
    rho = recall = None
    if run.risk is not None:
        rho, recall = scorer_quality(run.risk.scores, prep.deciles.scores)
    return MetricsReport(
        tstr_auroc=tstr(run.synthetic, prep.test),
        mia_advantage=dist.overall,
        top_decile_advantage=dom.top_decile,
        inequality_ratio=dom.inequality_ratio,
        per_decile_advantage=[float(v) for v in dom.per_decile],
        domias_overall_advantage=dom.overall,
        distance_top_decile_advantage=dist.top_decile,
        distance_inequality_ratio=dist.inequality_ratio,
        spearman=rho,
        recall_top10=recall,
        extras={
            "query_protocol": protocol,
            f"{other}_domias_overall_advantage": alt.overall,
            f"{other}_domias_top_decile_advantage": alt.top_decile,
            f"{other}_domias_inequality_ratio": alt.inequality_ratio,
        },
    )


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------

@dataclass
class DatasetSource:
    name: str = "sim"
    source: str = "simulate"
    path: str | None = None
    schema: str | None = None
    bin_features: list[str] = field(default_factory=list)
    bin_random: int = 0
    n_bins: int = 5

    def load(self, master_seed: int, seed_index: int) -> Dataset:
        if self.source == "simulate":
            return simulate_dataset(derive_seed(master_seed, self.name, "data", seed_index))
        if self.source != "csv":
            raise ValueError(f"unknown dataset source {self.source!r}")
        return load_csv(self.path, self.schema)

    def features_to_bin(self, data: Dataset, master_seed: int) -> list[str]:
        names = list(self.bin_features)
        if self.bin_random:
            pool = [f.name for f in data.schema.continuous if f.name not in names]
            rng = np.random.default_rng(derive_seed(master_seed, self.name, "bin"))
            names += sorted(rng.choice(pool, size=min(self.bin_random, len(pool)), replace=False).tolist())
        return names


@dataclass
class ExperimentConfig:
    datasets: list[DatasetSource] = field(default_factory=lambda: [DatasetSource()])
    epsilons: list[float] = field(default_factory=lambda: list(EPSILONS))
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    gamma_candidates: list[float] = field(default_factory=lambda: list(GAMMA_CANDIDATES))
    clip_c: float = DEFAULT_CLIP_C
    p_min: float = DEFAULT_P_MIN
    seeds: int = 5
    master_seed: int = 0
    knn_k: int = KNN_K
    domias_k: int = DOMIAS_K
    query_protocol: str = SHARED
    out_dir: str | None = None
    save_runs: bool = True
    jobs: int = 1

    def __post_init__(self):
        if not self.epsilons:
            raise ValueError("epsilon grid must be non-empty")
        if not self.methods:
            raise ValueError("method list must be non-empty")
        if self.seeds < 1:
            raise ValueError("need at least one seed")
        if self.query_protocol not in QUERY_PROTOCOLS:
            raise ValueError(f"query_protocol must be one of {QUERY_PROTOCOLS}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise UnknownKind(f"unknown method(s): {unknown}")
        self.datasets = [d if isinstance(d, DatasetSource) else DatasetSource(**d) for d in self.datasets]
        self.epsilons = [float(e) for e in self.epsilons]
        for e in self.epsilons:
            PrivacyBudget(e, 0.5)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "dataset" in d:
            d["datasets"] = [d.pop("dataset")]
        known = set(cls.__dataclass_fields__)
        extra = sorted(set(d) - known)
        if extra:
            raise ValueError(f"unknown config key(s): {extra}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CellResult:
    dataset: str
    epsilon: float | None
    method: str
    seed_index: int
    gamma: float | None
    metrics: MetricsReport | None
    privacy: dict | None
    error: str | None = None

    def row(self) -> dict:
        m = self.metrics
        return {
            "dataset": self.dataset,
            "epsilon": self.epsilon,
            "method": self.method,
            "seed_index": self.seed_index,
            "gamma": self.gamma,
            "tstr": None if m is None else m.tstr_auroc,
            "mia_adv": None if m is None else m.mia_advantage,
            "top10_adv": None if m is None else m.top_decile_advantage,
            "top_med_ratio": None if m is None else m.inequality_ratio,
            "spearman": None if m is None else m.spearman,
            "recall_top10": None if m is None else m.recall_top10,
            "error": self.error,
        }


@dataclass
class RunResult:
    config: ExperimentConfig
    cells: list[CellResult]
    gammas: dict[tuple[str, float], float]
    aggregate: list[dict]

    def mean(self, dataset: str, epsilon: float, method: str, metric: str) -> float:
        for row in self.aggregate:
            if row["dataset"] == dataset and row["epsilon"] == epsilon and row["method"] == method:
                return row[metric]
        raise KeyError((dataset, epsilon, method))


def cell_seeds(master: int, dataset: str, epsilon: float | None, seed_index) -> StageSeeds:
    return StageSeeds.derive(master, dataset, epsilon, seed_index)


def tune_gamma(prep: PreparedData, epsilon: float, clip_c: float, master: int,
               candidates: Sequence[float] = GAMMA_CANDIDATES, p_min: float = DEFAULT_P_MIN
               ) -> tuple[float, dict]:
    """Pick gamma on the validation split against the dp_uniform_full baseline."""
    seeds = cell_seeds(master, prep.name, epsilon, "tune")
    delta = prep.delta
    base = run_baseline(DP_UNIFORM_FULL, prep.train, epsilon, delta, clip_c, seeds)
    baseline = tstr(base.synthetic, prep.validation)
    val = {}
    for g in candidates:
        run = run_reps(prep.train, epsilon, delta, g, clip_c, seeds, p_min)
        val[g] = tstr(run.synthetic, prep.validation)
    chosen = select_gamma(val, baseline, candidates)
    return chosen, {"baseline": baseline, "validation_tstr": val, "gamma": chosen}


def _prepare_source(src: DatasetSource, cfg: ExperimentConfig, seed_index: int) -> PreparedData:
    split_seed = derive_seed(cfg.master_seed, src.name, "split", seed_index)
    data = src.load(cfg.master_seed, seed_index)
    bin_names = src.features_to_bin(data, cfg.master_seed)
    if bin_names:
        # bin edges come from the train split of this seed's partition
        data = quantile_bin(data.with_split(split(data, split_seed)), bin_names, src.n_bins)
    return prepare(data, split_seed, src.name, cfg.knn_k)


def _run_seed(args) -> list[CellResult]:
    cfg, src, seed_index, gammas = args
    out = []
    try:
        prep = _prepare_source(src, cfg, seed_index)
    except Exception as exc:  # noqa: BLE001 - recorded as an error row
        log.exception("preparing %s seed %d failed", src.name, seed_index)
        return [CellResult(src.name, e, m, seed_index, None, None, None, f"{type(exc).__name__}: {exc}")
                for e in cfg.epsilons for m in cfg.methods]
    for eps in cfg.epsilons:
        for method in cfg.methods:
            gamma = gammas.get((src.name, eps)) if method in GAMMA_METHODS else None
            key_eps = None if method == NON_PRIVATE else eps
            seeds = cell_seeds(cfg.master_seed, src.name, key_eps, seed_index)
            try:
                run = run_method(method, prep.train, eps, prep.delta, cfg.clip_c, seeds, gamma, cfg.p_min)
                metrics = evaluate_run(prep, run, cfg.domias_k, cfg.query_protocol)
                pir = run.per_instance()
                privacy = None if pir is None else pir.summary()
                if privacy is not None:
                    privacy["sigma"] = run.sigma
                    privacy["ledger"] = run.ledger.to_list()
                out.append(CellResult(src.name, eps, method, seed_index, gamma, metrics, privacy))
                if cfg.out_dir and cfg.save_runs:
                    save_run(Path(cfg.out_dir) / "runs" / src.name / f"eps_{eps:g}" / method / f"seed_{seed_index}",
                             run, metrics, prep)
            except Exception as exc:  # noqa: BLE001 - grid cells fail independently
                log.exception("cell %s eps=%s %s seed %d failed", src.name, eps, method, seed_index)
                out.append(CellResult(src.name, eps, method, seed_index, gamma, None, None,
                                      f"{type(exc).__name__}: {exc}"))
    return out


def _mean(values):
    vals = [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    return float(np.mean(vals)) if vals else None


def aggregate(cells: Sequence[CellResult]) -> list[dict]:
    """Mean over seeds per (dataset, epsilon, method), folded in sorted key order."""
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        groups.setdefault((c.dataset, c.epsilon, METHODS.index(c.method)), []).append(c)
    rows = []
    for key in sorted(groups):
        grp = sorted(groups[key], key=lambda c: c.seed_index)
        ok = [c for c in grp if c.metrics is not None]
        r = {"dataset": key[0], "epsilon": key[1], "method": METHODS[key[2]],
             "gamma": grp[0].gamma, "n_seeds": len(ok), "n_errors": len(grp) - len(ok)}
        for col in RESULT_COLUMNS[4:]:
            r[col] = _mean([c.row()[col] for c in ok])
        rows.append(r)
    return rows


def run_grid(config: ExperimentConfig) -> RunResult:
    cfg = config
    gammas: dict[tuple[str, float], float] = {}
    tuning: dict[str, dict] = {}
    needs_gamma = any(m in GAMMA_METHODS for m in cfg.methods)
    for src in cfg.datasets:
        if not needs_gamma:
            break
        prep0 = _prepare_source(src, cfg, 0)
        for eps in cfg.epsilons:
            g, info = tune_gamma(prep0, eps, cfg.clip_c, cfg.master_seed, cfg.gamma_candidates, cfg.p_min)
            gammas[(src.name, eps)] = g
            tuning[f"{src.name}/eps_{eps:g}"] = info
            log.info("%s eps=%g: gamma*=%g", src.name, eps, g)

    tasks = [(cfg, src, i, gammas) for src in cfg.datasets for i in range(cfg.seeds)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            parts = list(pool.map(_run_seed, tasks))
    else:
        parts = [_run_seed(t) for t in tasks]
    cells = [c for part in parts for c in part]
    cells.sort(key=lambda c: (c.dataset, c.epsilon if c.epsilon is not None else -1.0,
                              METHODS.index(c.method), c.seed_index))
    result = RunResult(cfg, cells, gammas, aggregate(cells))
    if cfg.out_dir:
        write_outputs(result, Path(cfg.out_dir), tuning)
    return result


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _csv_text(header: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h)) for h in header])
    return buf.getvalue()


def write_outputs(result: RunResult, out_dir: Path, tuning: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    agg_cols = list(RESULT_COLUMNS) + ["n_seeds", "n_errors"]
    _atomic_write_text(out_dir / "results.csv", _csv_text(agg_cols, result.aggregate))
    per_seed_cols = ["dataset", "epsilon", "method", "seed_index"] + list(RESULT_COLUMNS[3:]) + ["error"]
    _atomic_write_text(out_dir / "results_per_seed.csv", _csv_text(per_seed_cols, [c.row() for c in result.cells]))
    _atomic_write_text(out_dir / "utility_vs_epsilon.csv",
                       _csv_text(["dataset", "method", "epsilon", "tstr"], result.aggregate))
    _atomic_write_text(out_dir / "top10_adv_vs_epsilon.csv",
                       _csv_text(["dataset", "method", "epsilon", "top10_adv"], result.aggregate))
    decile_rows = []
    for c in result.cells:
        if c.metrics is None:
            continue
        for d, adv in enumerate(c.metrics.per_decile_advantage, start=1):
            decile_rows.append({"dataset": c.dataset, "epsilon": c.epsilon, "method": c.method,
                                "seed_index": c.seed_index, "decile": d, "advantage": adv})
    _atomic_write_text(out_dir / "decile_curves.csv",
                       _csv_text(["dataset", "epsilon", "method", "seed_index", "decile", "advantage"], decile_rows))
    report = {
        "config": result.config.to_dict(),
        "gammas": {f"{k[0]}/eps_{k[1]:g}": v for k, v in sorted(result.gammas.items())},
        "tuning": tuning or {},
        "cells": [
            {**c.row(), "metrics": None if c.metrics is None else c.metrics.to_dict(), "privacy": c.privacy}
            for c in result.cells
        ],
    }
    _atomic_write_text(out_dir / "report.json", json.dumps(report, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def save_run(run_dir: Path, run: MethodRun, metrics: MetricsReport | None, prep: PreparedData | None = None) -> None:
    """Artifacts needed to re-derive per-instance bounds (see the ``audit`` command)."""
    run_dir.mkdir(parents=True, exist_ok=True)
    synthesis = None
    for stage, b in run.ledger.entries:
        if stage == "synthesis":
            synthesis = b
    meta = {
        "method": run.method,
        "epsilon": run.epsilon,
        "delta": run.delta,
        "gamma": run.gamma,
        "clip_c": run.clip_c,
        "n": run.stats.n,
        "sigma": run.sigma,
        "delta_t": None if synthesis is None else synthesis.delta,
        "epsilon_t": None if synthesis is None else synthesis.epsilon,
        "ledger": run.ledger.to_list(),
    }
    _atomic_write_text(run_dir / "run.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    if metrics is not None:
        _atomic_write_text(run_dir / "metrics.json",
                           json.dumps(metrics.to_dict(), indent=2, sort_keys=True, default=_json_default) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["record_index", "weight", "score", "in_high_risk_set"])
    hr = run.high_risk if run.high_risk is not None else np.zeros(len(run.weights), dtype=bool)
    for i, wi in enumerate(run.weights):
        score = "" if run.risk is None else repr(float(run.risk.scores[i]))
        w.writerow([i, repr(float(wi)), score, int(bool(hr[i]))])
    _atomic_write_text(run_dir / "weights.csv", buf.getvalue())


def results_table(result: RunResult) -> str:
    """Fixed-width text rendering of the aggregate table."""
    header = ("dataset", "epsilon", "method", "gamma", "tstr", "mia_adv", "top10_adv", "top_med_ratio")
    lines = ["  ".join(f"{h:>17}" for h in header)]
    for r in result.aggregate:
        lines.append("  ".join(f"{_fmt(r.get(h)) if not isinstance(r.get(h), float) else f'{r[h]:.3f}':>17}"
                               for h in header))
    return "\n".join(lines)

