"""Command-line interface: ``reps <subcommand> [flags]``.

Exit codes: 0 success, 1 user or configuration error, 2 I/O error while
writing outputs, 3 internal invariant violation.

Every subcommand that touches data takes ``--seed``; when the flag is absent
the ``REPS_MASTER_SEED`` environment variable is used, then 0. For
``experiment`` the precedence is ``--seed``, then ``REPS_MASTER_SEED``, then
the config file's ``master_seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from .accounting import end_to_end, verify_bound
from .data_model import SchemaDecl, _atomic_write_text, load_csv, schema_path_for, simulate_dataset, write_csv
from .dp_core import CompositionLedger, PrivacyBudget, derive_seed, split_budget
from .errors import InvariantViolation, RepsError
from .evaluation import DOMIAS_K, KNN_K, advantage_metrics, distance_mia, domias_mia
from .pipeline import (
    GAMMA_METHODS,
    METHODS,
    QUERY_PROTOCOLS,
    SHARED,
    DatasetSource,
    ExperimentConfig,
    MethodRun,
    PreparedData,
    StageSeeds,
    _prepare_source,
    evaluate_run,
    results_table,
    run_grid,
    run_method,
    save_run,
    score_records,
)
from .scoring import DEFAULT_P_MIN, write_scores_csv
from .synthesis import DEFAULT_CLIP_C
from .weighting import GAMMA_CANDIDATES, hinge_exp_weights

EXIT_OK = 0
EXIT_USER = 1
EXIT_IO = 2
EXIT_INTERNAL = 3

SEED_ENV = "REPS_MASTER_SEED"

log = logging.getLogger("reps")


class UserError(Exception):
    """Bad flags, missing inputs or invalid artifacts."""


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UserError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = _env_seed()
    return 0 if env is None else env


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{what} not found: {p}")
    return p


def _source(args) -> DatasetSource:
    data = _require_file(args.data, "data file")
    schema = Path(args.schema) if args.schema else schema_path_for(data)
    _require_file(schema, "schema file")
    return DatasetSource(name=data.stem, source="csv", path=str(data), schema=str(schema))


def _prepared(args, seed: int) -> PreparedData:
    src = _source(args)
    cfg = ExperimentConfig(datasets=[src], master_seed=seed, knn_k=args.knn_k, methods=["reps"], epsilons=[1.0])
    return _prepare_source(src, cfg, 0)


def _load_synthetic(path, prep: PreparedData):
    p = _require_file(path, "synthetic data file")
    synthetic = load_csv(p, SchemaDecl.load(_require_file(schema_path_for(p), "synthetic schema file")))
    if synthetic.schema != prep.train.schema:
        raise UserError("synthetic data schema differs from the real data schema")
    return synthetic


def _write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_to_builtin) + "\n")


def _to_builtin(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _delta_for(args, prep: PreparedData) -> float:
    return prep.delta if args.delta is None else args.delta


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _seed(args)
    data = simulate_dataset(derive_seed(seed, "sim", "data", 0))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out, include_flags=not args.no_flags)
    print(f"wrote {data.n} rows to {out} (schema {schema_path_for(out)})")
    return EXIT_OK


def cmd_score(args) -> int:
    seed = _seed(args)
    prep = _prepared(args, seed)
    budget = split_budget(PrivacyBudget(args.epsilon, _delta_for(args, prep))).scoring
    seeds = StageSeeds.derive(seed, prep.name, args.epsilon, 0)
    risk = score_records(prep.train, budget, seeds.scoring, args.p_min)
    weights = None if args.gamma is None else hinge_exp_weights(risk.scores, args.gamma)
    write_scores_csv(args.out, risk.scores, weights)
    print(f"scored {prep.train.n} train records with epsilon_s={budget.epsilon:g}, delta_s={budget.delta:.3g}")
    return EXIT_OK


def _run(args, prep: PreparedData, seed: int) -> MethodRun:
    if args.method in GAMMA_METHODS and args.gamma is None:
        raise UserError(f"--gamma is required for method {args.method}")
    eps = None if args.method == "non_private" else args.epsilon
    delta = None if eps is None else _delta_for(args, prep)
    seeds = StageSeeds.derive(seed, prep.name, eps, 0)
    return run_method(args.method, prep.train, eps, delta, args.clip_c, seeds, args.gamma, args.p_min)


def cmd_synthesize(args) -> int:
    seed = _seed(args)
    prep = _prepared(args, seed)
    run = _run(args, prep, seed)
    out = _out_dir(args.out_dir)
    write_csv(run.synthetic, out / "synthetic.csv")
    save_run(out, run, None, prep)
    print(f"{run.method}: wrote {run.synthetic.n} synthetic rows and run artifacts to {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    seed = _seed(args)
    prep = _prepared(args, seed)
    synthetic = _load_synthetic(args.synthetic, prep)
    reference, nonmember = prep.attack_sets(args.query_protocol)
    if args.attack == "domias":
        members = domias_mia(synthetic, reference, prep.train, args.domias_k)
        others = domias_mia(synthetic, reference, nonmember, args.domias_k)
    else:
        members = distance_mia(synthetic, prep.train)
        others = distance_mia(synthetic, nonmember)
    metrics = advantage_metrics(members, prep.deciles.deciles, others)
    out = _out_dir(args.out_dir)
    rows = [["query", "is_member", "decile", "score"]]
    rows += [[i, 1, int(prep.deciles.deciles[i]), repr(float(s))] for i, s in enumerate(members)]
    rows += [[i, 0, "", repr(float(s))] for i, s in enumerate(others)]
    _atomic_write_text(out / "attack_scores.csv", "".join(",".join(map(str, r)) + "\n" for r in rows))
    summary = {"attack": args.attack, "query_protocol": args.query_protocol,
               "overall_advantage": metrics.overall, "top_decile_advantage": metrics.top_decile,
               "inequality_ratio": metrics.inequality_ratio, "per_decile_advantage": metrics.per_decile}
    _write_json(out / "attack_summary.json", summary)
    print(json.dumps(summary, default=_to_builtin))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    seed = _seed(args)
    prep = _prepared(args, seed)
    if args.synthetic is not None:
        synthetic = _load_synthetic(args.synthetic, prep)
        run = MethodRun("external", synthetic, np.ones(prep.train.n), None, CompositionLedger(), None, None, args.clip_c)
    else:
        run = _run(args, prep, seed)
    metrics = evaluate_run(prep, run, args.domias_k, args.query_protocol)
    report = metrics.to_dict()
    if args.out is not None:
        _write_json(Path(args.out), report)
    print(json.dumps(report, default=_to_builtin, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.config is not None:
        _require_file(args.config, "config file")
        try:
            d = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UserError(f"cannot parse config {args.config}: {exc}") from None
        if not isinstance(d, dict):
            raise UserError("config must be a JSON object")
    else:
        d = {}
    overrides = {
        "epsilons": args.epsilon,
        "gamma_candidates": args.gamma_grid,
        "clip_c": args.clip_c,
        "p_min": args.p_min,
        "seeds": args.seeds,
        "knn_k": args.knn_k,
        "domias_k": args.domias_k,
        "out_dir": args.out_dir,
        "jobs": args.jobs,
        "query_protocol": args.query_protocol,
        "methods": None if args.methods is None else [m.strip() for m in args.methods.split(",") if m.strip()],
    }
    d.update({k: v for k, v in overrides.items() if v is not None})
    d.setdefault("out_dir", "results")
    env = _env_seed()
    if args.seed is not None:
        d["master_seed"] = args.seed
    elif env is not None:
        d["master_seed"] = env
    try:
        cfg = ExperimentConfig.from_dict(d)
    except TypeError as exc:
        raise UserError(f"invalid config: {exc}") from None
    result = run_grid(cfg)
    print(results_table(result))
    failed = sum(1 for c in result.cells if c.error)
    if failed:
        print(f"{failed} grid cell(s) failed; see report.json", file=sys.stderr)
    return EXIT_OK


def _read_weights(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "weight" not in reader.fieldnames:
            raise UserError(f"{path}: missing 'weight' column")
        w, hr = [], []
        for line, row in enumerate(reader, start=2):
            try:
                wi = float(row["weight"])
            except (TypeError, ValueError):
                raise UserError(f"{path}:{line}: weight is not a number") from None
            if not (math.isfinite(wi) and 0.0 <= wi <= 1.0):
                raise UserError(f"{path}:{line}: weight {wi!r} outside [0, 1]")
            w.append(wi)
            hr.append(row.get("in_high_risk_set", "0").strip() in ("1", "true", "True"))
    return np.array(w), np.array(hr, dtype=bool)


def cmd_audit(args) -> int:
    run_dir = Path(args.run_dir)
    meta_path = _require_file(run_dir / "run.json", "run metadata")
    weights_path = _require_file(run_dir / "weights.csv", "weights file")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"cannot parse {meta_path}: {exc}") from None
    required = ("clip_c", "n", "sigma", "ledger")
    missing = [k for k in required if meta.get(k) is None]
    if missing:
        raise UserError(f"{meta_path}: missing field(s) {missing}")
    stages = {e["stage"] for e in meta["ledger"]}
    if "synthesis" not in stages or not meta["sigma"] > 0:
        raise UserError("run has no private synthesis release to audit")
    ledger = CompositionLedger()
    for e in meta["ledger"]:
        ledger.record(e["stage"], PrivacyBudget(e["epsilon"], e["delta"]))
    w, high_risk = _read_weights(weights_path)
    n, clip_c, sigma = int(meta["n"]), float(meta["clip_c"]), float(meta["sigma"])
    if len(w) > n:
        raise UserError(f"{len(w)} weights for n={n}")
    report = end_to_end(ledger, w, clip_c, n, sigma, high_risk=high_risk,
                        scoring_stage="scoring" if "scoring" in stages else None)
    delta_t = report.delta_synthesis
    certified = np.zeros(len(w), dtype=bool)
    for i in np.flatnonzero(report.eps_synth <= 1.0):
        alpha = w[i] * clip_c / n
        if not verify_bound(alpha, sigma, float(report.eps_synth[i]), delta_t):
            raise InvariantViolation(f"record {i}: bound eps={report.eps_synth[i]:.6g} not certified")
        certified[i] = True
    out = Path(args.out) if args.out else run_dir / "per_instance.csv"
    report.to_csv(out)
    summary = report.summary()
    summary["n_certified"] = int(certified.sum())
    _write_json(out.with_suffix(".summary.json"), summary)
    print(json.dumps(summary, default=_to_builtin, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed (default: ${SEED_ENV} if set, else 0)")


def _add_data(p):
    p.add_argument("--data", required=True, help="input CSV file")
    p.add_argument("--schema", default=None, help="schema JSON (default: <data stem>.schema.json)")
    p.add_argument("--knn-k", type=int, default=KNN_K, help=f"k for kNN outlier deciles (default: {KNN_K})")


def _add_privacy(p, method: bool = True):
    p.add_argument("--epsilon", type=float, default=1.0, help="total epsilon (default: 1.0)")
    p.add_argument("--delta", type=float, default=None, help="total delta (default: 1/n_train^2)")
    p.add_argument("--gamma", type=float, default=None, help="hinge-exp gamma (default: none)")
    p.add_argument("--p-min", type=float, default=DEFAULT_P_MIN, help=f"probability floor (default: {DEFAULT_P_MIN:g})")
    if method:
        p.add_argument("--method", choices=METHODS, default="reps", help="synthesis method (default: reps)")
        p.add_argument("--clip-c", type=float, default=DEFAULT_CLIP_C, help=f"clip norm C (default: {DEFAULT_CLIP_C:g})")


def _add_attack_opts(p):
    p.add_argument("--domias-k", type=int, default=DOMIAS_K, help=f"k for the density-ratio attack (default: {DOMIAS_K})")
    p.add_argument("--query-protocol", choices=QUERY_PROTOCOLS, default=SHARED,
                   help="non-member queries: whole test split or a disjoint half (default: shared)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reps", description="Risk-equalized private synthetic data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write the simulated dataset as CSV plus schema")
    _add_seed(p)
    p.add_argument("--out", default="sim.csv", help="output CSV path (default: sim.csv)")
    p.add_argument("--no-flags", action="store_true", help="omit the injected-outlier column (default: included)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("score", help="DP rarity scores for the train split")
    _add_seed(p)
    _add_data(p)
    _add_privacy(p, method=False)
    p.add_argument("--out", default="scores.csv", help="output CSV path (default: scores.csv)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synthesize", help="run one method and write synthetic data plus run artifacts")
    _add_seed(p)
    _add_data(p)
    _add_privacy(p)
    p.add_argument("--out-dir", default="run", help="output directory (default: run)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("attack", help="membership inference against a synthetic CSV")
    _add_seed(p)
    _add_data(p)
    _add_attack_opts(p)
    p.add_argument("--synthetic", required=True, help="synthetic CSV (with schema sidecar)")
    p.add_argument("--attack", choices=("domias", "distance"), default="domias", help="attack (default: domias)")
    p.add_argument("--out-dir", default="attack", help="output directory (default: attack)")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("evaluate", help="utility and attack metrics for one method or a synthetic CSV")
    _add_seed(p)
    _add_data(p)
    _add_privacy(p)
    _add_attack_opts(p)
    p.add_argument("--synthetic", default=None, help="evaluate this synthetic CSV instead of running --method")
    p.add_argument("--out", default=None, help="also write the metrics JSON here (default: stdout only)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the (dataset x epsilon x method x seed) grid")
    _add_seed(p)
    p.add_argument("--config", default=None, help="JSON config file (default: simulated dataset, built-in grid)")
    p.add_argument("--epsilon", type=float, action="append", default=None,
                   help="epsilon to run; repeat for a grid (default: 0.5 1 2 4)")
    p.add_argument("--gamma-grid", type=_float_list, default=None,
                   help=f"comma-separated gamma candidates (default: {','.join(f'{g:g}' for g in GAMMA_CANDIDATES)})")
    p.add_argument("--methods", default=None, help=f"comma-separated subset of {','.join(METHODS)} (default: all)")
    p.add_argument("--clip-c", type=float, default=None, help=f"clip norm C (default: {DEFAULT_CLIP_C:g})")
    p.add_argument("--p-min", type=float, default=None, help=f"probability floor (default: {DEFAULT_P_MIN:g})")
    p.add_argument("--seeds", type=int, default=None, help="seeds per cell (default: 5)")
    p.add_argument("--knn-k", type=int, default=None, help=f"k for kNN outlier deciles (default: {KNN_K})")
    p.add_argument("--domias-k", type=int, default=None, help=f"k for the density-ratio attack (default: {DOMIAS_K})")
    p.add_argument("--query-protocol", choices=QUERY_PROTOCOLS, default=None,
                   help="non-member queries: whole test split or a disjoint half (default: shared)")
    p.add_argument("--out-dir", default=None, help="output directory (default: results)")
    p.add_argument("--jobs", type=int, default=None, help="parallel worker processes (default: 1)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("audit", help="re-derive per-instance privacy bounds from a run directory")
    p.add_argument("--run-dir", required=True, help="directory containing run.json and weights.csv")
    p.add_argument("--out", default=None, help="output CSV (default: <run-dir>/per_instance.csv)")
    p.set_defaults(func=cmd_audit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except (UserError, RepsError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
