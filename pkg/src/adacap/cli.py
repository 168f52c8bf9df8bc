"""``adacap`` command line.

Every subcommand writes its artifacts and a ``manifest.json`` into ``--out``.
The manifest records the command, every resolved argument and the seed;
passing it back through ``--config`` reruns the command with the same
inputs, so the artifacts come out byte-identical.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
abort (a ``diagnostics.json`` is written next to the other artifacts).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, theory
from .ensemble import KINDS, EnsembleModel, EnsembleSpec, fit_ensemble, predict_ensemble
from .errors import AdaCapError, ConfigError, DiagnosticError, RegimeError
from .metrics import aggregate
from .mlr_loss import draw_permutations
from .pipeline import CLASSIFICATION, REGRESSION, DatasetManifest, PipelineSpec, fit_pipeline, read_csv, transform
from .trainer import TrainConfig, TrainedModel, predict, scan_curve, train

log = logging.getLogger("adacap")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3
MANIFEST = "manifest.json"
# arguments that never change an artifact and so stay out of the manifest
_UNRECORDED = {"config", "out", "threads", "quiet", "plot", "command"}


class DataFailure(Exception):
    """Input data could not be read or does not fit the request."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(parser):
    parser.add_argument("--config", type=Path, help="JSON manifest to replay, or TrainConfig fields")
    parser.add_argument("--out", type=Path, default=Path("adacap-out"), help="artifact directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None, help="worker threads (env ADACAP_THREADS)")
    parser.add_argument("--quiet", action="store_true", help="only log warnings")
    parser.add_argument("--plot", action="store_true", help="also render PNG line charts (needs matplotlib)")


def _train_flags(parser, depth=1, width=1024):
    g = parser.add_argument_group("training")
    g.add_argument("--depth", type=int, default=depth)
    g.add_argument("--width", type=int, default=width)
    g.add_argument("--learning-rate", type=float, default=None)
    g.add_argument("--max-iter", type=int, default=None)
    g.add_argument("--batch-size", type=int, default=None)
    g.add_argument("--n-permutations", type=int, default=16)
    g.add_argument("--sigma-tilde", type=float, default=None)
    g.add_argument("--structured", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("--val-fraction", type=float, default=0.2)
    g.add_argument("--val-cap", type=int, default=2048)
    g.add_argument("--wall-budget-secs", type=float, default=None)
    g.add_argument("--activation", choices=("relu", "selu"), default="relu")


def _data_flags(parser):
    g = parser.add_argument_group("data")
    g.add_argument("--data", type=Path, help="dataset manifest JSON {path, target_column, task}")
    g.add_argument("--csv", type=Path, help="CSV file (with --target and --task instead of --data)")
    g.add_argument("--target", help="target column")
    g.add_argument("--task", choices=(REGRESSION, CLASSIFICATION), default=REGRESSION)
    g.add_argument("--max-modalities", type=int, default=12)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="adacap", description="MLR-trained networks with a ridge output layer.")
    parser.add_argument("--version", action="version", version=f"adacap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="fit a network (or an ensemble) on a CSV dataset")
    _common(p)
    _data_flags(p)
    _train_flags(p)
    g = p.add_argument_group("ensemble")
    g.add_argument("--ensemble", choices=KINDS, default=None, help="train a meta-model instead of one network")
    g.add_argument("--members", type=int, default=10, help="networks per depth")
    g.add_argument("--depths", type=int, nargs="+", default=None, help="member depths (default: --depth)")
    g.add_argument("--k", type=int, default=None, help="members kept by top_k")

    p = sub.add_parser("predict", help="apply a trained model to a CSV file")
    _common(p)
    p.add_argument("--model", type=Path, help="model.json or ensemble.json (required)")
    p.add_argument("--csv", type=Path, help="rows to score (required)")

    p = sub.add_parser("benchmark", help="compare methods over seeded splits of CSV datasets")
    _common(p)
    p.add_argument("--data", type=Path, nargs="+", help="dataset manifest JSON files (required)")
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--methods", nargs="+", default=list(experiments.BENCHMARK_METHODS))
    p.add_argument("--bag-size", type=int, default=10)
    _train_flags(p)

    p = sub.add_parser("lambda-scan", help="MLR loss on the 12-point lambda grid at initialisation")
    _common(p)
    _data_flags(p)
    _train_flags(p)

    p = sub.add_parser("perm-check", help="fixed-point statistics of the permutation sampler")
    _common(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--draws", type=int, default=100000)

    p = sub.add_parser("theory", help="linear ridge curves and selector comparison")
    _common(p)
    p.add_argument("--seeds", type=int, default=100, help="seeds of the correlated-design comparison")
    p.add_argument("--n-train", type=int, default=100)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--dim", type=int, default=80)
    p.add_argument("--sigma", type=float, default=100.0)
    p.add_argument("--folds", type=int, default=10)
    g = p.add_argument_group("orthogonal design")
    g.add_argument("--ortho-n", type=int, default=32768)
    g.add_argument("--ortho-dim", type=int, default=32)
    g.add_argument("--ortho-rank", type=int, default=16)
    g.add_argument("--ortho-sigma", type=float, default=1.0)
    g.add_argument("--ortho-signal", type=float, default=4096.0, help="||X beta*||^2")

    p = sub.add_parser("ablation", help="R^2 of the ablation ladder on synthetic tasks")
    _common(p)
    p.add_argument("--tasks", nargs="+", choices=experiments.SYNTHETIC_TASKS, default=list(experiments.SYNTHETIC_TASKS))
    p.add_argument("--splits", type=int, default=100)
    p.add_argument("--rungs", nargs="+", choices=list(experiments.ABLATION_RUNGS), default=list(experiments.ABLATION_RUNGS))
    base = experiments.ABLATION_BASE
    _train_flags(p, depth=base.depth, width=base.width)
    return parser


# ---------------------------------------------------------------- helpers


def _read_json(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _config_defaults(path: Path, command: str, subparser) -> dict:
    """Defaults taken from ``--config``: a replay manifest or bare TrainConfig fields."""
    data = _read_json(path)
    if "command" in data:
        if data["command"] != command:
            raise ConfigError(f"manifest was written by {data['command']!r}, not {command!r}")
        values = dict(data.get("args", {}))
    else:
        values = dict(data)
    known = {a.dest for a in subparser._actions}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown settings in {path}: {sorted(unknown)}")
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        subparser.set_defaults(**_config_defaults(args.config, args.command, subparser))
        args = parser.parse_args(argv)
    return args


def _threads(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        raw = os.environ.get("ADACAP_THREADS", "1")
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"ADACAP_THREADS must be an integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError("thread count must be >= 1")
    return value


def _recorded(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in _UNRECORDED:
            continue
        if isinstance(value, Path):
            value = str(value.resolve())
        elif isinstance(value, list):
            value = [str(v.resolve()) if isinstance(v, Path) else v for v in value]
        out[key] = value
    return out


def _train_config(args, task=REGRESSION, seed=None) -> TrainConfig:
    return TrainConfig(
        depth=args.depth,
        width=args.width,
        learning_rate=args.learning_rate,
        max_iter=args.max_iter,
        batch_size=args.batch_size,
        n_permutations=args.n_permutations,
        sigma_tilde=args.sigma_tilde,
        structured=args.structured,
        val_fraction=args.val_fraction,
        val_cap=args.val_cap,
        wall_budget_secs=args.wall_budget_secs,
        activation=args.activation,
        task=task,
        seed=args.seed if seed is None else seed,
    )


def _dump(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _data_source(args):
    """(table, target, task, name) from ``--data`` or ``--csv/--target/--task``."""
    if args.data is not None:
        try:
            ds = DatasetManifest.load(args.data)
        except OSError as exc:
            raise DataFailure(f"cannot read dataset manifest: {exc}") from exc
        return _load_table(ds.path), ds.target_column, ds.task, ds.name
    if args.csv is None or args.target is None:
        raise ConfigError("give --data, or --csv together with --target")
    return _load_table(args.csv), args.target, args.task, args.csv.stem


def _load_table(path):
    if not Path(path).is_file():
        raise DataFailure(f"data file not found: {path}")
    try:
        return read_csv(path)
    except ConfigError as exc:
        raise DataFailure(str(exc)) from exc


def _prepared(args):
    table, target, task, name = _data_source(args)
    try:
        spec = fit_pipeline(table, target, task, max_modalities=args.max_modalities)
        x, y = transform(spec, table)
    except AdaCapError as exc:
        raise DataFailure(str(exc)) from exc
    return spec, x, y, task


def _plot(path: Path, x, series: dict, xlabel: str, logx=False) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("--plot needs matplotlib (pip install 'adacap[plot]')") from exc
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        ax.plot(x, values, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


# ---------------------------------------------------------------- commands


def cmd_train(args, out: Path, threads: int) -> dict:
    spec, x, y, task = _prepared(args)
    config = _train_config(args, task)
    seeds = {"run": config.seed}
    if args.ensemble is None:
        model = train(x, y, config, pipeline=spec.to_dict())
        (out / "model.json").write_text(json.dumps(model.to_dict(), sort_keys=True))
        _write_csv(out / "curve.csv", ["iter", "train_loss", "val_score"], model.train_curve)
        log.info("best iteration %d, validation score %.4f", model.best_iter, model.best_score)
        curves = {"": model.train_curve}
    else:
        depths = args.depths or [args.depth]
        parts = [EnsembleSpec.bag(d, args.members, seed=config.seed + i * args.members) for i, d in enumerate(depths)]
        members = [m for p in parts for m in p.members]
        ens_spec = EnsembleSpec(args.ensemble, members, args.k)
        model = fit_ensemble(x, y, ens_spec, config, pipeline=spec.to_dict())
        model.save(out / "model")
        rows = [(i, *row) for i, m in enumerate(model.models) for row in m.train_curve]
        _write_csv(out / "curve.csv", ["member", "iter", "train_loss", "val_score"], rows)
        seeds["members"] = [s for _, s in members]
        curves = {f"member {i}": m.train_curve for i, m in enumerate(model.models)}
    if args.plot:
        first = next(iter(curves.values()))
        _plot(out / "curve.png", [r[0] for r in first], {"train loss": [r[1] for r in first], "val score": [r[2] for r in first]}, "iteration")
    return {"train_config": config.to_dict(), "seeds": seeds}


def _load_model(path: Path):
    data = _read_json(path)
    if "members" in data and "spec" in data:
        return EnsembleModel.load(path)
    return TrainedModel.from_dict(data)


def _require(args, *names):
    # enforced here rather than by argparse so a replay manifest can supply them
    missing = [f"--{n}" for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError(f"missing required flags: {' '.join(missing)}")


def cmd_predict(args, out: Path, threads: int) -> dict:
    _require(args, "model", "csv")
    model = _load_model(args.model)
    first = model.models[0] if isinstance(model, EnsembleModel) else model
    if first.pipeline is None:
        raise ConfigError("model carries no preprocessing pipeline")
    spec = PipelineSpec.from_dict(first.pipeline)
    table = _load_table(args.csv)
    try:
        x, _ = transform(spec, table.drop(columns=[spec.target], errors="ignore"))
        out_values = predict_ensemble(model, x) if isinstance(model, EnsembleModel) else predict(model, x)
    except AdaCapError as exc:
        if isinstance(exc, DiagnosticError):
            raise
        raise DataFailure(str(exc)) from exc
    if spec.task == REGRESSION:
        rows = [(i, v) for i, v in enumerate(spec.inverse_target(out_values))]
        _write_csv(out / "predictions.csv", ["row", "prediction"], rows)
    else:
        labels = [spec.classes[int(p >= 0.5)] for p in out_values]
        _write_csv(out / "predictions.csv", ["row", "probability", "label"], [(i, p, lab) for i, (p, lab) in enumerate(zip(out_values, labels))])
    return {"seeds": {}}


def cmd_benchmark(args, out: Path, threads: int) -> dict:
    _require(args, "data")
    unknown = set(args.methods) - set(experiments.BENCHMARK_METHODS)
    if unknown:
        raise ConfigError(f"unknown methods {sorted(unknown)}")
    datasets = []
    for path in args.data:
        try:
            ds = DatasetManifest.load(path)
        except OSError as exc:
            raise DataFailure(f"cannot read dataset manifest {path}: {exc}") from exc
        datasets.append((ds, _load_table(ds.path)))
    base = _train_config(args)
    jobs = [(ds, table, s) for ds, table in datasets for s in range(args.seed, args.seed + args.splits)]

    def one(job):
        ds, table, s = job
        try:
            scores = experiments.benchmark_split(table, ds.target_column, ds.task, s, base, args.methods, args.bag_size)
        except (ConfigError, KeyError) as exc:
            raise DataFailure(f"{ds.name}: {exc}") from exc
        log.info("%s split %d done", ds.name, s)
        return [(ds.name, s, method, metric, value) for method, metric, value in scores]

    rows = [r for rs in experiments.parallel_map(one, jobs, threads) for r in rs]
    _write_csv(out / "raw_scores.csv", ["dataset", "split_seed", "method", "metric", "value"], rows)
    report = aggregate([(d, s, m, v) for d, s, m, _metric, v in rows])
    _dump(out / "aggregate.json", report.to_dict())
    return {"train_config": base.to_dict(), "seeds": {"splits": list(range(args.seed, args.seed + args.splits))}}


def cmd_lambda_scan(args, out: Path, threads: int) -> dict:
    _spec, x, y, task = _prepared(args)
    config = _train_config(args, task)
    grid, values, lam0 = scan_curve(x, y, config)
    _write_csv(out / "lambda_scan.csv", ["k", "lambda", "mlr"], [(k, g, v) for k, (g, v) in enumerate(zip(grid, values))])
    _dump(out / "lambda_scan.json", {"lambda_init": float(lam0)})
    if args.plot:
        _plot(out / "lambda_scan.png", grid, {"MLR": values}, "lambda", logx=True)
    log.info("lambda_init = %.6g", lam0)
    return {"train_config": config.to_dict(), "seeds": {"run": config.seed}}


def cmd_perm_check(args, out: Path, threads: int) -> dict:
    if args.n < 2 or args.draws < 1:
        raise ConfigError("need --n >= 2 and --draws >= 1")
    counts = np.zeros(args.n + 1, dtype=np.int64)
    chunk = max(1, min(args.draws, 2_000_000 // args.n))
    done = 0
    while done < args.draws:
        size = min(chunk, args.draws - done)
        perms = draw_permutations(args.n, size, seed=args.seed + done).perms
        fixed = (perms == np.arange(args.n)).sum(axis=1)
        counts += np.bincount(fixed, minlength=args.n + 1)
        done += size
    k = np.arange(args.n + 1)
    mean = float(counts @ k / args.draws)
    var = float(counts @ (k - mean) ** 2 / args.draws)
    summary = {
        "n": args.n,
        "draws": args.draws,
        "mean_fixed_points": mean,
        "var_fixed_points": var,
        "expected_mean": 1.0,
        "within_band": 0.97 <= mean <= 1.03,
    }
    _dump(out / "perm_check.json", summary)
    last = int(np.nonzero(counts)[0].max())
    _write_csv(out / "fixed_points.csv", ["fixed_points", "count"], [(i, int(c)) for i, c in enumerate(counts[: last + 1])])
    log.info("mean fixed points %.4f over %d draws", mean, args.draws)
    return {"seeds": {"chunk_seeds": [args.seed + i for i in range(0, args.draws, chunk)]}}


def cmd_theory(args, out: Path, threads: int) -> dict:
    seed_list = list(range(args.seed, args.seed + args.seeds))
    summary = theory.selector_comparison(seed_list, args.n_train, args.n_test, args.dim, args.sigma, args.folds)
    _write_csv(out / "selectors.csv", ["seed", "mlr", "cv", "oracle"], [(s, *r) for s, r in zip(seed_list, summary.per_seed)])

    train_c, test_c = theory.gen_correlated(args.n_train, args.n_test, args.dim, args.sigma, args.seed)
    corr = theory.theory_report(train_c, test_c, folds=args.folds, seed=args.seed)
    _write_csv(out / "curves_correlated.csv", ["lambda", "R", "MLR_shifted", "CV", "test_rmse"], corr.curve_rows())

    ortho = theory.gen_ortho(args.ortho_n, args.ortho_dim, args.ortho_rank, args.ortho_sigma, args.ortho_signal, args.seed)
    orep = theory.theory_report(ortho, folds=args.folds, seed=args.seed)
    _write_csv(out / "curves_ortho.csv", ["lambda", "R", "MLR_shifted", "CV", "test_rmse"], orep.curve_rows())
    try:
        gap = theory.risk_gap_check(ortho)
    except RegimeError as exc:
        log.warning("orthogonal instance: %s", exc)
        gap = None

    result = {
        "selectors": {"seeds": args.seeds, "mean_test_rmse": summary.means},
        "correlated": {"argmins": corr.argmins},
        "ortho": {
            "argmins": orep.argmins,
            "eps_n": orep.eps_n,
            "max_relative_gap": gap,
            "regime": orep.diagnostics,
            "lambda_star": theory.lambda_star_forms(ortho),
        },
    }
    _dump(out / "theory.json", result)
    if args.plot:
        g = orep.grid / ortho.n
        _plot(out / "curves_ortho.png", g, {"R": orep.risk, "MLR shifted": orep.mlr_shifted}, "lambda / n", logx=True)
        _plot(out / "curves_correlated.png", corr.grid, {"CV": corr.cv, "test RMSE": corr.test_rmse}, "lambda", logx=True)
    log.info("mean test RMSE: %s", {k: round(v, 4) for k, v in summary.means.items()})
    return {"seeds": {"selectors": seed_list, "curves": args.seed}}


def cmd_ablation(args, out: Path, threads: int) -> dict:
    base = _train_config(args)
    tasks = list(args.tasks)
    jobs = [(t, s) for t in tasks for s in range(args.seed, args.seed + args.splits)]

    def one(job):
        task, s = job
        res = experiments.ablation_split(task, s, base, args.rungs)
        log.info("%s split %d done", task, s)
        return [(task, s, rung, r2) for rung, r2 in res.items()]

    rows = [r for rs in experiments.parallel_map(one, jobs, threads) for r in rs]
    _write_csv(out / "ablation_raw.csv", ["task", "split", "rung", "r2"], rows)
    means = experiments.ablation_means(rows)
    # a list keeps the ladder order through sort_keys
    result = {"ladder": [{"rung": r, "mean_r2": means[r]} for r in args.rungs]}
    if all(r in means for r in experiments.ABLATION_ORDER):
        result["ordered"] = experiments.ablation_gate(means)
    _dump(out / "ablation.json", result)
    return {"train_config": base.to_dict(), "seeds": {"splits": list(range(args.seed, args.seed + args.splits))}}


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "benchmark": cmd_benchmark,
    "lambda-scan": cmd_lambda_scan,
    "perm-check": cmd_perm_check,
    "theory": cmd_theory,
    "ablation": cmd_ablation,
}


def _setup_logging(quiet: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.WARNING if quiet else logging.INFO)
    log.propagate = False


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"adacap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _setup_logging(args.quiet)
    out = args.out
    try:
        threads = _threads(args)
        out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, out, threads)
    except DiagnosticError as exc:
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "diagnostics.json", {"error": str(exc), "iteration": exc.iteration, "member": exc.member})
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except DataFailure as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (ConfigError, RegimeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except AdaCapError as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    manifest = {"command": args.command, "args": _recorded(args), "version": __version__}
    manifest.update(extra)
    _dump(out / MANIFEST, manifest)
    log.info("artifacts written to %s", out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
