"""``fedsim`` command line.

Exit codes: 0 success, 1 bad configuration or input file, 2 runtime or
protocol failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfg_mod
from . import dataset as ds_mod
from .errors import ConfigError, FedSimError, ParseError
from .metrics import auc_from_points, confusion, roc_curve
from .model import init_params, save_checkpoint
from .orchestrator import (
    METRICS,
    load_data,
    run_ablation,
    run_epsilon_sweep,
    run_mu_sweep,
    run_repetitions,
    summarize,
    write_json,
    write_privacy_ledger,
    write_rounds_csv,
    write_timings_csv,
)
from .partition import PartitionSpec, partition

logger = logging.getLogger("fedsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _experiment_flags(p: argparse.ArgumentParser, multi: str | None = None) -> None:
    p.add_argument("-c", "--config", type=Path, help="TOML config file")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--workers", type=int, help="client worker threads; results do not depend on it")
    p.add_argument("--strategy", help="fedavg, fedprox, secagg, local_dp or aldp")
    p.add_argument("--clients", type=int, help="number of clients")
    if multi == "epsilon":
        p.add_argument("--epsilon", type=float, nargs="+", help="epsilon grid")
    else:
        p.add_argument("--epsilon", type=float, help="initial privacy budget")
    if multi == "mu":
        p.add_argument("--mu", type=float, nargs="+", help="proximal weight grid")
    else:
        p.add_argument("--mu", type=float, help="FedProx proximal weight")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic development set and holdout test set")
    p.add_argument("-c", "--config", type=Path)
    p.add_argument("--seed", type=int, help="data seed (overrides data_seed)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("partition", help="split a CSV dataset across clients by site")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--clients", type=int, required=True)
    p.add_argument("--train-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    for name, text in [
        ("train", "federated training with repetitions"),
        ("centralized", "pooled-data baseline with repetitions"),
        ("ablate", "each client trained alone, plus the pooled baseline"),
    ]:
        _experiment_flags(sub.add_parser(name, help=text))
    _experiment_flags(sub.add_parser("sweep-mu", help="FedProx over a grid of mu values"), "mu")
    _experiment_flags(sub.add_parser("sweep-epsilon", help="local DP over a grid of epsilon values"), "epsilon")

    p = sub.add_parser("report", help="confusion matrix and ROC curve from test_predictions.csv")
    p.add_argument("--input", type=Path, required=True, help="run directory or predictions CSV")
    p.add_argument("--out", type=Path, help="where to write report files (default: input directory)")
    p.add_argument("--repetition", type=int, default=0)
    return parser


def _load_config(args, sweep: str | None = None) -> cfg_mod.CliConfig:
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "strategy": args.strategy,
        "clients": args.clients,
    }
    if sweep != "epsilon":
        overrides["epsilon"] = args.epsilon
    if sweep != "mu":
        overrides["mu"] = args.mu
    cfg = cfg_mod.load(args.config, overrides)
    if sweep == "epsilon" and args.epsilon:
        cfg = replace(cfg, epsilon_values=tuple(args.epsilon))
    if sweep == "mu" and args.mu:
        cfg = replace(cfg, mu_values=tuple(args.mu))
    return cfg


def _prepare_out(out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"{out}: cannot create output directory ({exc.strerror})") from None
    return out


def _write_predictions(path: Path, runs, base_seed: int) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["repetition", "seed", "index", "label", "score_ad"])
        for i, run in enumerate(runs):
            for j, (y, s) in enumerate(zip(run.test_labels, run.test_scores)):
                w.writerow([i, base_seed + i, j, int(y), ds_mod.format_float(s)])


def _write_rows(path: Path, rows: list[dict]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ds_mod.format_float(v) if isinstance(v, float) else v for k, v in row.items()})


def _tensor_names(cfg: cfg_mod.CliConfig, dims) -> list[str]:
    return init_params(cfg.spec.train.model, dims[0], dims[1], 0, cfg.spec.train.hidden_width).names


def cmd_generate(args) -> int:
    cfg = cfg_mod.load(args.config)
    synth = cfg.spec.synth
    if synth is None:
        raise ConfigError("generate needs synthetic data settings, not data_csv")
    if args.seed is not None:
        synth = replace(synth, seed=args.seed)
    out = _prepare_out(args.out)
    dev = ds_mod.generate(synth)
    test = ds_mod.generate_holdout(synth, cfg.spec.test_per_class)
    ds_mod.save_csv(dev, out / "data.csv")
    ds_mod.save_csv(test, out / "test.csv")
    cfg = replace(cfg, spec=replace(cfg.spec, synth=synth))
    cfg_mod.write_resolved(cfg, out / "resolved_config.toml")
    print(f"wrote {len(dev)} development and {len(test)} test records to {out}")
    return EXIT_OK


def cmd_partition(args) -> int:
    spec = PartitionSpec(n_clients=args.clients, train_ratio=args.train_ratio, seed=args.seed)
    spec.validate()
    ds = ds_mod.load_csv(args.input)
    parts = partition(ds, spec)
    out = _prepare_out(args.out)
    assignment = {}
    for c in parts:
        ds_mod.save_csv(c.train, out / f"client_{c.client_id}_train.csv")
        ds_mod.save_csv(c.val, out / f"client_{c.client_id}_val.csv")
        site_counts = c.train.site_counts()
        for s, n in c.val.site_counts().items():
            site_counts[s] = site_counts.get(s, 0) + n
        assignment[str(c.client_id)] = {
            "sites": sorted(c.sites),
            "counts": {s: int(site_counts.get(s, 0)) for s in sorted(c.sites)},
            "n_train": len(c.train),
            "n_val": len(c.val),
        }
        if c.warning:
            logger.warning(c.warning)
    write_json(out / "assignment.json", assignment)
    print(f"partitioned {len(ds)} records across {len(parts)} clients into {out}")
    return EXIT_OK


def _run_outputs(out: Path, cfg: cfg_mod.CliConfig, result: dict, data, mode: str) -> dict:
    spec = cfg.spec
    runs = result["runs"]
    dev = data[0]
    write_rounds_csv(out / "rounds.csv", runs, spec.partition.n_clients if mode == "federated" else 1)
    write_timings_csv(out / "timings.csv", runs)
    if spec.strategy.privacy_mode and mode == "federated":
        write_privacy_ledger(out / "privacy_ledger.csv", runs, _tensor_names(cfg, (dev.dimension, dev.n_classes)))
    if any(r.transcripts for r in runs):
        write_json(out / "secagg_transcripts.json", [r.transcripts for r in runs])
    save_checkpoint(runs[0].best_params, out / "best_model.bin", spec.train)
    _write_predictions(out / "test_predictions.csv", runs, spec.base_seed)
    cfg_mod.write_resolved(cfg, out / "resolved_config.toml")
    return {
        "mode": mode,
        "strategy": spec.strategy.kind if mode == "federated" else "centralized",
        "n_clients": spec.partition.n_clients,
        "repetitions": spec.repetitions,
        "base_seed": spec.base_seed,
        "metrics": result["metrics"],
        "per_run": result["per_run"],
        "events": sorted({e for r in runs for e in r.events}),
    }


def cmd_train(args, mode: str = "federated") -> int:
    cfg = _load_config(args)
    out = _prepare_out(args.out)
    data = load_data(cfg.spec)
    result = run_repetitions(cfg.spec, mode, data)
    summary = _run_outputs(out, cfg, result, data, mode)
    write_json(out / "summary.json", summary)
    _print_metrics(summary["metrics"])
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    spec = cfg.spec
    out = _prepare_out(args.out)
    data = load_data(spec)
    results = [run_ablation(spec, spec.base_seed + i, data) for i in range(spec.repetitions)]
    rows = []
    for k in range(spec.partition.n_clients):
        reports = [r.clients[k].test.summary() for r in results]
        rows.append({"model": f"client_{k}", "sites": " ".join(results[0].sites[k]),
                     **{f"{m}_{s}": summarize([p[m] for p in reports])[s] for m in METRICS for s in ("mean", "std")}})
    central = [r.centralized.test.summary() for r in results]
    rows.append({"model": "centralized", "sites": " ".join(s for site in results[0].sites for s in site),
                 **{f"{m}_{s}": summarize([p[m] for p in central])[s] for m in METRICS for s in ("mean", "std")}})
    _write_rows(out / "ablation.csv", rows)
    cfg_mod.write_resolved(cfg, out / "resolved_config.toml")
    write_json(out / "summary.json", {"mode": "ablation", "base_seed": spec.base_seed,
                                      "repetitions": spec.repetitions, "rows": rows})
    for row in rows:
        print(f"{row['model']:>12}  accuracy {row['accuracy_mean']:.4f} +/- {row['accuracy_std']:.4f}")
    return EXIT_OK


def cmd_sweep(args, kind: str) -> int:
    cfg = _load_config(args, sweep=kind)
    out = _prepare_out(args.out)
    data = load_data(cfg.spec)
    if kind == "mu":
        rows = run_mu_sweep(cfg.spec, cfg.mu_values, data)
    else:
        rows = run_epsilon_sweep(cfg.spec, cfg.epsilon_values, data)
    _write_rows(out / f"sweep_{kind}.csv", rows)
    cfg_mod.write_resolved(cfg, out / "resolved_config.toml")
    write_json(out / "summary.json", {"mode": f"sweep-{kind}", "base_seed": cfg.spec.base_seed,
                                      "repetitions": cfg.spec.repetitions, "rows": rows})
    for row in rows:
        print(f"{kind}={row[kind]:<8g} accuracy {row['accuracy_mean']:.4f} +/- {row['accuracy_std']:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = args.input / "test_predictions.csv" if args.input.is_dir() else args.input
    try:
        with src.open("r", encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.DictReader(fh) if int(r["repetition"]) == args.repetition]
    except FileNotFoundError:
        raise ConfigError(f"{src}: predictions file not found") from None
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{src}: malformed predictions file ({exc})") from None
    if not rows:
        raise ConfigError(f"{src}: no predictions for repetition {args.repetition}")
    labels = np.array([int(r["label"]) for r in rows])
    scores = np.array([float(r["score_ad"]) for r in rows])
    cm = confusion(labels, (scores > 0.5).astype(np.int64))  # argmax, ties to CN
    out = _prepare_out(args.out or src.parent)
    norm = cm.normalized()
    with (out / "confusion_matrix.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true", "pred_CN", "pred_AD"])
        for name, row in zip(("CN", "AD"), norm):
            w.writerow([name] + [ds_mod.format_float(x) for x in row])
    points = roc_curve(labels, scores)
    with (out / "roc.csv").open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for p in points:
            w.writerow([ds_mod.format_float(p.threshold), ds_mod.format_float(p.fpr), ds_mod.format_float(p.tpr)])
    print("normalized confusion matrix (rows true CN/AD, columns predicted CN/AD):")
    for name, row in zip(("CN", "AD"), norm):
        print(f"  {name}  {row[0]:.3f}  {row[1]:.3f}")
    print(f"AUC {auc_from_points(points):.4f}")
    return EXIT_OK


def _print_metrics(metrics: dict) -> None:
    for m in METRICS:
        print(f"{m:>9} {metrics[m]['mean']:.4f} +/- {metrics[m]['std']:.4f}")


COMMANDS = {
    "generate": cmd_generate,
    "partition": cmd_partition,
    "train": cmd_train,
    "centralized": lambda a: cmd_train(a, "centralized"),
    "ablate": cmd_ablate,
    "sweep-mu": lambda a: cmd_sweep(a, "mu"),
    "sweep-epsilon": lambda a: cmd_sweep(a, "epsilon"),
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ParseError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"fedsim: error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_CONFIG
    except (FedSimError, RuntimeError, ArithmeticError, ValueError) as exc:
        print(f"fedsim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
