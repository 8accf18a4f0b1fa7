"""Experiment driver: federated rounds, centralized baseline, ablation, sweeps."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .dataset import SiteDataset, SynthSpec, class_weights, format_float
from .errors import ConfigError, ProtocolError
from .metrics import TestReport, accuracy, confusion, evaluate_predictions, f1, macro_f1
from .model import (
    ParameterSet,
    RoundContext,
    TrainSpec,
    evaluate_loss,
    flatten,
    init_params,
    local_train,
    make_optimizer,
    predict,
    unflatten,
)
from .partition import ClientPartition, PartitionSpec, partition
from .privacy import ALDPState, PrivacySpec
from .rng import Stream
from .secagg import SecAggSpec, Transcript, mask_update, secure_aggregate, setup_round
from .strategies import StrategyConfig, fedavg_aggregate, run_client_round

logger = logging.getLogger(__name__)

PHASES = ("train", "privacy", "transport", "aggregate", "evaluate")
METRICS = ("accuracy", "f1_ad", "f1_macro", "auc")


@dataclass(frozen=True)
class ExperimentSpec:
    synth: SynthSpec | None = field(default_factory=SynthSpec)
    data_csv: str | None = None
    test_csv: str | None = None
    test_per_class: int = 50
    partition: PartitionSpec = field(default_factory=lambda: PartitionSpec(n_clients=2))
    train: TrainSpec = field(default_factory=TrainSpec)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    privacy: PrivacySpec | None = None
    secagg: SecAggSpec | None = None
    fl_rounds: int = 100
    eval_every: int = 5
    repetitions: int = 5
    base_seed: int = 0
    workers: int = 1
    dropout_prob: float = 0.0

    def validate(self) -> None:
        if (self.synth is None) == (self.data_csv is None):
            raise ConfigError("exactly one of the synthetic data keys or data_csv must be given")
        if self.data_csv is not None and self.test_csv is None:
            raise ConfigError("test_csv is required when data_csv is given")
        if self.synth is not None:
            self.synth.validate()
        self.partition.validate()
        self.train.validate()
        self.strategy.validate(self.partition.n_clients)
        if self.strategy.privacy_mode is not None:
            if self.privacy is None:
                raise ConfigError(f"strategy {self.strategy.kind} needs epsilon/delta settings")
            self.privacy_for_run(0).validate()
        if self.strategy.kind == "secagg":
            (self.secagg or SecAggSpec()).validate(self.partition.n_clients)
        if self.fl_rounds < 1:
            raise ConfigError(f"fl_rounds must be positive, got {self.fl_rounds}")
        if not 1 <= self.eval_every <= self.fl_rounds:
            raise ConfigError(f"eval_every must lie in 1..fl_rounds, got {self.eval_every}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be positive, got {self.repetitions}")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ConfigError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")

    def privacy_for_run(self, seed: int) -> PrivacySpec:
        mode = self.strategy.privacy_mode or (self.privacy.mode if self.privacy else "fixed")
        return replace(self.privacy or PrivacySpec(), mode=mode, seed=seed)


@dataclass
class RoundReport:
    round: int
    participants: list
    client_losses: dict
    val_accuracy: float | None = None
    val_f1: float | None = None
    checkpoint: bool = False
    timings: dict = field(default_factory=dict)
    epsilon: float | None = None
    events: list = field(default_factory=list)

    @property
    def mean_loss(self) -> float:
        if not self.client_losses:
            return math.nan
        return float(np.mean(list(self.client_losses.values())))


@dataclass
class RunResult:
    best_params: ParameterSet
    best_round: int
    reports: list
    test: TestReport
    test_labels: np.ndarray = field(repr=False, default=None)
    test_scores: np.ndarray = field(repr=False, default=None)
    events: list = field(default_factory=list)
    ledger: list = field(default_factory=list)
    transcripts: list = field(default_factory=list)


def load_data(spec: ExperimentSpec) -> tuple[SiteDataset, SiteDataset]:
    if spec.data_csv is not None:
        return ds_mod.load_csv(spec.data_csv), ds_mod.load_csv(spec.test_csv)
    dev = ds_mod.generate(spec.synth)
    test = (
        ds_mod.load_csv(spec.test_csv)
        if spec.test_csv
        else ds_mod.generate_holdout(spec.synth, spec.test_per_class)
    )
    return dev, test


def _loss_weights(train: TrainSpec, dev: SiteDataset) -> np.ndarray:
    if train.loss_weighting == "inverse":
        return class_weights(dev)
    return np.ones(dev.n_classes)


def _val_metrics(params: ParameterSet, val: SiteDataset) -> tuple[float, float]:
    if len(val) == 0:
        return -math.inf, 0.0
    pred = predict(params, val.features).labels
    if val.n_classes == 2:
        cm = confusion(val.labels, pred)
        return accuracy(cm), f1(cm)
    return float(np.mean(pred == val.labels)), macro_f1(val.labels, pred, val.n_classes)[0]


def holdout_report(params: ParameterSet, test: SiteDataset, weights) -> tuple[TestReport, np.ndarray]:
    p = predict(params, test.features)
    loss = evaluate_loss(params, test, weights)
    return evaluate_predictions(test.labels, p.labels, p.positive_scores, test.n_classes, loss), p.positive_scores


class _Checkpointer:
    def __init__(self, params: ParameterSet):
        self.best = params.copy()
        self.best_round = 0
        self.best_acc = None

    def offer(self, params: ParameterSet, round_no: int, acc: float) -> bool:
        if self.best_acc is None or acc > self.best_acc:
            self.best, self.best_round, self.best_acc = params.copy(), round_no, acc
            return True
        return False


def _sample_clients(spec: ExperimentSpec, n_clients: int, round_index: int, seed: int):
    cfg = spec.strategy
    if cfg.client_fraction >= 1.0:
        m = n_clients
    else:
        m = max(int(math.floor(cfg.client_fraction * n_clients)), cfg.min_fit_clients)
    if m < cfg.min_fit_clients or m > n_clients or m == 0:
        return []
    if m == n_clients:
        return list(range(n_clients))
    return Stream(seed, "sample", round_index).choice(n_clients, m).tolist()


def run_federated(spec: ExperimentSpec, seed: int | None = None, data=None) -> RunResult:
    """Full FL run; deterministic in ``seed`` (default ``spec.base_seed``)."""
    spec.validate()
    seed = spec.base_seed if seed is None else seed
    dev, test = load_data(spec) if data is None else data
    clients = partition(dev, replace(spec.partition, seed=seed))
    events = [c.warning for c in clients if c.warning]
    for c in clients:
        if len(c.train) == 0:
            raise ConfigError(f"client {c.client_id} has no training records; adjust train_ratio")
    val = SiteDataset.concat([c.val for c in clients])
    weights = _loss_weights(spec.train, dev)
    params = init_params(spec.train.model, dev.dimension, dev.n_classes, seed, spec.train.hidden_width)
    ckpt = _Checkpointer(params)

    strategy = spec.strategy
    privacy = spec.privacy_for_run(seed) if strategy.privacy_mode else None
    states = {c.client_id: ALDPState(privacy, c.client_id) for c in clients} if privacy else {}
    secagg = replace(spec.secagg or SecAggSpec(), seed=seed) if strategy.kind == "secagg" else None
    reports, transcripts = [], []
    pool = ThreadPoolExecutor(spec.workers) if spec.workers > 1 else None

    try:
        for r in range(spec.fl_rounds):
            t_start = time.perf_counter()
            report = RoundReport(round=r + 1, participants=[], client_losses={})
            selected = _sample_clients(spec, len(clients), r, seed)
            updates = []
            client_time = {"train": 0.0, "privacy": 0.0}
            if not selected:
                msg = f"round {r + 1}: fewer than min_fit_clients available, round skipped"
                logger.info(msg)
                report.events.append(msg)
            else:
                ctx = [RoundContext(r, spec.fl_rounds, k, seed) for k in selected]

                def work(i):
                    k = selected[i]
                    return run_client_round(
                        params, clients[k], strategy, spec.train, ctx[i], weights, privacy, states.get(k)
                    )

                if pool is None:
                    updates = [work(i) for i in range(len(selected))]
                else:
                    updates = list(pool.map(work, range(len(selected))))
                for u in updates:
                    for phase in client_time:
                        client_time[phase] += u.timings[phase]
                report.participants = list(selected)
                report.client_losses = {u.client_id: u.loss for u in updates}
                if privacy:
                    report.epsilon = states[selected[0]].epsilon
            t_clients = time.perf_counter()

            masked, setup, dropped = None, None, set()
            if updates and secagg is not None:
                setup = setup_round(selected, r, secagg)
                if spec.dropout_prob > 0:
                    draws = Stream(seed, "dropout", r).uniform(len(selected))
                    dropped = {k for k, u in zip(selected, draws) if u < spec.dropout_prob}
                    if len(dropped) == len(selected):
                        dropped.discard(selected[0])
                masked = [
                    mask_update(u.client_id, flatten(u.delta), setup, secagg)
                    for u in updates
                    if u.client_id not in dropped
                ]
            t_transport = time.perf_counter()

            if updates:
                if secagg is not None:
                    transcript = Transcript(round=r + 1)
                    mean_delta = secure_aggregate(masked, dropped, setup, secagg, transcript)
                    transcripts.append(transcript.to_json())
                    if dropped:
                        report.events.append(f"round {r + 1}: clients {sorted(dropped)} dropped")
                    params = unflatten(flatten(params) + mean_delta, params)
                else:
                    params = fedavg_aggregate(updates)
            t_aggregate = time.perf_counter()

            if (r + 1) % spec.eval_every == 0:
                acc, f1_val = _val_metrics(params, val)
                report.val_accuracy, report.val_f1 = acc, f1_val
                report.checkpoint = ckpt.offer(params, r + 1, acc)
            t_end = time.perf_counter()

            wall = t_clients - t_start
            busy = client_time["train"] + client_time["privacy"]
            share = client_time["train"] / busy if busy > 0 else 1.0
            report.timings = {
                "train": wall * share,
                "privacy": wall * (1.0 - share),
                "transport": t_transport - t_clients,
                "aggregate": t_aggregate - t_transport,
                "evaluate": t_end - t_aggregate,
                "total": t_end - t_start,
            }
            events.extend(report.events)
            reports.append(report)
    finally:
        if pool is not None:
            pool.shutdown()

    rep, scores = holdout_report(ckpt.best, test, weights)
    ledger = []
    for k, state in sorted(states.items()):
        ledger += [(k, *row) for row in state.log]
    return RunResult(
        best_params=ckpt.best,
        best_round=ckpt.best_round,
        reports=reports,
        test=rep,
        test_labels=test.labels,
        test_scores=scores,
        events=events,
        ledger=ledger,
        transcripts=transcripts,
    )


def _train_pooled(spec: ExperimentSpec, train: SiteDataset, val: SiteDataset, test: SiteDataset,
                  weights, seed: int, dimension: int, n_classes: int) -> RunResult:
    """One model, one pass over ``train`` per round; same checkpoint rule as FL."""
    tspec = replace(spec.train, local_epochs=1)
    params = init_params(tspec.model, dimension, n_classes, seed, tspec.hidden_width)
    ckpt = _Checkpointer(params)
    opt = make_optimizer(tspec)
    reports = []
    for e in range(spec.fl_rounds):
        t0 = time.perf_counter()
        params, loss = local_train(
            params, train, tspec, RoundContext(e, spec.fl_rounds, 0, seed), weights, optimizer=opt
        )
        t1 = time.perf_counter()
        report = RoundReport(round=e + 1, participants=[0], client_losses={0: loss})
        if (e + 1) % spec.eval_every == 0:
            acc, f1_val = _val_metrics(params, val)
            report.val_accuracy, report.val_f1 = acc, f1_val
            report.checkpoint = ckpt.offer(params, e + 1, acc)
        t2 = time.perf_counter()
        report.timings = {"train": t1 - t0, "privacy": 0.0, "transport": 0.0, "aggregate": 0.0,
                          "evaluate": t2 - t1, "total": t2 - t0}
        reports.append(report)
    rep, scores = holdout_report(ckpt.best, test, weights)
    return RunResult(ckpt.best, ckpt.best_round, reports, rep, test.labels, scores)


def run_centralized(spec: ExperimentSpec, seed: int | None = None, data=None) -> RunResult:
    """Pool every client's train split; validate on the pooled validation splits."""
    spec.validate()
    seed = spec.base_seed if seed is None else seed
    dev, test = load_data(spec) if data is None else data
    clients = partition(dev, replace(spec.partition, seed=seed))
    train = SiteDataset.concat([c.train for c in clients])
    val = SiteDataset.concat([c.val for c in clients])
    weights = _loss_weights(spec.train, dev)
    return _train_pooled(spec, train, val, test, weights, seed, dev.dimension, dev.n_classes)


@dataclass
class AblationResult:
    clients: list  # RunResult per client
    centralized: RunResult
    sites: list


def run_ablation(spec: ExperimentSpec, seed: int | None = None, data=None) -> AblationResult:
    spec.validate()
    seed = spec.base_seed if seed is None else seed
    dev, test = load_data(spec) if data is None else data
    clients = partition(dev, replace(spec.partition, seed=seed))
    weights = _loss_weights(spec.train, dev)
    isolated = [
        _train_pooled(spec, c.train, c.val, test, weights, seed, dev.dimension, dev.n_classes)
        for c in clients
    ]
    central = run_centralized(spec, seed, (dev, test))
    return AblationResult(isolated, central, [sorted(c.sites) for c in clients])


def summarize(values) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


RUNNERS = {"federated": run_federated, "centralized": run_centralized}


def run_repetitions(spec: ExperimentSpec, mode: str = "federated", data=None) -> dict:
    """Repeat with seeds ``base_seed + i``; population mean/std of test metrics."""
    spec.validate()
    data = load_data(spec) if data is None else data
    runs = [RUNNERS[mode](spec, spec.base_seed + i, data) for i in range(spec.repetitions)]
    per_run = [r.test.summary() | {"seed": spec.base_seed + i, "best_round": r.best_round}
               for i, r in enumerate(runs)]
    return {
        "runs": runs,
        "per_run": per_run,
        "metrics": {m: summarize([p[m] for p in per_run]) for m in METRICS},
    }


def run_mu_sweep(spec: ExperimentSpec, mus, data=None) -> list[dict]:
    data = load_data(spec) if data is None else data
    rows = []
    for mu in mus:
        s = replace(spec, strategy=replace(spec.strategy, kind="fedprox", mu=float(mu)))
        out = run_repetitions(s, data=data)
        rows.append({"strategy": "fedprox", "n_clients": spec.partition.n_clients, "mu": float(mu),
                     **_flat_metrics(out)})
    return rows


def run_epsilon_sweep(spec: ExperimentSpec, epsilons, data=None) -> list[dict]:
    kind = spec.strategy.kind if spec.strategy.privacy_mode else "local_dp"
    data = load_data(spec) if data is None else data
    rows = []
    for eps in epsilons:
        s = replace(
            spec,
            strategy=replace(spec.strategy, kind=kind, mu=None),
            privacy=replace(spec.privacy or PrivacySpec(), epsilon0=float(eps)),
        )
        out = run_repetitions(s, data=data)
        rows.append({"strategy": kind, "n_clients": spec.partition.n_clients, "epsilon": float(eps),
                     **_flat_metrics(out)})
    return rows


def _flat_metrics(out: dict) -> dict:
    flat = {}
    for m, stats in out["metrics"].items():
        flat[f"{m}_mean"] = stats["mean"]
        flat[f"{m}_std"] = stats["std"]
    return flat


# -- output files ------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format_float(x)
    return str(x)


def write_rounds_csv(path, runs: list[RunResult], n_clients: int) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["repetition", "round", "participants", "mean_loss"]
                   + [f"loss_client_{k}" for k in range(n_clients)]
                   + ["val_accuracy", "val_f1", "checkpoint", "epsilon_t"])
        for i, run in enumerate(runs):
            for rep in run.reports:
                w.writerow([i, rep.round, len(rep.participants), _fmt(rep.mean_loss)]
                           + [_fmt(rep.client_losses.get(k)) for k in range(n_clients)]
                           + [_fmt(rep.val_accuracy), _fmt(rep.val_f1), _fmt(rep.checkpoint),
                              _fmt(rep.epsilon)])


def write_timings_csv(path, runs: list[RunResult]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["repetition", "round", *PHASES, "total"])
        for i, run in enumerate(runs):
            for rep in run.reports:
                w.writerow([i, rep.round] + [f"{rep.timings[p] * 1e3:.6f}" for p in (*PHASES, "total")])


def write_privacy_ledger(path, runs: list[RunResult], tensor_names) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["repetition", "client", "round", "epsilon_t", "sigma_base"]
                   + [f"sigma_{n}" for n in tensor_names])
        for i, run in enumerate(runs):
            for client, rnd, eps, sigma, sigmas in run.ledger:
                w.writerow([i, client, rnd, _fmt(eps), _fmt(sigma)] + [_fmt(s) for s in sigmas])


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
