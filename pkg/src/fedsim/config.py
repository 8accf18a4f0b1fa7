"""Flat TOML configuration: one key per hyperparameter, unknown keys rejected.

Every key is optional; missing keys take the dataclass defaults. A config
resolves to an :class:`ExperimentSpec` plus a few CLI-only settings (sweep
grids). :func:`resolved_dict` turns a spec back into the same flat layout so
``resolved_config.toml`` can be fed back in and reproduce the run.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

from .dataset import SynthSpec
from .errors import ConfigError
from .model import TrainSpec
from .orchestrator import ExperimentSpec
from .partition import PartitionSpec
from .privacy import PrivacySpec
from .secagg import SecAggSpec, bits_from_range
from .strategies import MU_SWEEP, StrategyConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_EPSILONS = (100.0, 500.0, 1000.0, 2000.0)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _int_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list of integers")
    return tuple(_int(x) for x in v)


def _float_list(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list of numbers")
    return tuple(_float(x) for x in v)


def _prior(v):
    return _float_list(v) if isinstance(v, (list, tuple)) else _float(v)


# key -> converter
KEYS = {
    # data
    "data_csv": _str,
    "test_csv": _str,
    "test_per_class": _int,
    "n_sites": _int,
    "per_site_counts": _int_list,
    "dimension": _int,
    "class_prior": _prior,
    "site_shift": _float,
    "class_separation": _float,
    "noise_std": _float,
    "data_seed": _int,
    # partition
    "clients": _int,
    "train_ratio": _float,
    # local training
    "model": _str,
    "hidden_width": _int,
    "learning_rate": _float,
    "optimizer": _str,
    "weight_decay": _float,
    "lr_schedule": _str,
    "batch_size": _int,
    "local_epochs": _int,
    "loss_weighting": _str,
    # strategy
    "strategy": _str,
    "mu": _float,
    "client_fraction": _float,
    "min_fit_clients": _int,
    # privacy
    "epsilon": _float,
    "delta": _float,
    "clipping_norm": _float,
    "decay_factor": _float,
    "min_epsilon": _float,
    "max_epsilon": _float,
    "clip_update": _bool,
    # secure aggregation
    "num_shares": _int,
    "reconstruction_threshold": _int,
    "clipping_range": _float,
    "quantization_range": _int,
    "dropout_prob": _float,
    # orchestration
    "fl_rounds": _int,
    "eval_every": _int,
    "repetitions": _int,
    "seed": _int,
    "workers": _int,
    # sweeps
    "mu_values": _float_list,
    "epsilon_values": _float_list,
}


@dataclass(frozen=True)
class CliConfig:
    spec: ExperimentSpec
    mu_values: tuple = MU_SWEEP
    epsilon_values: tuple = DEFAULT_EPSILONS
    source: str | None = None
    raw: dict = field(default_factory=dict, repr=False)


def read_config(path) -> dict:
    """Parse a TOML file into a flat dict of checked values."""
    path = Path(path)
    try:
        text = path.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        doc = tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return check_keys(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def check_keys(doc: dict) -> dict:
    out = {}
    for key, value in doc.items():
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            out[key] = KEYS[key](value)
        except TypeError as exc:
            raise ConfigError(f"key {key!r}: {exc}, got {value!r}") from None
    return out


def build(values: dict, source: str | None = None) -> CliConfig:
    """Assemble specs from checked flat values and validate them."""
    v = check_keys(values)
    seed = v.get("seed", 0)
    if "data_csv" in v:
        synth = None
    else:
        d = SynthSpec()
        n_sites = v.get("n_sites", d.n_sites)
        counts = v.get("per_site_counts", d.per_site_counts if n_sites == d.n_sites else (200,) * n_sites)
        synth = SynthSpec(
            n_sites=n_sites,
            per_site_counts=counts,
            dimension=v.get("dimension", d.dimension),
            class_prior=v.get("class_prior", d.class_prior),
            site_shift=v.get("site_shift", d.site_shift),
            class_separation=v.get("class_separation", d.class_separation),
            noise_std=v.get("noise_std", d.noise_std),
            seed=v.get("data_seed", d.seed),
        )
    td = TrainSpec()
    train = TrainSpec(
        model=v.get("model", td.model),
        hidden_width=v.get("hidden_width", td.hidden_width),
        learning_rate=v.get("learning_rate", td.learning_rate),
        optimizer=v.get("optimizer", td.optimizer),
        weight_decay=v.get("weight_decay", td.weight_decay),
        lr_schedule=v.get("lr_schedule", td.lr_schedule),
        batch_size=v.get("batch_size", td.batch_size),
        local_epochs=v.get("local_epochs", td.local_epochs),
        loss_weighting=v.get("loss_weighting", td.loss_weighting),
    )
    sd = StrategyConfig()
    strategy = StrategyConfig(
        kind=v.get("strategy", sd.kind),
        mu=v.get("mu"),
        client_fraction=v.get("client_fraction", sd.client_fraction),
        min_fit_clients=v.get("min_fit_clients", sd.min_fit_clients),
    )
    privacy = None
    privacy_keys = ("epsilon", "delta", "clipping_norm", "decay_factor", "min_epsilon", "max_epsilon", "clip_update")
    if strategy.privacy_mode is not None or any(k in v for k in privacy_keys):
        pd = PrivacySpec()
        privacy = PrivacySpec(
            epsilon0=v.get("epsilon", pd.epsilon0),
            delta=v.get("delta", pd.delta),
            clipping_norm=v.get("clipping_norm", pd.clipping_norm),
            decay_factor=v.get("decay_factor", pd.decay_factor),
            epsilon_min=v.get("min_epsilon", pd.epsilon_min),
            epsilon_max=v.get("max_epsilon", pd.epsilon_max),
            clip_update=v.get("clip_update", pd.clip_update),
        )
    secagg = None
    secagg_keys = ("num_shares", "reconstruction_threshold", "clipping_range", "quantization_range")
    if strategy.kind == "secagg" or any(k in v for k in secagg_keys):
        ad = SecAggSpec()
        secagg = SecAggSpec(
            clipping_range=v.get("clipping_range", ad.clipping_range),
            quant_bits=bits_from_range(v["quantization_range"]) if "quantization_range" in v else ad.quant_bits,
            num_shares=v.get("num_shares", ad.num_shares),
            reconstruction_threshold=v.get("reconstruction_threshold", ad.reconstruction_threshold),
        )
    ed = ExperimentSpec()
    spec = ExperimentSpec(
        synth=synth,
        data_csv=v.get("data_csv"),
        test_csv=v.get("test_csv"),
        test_per_class=v.get("test_per_class", ed.test_per_class),
        partition=PartitionSpec(n_clients=v.get("clients", 2), train_ratio=v.get("train_ratio", 0.8)),
        train=train,
        strategy=strategy,
        privacy=privacy,
        secagg=secagg,
        fl_rounds=v.get("fl_rounds", ed.fl_rounds),
        eval_every=v.get("eval_every", ed.eval_every),
        repetitions=v.get("repetitions", ed.repetitions),
        base_seed=seed,
        workers=v.get("workers", ed.workers),
        dropout_prob=v.get("dropout_prob", ed.dropout_prob),
    )
    spec.validate()
    return CliConfig(
        spec=spec,
        mu_values=v.get("mu_values", MU_SWEEP),
        epsilon_values=v.get("epsilon_values", DEFAULT_EPSILONS),
        source=source,
        raw=v,
    )


def load(path=None, overrides: dict | None = None) -> CliConfig:
    """Read ``path`` (optional), apply ``overrides`` and build the specs."""
    values = read_config(path) if path is not None else {}
    values.update({k: val for k, val in (overrides or {}).items() if val is not None})
    # a strategy override drops settings that only the previous strategy accepted
    if overrides and overrides.get("strategy") not in (None, "fedprox") and overrides.get("mu") is None:
        values.pop("mu", None)
    try:
        return build(values, None if path is None else str(path))
    except ConfigError as exc:
        if path is not None:
            raise ConfigError(f"{path}: {exc}") from None
        raise


def resolved_dict(cfg: CliConfig) -> dict:
    """Flat key/value view of every setting that influenced the run."""
    s = cfg.spec
    out: dict = {}
    if s.synth is not None:
        prior = s.synth.class_prior
        out.update(
            n_sites=s.synth.n_sites,
            per_site_counts=list(s.synth.per_site_counts),
            dimension=s.synth.dimension,
            class_prior=list(prior) if isinstance(prior, tuple) else prior,
            site_shift=s.synth.site_shift,
            class_separation=s.synth.class_separation,
            noise_std=s.synth.noise_std,
            data_seed=s.synth.seed,
        )
    if s.data_csv is not None:
        out["data_csv"] = s.data_csv
    if s.test_csv is not None:
        out["test_csv"] = s.test_csv
    out.update(
        test_per_class=s.test_per_class,
        clients=s.partition.n_clients,
        train_ratio=s.partition.train_ratio,
        model=s.train.model,
        hidden_width=s.train.hidden_width,
        learning_rate=s.train.learning_rate,
        optimizer=s.train.optimizer,
        weight_decay=s.train.weight_decay,
        lr_schedule=s.train.lr_schedule,
        batch_size=s.train.batch_size,
        local_epochs=s.train.local_epochs,
        loss_weighting=s.train.loss_weighting,
        strategy=s.strategy.kind,
        client_fraction=s.strategy.client_fraction,
        min_fit_clients=s.strategy.min_fit_clients,
    )
    if s.strategy.mu is not None:
        out["mu"] = s.strategy.mu
    if s.privacy is not None:
        p = s.privacy
        out.update(
            epsilon=p.epsilon0,
            delta=p.delta,
            clipping_norm=p.clipping_norm,
            decay_factor=p.decay_factor,
            min_epsilon=p.epsilon_min,
            max_epsilon=p.epsilon_max,
            clip_update=p.clip_update,
        )
    if s.secagg is not None:
        a = s.secagg
        out.update(
            num_shares=a.num_shares,
            reconstruction_threshold=a.reconstruction_threshold,
            clipping_range=a.clipping_range,
            quantization_range=1 << a.quant_bits,
        )
    out.update(
        dropout_prob=s.dropout_prob,
        fl_rounds=s.fl_rounds,
        eval_every=s.eval_every,
        repetitions=s.repetitions,
        seed=s.base_seed,
        workers=s.workers,
        mu_values=list(cfg.mu_values),
        epsilon_values=list(cfg.epsilon_values),
    )
    return out


def write_resolved(cfg: CliConfig, path) -> None:
    Path(path).write_text(tomli_w.dumps(resolved_dict(cfg)), encoding="utf-8")
