"""Client-side round logic and server aggregation for each FL strategy."""

from __future__ import annotations

import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import (
    ParameterSet,
    RoundContext,
    TrainSpec,
    flatten,
    local_train,
    proximal_objective,
    unflatten,
)
from .partition import ClientPartition
from .privacy import ALDPState, PrivacySpec, apply_local_dp

STRATEGIES = ("fedavg", "fedprox", "secagg", "local_dp", "aldp")
MU_SWEEP = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 3.0, 5.0)


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "fedavg"
    mu: float | None = None
    client_fraction: float = 1.0
    min_fit_clients: int = 1

    def validate(self, n_clients: int | None = None) -> None:
        if self.kind not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(STRATEGIES)}; got {self.kind!r}")
        if self.kind == "fedprox":
            if self.mu is None or not self.mu >= 0:
                raise ConfigError(f"fedprox needs mu >= 0, got {self.mu!r}")
        elif self.mu is not None:
            raise ConfigError(f"mu is only meaningful for fedprox, not {self.kind}")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError(f"client_fraction must lie in (0, 1], got {self.client_fraction}")
        if self.min_fit_clients < 1:
            raise ConfigError(f"min_fit_clients must be positive, got {self.min_fit_clients}")
        if self.kind == "secagg" and n_clients is not None and n_clients < 3:
            raise ConfigError(f"secagg needs at least 3 clients, got {n_clients}")

    @property
    def privacy_mode(self) -> str | None:
        return {"local_dp": "fixed", "aldp": "adaptive"}.get(self.kind)


@dataclass
class ClientUpdate:
    client_id: int
    params: ParameterSet
    n_samples: int
    loss: float
    delta: ParameterSet | None = None
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError(f"client {self.client_id} reported n_samples={self.n_samples}")


def fedavg_aggregate(updates: Sequence[ClientUpdate]) -> ParameterSet:
    """Sample-weighted mean ``sum_k (n_k / n) w_k``.

    Evaluated as ``w_0 + sum_k (n_k/n)(w_k - w_0)`` and clamped to the
    per-coordinate client range, so identical inputs come back bit-exact.
    """
    if not updates:
        raise ValueError("nothing to aggregate")
    base = updates[0].params
    for u in updates[1:]:
        base.check_conformant(u.params)
    n = float(sum(u.n_samples for u in updates))
    stacked = np.stack([flatten(u.params) for u in updates])
    origin = stacked[0]
    weights = np.array([u.n_samples / n for u in updates])
    mean = origin + weights @ (stacked - origin)
    mean = np.clip(mean, stacked.min(axis=0), stacked.max(axis=0))
    return unflatten(mean, base)


def fedprox_local_objective(params, global_params, batch, weights, mu):
    """Weighted CE plus the proximal penalty ``(mu/2) ||w - w_global||^2``."""
    return proximal_objective(params, global_params, batch, weights, mu)


def run_client_round(
    global_params: ParameterSet,
    partition: ClientPartition,
    strategy: StrategyConfig,
    train_spec: TrainSpec,
    ctx: RoundContext,
    class_weights=None,
    privacy: PrivacySpec | None = None,
    privacy_state: ALDPState | None = None,
) -> ClientUpdate:
    """Train locally from the global model and prepare what gets transmitted.

    DP strategies noise the update ``local - global`` and transmit
    ``global + noised update``; secagg leaves masking to the transport step
    and returns the raw update in ``delta``.
    """
    t0 = time.perf_counter()
    prox = (global_params, strategy.mu) if strategy.kind == "fedprox" else None
    local, loss = local_train(global_params, partition.train, train_spec, ctx, class_weights, prox)
    t1 = time.perf_counter()
    delta = local - global_params
    if strategy.privacy_mode is not None:
        if privacy is None or privacy_state is None:
            raise ConfigError(f"strategy {strategy.kind} needs a privacy spec and state")
        privacy_state.advance(ctx.round_index + 1)
        delta = apply_local_dp(delta, privacy, privacy_state, reference=local)
        local = global_params + delta
    t2 = time.perf_counter()
    return ClientUpdate(
        client_id=partition.client_id,
        params=local,
        n_samples=len(partition.train),
        loss=loss,
        delta=delta,
        timings={"train": t1 - t0, "privacy": t2 - t1},
    )
