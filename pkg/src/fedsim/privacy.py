"""Gaussian-mechanism local DP, fixed and adaptive (ALDP).

The adaptive mode grows the per-round budget geometrically,
``eps_t = eps0 * (1/alpha)**(t-1)`` clamped to ``[eps_min, eps_max]``, and
scales the base noise per tensor by ``clip(std_i / mean_std, 0.1, 1.0)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import ParameterSet, flatten, unflatten
from .rng import Stream

SCALE_MIN = 0.1
SCALE_MAX = 1.0
STD_FLOOR = 1e-12


@dataclass(frozen=True)
class PrivacySpec:
    epsilon0: float = 100.0
    delta: float = 1e-5
    clipping_norm: float = 1.0
    decay_factor: float = 0.95
    epsilon_min: float = 1e-3
    epsilon_max: float = math.inf
    mode: str = "fixed"
    clip_update: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("fixed", "adaptive"):
            raise ConfigError(f"privacy mode must be fixed or adaptive, got {self.mode!r}")
        if not self.epsilon0 > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon0}")
        if not 0.0 < self.delta < 1.0:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.clipping_norm > 0:
            raise ConfigError(f"clipping_norm must be positive, got {self.clipping_norm}")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")
        if not self.epsilon_min > 0:
            raise ConfigError(f"min_epsilon must be positive, got {self.epsilon_min}")
        if not self.epsilon_max > self.epsilon_min:
            raise ConfigError("max_epsilon must exceed min_epsilon")
        if self.mode == "adaptive" and not (
            self.epsilon_min <= self.epsilon0 <= self.epsilon_max
        ):
            raise ConfigError("epsilon must lie within [min_epsilon, max_epsilon]")


def epsilon_at(spec: PrivacySpec, t: int) -> float:
    """Budget for round ``t`` (1-based)."""
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    eps = spec.epsilon0 * (1.0 / spec.decay_factor) ** (t - 1)
    if not math.isinf(spec.epsilon_max):
        eps = min(eps, spec.epsilon_max)
    return max(eps, spec.epsilon_min)


def sigma_base(clipping_norm: float, epsilon: float, delta: float) -> float:
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return clipping_norm / epsilon * math.sqrt(2.0 * math.log(1.25 / delta))


def tensor_scales(params: ParameterSet) -> np.ndarray:
    if len(params) == 0:
        raise ValueError("tensor_scales needs at least one tensor")
    stds = np.array([float(np.std(t)) for t in params.tensors()])
    mean_std = max(float(stds.mean()), STD_FLOOR)
    return np.clip(stds / mean_std, SCALE_MIN, SCALE_MAX)


def clip_by_norm(vector: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm > max_norm:
        return vector * (max_norm / norm)
    return vector


@dataclass
class ALDPState:
    """Per-client round counter and ledger.

    ``advance()`` must be called once per round before :func:`apply_local_dp`.
    """

    spec: PrivacySpec
    client_id: int = 0
    round: int = 0
    epsilon: float = math.nan
    sigma: float = math.nan
    log: list = field(default_factory=list)

    def advance(self, to_round: int | None = None) -> float:
        """Move to the next round, or jump to global round ``to_round`` (1-based)."""
        if to_round is None:
            to_round = self.round + 1
        if to_round <= self.round:
            raise ValueError(f"round must increase: {self.round} -> {to_round}")
        self.round = to_round
        if self.spec.mode == "adaptive":
            self.epsilon = epsilon_at(self.spec, self.round)
        else:
            self.epsilon = self.spec.epsilon0
        self.sigma = sigma_base(self.spec.clipping_norm, self.epsilon, self.spec.delta)
        return self.epsilon


def apply_local_dp(
    update: ParameterSet,
    spec: PrivacySpec,
    state: ALDPState,
    reference: ParameterSet | None = None,
    sigma_scale: float = 1.0,
) -> ParameterSet:
    """Clip (optionally) and noise one outgoing update.

    Adaptive per-tensor statistics come from ``reference`` (the local model
    parameters) when given, else from ``update`` itself. ``sigma_scale``
    multiplies every noise scale; tests set it to 0 to isolate clipping.
    """
    if state.round < 1:
        raise RuntimeError("ALDPState.advance() must be called before apply_local_dp")
    if reference is not None:
        update.check_conformant(reference)
    vector = flatten(update)
    if spec.clip_update:
        vector = clip_by_norm(vector, spec.clipping_norm)
    if spec.mode == "adaptive":
        scales = tensor_scales(reference if reference is not None else update)
    else:
        scales = np.ones(len(update))
    sigmas = state.sigma * scales * sigma_scale
    per_element = np.repeat(sigmas, [t.size for t in update.tensors()])
    noise = Stream(spec.seed, "dp-noise", state.round, state.client_id).normal(vector.size)
    state.log.append((state.round, state.epsilon, state.sigma, tuple(float(s) for s in sigmas)))
    return unflatten(vector + per_element * noise, update)
