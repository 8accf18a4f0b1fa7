"""Small differentiable classifiers over named parameter tensors.

Two model kinds share one parameter container:

* ``logreg``: ``logits = X @ W + b``
* ``mlp``: ``logits = tanh(X @ W1 + b1) @ W2 + b2``

Training uses the weighted cross-entropy ``-(1/N) sum_i w[y_i] log p[y_i]``
with analytic gradients, SGD or AdamW, and an optional cosine schedule.
"""

from __future__ import annotations

import json
import math
import struct
from collections.abc import Iterator
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .dataset import SiteDataset
from .errors import ConfigError, ConformanceError
from .rng import Stream

PROB_FLOOR = 1e-12
_LOG_FLOOR = math.log(PROB_FLOOR)
CHECKPOINT_MAGIC = b"FSPM"
CHECKPOINT_VERSION = 1


class ParameterSet:
    """Ordered, uniquely named float64 tensors."""

    __slots__ = ("_names", "_tensors")

    def __init__(self, items):
        if isinstance(items, dict):
            items = items.items()
        names, tensors = [], []
        for name, tensor in items:
            if name in names:
                raise ConformanceError(f"duplicate parameter name {name!r}")
            names.append(str(name))
            tensors.append(np.array(tensor, dtype=np.float64))
        self._names = tuple(names)
        self._tensors = tensors

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(t.shape for t in self._tensors)

    @property
    def size(self) -> int:
        return sum(t.size for t in self._tensors)

    def __len__(self) -> int:
        return len(self._names)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._tensors[self._names.index(name)]
        except ValueError:
            raise KeyError(name) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._names)

    def items(self):
        return zip(self._names, self._tensors)

    def tensors(self) -> list[np.ndarray]:
        return list(self._tensors)

    def copy(self) -> ParameterSet:
        return ParameterSet((n, t.copy()) for n, t in self.items())

    def conformant(self, other: ParameterSet) -> bool:
        return self.names == other.names and self.shapes == other.shapes

    def check_conformant(self, other: ParameterSet) -> None:
        if not self.conformant(other):
            raise ConformanceError(
                f"parameter sets differ: {list(zip(self.names, self.shapes))} vs "
                f"{list(zip(other.names, other.shapes))}"
            )

    def map(self, fn) -> ParameterSet:
        return ParameterSet((n, fn(t)) for n, t in self.items())

    def zip_map(self, other: ParameterSet, fn) -> ParameterSet:
        self.check_conformant(other)
        return ParameterSet((n, fn(a, b)) for (n, a), b in zip(self.items(), other._tensors))

    def __sub__(self, other: ParameterSet) -> ParameterSet:
        return self.zip_map(other, np.subtract)

    def __add__(self, other: ParameterSet) -> ParameterSet:
        return self.zip_map(other, np.add)

    def equal(self, other: ParameterSet) -> bool:
        """Bitwise equality of names, shapes and values."""
        return self.conformant(other) and all(
            a.tobytes() == b.tobytes() for a, b in zip(self._tensors, other._tensors)
        )

    def __repr__(self) -> str:
        body = ", ".join(f"{n}: {t.shape}" for n, t in self.items())
        return f"ParameterSet({body})"


def flatten(params: ParameterSet) -> np.ndarray:
    if len(params) == 0:
        return np.zeros(0)
    return np.concatenate([t.ravel() for t in params.tensors()])


def unflatten(vector, template: ParameterSet) -> ParameterSet:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1 or vector.size != template.size:
        raise ConformanceError(
            f"vector of length {vector.size} does not match template size {template.size}"
        )
    out, offset = [], 0
    for name, t in template.items():
        out.append((name, vector[offset : offset + t.size].reshape(t.shape).copy()))
        offset += t.size
    return ParameterSet(out)


def model_kind(params: ParameterSet) -> str:
    if params.names == ("W", "b"):
        return "logreg"
    if params.names == ("W1", "b1", "W2", "b2"):
        return "mlp"
    raise ConformanceError(f"unrecognised parameter layout {params.names}")


def init_params(kind: str, d: int, n_classes: int, seed: int, hidden_width: int = 16) -> ParameterSet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    if d < 1 or n_classes < 1:
        raise ConfigError("d and n_classes must be at least 1")
    stream = Stream(seed, "init", kind)

    def uniform(fan_in, shape):
        bound = 1.0 / math.sqrt(fan_in)
        n = int(np.prod(shape))
        return (2.0 * stream.uniform(n) - 1.0).reshape(shape) * bound

    if kind == "logreg":
        return ParameterSet([("W", uniform(d, (d, n_classes))), ("b", np.zeros(n_classes))])
    if kind == "mlp":
        if hidden_width < 1:
            raise ConfigError("hidden_width must be at least 1")
        return ParameterSet(
            [
                ("W1", uniform(d, (d, hidden_width))),
                ("b1", np.zeros(hidden_width)),
                ("W2", uniform(hidden_width, (hidden_width, n_classes))),
                ("b2", np.zeros(n_classes)),
            ]
        )
    raise ConfigError(f"unknown model kind {kind!r}")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(params: ParameterSet, x: np.ndarray):
    if model_kind(params) == "logreg":
        return x @ params["W"] + params["b"], None
    hidden = np.tanh(x @ params["W1"] + params["b1"])
    return hidden @ params["W2"] + params["b2"], hidden


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray  # (n, L) softmax probabilities
    labels: np.ndarray

    @property
    def positive_scores(self) -> np.ndarray:
        return self.scores[:, -1]


def predict(params: ParameterSet, features) -> Prediction:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    logits, _ = _forward(params, x)
    probs = np.exp(_log_softmax(logits))
    return Prediction(probs, np.argmax(probs, axis=1))


def weighted_ce_loss(params: ParameterSet, batch, weights) -> tuple[float, ParameterSet]:
    """Loss and exact gradient for ``batch = (features, labels)``."""
    x, y = batch
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    logits, hidden = _forward(params, x)
    if weights.shape != (logits.shape[1],):
        raise ValueError(f"expected {logits.shape[1]} class weights, got {weights.shape}")
    logp = _log_softmax(logits)
    rows = np.arange(n)
    logp_true = logp[rows, y]
    floored = logp_true < _LOG_FLOOR
    w = weights[y]
    loss = float(-(w * np.maximum(logp_true, _LOG_FLOOR)).sum() / n)

    # d loss / d logits = (w_i / N) (softmax_i - onehot_i); zero where the floor is active.
    coef = np.where(floored, 0.0, w / n)
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0
    dlogits *= coef[:, None]

    if hidden is None:
        grads = [("W", x.T @ dlogits), ("b", dlogits.sum(axis=0))]
    else:
        dhidden = (dlogits @ params["W2"].T) * (1.0 - hidden**2)
        grads = [
            ("W1", x.T @ dhidden),
            ("b1", dhidden.sum(axis=0)),
            ("W2", hidden.T @ dlogits),
            ("b2", dlogits.sum(axis=0)),
        ]
    return loss, ParameterSet(grads)


def proximal_objective(params, global_params, batch, weights, mu: float):
    """Weighted CE plus ``(mu/2) ||w - w_global||^2`` and its gradient."""
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    loss, grads = weighted_ce_loss(params, batch, weights)
    if mu == 0:
        return loss, grads
    diff = params - global_params
    loss += 0.5 * mu * float(flatten(diff) @ flatten(diff))
    return loss, grads.zip_map(diff, lambda g, d: g + mu * d)


@dataclass(frozen=True)
class TrainSpec:
    model: str = "logreg"
    hidden_width: int = 16
    learning_rate: float = 1e-4
    optimizer: str = "adamw"
    weight_decay: float = 1e-2
    lr_schedule: str = "cosine"
    batch_size: int = 8
    local_epochs: int = 1
    loss_weighting: str = "inverse"
    seed: int = 0

    def validate(self) -> None:
        if self.model not in ("logreg", "mlp"):
            raise ConfigError(f"model must be logreg or mlp, got {self.model!r}")
        if self.optimizer not in ("sgd", "adamw"):
            raise ConfigError(f"optimizer must be sgd or adamw, got {self.optimizer!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"lr_schedule must be constant or cosine, got {self.lr_schedule!r}")
        if self.loss_weighting not in ("uniform", "inverse"):
            raise ConfigError(f"loss_weighting must be uniform or inverse, got {self.loss_weighting!r}")
        if not self.learning_rate >= 0:
            raise ConfigError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.local_epochs < 1:
            raise ConfigError(f"local_epochs must be positive, got {self.local_epochs}")


@dataclass(frozen=True)
class RoundContext:
    """Where a local training call sits in the global schedule."""

    round_index: int = 0  # 0-based
    total_rounds: int = 1
    client_id: int = 0
    seed: int = 0


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, tensors, grads, lr=None):
        lr = self.lr if lr is None else lr
        for p, g in zip(tensors, grads):
            if self.weight_decay:
                g = g + self.weight_decay * p
            p -= lr * g


class AdamW:
    """Adam with decoupled weight decay (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, weight_decay: float = 1e-2, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, tensors, grads, lr=None):
        lr = self.lr if lr is None else lr
        if self.m is None:
            self.m = [np.zeros_like(p) for p in tensors]
            self.v = [np.zeros_like(p) for p in tensors]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(tensors, grads, self.m, self.v):
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def make_optimizer(spec: TrainSpec):
    if spec.optimizer == "sgd":
        return SGD(spec.learning_rate, spec.weight_decay)
    return AdamW(spec.learning_rate, spec.weight_decay)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


def batches_per_epoch(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def local_train(
    params: ParameterSet,
    data: SiteDataset,
    spec: TrainSpec,
    ctx: RoundContext,
    class_weights=None,
    prox: tuple[ParameterSet, float] | None = None,
    optimizer=None,
) -> tuple[ParameterSet, float]:
    """Run ``spec.local_epochs`` of mini-batch training starting from ``params``.

    Returns the trained parameters and the mean batch loss. ``prox`` is
    ``(global_params, mu)`` for the FedProx objective. Passing ``optimizer``
    keeps optimizer state across calls (the centralized loop does this).
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if class_weights is None:
        class_weights = np.ones(data.n_classes)
    params = params.copy()
    tensors = params.tensors()
    opt = make_optimizer(spec) if optimizer is None else optimizer
    n = len(data)
    bpe = batches_per_epoch(n, spec.batch_size)
    total_steps = ctx.total_rounds * spec.local_epochs * bpe
    step = ctx.round_index * spec.local_epochs * bpe
    losses = []
    for epoch in range(spec.local_epochs):
        order = Stream(ctx.seed, "batches", ctx.round_index, ctx.client_id, epoch).permutation(n)
        for start in range(0, n, spec.batch_size):
            idx = order[start : start + spec.batch_size]
            batch = (data.features[idx], data.labels[idx])
            if prox is None:
                loss, grads = weighted_ce_loss(params, batch, class_weights)
            else:
                loss, grads = proximal_objective(params, prox[0], batch, class_weights, prox[1])
            lr = spec.learning_rate
            if spec.lr_schedule == "cosine":
                lr = cosine_lr(spec.learning_rate, step, total_steps)
            opt.step(tensors, grads.tensors(), lr)
            losses.append(loss)
            step += 1
    return params, float(np.mean(losses))


def evaluate_loss(params: ParameterSet, data: SiteDataset, class_weights=None) -> float:
    if class_weights is None:
        class_weights = np.ones(data.n_classes)
    loss, _ = weighted_ce_loss(params, (data.features, data.labels), class_weights)
    return loss


def save_checkpoint(params: ParameterSet, path, train_spec: TrainSpec | None = None) -> None:
    """Binary blocks of (name, shape, row-major little-endian float64) plus a JSON sidecar."""
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, t in params.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}Q", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    if train_spec is not None:
        path.with_suffix(".json").write_text(
            json.dumps(asdict(train_spec), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def load_checkpoint(path) -> ParameterSet:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a fedsim checkpoint")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    items = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, offset)
        offset += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        t = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        items.append((name, t.astype(np.float64)))
    return ParameterSet(items)
