"""Multi-site labelled feature data: synthetic generation, CSV I/O, class weights."""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .rng import Stream, derive_seed

CLASS_NAMES = ("CN", "AD")


@dataclass(frozen=True)
class SiteRecord:
    site_id: str
    label: int
    features: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class SiteDataset:
    """Column-oriented records: ``site_ids[i]``, ``labels[i]``, ``features[i]``."""

    site_ids: np.ndarray
    labels: np.ndarray
    features: np.ndarray
    n_classes: int = 2

    def __post_init__(self):
        site_ids = np.asarray(self.site_ids, dtype=str)
        labels = np.asarray(self.labels, dtype=np.int64)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        n = features.shape[0]
        if site_ids.shape != (n,) or labels.shape != (n,):
            raise ValueError("site_ids, labels and features disagree on record count")
        if n and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        object.__setattr__(self, "site_ids", site_ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dimension(self) -> int:
        return int(self.features.shape[1])

    @property
    def sites(self) -> list[str]:
        return sorted(set(self.site_ids.tolist()))

    def site_counts(self) -> dict[str, int]:
        ids, counts = np.unique(self.site_ids, return_counts=True)
        return {str(s): int(c) for s, c in zip(ids, counts)}

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, index) -> SiteDataset:
        index = np.asarray(index, dtype=np.int64)
        return SiteDataset(
            self.site_ids[index], self.labels[index], self.features[index], self.n_classes
        )

    def records(self) -> list[SiteRecord]:
        return [
            SiteRecord(str(s), int(y), tuple(float(v) for v in x))
            for s, y, x in zip(self.site_ids, self.labels, self.features)
        ]

    @classmethod
    def from_records(cls, records: Sequence[SiteRecord], n_classes: int = 2) -> SiteDataset:
        if not records:
            raise ValueError("no records")
        d = len(records[0].features)
        if any(len(r.features) != d for r in records):
            raise ValueError("feature vectors have inconsistent length")
        return cls(
            np.array([r.site_id for r in records], dtype=str),
            np.array([r.label for r in records], dtype=np.int64),
            np.array([r.features for r in records], dtype=np.float64).reshape(len(records), d),
            n_classes,
        )

    @classmethod
    def concat(cls, parts: Iterable[SiteDataset]) -> SiteDataset:
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        return cls(
            np.concatenate([p.site_ids for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.features for p in parts]),
            parts[0].n_classes,
        )

    def identical(self, other: SiteDataset) -> bool:
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.site_ids, other.site_ids)
            and np.array_equal(self.labels, other.labels)
            and self.features.shape == other.features.shape
            and self.features.tobytes() == other.features.tobytes()
        )


@dataclass(frozen=True)
class SynthSpec:
    n_sites: int = 4
    per_site_counts: tuple[int, ...] = (200, 200, 200, 200)
    dimension: int = 16
    class_prior: tuple[float, ...] | float = 0.4
    site_shift: float = 1.0
    class_separation: float = 2.0
    noise_std: float = 1.0
    seed: int = 0
    n_classes: int = field(default=2, repr=False)

    def priors(self) -> tuple[float, ...]:
        if isinstance(self.class_prior, (int, float)):
            return (float(self.class_prior),) * self.n_sites
        return tuple(float(p) for p in self.class_prior)

    def validate(self) -> None:
        if not isinstance(self.n_sites, int) or self.n_sites < 1:
            raise ConfigError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if len(self.per_site_counts) != self.n_sites:
            raise ConfigError(
                f"per_site_counts has {len(self.per_site_counts)} entries, expected n_sites={self.n_sites}"
            )
        if any(int(c) < 1 for c in self.per_site_counts):
            raise ConfigError("per_site_counts must all be positive")
        if self.dimension < 1:
            raise ConfigError(f"dimension must be positive, got {self.dimension}")
        priors = self.priors()
        if len(priors) != self.n_sites:
            raise ConfigError(f"class_prior has {len(priors)} entries, expected n_sites={self.n_sites}")
        if any(not 0.0 <= p <= 1.0 for p in priors):
            raise ConfigError("class_prior probabilities must lie in [0, 1]")
        if self.site_shift < 0:
            raise ConfigError(f"site_shift must be nonnegative, got {self.site_shift}")
        if self.class_separation < 0:
            raise ConfigError(f"class_separation must be nonnegative, got {self.class_separation}")
        if not self.noise_std > 0:
            raise ConfigError(f"noise_std must be positive, got {self.noise_std}")
        if self.n_classes != 2:
            raise ConfigError("synthetic generation supports n_classes=2 only")


def site_name(index: int) -> str:
    return f"site{index:02d}"


def class_direction(d: int) -> np.ndarray:
    return np.full(d, 1.0 / math.sqrt(d))


def site_offset(index: int, d: int, shift: float) -> np.ndarray:
    """Deterministic offset of norm ``shift``; depends only on site index and d."""
    if shift == 0:
        return np.zeros(d)
    v = Stream("site-offset", index).normal(d)
    return shift * v / np.linalg.norm(v)


def _draw_features(stream: Stream, spec: SynthSpec, site: int, labels: np.ndarray) -> np.ndarray:
    d = spec.dimension
    mean = (
        spec.class_separation * labels[:, None] * class_direction(d)[None, :]
        + site_offset(site, d, spec.site_shift)[None, :]
    )
    noise = stream.normal(labels.shape[0] * d).reshape(labels.shape[0], d)
    return mean + spec.noise_std * noise


def generate(spec: SynthSpec) -> SiteDataset:
    spec.validate()
    priors = spec.priors()
    site_ids, labels, features = [], [], []
    for s, count in enumerate(spec.per_site_counts):
        count = int(count)
        stream = Stream(spec.seed, "generate", s)
        y = (stream.uniform(count) < priors[s]).astype(np.int64)
        site_ids.append(np.full(count, site_name(s)))
        labels.append(y)
        features.append(_draw_features(stream, spec, s, y))
    return SiteDataset(
        np.concatenate(site_ids), np.concatenate(labels), np.concatenate(features), spec.n_classes
    )


def generate_holdout(spec: SynthSpec, per_class: int = 50) -> SiteDataset:
    """Class-balanced test set from the same site geometry, independent stream."""
    spec.validate()
    if per_class < 1:
        raise ConfigError(f"test_per_class must be positive, got {per_class}")
    site_ids, labels, features = [], [], []
    for c in range(spec.n_classes):
        stream = Stream(spec.seed, "holdout", c)
        sites = np.arange(per_class) % spec.n_sites
        for s in range(spec.n_sites):
            n = int(np.count_nonzero(sites == s))
            if n == 0:
                continue
            y = np.full(n, c, dtype=np.int64)
            site_ids.append(np.full(n, site_name(s)))
            labels.append(y)
            features.append(_draw_features(stream, spec, s, y))
    return SiteDataset(
        np.concatenate(site_ids), np.concatenate(labels), np.concatenate(features), spec.n_classes
    )


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def save_csv(ds: SiteDataset, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site_id", "label"] + [f"f{j}" for j in range(ds.dimension)])
        for s, y, x in zip(ds.site_ids, ds.labels, ds.features):
            writer.writerow([s, int(y)] + [format_float(v) for v in x])


def load_csv(path, n_classes: int = 2) -> SiteDataset:
    """Read ``site_id,label,f0..f{d-1}``; errors carry the path and line number."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            return _parse_csv(fh, n_classes)
    except ParseError as exc:
        raise ParseError(exc.reason, exc.line, path) from None


def _parse_csv(fh, n_classes: int) -> SiteDataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("missing header row", line=1) from None
    if len(header) < 3 or header[0] != "site_id" or header[1] != "label":
        raise ParseError("header must be site_id,label,f0,...", line=1)
    expected = [f"f{j}" for j in range(len(header) - 2)]
    if header[2:] != expected:
        raise ParseError("feature columns must be named f0..f{d-1} in order", line=1)
    d = len(expected)
    site_ids, labels, rows = [], [], []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != d + 2:
            raise ParseError(f"expected {d + 2} fields, found {len(row)}", line=line)
        try:
            label = int(row[1])
        except ValueError:
            raise ParseError(f"label {row[1]!r} is not an integer", line=line) from None
        if not 0 <= label < n_classes:
            raise ParseError(f"unknown label {label}", line=line)
        try:
            rows.append([float(v) for v in row[2:]])
        except ValueError as exc:
            raise ParseError(f"non-numeric feature: {exc}", line=line) from None
        site_ids.append(row[0])
        labels.append(label)
    if not rows:
        raise ParseError("no records")
    return SiteDataset(
        np.array(site_ids, dtype=str),
        np.array(labels, dtype=np.int64),
        np.array(rows, dtype=np.float64),
        n_classes,
    )


def class_weights(ds_or_counts) -> np.ndarray:
    """Inverse-frequency weights ``n_total / (L * n_c)``.

    Accepts a :class:`SiteDataset` or a vector of per-class counts.
    """
    if isinstance(ds_or_counts, SiteDataset):
        counts = ds_or_counts.class_counts()
    else:
        counts = np.asarray(ds_or_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("class counts must be a nonempty vector")
    missing = np.flatnonzero(counts <= 0)
    if missing.size:
        raise ValueError(f"class {int(missing[0])} has no samples; inverse-frequency weight undefined")
    n_total = float(counts.sum())
    return n_total / (counts.size * counts.astype(np.float64))
