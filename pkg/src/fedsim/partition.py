"""Site-aware greedy partitioning of a multi-site dataset across FL clients."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import SiteDataset
from .errors import ConfigError
from .rng import Stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    train_ratio: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if not isinstance(self.n_clients, int) or self.n_clients < 1:
            raise ConfigError(f"n_clients must be a positive integer, got {self.n_clients!r}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError(f"train_ratio must lie in (0, 1), got {self.train_ratio}")


@dataclass(frozen=True, eq=False)
class ClientPartition:
    client_id: int
    sites: frozenset
    train: SiteDataset
    val: SiteDataset

    @property
    def n_records(self) -> int:
        return len(self.train) + len(self.val)

    @property
    def warning(self) -> str | None:
        if len(self.train) == 0:
            return f"client {self.client_id} has an empty train split"
        if len(self.val) == 0:
            return f"client {self.client_id} has an empty validation split"
        return None


def assign_sites(site_counts: dict[str, int], n_clients: int) -> list[list[str]]:
    """Greedy longest-first assignment of whole sites to the lightest client.

    Sites are visited by count descending (ties by site id); each goes to the
    client with the fewest samples so far (ties to the lowest index).
    Zero-count sites are dropped.
    """
    counts = {s: int(c) for s, c in site_counts.items() if int(c) > 0}
    if n_clients < 1:
        raise ConfigError(f"n_clients must be positive, got {n_clients}")
    if len(counts) < n_clients:
        raise ConfigError(
            f"insufficient sites: {len(counts)} nonempty sites for {n_clients} clients"
        )
    order = sorted(counts, key=lambda s: (-counts[s], s))
    assignments: list[list[str]] = [[] for _ in range(n_clients)]
    sizes = [0] * n_clients
    for site in order:
        k = min(range(n_clients), key=lambda i: (sizes[i], i))
        assignments[k].append(site)
        sizes[k] += counts[site]
    return assignments


def partition(ds: SiteDataset, spec: PartitionSpec) -> list[ClientPartition]:
    spec.validate()
    assignments = assign_sites(ds.site_counts(), spec.n_clients)
    clients = []
    for k, sites in enumerate(assignments):
        index = np.flatnonzero(np.isin(ds.site_ids, np.array(sites, dtype=str)))
        index = index[Stream(spec.seed, "shuffle", k).permutation(index.size)]
        split = math.floor(index.size * spec.train_ratio)
        part = ClientPartition(
            client_id=k,
            sites=frozenset(sites),
            train=ds.subset(index[:split]),
            val=ds.subset(index[split:]),
        )
        if part.warning:
            logger.warning(part.warning)
        clients.append(part)
    return clients
