"""Simplified SecAgg+ round over Z_(2^32).

Flow per round:

1. setup: every client draws a secret key ``sk`` and publishes
   ``pk = g**sk mod p``; pairwise seeds are ``derive(pk_j**sk_i mod p)``,
   so both ends of a pair agree. ``sk`` is Shamir-shared to ``num_shares``
   holders (the client itself and the next clients in ring order).
2. masking: clip to [-R, R], quantize to [0, 2^b - 1], add pairwise masks
   ``sum_{j>i} PRG(s_ij) - sum_{j<i} PRG(s_ij)`` mod 2^32.
3. unmasking: the server sums survivors' vectors, rebuilds each dropped
   client's ``sk`` from survivors' shares, strips the dangling masks and
   dequantizes the sum.

This is a simulation: the 61-bit Diffie-Hellman group and plaintext share
routing give no real security. Do not use it to protect anything.
"""

from __future__ import annotations

import hashlib
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .errors import ConfigError, ProtocolError
from .rng import Stream, derive_seed

PRIME = (1 << 61) - 1
GENERATOR = 3
MODULUS = 1 << 32


@dataclass(frozen=True)
class SecAggSpec:
    clipping_range: float = 8.0
    quant_bits: int = 22
    num_shares: int = 3
    reconstruction_threshold: int = 2
    seed: int = 0

    @property
    def levels(self) -> int:
        return (1 << self.quant_bits) - 1

    @property
    def step(self) -> float:
        return 2.0 * self.clipping_range / self.levels

    def validate(self, n_clients: int | None = None) -> None:
        if not self.clipping_range > 0:
            raise ConfigError(f"clipping_range must be positive, got {self.clipping_range}")
        if not 1 <= self.quant_bits <= 31:
            raise ConfigError(f"quantization bits must lie in 1..31, got {self.quant_bits}")
        if not 1 <= self.reconstruction_threshold <= self.num_shares:
            raise ConfigError("reconstruction_threshold must lie in 1..num_shares")
        if n_clients is not None:
            if n_clients < 3:
                raise ConfigError(f"secagg needs at least 3 clients, got {n_clients}")
            if self.num_shares > n_clients:
                raise ConfigError(f"num_shares={self.num_shares} exceeds the {n_clients} clients")
            if (1 << self.quant_bits) * n_clients >= MODULUS:
                raise ConfigError("2^quant_bits * n_clients must stay below 2^32")


def quantize(v, spec: SecAggSpec) -> np.ndarray:
    r = spec.clipping_range
    scaled = (np.clip(np.asarray(v, dtype=np.float64), -r, r) + r) / (2.0 * r) * spec.levels
    return np.rint(scaled).astype(np.uint32)  # rint rounds half to even


def dequantize(q, spec: SecAggSpec, count: int = 1) -> np.ndarray:
    """Invert :func:`quantize`; ``count`` is how many vectors were summed into ``q``."""
    q = np.asarray(q, dtype=np.float64)
    return q / spec.levels * (2.0 * spec.clipping_range) - count * spec.clipping_range


# -- Shamir over GF(2^61 - 1) ------------------------------------------------


@dataclass(frozen=True)
class SeedShare:
    holder: int
    owner: int
    x: int
    value: int


def share_seed(secret: int, num_shares: int, threshold: int, stream: Stream, owner: int = 0,
               holders: Sequence[int] | None = None) -> list[SeedShare]:
    if not 1 <= threshold <= num_shares:
        raise ValueError("threshold must lie in 1..num_shares")
    if not 0 <= secret < PRIME:
        raise ValueError("secret must lie in [0, p)")
    holders = list(range(num_shares)) if holders is None else list(holders)
    if len(holders) != num_shares:
        raise ValueError("need one holder per share")
    coeffs = [secret] + [int(c) % PRIME for c in stream.uint64(threshold - 1)]
    shares = []
    for i, holder in enumerate(holders):
        x = i + 1
        acc = 0
        for c in reversed(coeffs):
            acc = (acc * x + c) % PRIME
        shares.append(SeedShare(holder=holder, owner=owner, x=x, value=acc))
    return shares


def reconstruct_seed(shares: Iterable[SeedShare], threshold: int) -> int:
    shares = list(shares)
    xs = [s.x for s in shares]
    if len(set(xs)) != len(xs):
        raise ValueError("duplicate share index")
    if len({s.owner for s in shares}) > 1:
        raise ValueError("shares belong to different owners")
    if len(shares) < threshold:
        raise ProtocolError(f"have {len(shares)} shares, need {threshold} to reconstruct")
    shares = shares[:threshold]
    secret = 0
    for i, si in enumerate(shares):
        num, den = 1, 1
        for j, sj in enumerate(shares):
            if i != j:
                num = num * (-sj.x) % PRIME
                den = den * (si.x - sj.x) % PRIME
        secret = (secret + si.value * num * pow(den, PRIME - 2, PRIME)) % PRIME
    return secret


# -- key agreement and masks ---------------------------------------------------


@dataclass
class ClientKeys:
    client_id: int
    secret_key: int
    public_key: int


@dataclass
class RoundSetup:
    """Public keys and routed shares for one round; ``shares[holder]`` lists what each holds."""

    round: int
    clients: tuple[int, ...]
    public_keys: dict[int, int]
    shares: dict[int, list[SeedShare]]
    keys: dict[int, ClientKeys] = field(repr=False)


def pair_seed(secret_key: int, peer_public_key: int) -> int:
    return derive_seed("secagg-pair", pow(peer_public_key, secret_key, PRIME))


def setup_round(clients: Sequence[int], round_index: int, spec: SecAggSpec) -> RoundSetup:
    clients = tuple(sorted(clients))
    spec.validate(len(clients))
    keys, shares = {}, {c: [] for c in clients}
    for pos, c in enumerate(clients):
        stream = Stream(spec.seed, "secagg-key", round_index, c)
        sk = int(stream.uint64(1)[0]) % (PRIME - 2) + 1
        keys[c] = ClientKeys(c, sk, pow(GENERATOR, sk, PRIME))
        holders = [clients[(pos + i) % len(clients)] for i in range(spec.num_shares)]
        for share in share_seed(sk, spec.num_shares, spec.reconstruction_threshold, stream, c, holders):
            shares[share.holder].append(share)
    return RoundSetup(
        round=round_index,
        clients=clients,
        public_keys={c: k.public_key for c, k in keys.items()},
        shares=shares,
        keys=keys,
    )


def _mask_terms(client_id: int, secret_key: int, peers: Iterable[int], public_keys, round_index):
    keys, signs = [], []
    for j in peers:
        if j == client_id:
            continue
        if j not in public_keys:
            raise ProtocolError(f"no public key for peer {j}")
        keys.append(derive_seed(pair_seed(secret_key, public_keys[j]), round_index))
        signs.append(1 if j > client_id else -1)
    return np.array(keys, dtype=np.uint64), np.array(signs, dtype=np.int8)


def make_masks(client_id: int, peers: Iterable[int], round_index: int, setup: RoundSetup, n: int) -> np.ndarray:
    """Pairwise mask vector for ``client_id``; all participants' masks sum to 0 mod 2^32."""
    if client_id not in setup.keys:
        raise ProtocolError(f"client {client_id} took no part in setup")
    keys, signs = _mask_terms(
        client_id, setup.keys[client_id].secret_key, peers, setup.public_keys, round_index
    )
    return _accel.pairwise_mask(keys, signs, n)


@dataclass(frozen=True)
class MaskedUpdate:
    client_id: int
    vector: np.ndarray  # uint32
    peers: frozenset

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.vector, dtype="<u4").tobytes()).hexdigest()


def mask_update(client_id: int, update, setup: RoundSetup, spec: SecAggSpec) -> MaskedUpdate:
    q = quantize(update, spec)
    mask = make_masks(client_id, setup.clients, setup.round, setup, q.size)
    return MaskedUpdate(client_id, q + mask, frozenset(c for c in setup.clients if c != client_id))


@dataclass
class Transcript:
    round: int
    digests: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)
    reconstructions: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "masked_digests": {str(k): v for k, v in sorted(self.digests.items())},
            "dropped": sorted(self.dropped),
            "reconstructions": self.reconstructions,
        }


def unmask_sum(masked: Sequence[MaskedUpdate], dropped: Iterable[int], setup: RoundSetup,
               spec: SecAggSpec, transcript: Transcript | None = None) -> np.ndarray:
    """Integer sum (mod 2^32) of the survivors' quantized vectors."""
    dropped = set(dropped)
    survivors = [m for m in masked if m.client_id not in dropped]
    if not survivors:
        raise ProtocolError("no surviving clients")
    survivor_ids = {m.client_id for m in survivors}
    missing = set(setup.clients) - survivor_ids - dropped
    dropped |= missing
    total = np.zeros(survivors[0].vector.size, dtype=np.uint32)
    for m in survivors:
        if m.vector.size != total.size:
            raise ProtocolError(f"client {m.client_id} sent a vector of the wrong length")
        total += m.vector
        if transcript is not None:
            transcript.digests[m.client_id] = m.digest()
    for d in sorted(dropped):
        held = [s for h in sorted(survivor_ids) for s in setup.shares.get(h, []) if s.owner == d]
        try:
            sk = reconstruct_seed(held, spec.reconstruction_threshold)
        except ProtocolError as exc:
            raise ProtocolError(f"cannot recover dropped client {d}: {exc}") from None
        if transcript is not None:
            transcript.dropped.append(d)
            transcript.reconstructions.append(
                {"owner": d, "holders": sorted(s.holder for s in held[: spec.reconstruction_threshold])}
            )
        # Survivor j added +PRG(s_jd) when d > j and -PRG(s_jd) when d < j.
        # Rebuild d's view of those pairs and add it: d's signs are the opposite.
        keys, signs = _mask_terms(d, sk, sorted(survivor_ids), setup.public_keys, setup.round)
        total += _accel.pairwise_mask(keys, signs, total.size)
    return total


def secure_aggregate(masked: Sequence[MaskedUpdate], dropped: Iterable[int], setup: RoundSetup,
                     spec: SecAggSpec, transcript: Transcript | None = None) -> np.ndarray:
    """Mean of the survivors' (clipped, quantized) update vectors."""
    dropped = set(dropped)
    total = unmask_sum(masked, dropped, setup, spec, transcript)
    count = sum(1 for m in masked if m.client_id not in dropped)
    return dequantize(total, spec, count) / count


def bits_from_range(quantization_range: int) -> int:
    bits = int(round(math.log2(quantization_range)))
    if 1 << bits != quantization_range:
        raise ConfigError(f"quantization_range must be a power of two, got {quantization_range}")
    return bits

