"""Independent reference implementations used by unit and acceptance tests.

These are written for clarity rather than speed and share no code with the
package beyond the public PRG (partition shuffles are defined in terms of it).
"""

import math

import mpmath
import numpy as np

from fedsim.rng import Stream


def greedy_retrace(site_counts, n_clients):
    """Step-by-step greedy assignment: selection-sort the sites, then scan for the lightest client."""
    remaining = [(s, c) for s, c in site_counts.items() if c > 0]
    ordered = []
    while remaining:
        best = 0
        for i in range(1, len(remaining)):
            s, c = remaining[i]
            bs, bc = remaining[best]
            if c > bc or (c == bc and s < bs):
                best = i
        ordered.append(remaining.pop(best))
    clients = [[] for _ in range(n_clients)]
    totals = [0] * n_clients
    for site, count in ordered:
        target = 0
        for k in range(1, n_clients):
            if totals[k] < totals[target]:
                target = k
        clients[target].append(site)
        totals[target] += count
    return clients


def partition_retrace(site_ids, n_clients, ratio, seed):
    """Record indices per client as (train, val) lists, following the algorithm line by line."""
    counts = {}
    for s in site_ids:
        counts[s] = counts.get(s, 0) + 1
    out = []
    for k, sites in enumerate(greedy_retrace(counts, n_clients)):
        owned = set(sites)
        members = [i for i, s in enumerate(site_ids) if s in owned]
        perm = Stream(seed, "shuffle", k).permutation(len(members))
        shuffled = [members[j] for j in perm]
        split = int(math.floor(len(shuffled) * ratio))
        out.append((shuffled[:split], shuffled[split:]))
    return out


def weighted_mean(vectors, counts):
    total = sum(counts)
    acc = np.zeros_like(vectors[0], dtype=np.float64)
    for v, n in zip(vectors, counts):
        acc = acc + (n / total) * v
    return acc


def central_differences(fn, vector, h=1e-5):
    grad = np.empty_like(vector)
    for i in range(vector.size):
        up, down = vector.copy(), vector.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2 * h)
    return grad


def concordance_auc(labels, scores):
    """P(score_pos > score_neg) + 0.5 P(tie), by enumerating every pair."""
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else 0.5 if p == n else 0.0
    return wins / (len(pos) * len(neg))


def epsilon_mp(eps0, alpha, t, eps_max=None, eps_min=None):
    with mpmath.workdps(50):
        value = mpmath.mpf(eps0) * (1 / mpmath.mpf(alpha)) ** (t - 1)
        if eps_max is not None:
            value = min(value, mpmath.mpf(eps_max))
        if eps_min is not None:
            value = max(value, mpmath.mpf(eps_min))
        return float(value)


def sigma_mp(c, eps, delta):
    with mpmath.workdps(50):
        d = mpmath.mpf(delta)
        return float(mpmath.mpf(c) / mpmath.mpf(eps) * mpmath.sqrt(2 * mpmath.log(mpmath.mpf("1.25") / d)))


def quantize_plain(v, r, bits):
    """Integer quantization with explicit half-even rounding via Python's round()."""
    levels = (1 << bits) - 1
    out = []
    for x in v:
        x = min(max(float(x), -r), r)
        out.append(round((x + r) / (2 * r) * levels))
    return out
