"""Per-queue transition kernels for one decision epoch.

With decision rules frozen for an epoch, each queue evolves as an
independent birth-death chain on {0, ..., B}: packets arrive at the queue's
effective rate and leave at its service rate.  This module builds the
generator of that chain, computes the exact epoch transition law through
the matrix exponential, and computes the expected number of dropped
packets via an augmented absorbing counter state.

Conventions: generators are column-oriented, Q[i, j] is the rate from
state j to state i, so columns sum to zero and the epoch law is
exp(Q * dt) applied to a basis vector.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "effective_rates",
    "EpochKernel",
    "build_generator",
    "epoch_law",
    "expected_drops",
    "matrix_exponential",
]


def effective_rates(topology, offload, base_rate: float) -> np.ndarray:
    """Per-queue arrival rates induced by offload probabilities.

    Scheduler i keeps a packet with probability 1 - offload[i] and otherwise
    forwards it to a uniformly chosen neighbor, so queue i collects

        base_rate * (1 - offload[i] + sum_{j in N(i)} offload[j] / deg(j)).

    Nodes without neighbors cannot offload; their probability is treated as
    zero.  The neighbor inflow is accumulated with a balanced pairwise
    reduction over the padded neighbor matrix, which keeps the total exactly
    base_rate on regular graphs whenever every share is a dyadic multiple
    of the offload value (degrees 2, 3 and 4 in particular).
    """
    a = np.asarray(offload, dtype=np.float64)
    if a.shape != (topology.n_nodes,):
        raise ValueError("offload must have one entry per node")
    if np.any(a < 0.0) or np.any(a > 1.0):
        raise ValueError("offload probabilities must lie in [0, 1]")
    deg = topology.degrees
    a = np.where(deg > 0, a, 0.0)
    share = np.divide(a, deg, out=np.zeros_like(a), where=deg > 0)

    pad = topology.padded_neighbors
    if pad.shape[1] == 0:
        inflow = np.zeros(topology.n_nodes)
    else:
        cols = np.where(topology.padded_mask, share[np.where(pad >= 0, pad, 0)], 0.0)
        while cols.shape[1] > 1:
            if cols.shape[1] % 2:
                cols = np.concatenate([cols, np.zeros((cols.shape[0], 1))], axis=1)
            cols = cols[:, 0::2] + cols[:, 1::2]
        inflow = cols[:, 0]
    return base_rate * ((1.0 - a) + inflow)


@dataclass(frozen=True)
class EpochKernel:
    """Frozen single-queue dynamics for one epoch.

    generator is the (B+1)x(B+1) birth-death generator; augmented appends an
    absorbing counter state fed at the arrival rate from the full state, so
    the counter's mass after one epoch equals the expected drop count.  The
    augmented matrix is not a proper generator (its full-state column sums
    to the arrival rate, not zero).
    """

    arrival_rate: float
    service_rate: float
    buffer: int
    epoch_length: float
    generator: np.ndarray
    augmented: np.ndarray


def build_generator(arrival_rate: float, service_rate: float, buffer: int,
                    epoch_length: float = 1.0) -> EpochKernel:
    if arrival_rate < 0.0 or service_rate < 0.0:
        raise ValueError("rates must be nonnegative")
    if buffer < 1:
        raise ValueError("buffer must be >= 1")
    if epoch_length <= 0.0:
        raise ValueError("epoch_length must be positive")
    m = buffer + 1
    q = np.zeros((m, m))
    for k in range(buffer):
        q[k + 1, k] += arrival_rate        # arrival while space remains
        q[k, k + 1] += service_rate        # service while nonempty
    np.fill_diagonal(q, 0.0)
    q[np.diag_indices(m)] = -q.sum(axis=0)

    aug = np.zeros((m + 1, m + 1))
    aug[:m, :m] = q
    aug[m, buffer] = arrival_rate          # arrivals seen by a full queue
    return EpochKernel(arrival_rate, service_rate, buffer, epoch_length, q, aug)


def epoch_law(kernel: EpochKernel, start_state: int) -> np.ndarray:
    """Distribution of the queue length after one epoch from start_state."""
    _check_state(kernel, start_state)
    p = _expm_uniformization(kernel.generator, kernel.epoch_length)
    return p[:, start_state].copy()


def expected_drops(kernel: EpochKernel, start_state: int) -> float:
    """Expected packets dropped over one epoch from start_state.

    Equals the arrival rate times the time-integrated probability of the
    queue being full, read off the absorbing counter of the augmented
    matrix exponential.
    """
    _check_state(kernel, start_state)
    p = _expm_scaling_squaring(kernel.augmented * kernel.epoch_length)
    return float(p[kernel.buffer + 1, start_state])


def _check_state(kernel: EpochKernel, start_state: int) -> None:
    if not (0 <= start_state <= kernel.buffer):
        raise ValueError("start_state outside {0, ..., buffer}")


# ---- matrix exponentials ----


def matrix_exponential(m, t: float = 1.0) -> np.ndarray:
    """exp(m * t); uniformization for proper generators, series otherwise.

    A proper (column) generator has nonnegative off-diagonal entries and
    zero column sums; uniformization preserves nonnegativity and column
    sums exactly up to the truncated tail.  Any other matrix goes through
    scaling and squaring of the Taylor series.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    if _is_generator(a):
        return _expm_uniformization(a, t)
    return _expm_scaling_squaring(a * t)


def _is_generator(a: np.ndarray) -> bool:
    off = a - np.diag(np.diag(a))
    if np.any(off < -1e-12):
        return False
    col = a.sum(axis=0)
    scale = max(1.0, float(np.abs(a).max()))
    return bool(np.all(np.abs(col) <= 1e-9 * scale))


def _expm_uniformization(q: np.ndarray, t: float) -> np.ndarray:
    """Poisson-weighted power series on the uniformized transition matrix.

    Truncated where the Poisson(r*t) tail drops below 1e-12.  Falls back to
    scaling and squaring when r*t is large enough to underflow the weights.
    """
    n = q.shape[0]
    rate = float(-q.diagonal().min())
    rt = rate * t
    if rt == 0.0:
        return np.eye(n)
    if rt > 200.0:
        return _expm_scaling_squaring(q * t)
    p = np.eye(n) + q / rate
    out = np.zeros_like(q)
    term = np.eye(n)
    weight = math.exp(-rt)
    acc = weight
    out += weight * term
    k = 0
    while 1.0 - acc > 1e-12:
        k += 1
        term = p @ term
        weight *= rt / k
        acc += weight
        out += weight * term
        if k > 10_000:
            raise RuntimeError("uniformization failed to converge")
    return out


def _expm_scaling_squaring(a: np.ndarray) -> np.ndarray:
    """Taylor series after halving the matrix below unit norm, then squaring."""
    n = a.shape[0]
    norm = float(np.linalg.norm(a, 1))
    squarings = max(0, int(math.ceil(math.log2(norm)))) if norm > 1.0 else 0
    b = a / (2.0 ** squarings)
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, 60):
        term = term @ b / k
        out += term
        if float(np.abs(term).max()) < 1e-16 * max(1.0, float(np.abs(out).max())):
            break
    for _ in range(squarings):
        out = out @ out
    return out
