"""Exact event-level simulation of the queueing network.

One decision epoch freezes the routing behavior of every scheduler; the
network then runs as a continuous-time Markov chain over [0, delta_t):
packets arrive at each scheduler at the shared modulated rate, are routed
per the frozen rule, and each nonempty queue serves at its service rate.
Arrivals to a full queue are dropped and attributed to that queue.

Two engines produce samples of the same law:

* the default bank engine exploits the fact that per-packet routing thins
  each scheduler's Poisson stream into independent per-queue Poisson
  streams at the effective rates, so every queue can be advanced as an
  independent birth-death chain; the inner loop is vectorized across
  queues (and is what makes systems of several thousand queues cheap);
* the reference engine runs the literal global race of competing
  exponential clocks with per-packet routing, one event at a time.  It is
  slow and exists to back the distributional cross-checks in the tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernel as _kernel
from .traffic import ArrivalRegime, regime_init, regime_step

__all__ = [
    "SystemParams",
    "DecisionProfile",
    "EpochOutcome",
    "EpisodeResult",
    "empirical_distribution",
    "simulate_queue_bank",
    "run_epoch",
    "run_episode",
]


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters shared by simulator, environment and harness."""

    buffer: int = 5
    service_rate: float | tuple = 1.0
    rate_high: float = 0.9
    rate_low: float = 0.6
    p_high_to_low: float = 0.2
    p_low_to_high: float = 0.5
    start_distribution: tuple | None = None

    def __post_init__(self) -> None:
        if self.buffer < 1:
            raise ValueError("buffer must be >= 1")
        if self.start_distribution is not None:
            nu = np.asarray(self.start_distribution, dtype=np.float64)
            if nu.shape != (self.buffer + 1,) or np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-9:
                raise ValueError("start_distribution must be a distribution over {0..buffer}")

    def service_rates(self, n: int) -> np.ndarray:
        rates = np.asarray(self.service_rate, dtype=np.float64)
        if rates.ndim == 0:
            rates = np.full(n, float(rates))
        if rates.shape != (n,):
            raise ValueError("service_rate must be a scalar or one value per queue")
        if np.any(rates < 0):
            raise ValueError("service rates must be nonnegative")
        return rates


@dataclass(frozen=True)
class DecisionProfile:
    """Frozen per-epoch routing for all schedulers.

    Exactly one of the two fields is set: ``offload`` gives each
    scheduler's probability of forwarding an arriving packet to a
    uniformly chosen neighbor (keep otherwise), ``targets`` routes every
    packet of scheduler i deterministically to queue targets[i].
    """

    offload: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __post_init__(self) -> None:
        if (self.offload is None) == (self.targets is None):
            raise ValueError("profile needs exactly one of offload / targets")


@dataclass(frozen=True)
class EpochOutcome:
    next_queues: np.ndarray
    drops: np.ndarray
    arrivals: np.ndarray
    services: np.ndarray


@dataclass
class EpisodeResult:
    drop_counts: np.ndarray        # (T,) packets dropped system-wide per epoch
    mean_drops_per_epoch: np.ndarray  # (T,) drop_counts / n_nodes
    total_drops: float             # sum of mean_drops_per_epoch (episode objective)
    distributions: np.ndarray      # (T+1, buffer+1) empirical queue distribution
    rates: np.ndarray              # (T,) shared arrival rate during each epoch
    seed: object = None
    trace: list = field(default_factory=list)


def empirical_distribution(queues, buffer: int) -> np.ndarray:
    """Fraction of queues at each fill level 0..buffer."""
    q = np.asarray(queues, dtype=np.int64)
    if q.size == 0:
        raise ValueError("need at least one queue")
    if q.min() < 0 or q.max() > buffer:
        raise ValueError("queue lengths outside {0..buffer}")
    return np.bincount(q, minlength=buffer + 1) / q.size


def profile_rates(profile: DecisionProfile, topology, base_rate: float) -> np.ndarray:
    """Per-queue Poisson arrival rates induced by a frozen profile."""
    if profile.targets is not None:
        counts = np.bincount(np.asarray(profile.targets, dtype=np.int64),
                             minlength=topology.n_nodes)
        return base_rate * counts.astype(np.float64)
    return _kernel.effective_rates(topology, profile.offload, base_rate)


# ---- default engine: independent per-queue birth-death bank ----


def simulate_queue_bank(queues, arrival_rates, service_rates, buffer: int,
                        delta_t: float, rng: np.random.Generator):
    """Advance independent bounded queues over one epoch; exact sampling.

    Uses one uniformized clock per queue at rate arrival + service: each
    tick is an arrival with the arrival fraction (dropped when the queue
    is full) and otherwise a service attempt (a no-op on an empty queue).
    Ticks are Poisson, so arrivals per queue are Poisson at the arrival
    rate and the skeleton walk is processed tick-by-tick vectorized over
    all queues.

    Returns (next_queues, drops, arrivals, services).
    """
    q = np.asarray(queues, dtype=np.int64).copy()
    lam = np.asarray(arrival_rates, dtype=np.float64)
    mu = np.asarray(service_rates, dtype=np.float64)
    n = q.size
    total = lam + mu
    drops = np.zeros(n, dtype=np.int64)
    arrivals = np.zeros(n, dtype=np.int64)
    services = np.zeros(n, dtype=np.int64)
    counts = rng.poisson(total * delta_t)
    kmax = int(counts.max()) if n else 0
    if kmax == 0:
        return q, drops, arrivals, services
    p_arrive = np.divide(lam, total, out=np.zeros_like(lam), where=total > 0)
    u = rng.random((kmax, n))
    one = np.int64(1)
    for s in range(kmax):
        live = counts > s
        arr = live & (u[s] < p_arrive)
        svc = live & ~arr
        full = q >= buffer
        hit = arr & full
        grow = arr & ~full
        shrink = svc & (q > 0)
        np.add(drops, one, out=drops, where=hit)
        np.add(arrivals, one, out=arrivals, where=arr)
        np.add(services, one, out=services, where=shrink)
        np.add(q, one, out=q, where=grow)
        np.subtract(q, one, out=q, where=shrink)
    return q, drops, arrivals, services


# ---- reference engine: literal global clock race ----


def _gillespie_epoch(queues, profile: DecisionProfile, topology, base_rate: float,
                     service_rates, buffer: int, delta_t: float,
                     rng: np.random.Generator, holding_out: list | None = None):
    q = np.asarray(queues, dtype=np.int64).copy()
    n = q.size
    mu = np.asarray(service_rates, dtype=np.float64)
    drops = np.zeros(n, dtype=np.int64)
    arrivals = np.zeros(n, dtype=np.int64)
    services = np.zeros(n, dtype=np.int64)
    if profile.offload is not None:
        # degree-0 schedulers have nowhere to forward
        off = np.where(topology.degrees > 0, np.asarray(profile.offload, float), 0.0)
    lam_total = n * base_rate
    t = 0.0
    while True:
        svc_total = float(mu[q > 0].sum())
        total = lam_total + svc_total
        if total <= 0.0:
            break
        dt = rng.exponential(1.0 / total)
        if holding_out is not None:
            holding_out.append(dt)
        t += dt
        if t >= delta_t:
            break
        u = rng.random() * total
        if u < lam_total:
            i = int(rng.integers(n))
            if profile.targets is not None:
                j = int(profile.targets[i])
            elif off[i] > 0.0 and rng.random() < off[i]:
                nb = topology.neighbors[i]
                j = int(nb[int(rng.integers(len(nb)))])
            else:
                j = i
            arrivals[j] += 1
            if q[j] >= buffer:
                drops[j] += 1
            else:
                q[j] += 1
        else:
            busy = np.flatnonzero(q > 0)
            w = mu[busy]
            j = int(busy[np.searchsorted(np.cumsum(w), u - lam_total, side="right")])
            q[j] -= 1
            services[j] += 1
    return q, drops, arrivals, services


def run_epoch(queues, profile, topology, base_rate: float, service_rates,
              buffer: int, delta_t: float, rng: np.random.Generator,
              engine: str = "bank") -> EpochOutcome:
    """Advance the whole network by one epoch under a frozen profile."""
    if isinstance(profile, np.ndarray):
        profile = DecisionProfile(offload=profile)
    if delta_t <= 0.0:
        raise ValueError("delta_t must be positive")
    if engine == "bank":
        lam = profile_rates(profile, topology, base_rate)
        nq, drops, arrivals, services = simulate_queue_bank(
            queues, lam, service_rates, buffer, delta_t, rng)
    elif engine == "reference":
        nq, drops, arrivals, services = _gillespie_epoch(
            queues, profile, topology, base_rate, service_rates, buffer, delta_t, rng)
    else:
        raise ValueError(f"unknown engine {engine!r}")
    return EpochOutcome(nq, drops, arrivals, services)


# ---- episodes ----


def init_queues(params: SystemParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """All queues empty unless a start distribution is configured."""
    if params.start_distribution is None:
        return np.zeros(n, dtype=np.int64)
    nu = np.asarray(params.start_distribution, dtype=np.float64)
    return rng.choice(params.buffer + 1, size=n, p=nu).astype(np.int64)


def run_episode(topology, policy, horizon: int, delta_t: float,
                params: SystemParams, seed, engine: str = "bank",
                record_trace: bool = False) -> EpisodeResult:
    """Run one episode of ``horizon`` epochs under a fixed policy.

    ``policy`` supplies a frozen DecisionProfile from the queue snapshot at
    the start of every epoch; the shared arrival phase is redrawn after
    each epoch.  With a constant-rule policy this consumes random numbers
    in exactly the same order as the control environment's reset/step
    loop, so the two agree bit for bit under one seed.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = topology.n_nodes
    mu = params.service_rates(n)
    q = init_queues(params, n, rng)
    regime = regime_init(params.rate_high, params.rate_low,
                         params.p_high_to_low, params.p_low_to_high, rng)
    b = params.buffer
    drop_counts = np.zeros(horizon, dtype=np.int64)
    rates = np.zeros(horizon)
    dists = np.zeros((horizon + 1, b + 1))
    trace: list = []
    for t in range(horizon):
        dists[t] = empirical_distribution(q, b)
        rates[t] = regime.rate
        profile = policy.profile(q, topology, mu)
        out = run_epoch(q, profile, topology, regime.rate, mu, b, delta_t, rng, engine)
        drop_counts[t] = int(out.drops.sum())
        if record_trace:
            trace.append({
                "epoch": t,
                "rate": regime.rate,
                "drops": int(out.drops.sum()),
                "arrivals": int(out.arrivals.sum()),
                "services": int(out.services.sum()),
                "distribution": dists[t].tolist(),
            })
        q = out.next_queues
        regime = regime_step(regime, rng)
    dists[horizon] = empirical_distribution(q, b)
    mean_drops = drop_counts / n
    return EpisodeResult(
        drop_counts=drop_counts,
        mean_drops_per_epoch=mean_drops,
        total_drops=float(mean_drops.sum()),
        distributions=dists,
        rates=rates,
        seed=None if isinstance(seed, np.random.Generator) else seed,
        trace=trace,
    )
