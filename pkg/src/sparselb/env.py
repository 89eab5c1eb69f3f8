"""Single-controller environment over the queueing network.

One step covers one decision epoch: the controller observes a summary of
the queue fills, broadcasts a table of offload probabilities indexed by
own fill level, every scheduler applies its entry, the network runs for
delta_t time units, and the reward is the negative number of dropped
packets per scheduler.  The shared arrival phase is redrawn after every
epoch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernel import build_generator, effective_rates, expected_drops
from .simulator import (DecisionProfile, SystemParams, empirical_distribution,
                        init_queues, run_epoch)
from .traffic import regime_init, regime_step

__all__ = ["McTransition", "LoadBalanceEnv", "discounted_return"]


@dataclass(frozen=True)
class McTransition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray


class LoadBalanceEnv:
    """Finite-horizon epoch-level control of the load-balancing network."""

    def __init__(self, topology, params: SystemParams, delta_t: float,
                 horizon: int, observation_mode: str = "global",
                 designated_agent: int = 0, engine: str = "bank",
                 observe_rate: bool = False, reward_mode: str = "realized"):
        if delta_t <= 0:
            raise ValueError("delta_t must be positive")
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if observation_mode not in ("global", "neighborhood", "ownstate"):
            raise ValueError(f"unknown observation_mode {observation_mode!r}")
        if reward_mode not in ("realized", "expected"):
            raise ValueError(f"unknown reward_mode {reward_mode!r}")
        if not (0 <= designated_agent < topology.n_nodes):
            raise ValueError("designated_agent out of range")
        self.topology = topology
        self.params = params
        self.delta_t = float(delta_t)
        self.horizon = int(horizon)
        self.observation_mode = observation_mode
        self.designated_agent = designated_agent
        self.engine = engine
        self.observe_rate = observe_rate
        self.reward_mode = reward_mode
        self._mu = params.service_rates(topology.n_nodes)
        self._rng = None
        self.queues = None
        self.regime = None
        self.epoch_index = 0

    # ---- observation ----

    @property
    def observation_dim(self) -> int:
        return self.params.buffer + 1 + (1 if self.observe_rate else 0)

    def observation(self) -> np.ndarray:
        b = self.params.buffer
        q = self.queues
        mode = self.observation_mode
        if mode == "global":
            obs = empirical_distribution(q, b)
        elif mode == "ownstate":
            obs = np.zeros(b + 1)
            obs[q[self.designated_agent]] = 1.0
        else:
            nbrs = self.topology.neighbors[self.designated_agent]
            if nbrs:
                obs = np.bincount(q[list(nbrs)], minlength=b + 1) / len(nbrs)
            else:
                obs = np.zeros(b + 1)
                obs[q[self.designated_agent]] = 1.0
        if self.observe_rate:
            obs = np.append(obs, self.regime.rate / self.params.rate_high)
        return obs

    @property
    def done(self) -> bool:
        return self.epoch_index >= self.horizon

    # ---- dynamics ----

    def reset(self, seed) -> np.ndarray:
        self._rng = seed if isinstance(seed, np.random.Generator) \
            else np.random.default_rng(seed)
        self.queues = init_queues(self.params, self.topology.n_nodes, self._rng)
        self.regime = regime_init(self.params.rate_high, self.params.rate_low,
                                  self.params.p_high_to_low, self.params.p_low_to_high,
                                  self._rng)
        self.epoch_index = 0
        return self.observation()

    def step(self, zeta) -> McTransition:
        if self.queues is None:
            raise RuntimeError("call reset before step")
        if self.done:
            raise RuntimeError("episode finished; call reset")
        zeta = np.asarray(zeta, dtype=np.float64)
        if zeta.shape != (self.params.buffer + 1,):
            raise ValueError("action must hold one offload probability per fill level")
        if np.any(zeta < 0.0) or np.any(zeta > 1.0):
            warnings.warn("offload probabilities clamped into [0, 1]")
            zeta = np.clip(zeta, 0.0, 1.0)
        obs = self.observation()
        profile = DecisionProfile(offload=zeta[self.queues])
        if self.reward_mode == "expected":
            reward = -self._expected_epoch_drops(profile) / self.topology.n_nodes
        out = run_epoch(self.queues, profile, self.topology, self.regime.rate,
                        self._mu, self.params.buffer, self.delta_t, self._rng,
                        self.engine)
        if self.reward_mode == "realized":
            reward = -float(out.drops.sum()) / self.topology.n_nodes
        self.queues = out.next_queues
        self.regime = regime_step(self.regime, self._rng)
        self.epoch_index += 1
        return McTransition(obs, zeta, reward, self.observation())

    def _expected_epoch_drops(self, profile: DecisionProfile) -> float:
        # variance-reduced reward: conditional expectation given the
        # epoch-start configuration, from the per-queue transition kernel
        rates = effective_rates(self.topology, profile.offload, self.regime.rate)
        b, dt = self.params.buffer, self.delta_t
        cache: dict = {}
        total = 0.0
        for lam, mu, z in zip(rates, self._mu, self.queues):
            key = (float(lam), float(mu), int(z))
            if key not in cache:
                kern = build_generator(lam, mu, b, dt)
                cache[key] = expected_drops(kern, int(z))
            total += cache[key]
        return total


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma**t * reward_t."""
    total = 0.0
    for r in reversed(np.asarray(rewards, dtype=np.float64)):
        total = r + gamma * total
    return float(total)
