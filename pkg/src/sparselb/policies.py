"""Routing policies: how a scheduler disposes of arriving packets.

Every policy turns the queue snapshot taken at the start of an epoch into
a frozen DecisionProfile for the engine.  Baselines:

* jsq  - send everything to the shortest accessible queue (own included);
  ties prefer the scheduler's own queue, then the lowest node index.
* sed  - shortest expected delay, argmin (fill + 1) / service_rate over
  the accessible set, same tie-breaking; equals jsq when rates are equal.
* rnd  - route each packet uniformly over the accessible set (own
  included), i.e. forward with probability degree / (degree + 1).
* own  - keep everything.

The learned family maps an observation to a vector of offload
probabilities indexed by the scheduler's own fill level; each scheduler
then applies the entry matching its own queue.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import PolicyParameters, load_policy_parameters, policy_zeta
from .simulator import DecisionProfile, empirical_distribution

__all__ = [
    "DecisionRule",
    "jsq_rule",
    "rnd_rule",
    "own_rule",
    "sed_rule",
    "mfr_rule",
    "JsqPolicy",
    "RndPolicy",
    "OwnPolicy",
    "SedPolicy",
    "StaticZetaPolicy",
    "MfrPolicy",
    "threshold_zeta",
    "make_policy",
]


@dataclass(frozen=True)
class DecisionRule:
    """Single-agent rule: offload probabilities by own fill level, or an
    explicit target distribution over the accessible set."""

    offload: np.ndarray | None = None
    target: dict | None = None

    def __post_init__(self) -> None:
        if (self.offload is None) == (self.target is None):
            raise ValueError("rule needs exactly one of offload / target")
        if self.target is not None:
            total = float(sum(self.target.values()))
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"target weights sum to {total}, not 1")


# ---- single-agent rule constructors ----


def _accessible(agent: int, topology) -> list[int]:
    return [agent, *topology.neighbors[agent]]


def jsq_rule(agent: int, queues, topology) -> DecisionRule:
    q = np.asarray(queues)
    cand = _accessible(agent, topology)
    best = min(cand, key=lambda j: (q[j], 0 if j == agent else 1, j))
    return DecisionRule(target={int(best): 1.0})


def sed_rule(agent: int, queues, topology, service_rates) -> DecisionRule:
    q = np.asarray(queues, dtype=np.float64)
    mu = np.asarray(service_rates, dtype=np.float64)
    cand = _accessible(agent, topology)
    best = min(cand, key=lambda j: ((q[j] + 1.0) / mu[j], 0 if j == agent else 1, j))
    return DecisionRule(target={int(best): 1.0})


def rnd_rule(agent: int, topology) -> DecisionRule:
    cand = _accessible(agent, topology)
    p = 1.0 / len(cand)
    return DecisionRule(target={int(j): p for j in cand})


def own_rule(agent: int) -> DecisionRule:
    return DecisionRule(target={int(agent): 1.0})


def mfr_rule(observation, params: PolicyParameters) -> DecisionRule:
    """Offload probabilities per own fill level for one observation."""
    return DecisionRule(offload=np.asarray(policy_zeta(params, observation)))


# ---- whole-network policies ----


class _ArgminPolicy:
    """Shared machinery for jsq/sed: rowwise argmin over candidate scores."""

    name = "argmin"

    def _scores(self, queues, topology, service_rates) -> np.ndarray:
        raise NotImplementedError

    def profile(self, queues, topology, service_rates) -> DecisionProfile:
        n = topology.n_nodes
        scores = self._scores(np.asarray(queues), topology,
                              np.asarray(service_rates, dtype=np.float64))
        pad = topology.padded_neighbors
        own = np.arange(n, dtype=np.int64)
        if pad.shape[1] == 0:
            return DecisionProfile(targets=own)
        cand = np.concatenate([own[:, None], np.where(pad >= 0, pad, 0)], axis=1)
        vals = scores[cand]
        vals[:, 1:][~topology.padded_mask] = np.inf
        # first minimal column wins: own first, then neighbors in index order
        targets = cand[own, np.argmin(vals, axis=1)]
        return DecisionProfile(targets=targets)


class JsqPolicy(_ArgminPolicy):
    name = "jsq"

    def _scores(self, queues, topology, service_rates):
        return queues.astype(np.float64)


class SedPolicy(_ArgminPolicy):
    name = "sed"

    def _scores(self, queues, topology, service_rates):
        if np.any(service_rates <= 0):
            raise ValueError("sed needs positive service rates")
        return (queues + 1.0) / service_rates


class RndPolicy:
    name = "rnd"

    def profile(self, queues, topology, service_rates) -> DecisionProfile:
        deg = topology.degrees.astype(np.float64)
        return DecisionProfile(offload=deg / (deg + 1.0))


class OwnPolicy:
    name = "own"

    def profile(self, queues, topology, service_rates) -> DecisionProfile:
        return DecisionProfile(offload=np.zeros(topology.n_nodes))


class StaticZetaPolicy:
    """Fixed offload probabilities per own fill level, applied every epoch."""

    def __init__(self, zeta, name: str = "static"):
        self.zeta = np.asarray(zeta, dtype=np.float64)
        if np.any(self.zeta < 0) or np.any(self.zeta > 1):
            raise ValueError("offload probabilities must lie in [0, 1]")
        self.name = name

    def profile(self, queues, topology, service_rates) -> DecisionProfile:
        q = np.asarray(queues, dtype=np.int64)
        if q.max(initial=0) >= self.zeta.size:
            raise ValueError("queue fill exceeds the rule's table")
        return DecisionProfile(offload=self.zeta[q])


def threshold_zeta(buffer: int) -> np.ndarray:
    """Offload only when the own queue is full."""
    z = np.zeros(buffer + 1)
    z[buffer] = 1.0
    return z


class MfrPolicy:
    """Learned policy evaluated deterministically.

    Observation handling follows the parameters' observation_mode:
    ``global`` feeds the systemwide fill distribution through the network
    once and broadcasts the resulting offload table; ``neighborhood`` and
    ``ownstate`` build one observation per scheduler (neighbor fill
    distribution resp. one-hot own fill) for decentralized execution.
    """

    def __init__(self, params: PolicyParameters, name: str = "mfr"):
        self.params = params
        self.name = name

    def observations(self, queues, topology) -> np.ndarray:
        b = self.params.buffer
        q = np.asarray(queues, dtype=np.int64)
        mode = self.params.observation_mode
        if mode == "global":
            return empirical_distribution(q, b)
        n = topology.n_nodes
        if mode == "ownstate":
            obs = np.zeros((n, b + 1))
            obs[np.arange(n), q] = 1.0
            return obs
        if mode == "neighborhood":
            obs = np.zeros((n, b + 1))
            pad = topology.padded_neighbors
            for c in range(pad.shape[1]):
                rows = np.flatnonzero(topology.padded_mask[:, c])
                np.add.at(obs, (rows, q[pad[rows, c]]), 1.0)
            deg = topology.degrees
            has = deg > 0
            obs[has] /= deg[has, None]
            # an isolated scheduler falls back to its own fill level
            lone = np.flatnonzero(~has)
            obs[lone, q[lone]] = 1.0
            return obs
        raise ValueError(f"unknown observation_mode {mode!r}")

    def profile(self, queues, topology, service_rates) -> DecisionProfile:
        q = np.asarray(queues, dtype=np.int64)
        obs = self.observations(q, topology)
        if obs.ndim == 1:
            zeta = policy_zeta(self.params, obs)
            return DecisionProfile(offload=zeta[q])
        zeta = policy_zeta(self.params, obs)
        return DecisionProfile(offload=zeta[np.arange(topology.n_nodes), q])


def make_policy(spec, buffer: int):
    """Build a policy from a config entry (string or {kind: ...} mapping)."""
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec["kind"].lower()
    if kind == "jsq":
        return JsqPolicy()
    if kind == "sed":
        return SedPolicy()
    if kind == "rnd":
        return RndPolicy()
    if kind == "own":
        return OwnPolicy()
    if kind == "threshold":
        return StaticZetaPolicy(threshold_zeta(buffer), name="threshold")
    if kind == "static":
        return StaticZetaPolicy(np.asarray(spec["zeta"], dtype=np.float64))
    if kind == "mfr":
        params = load_policy_parameters(spec["checkpoint"])
        if params.buffer != buffer:
            raise ValueError("checkpoint buffer size differs from the experiment")
        name = spec.get("name", "mfr")
        return MfrPolicy(params, name=name)
    raise ValueError(f"unknown policy {spec!r}")
