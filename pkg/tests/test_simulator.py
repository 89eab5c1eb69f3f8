from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from sparselb.kernel import build_generator, effective_rates, epoch_law, \
    expected_drops
from sparselb.policies import OwnPolicy, RndPolicy, StaticZetaPolicy, threshold_zeta
from sparselb.simulator import (DecisionProfile, EpochOutcome, SystemParams,
                                empirical_distribution, init_queues,
                                profile_rates, run_epoch, run_episode,
                                simulate_queue_bank)
from sparselb.simulator import _gillespie_epoch
from sparselb.topology import build_cyc1d


def test_empirical_distribution_example():
    queues = np.array([0, 1, 1, 5, 5, 5])
    want = np.array([1, 2, 0, 0, 0, 3]) / 6.0
    assert np.array_equal(empirical_distribution(queues, 5), want)


def test_empirical_distribution_validation():
    with pytest.raises(ValueError):
        empirical_distribution(np.array([0, 7]), 5)
    with pytest.raises(ValueError):
        empirical_distribution(np.array([], dtype=int), 5)


def test_system_params_validation():
    with pytest.raises(ValueError):
        SystemParams(buffer=0)
    with pytest.raises(ValueError):
        SystemParams(start_distribution=(0.5, 0.2))
    p = SystemParams(service_rate=(1.0, 2.0, 1.0))
    assert np.array_equal(p.service_rates(3), np.array([1.0, 2.0, 1.0]))
    with pytest.raises(ValueError):
        p.service_rates(4)


def test_decision_profile_validation():
    with pytest.raises(ValueError):
        DecisionProfile()
    with pytest.raises(ValueError):
        DecisionProfile(offload=np.zeros(3), targets=np.zeros(3, dtype=int))


def test_profile_rates_targets():
    topo = build_cyc1d(5)
    targets = np.array([1, 1, 1, 4, 4])
    rates = profile_rates(DecisionProfile(targets=targets), topo, 0.5)
    assert np.array_equal(rates, 0.5 * np.array([0, 3, 0, 0, 2]))


def test_profile_rates_offload_matches_kernel():
    topo = build_cyc1d(7)
    rng = np.random.default_rng(2)
    a = rng.random(7)
    got = profile_rates(DecisionProfile(offload=a), topo, 0.9)
    assert np.array_equal(got, effective_rates(topo, a, 0.9))


@pytest.mark.parametrize("engine", ["bank", "reference"])
def test_flow_conservation(engine):
    topo = build_cyc1d(9)
    params = SystemParams()
    mu = params.service_rates(9)
    rng = np.random.default_rng(31)
    for trial in range(20):
        q0 = rng.integers(0, 6, size=9)
        a = rng.random(9)
        out = run_epoch(q0, DecisionProfile(offload=a), topo, 0.9, mu, 5, 3.0,
                        rng, engine)
        assert isinstance(out, EpochOutcome)
        balance = q0 + out.arrivals - out.services - out.drops - out.next_queues
        assert np.all(balance == 0)
        assert np.all(out.next_queues >= 0)
        assert np.all(out.next_queues <= 5)


@pytest.mark.parametrize("engine", ["bank", "reference"])
def test_zero_traffic_drains(engine):
    topo = build_cyc1d(6)
    mu = np.ones(6)
    q0 = np.array([5, 4, 3, 2, 1, 0])
    out = run_epoch(q0, DecisionProfile(offload=np.zeros(6)), topo, 0.0, mu,
                    5, 60.0, np.random.default_rng(4), engine)
    assert out.arrivals.sum() == 0
    assert out.drops.sum() == 0
    assert out.next_queues.sum() == 0
    assert out.services.sum() == q0.sum()


def test_drops_attributed_to_receiving_queue():
    # all queues full and frozen (no service): every arrival is dropped where
    # it lands, and with zero offload that is the scheduler's own queue
    topo = build_cyc1d(5)
    q0 = np.full(5, 3)
    out = run_epoch(q0, DecisionProfile(offload=np.zeros(5)), topo, 1.0,
                    np.zeros(5), 3, 5.0, np.random.default_rng(8))
    assert np.array_equal(out.drops, out.arrivals)
    assert np.array_equal(out.next_queues, q0)
    assert out.drops.sum() > 0


def test_run_epoch_rejects_bad_delta_t():
    topo = build_cyc1d(3)
    with pytest.raises(ValueError):
        run_epoch(np.zeros(3, dtype=int), DecisionProfile(offload=np.zeros(3)),
                  topo, 0.9, np.ones(3), 5, 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        run_epoch(np.zeros(3, dtype=int), DecisionProfile(offload=np.zeros(3)),
                  topo, 0.9, np.ones(3), 5, 1.0, np.random.default_rng(0),
                  engine="magic")


def test_offload_array_accepted_directly():
    topo = build_cyc1d(4)
    out = run_epoch(np.zeros(4, dtype=int), np.full(4, 0.5), topo, 0.9,
                    np.ones(4), 5, 1.0, np.random.default_rng(1))
    assert np.all(out.next_queues >= 0)


def test_queue_bank_matches_kernel_marginal():
    # one frozen queue replicated many times against the exact epoch law
    lam, mu, b, dt, z0 = 0.8, 1.0, 4, 2.0, 1
    reps = 40_000
    rng = np.random.default_rng(12)
    q0 = np.full(reps, z0)
    nq, drops, _, _ = simulate_queue_bank(q0, np.full(reps, lam),
                                          np.full(reps, mu), b, dt, rng)
    law = epoch_law(build_generator(lam, mu, b, dt), z0)
    emp = np.bincount(nq, minlength=b + 1) / reps
    assert 0.5 * np.abs(emp - law).sum() < 0.01
    want = expected_drops(build_generator(lam, mu, b, dt), z0)
    se = drops.std(ddof=1) / np.sqrt(reps)
    assert abs(drops.mean() - want) < 3.0 * se + 1e-12


def test_engines_agree_in_distribution():
    # same frozen profile on a 3-cycle: per-queue marginals and drop means
    topo = build_cyc1d(3)
    a = np.array([0.3, 0.7, 1.0])
    mu = np.ones(3)
    q0 = np.array([2, 0, 4])
    b, dt, lam = 4, 1.0, 0.9
    reps = 20_000
    bank_states = np.zeros((reps, 3), dtype=np.int64)
    ref_states = np.zeros((reps, 3), dtype=np.int64)
    bank_drops = np.zeros(reps)
    ref_drops = np.zeros(reps)
    rng_a = np.random.default_rng(100)
    rng_b = np.random.default_rng(200)
    prof = DecisionProfile(offload=a)
    for r in range(reps):
        out = run_epoch(q0, prof, topo, lam, mu, b, dt, rng_a, "bank")
        bank_states[r] = out.next_queues
        bank_drops[r] = out.drops.sum()
        out = run_epoch(q0, prof, topo, lam, mu, b, dt, rng_b, "reference")
        ref_states[r] = out.next_queues
        ref_drops[r] = out.drops.sum()
    for i in range(3):
        pa = np.bincount(bank_states[:, i], minlength=b + 1) / reps
        pb = np.bincount(ref_states[:, i], minlength=b + 1) / reps
        assert 0.5 * np.abs(pa - pb).sum() < 0.02
    se = np.sqrt(bank_drops.var(ddof=1) / reps + ref_drops.var(ddof=1) / reps)
    assert abs(bank_drops.mean() - ref_drops.mean()) < 4.0 * se + 1e-12


def test_reference_holding_times_exponential():
    # with services disabled the total event rate is constantly n * lam, so
    # every drawn waiting time must be Exp(n * lam)
    topo = build_cyc1d(3)
    lam = 0.9
    times: list = []
    rng = np.random.default_rng(77)
    q0 = np.zeros(3, dtype=np.int64)
    prof = DecisionProfile(offload=np.zeros(3))
    for _ in range(4000):
        _gillespie_epoch(q0, prof, topo, lam, np.zeros(3), 50, 1.0, rng,
                         holding_out=times)
    res = stats.kstest(np.asarray(times), "expon", args=(0.0, 1.0 / (3 * lam)))
    assert res.pvalue > 0.01


def test_reference_thinning_per_queue_poisson():
    # arrivals routed per packet look Poisson at the effective rates
    topo = build_cyc1d(3)
    a = np.array([0.3, 0.7, 1.0])
    lam, dt = 1.0, 1.0
    want = effective_rates(topo, a, lam) * dt
    rng = np.random.default_rng(13)
    reps = 6000
    counts = np.zeros((reps, 3), dtype=np.int64)
    prof = DecisionProfile(offload=a)
    q0 = np.zeros(3, dtype=np.int64)
    for r in range(reps):
        _, _, arrivals, _ = _gillespie_epoch(q0, prof, topo, lam, np.zeros(3),
                                             50, dt, rng)
        counts[r] = arrivals
    for i in range(3):
        mean = counts[:, i].mean()
        se = counts[:, i].std(ddof=1) / np.sqrt(reps)
        assert abs(mean - want[i]) < 4.0 * se + 1e-12
        # chi-square against the Poisson pmf, tail binned together
        kmax = 6
        obs = np.bincount(np.minimum(counts[:, i], kmax), minlength=kmax + 1)
        pmf = stats.poisson.pmf(np.arange(kmax), want[i])
        probs = np.append(pmf, 1.0 - pmf.sum())
        res = stats.chisquare(obs, probs * reps)
        assert res.pvalue > 1e-3


def test_run_episode_shapes_and_totals():
    topo = build_cyc1d(9)
    params = SystemParams()
    res = run_episode(topo, RndPolicy(), 50, 5.0, params, seed=3)
    assert res.drop_counts.shape == (50,)
    assert res.distributions.shape == (51, 6)
    assert np.allclose(res.distributions.sum(axis=1), 1.0)
    assert res.total_drops == pytest.approx(res.mean_drops_per_epoch.sum())
    assert np.array_equal(res.mean_drops_per_epoch * 9, res.drop_counts)
    assert set(np.unique(res.rates)) <= {0.6, 0.9}
    assert res.distributions[0, 0] == 1.0  # starts empty


def test_run_episode_deterministic():
    topo = build_cyc1d(9)
    params = SystemParams()
    a = run_episode(topo, OwnPolicy(), 30, 2.0, params, seed=9)
    b = run_episode(topo, OwnPolicy(), 30, 2.0, params, seed=9)
    assert np.array_equal(a.drop_counts, b.drop_counts)
    assert np.array_equal(a.distributions, b.distributions)
    c = run_episode(topo, OwnPolicy(), 30, 2.0, params, seed=10)
    assert not np.array_equal(a.drop_counts, c.drop_counts)


def test_run_episode_trace():
    topo = build_cyc1d(5)
    res = run_episode(topo, StaticZetaPolicy(threshold_zeta(5)), 8, 1.0,
                      SystemParams(), seed=1, record_trace=True)
    assert len(res.trace) == 8
    row = res.trace[0]
    assert set(row) == {"epoch", "rate", "drops", "arrivals", "services",
                        "distribution"}


def test_init_queues_start_distribution():
    params = SystemParams(start_distribution=(0.0, 0.0, 0.0, 0.0, 0.0, 1.0))
    q = init_queues(params, 40, np.random.default_rng(0))
    assert np.all(q == 5)
    empty = init_queues(SystemParams(), 40, np.random.default_rng(0))
    assert np.all(empty == 0)
