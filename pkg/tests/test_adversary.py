import itertools

import numpy as np
import pytest

from qftsum.adversary import (
    BasisPolicy,
    Collusion,
    DetectionStats,
    EntangleProbe,
    InterceptResend,
    MeasureResend,
    PosteriorTable,
    SemiHonestP1,
    binomial_abort_probability,
    collusion_posterior,
    detection_campaign,
    entangle_probe,
    intercept_resend,
    measure_resend,
    read_probe,
    semi_honest_p1_attack,
    trial_streams,
)
from qftsum.errors import DomainError, ProtocolLogicError
from qftsum.harness import QuantumStore
from qftsum.protocol import ProtocolConfig, random_keys, run_protocol
from qftsum.qudit_core import Basis, fourier_op, prepare_single


def brute_posterior(d, n, colluders, col_keys, announced, final):
    """Posterior over each honest key digit by looping over every hidden value.

    Unnormalized weight of an honest-key assignment is the number of zero-sum
    vectors ``l`` reproducing every public readout and the public sum.
    """
    honest = [i for i in range(1, n + 1) if i not in colluders]
    weights = {i: np.zeros(d) for i in honest}
    for hk in itertools.product(range(d), repeat=len(honest)):
        key = dict(col_keys)
        key.update(zip(honest, hk))
        w = 0
        for l in itertools.product(range(d), repeat=n):
            if sum(l) % d:
                continue
            m = {i: (l[i - 1] + key[i]) % d for i in range(1, n + 1)}
            if all(m[j] == v for j, v in announced.items()) and sum(m.values()) % d == final:
                w += 1
        for i, k in zip(honest, hk):
            weights[i][k] += w
    return {i: w / w.sum() for i, w in weights.items()}


def slot_store(d, basis, value):
    store = QuantumStore(d)
    store.add(["x"], prepare_single(d, basis, value))
    return store


# -- single-slot attacks ----------------------------------------------------------


@pytest.mark.parametrize("d", [2, 3, 5])
def test_always_v1_on_v1_decoy_undetected(d):
    rng = np.random.default_rng(0)
    for v in range(d):
        for _ in range(20):
            store = slot_store(d, Basis.V1, v)
            basis, seen = intercept_resend(store, "x", BasisPolicy.ALWAYS_V1, rng)
            assert basis is Basis.V1 and seen == v
            assert store.measure("x", Basis.V1, rng) == v


@pytest.mark.parametrize("d", [2, 3])
def test_always_v1_on_v2_decoy_detected(d):
    rng = np.random.default_rng(d)
    trials = 6000
    wrong = 0
    for i in range(trials):
        v = i % d
        store = slot_store(d, Basis.V2, v)
        intercept_resend(store, "x", BasisPolicy.ALWAYS_V1, rng)
        wrong += store.measure("x", Basis.V2, rng) != v
    assert abs(wrong / trials - (d - 1) / d) < 0.02


def test_measure_resend_is_v1():
    rng = np.random.default_rng(0)
    store = slot_store(4, Basis.V1, 2)
    assert measure_resend(store, "x", rng) == (Basis.V1, 2)


def test_random_policy_picks_both_bases():
    rng = np.random.default_rng(1)
    seen = {intercept_resend(slot_store(2, Basis.V1, 0), "x", BasisPolicy.RANDOM, rng)[0] for _ in range(50)}
    assert seen == {Basis.V1, Basis.V2}


@pytest.mark.parametrize("d", [2, 3, 5])
def test_probe_learns_v1_decoy_without_disturbance(d):
    rng = np.random.default_rng(4)
    for v in range(d):
        store = slot_store(d, Basis.V1, v)
        rec = entangle_probe(store, "x", rng)
        assert store.measure("x", Basis.V1, rng) == v
        assert read_probe(store, rec, rng) == v


@pytest.mark.parametrize("d", [2, 3, 5])
def test_probe_on_v2_decoy_exact_detection(d):
    # reduced state of the data qudit after the probe is the V1-dephased decoy
    for v in range(d):
        store = slot_store(d, Basis.V2, v)
        rec = entangle_probe(store, "x", np.random.default_rng(0))
        joint = store.state(["x", rec.ancilla]).amps.reshape(d, d)
        rho = joint @ joint.conj().T
        fv = fourier_op(d).matrix[:, v]
        p_ok = float(np.real(fv.conj() @ rho @ fv))
        assert 1 - p_ok == pytest.approx((d - 1) / d, abs=1e-12)


# -- semi-honest preparer ------------------------------------------------------


@pytest.mark.parametrize("d", range(2, 8))
def test_semi_honest_posteriors_uniform_and_undetected(d):
    cfg = ProtocolConfig(d=d, n=3, length=6, decoys=8)
    rep = semi_honest_p1_attack(cfg, np.random.default_rng(d))
    assert rep.outcome.completed
    for r in rep.outcome.check_reports.values():
        assert r.error_rate == 0.0 and r.mismatches == 0
    assert sorted(rep.posteriors) == [2, 3]
    for tables in rep.posteriors.values():
        assert len(tables) == 6
        for tab in tables:
            assert tab.deviation_from_uniform() <= 1e-9


def test_semi_honest_breaks_correctness():
    cfg = ProtocolConfig(d=3, n=3, length=1, decoys=2)
    rng = np.random.default_rng(12)
    trials = 3000
    correct = 0
    for _ in range(trials):
        rep = semi_honest_p1_attack(cfg, rng)
        correct += rep.outcome.sum == rep.true_sum
    # independent uniform readouts hit the true sum with probability 1/d
    assert abs(correct / trials - 1 / 3) < 0.03


def test_semi_honest_collapse_yields_equal_digits():
    cfg = ProtocolConfig(d=5, n=4, length=4)
    attack = SemiHonestP1()
    run_protocol(cfg, [[0] * 4] * 4, adversary=attack, rng=np.random.default_rng(0))
    assert sorted(attack.collapsed) == [1, 2, 3, 4]
    assert all(0 <= v < 5 for v in attack.collapsed.values())


# -- collusion -----------------------------------------------------------------


def honest_run(d, n, length, seed):
    cfg = ProtocolConfig(d=d, n=n, length=length, decoys=2)
    keys = random_keys(cfg, np.random.default_rng(seed))
    out = run_protocol(cfg, keys, rng=np.random.default_rng(seed + 1))
    return cfg, keys, out


@pytest.mark.parametrize("d", [2, 3, 4, 5])
def test_two_of_four_colluders_learn_nothing(d):
    cfg, keys, out = honest_run(d, 4, 3, d)
    post = collusion_posterior({2, 3}, out.transcript, cfg, keys)
    assert sorted(post) == [1, 4]
    for tables in post.values():
        for tab in tables:
            assert tab.deviation_from_uniform() <= 1e-9


@pytest.mark.parametrize("d", [2, 3, 5])
def test_full_coalition_recovers_preparer_key(d):
    cfg, keys, out = honest_run(d, 3, 4, 10 + d)
    post = collusion_posterior({2, 3}, out.transcript, cfg, keys)
    assert sorted(post) == [1]
    for t, tab in enumerate(post[1]):
        assert tab.mode() == keys[0].digits[t]
        assert tab.entropy() == pytest.approx(0.0, abs=1e-12)
        assert tab.posterior[tab.mode()] == pytest.approx(1.0, abs=1e-12)


def test_outside_observer_learns_nothing():
    cfg, keys, out = honest_run(3, 4, 2, 0)
    post = collusion_posterior(set(), out.transcript, cfg, keys)
    assert sorted(post) == [1, 2, 3, 4]
    for tables in post.values():
        for tab in tables:
            assert tab.deviation_from_uniform() <= 1e-9


@pytest.mark.parametrize("d,n,colluders", [(3, 4, {2, 3}), (2, 5, {3, 5}), (3, 3, {2, 3}), (2, 4, set())])
def test_collusion_matches_brute_force(d, n, colluders):
    cfg, keys, out = honest_run(d, n, 2, 3)
    post = collusion_posterior(colluders, out.transcript, cfg, keys)
    for t in range(2):
        announced = {j: out.results[j][t] for j in range(2, n + 1)}
        col_keys = {s: keys[s - 1].digits[t] for s in colluders}
        ref = brute_posterior(d, n, colluders, col_keys, announced, out.sum[t])
        for i, p in ref.items():
            assert np.allclose(post[i][t].posterior, p, atol=1e-12)


def test_collusion_rejects_preparer():
    cfg, keys, out = honest_run(3, 4, 1, 0)
    with pytest.raises(DomainError):
        collusion_posterior({1, 2}, out.transcript, cfg, keys)
    with pytest.raises(DomainError):
        Collusion(frozenset({1}))
    with pytest.raises(DomainError):
        collusion_posterior({2, 9}, out.transcript, cfg, keys)


def test_collusion_needs_published_sum():
    from qftsum.protocol import run_private_mode

    cfg = ProtocolConfig(d=3, n=3, length=1)
    keys = [[0], [1], [2]]
    outs = run_private_mode(cfg, keys)
    with pytest.raises(ProtocolLogicError):
        collusion_posterior({2}, outs[1].transcript, cfg, keys)


def test_posterior_table_validation():
    with pytest.raises(DomainError):
        PosteriorTable(2, 1, np.array([0.5, 0.6]))
    with pytest.raises(DomainError):
        PosteriorTable(2, 1, np.array([1.2, -0.2]))
    tab = PosteriorTable(2, 1, np.array([0.25, 0.75]))
    assert tab.mode() == 1
    assert tab.deviation_from_uniform() == pytest.approx(0.25)


# -- campaigns -------------------------------------------------------------------


def test_no_attack_campaign_never_aborts():
    cfg = ProtocolConfig(d=3, n=3, length=2, decoys=6, seed=1)
    stats = detection_campaign(None, cfg, 50)
    assert stats.aborted == 0 and stats.mismatches == 0
    assert stats.tested == 50 * 2 * 6


def test_campaign_abort_rate_near_oracle():
    cfg = ProtocolConfig(d=2, n=3, length=2, decoys=16, seed=9)
    trials = 1500
    stats = detection_campaign(InterceptResend(), cfg, trials)
    want = 1 - 0.75**16
    assert abs(stats.abort_rate - want) < 3 * np.sqrt(want * (1 - want) / trials) + 1e-3
    assert abs(stats.per_decoy_error_rate - 0.25) < 3 * np.sqrt(0.25 * 0.75 / stats.tested)
    assert stats.tested == trials * 16


@pytest.mark.parametrize("strategy", [MeasureResend(), EntangleProbe(), InterceptResend(policy=BasisPolicy.ALWAYS_V2)])
def test_other_channel_attacks_match_oracle(strategy):
    cfg = ProtocolConfig(d=3, n=3, length=1, decoys=50, threshold=1.0, seed=2)
    stats = detection_campaign(strategy, cfg, 120)
    se = np.sqrt((1 / 3) * (2 / 3) / stats.tested)
    assert abs(stats.per_decoy_error_rate - 1 / 3) < 3 * se


def test_campaign_is_reproducible():
    cfg = ProtocolConfig(d=2, n=3, length=1, decoys=8, seed=4)
    assert detection_campaign(InterceptResend(), cfg, 40) == detection_campaign(InterceptResend(), cfg, 40)


def test_trial_streams_depend_on_index_only():
    a = trial_streams(3, 5)
    b = trial_streams(3, 2)
    assert a[1].random() == b[1].random()


def test_detection_stats_validation():
    with pytest.raises(DomainError):
        DetectionStats(trials=2, aborted=3, tested=0, mismatches=0)
    with pytest.raises(DomainError):
        detection_campaign(None, ProtocolConfig(d=2, n=3, length=1), 0)


def test_binomial_abort_probability():
    assert binomial_abort_probability(16, 0.25, 0.0) == pytest.approx(1 - 0.75**16, abs=1e-12)
    assert binomial_abort_probability(0, 0.5, 0.0) == 0.0
    assert binomial_abort_probability(4, 0.5, 1.0) == 0.0
