import json

import numpy as np
import pytest
from conftest import arm_set, random_log, real_schema
from hypothesis import given, settings
from hypothesis import strategies as st

from treebagging.bandits import (
    ALGORITHMS,
    BanditConfig,
    bootstrap_posterior,
    ensemble_votes,
    exploration_weights,
    propose_batch,
    thompson_tallies,
    top_two_weights,
    treebagging_assign,
    uniform_assign,
)
from treebagging.core import (
    ArmSet,
    FixedPolicy,
    ObservationLog,
    ValidationError,
    apply_probability_floor,
    floor_schedule,
)

FAST = dict(S=5, M=10, N=400, tree_depth=1)


def test_uniform():
    np.testing.assert_array_equal(uniform_assign(np.zeros((3, 2)), 8), np.full((3, 8), 0.125))


def test_first_batch_is_uniform_for_every_design(rng):
    empty = ObservationLog.empty(real_schema(2), arm_set(8))
    X = rng.normal(size=(5, 2))
    for alg in ALGORITHMS:
        prop = propose_batch(empty, X, BanditConfig(algorithm=alg, **FAST))
        np.testing.assert_array_equal(prop.propensities, np.full((5, 8), 0.125))


def test_floor_binds_at_t1():
    assert floor_schedule(1, 1 / 16, 8) == 1 / 8
    np.testing.assert_allclose(apply_probability_floor(np.eye(8)[3], 1 / 8), np.full(8, 1 / 8))


def test_two_tree_split_vote_example():
    arms = ArmSet(("a", "b", "c", "d"))
    votes = ensemble_votes([FixedPolicy(0, arms), FixedPolicy(1, arms)], np.zeros((1, 1)), 4)
    np.testing.assert_array_equal(votes, [[0.5, 0.5, 0, 0]])
    # slack 1 - 4f = 0.8 spread over excess 0.9: c = 0.8 / 0.9
    e = apply_probability_floor(votes, 0.05)
    np.testing.assert_allclose(e, [[0.45, 0.45, 0.05, 0.05]], atol=1e-12)
    assert e.sum() == pytest.approx(1.0, abs=1e-12)


def test_treebagging_rows_respect_the_floor(small_log, rng):
    cfg = BanditConfig(**FAST)
    X = rng.uniform(-3, 3, (40, 3))
    prop = treebagging_assign(small_log, X, cfg)
    f = floor_schedule(len(small_log) + 1, cfg.alpha, 3)
    assert prop.floor == f
    np.testing.assert_allclose(prop.propensities.sum(axis=1), 1, atol=1e-9)
    assert np.all(prop.propensities >= f - 1e-12)
    assert len(prop.ensemble) == cfg.S


def test_treebagging_concentrates_on_signal(rng):
    log = random_log(rng, n=600, K=3, effect=4.0)
    X = np.array([[-2.0, 0, 0], [2.0, 0, 0]])
    E = treebagging_assign(log, X, BanditConfig(S=10, tree_depth=2)).propensities
    assert E[0].argmax() == 0 and E[1].argmax() == 2


@pytest.mark.parametrize("alg", ALGORITHMS)
def test_designs_are_deterministic_and_consistent(alg, small_log, rng):
    cfg = BanditConfig(algorithm=alg, **FAST)
    X = rng.uniform(-3, 3, (10, 3))
    X[5:] = X[0]
    a = propose_batch(small_log, X, cfg).propensities
    b = propose_batch(small_log, X, cfg).propensities
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(a.sum(axis=1), 1, atol=1e-9)
    for i in range(5, 10):
        np.testing.assert_array_equal(a[i], a[0])
    if alg != "TreeBagging":
        assert np.all(a >= min(cfg.min_propensity, 1 / 3) - 1e-15)


def test_seed_changes_randomized_designs(small_log, rng):
    X = rng.uniform(-3, 3, (10, 3))
    a = propose_batch(small_log, X, BanditConfig(algorithm="BootstrapThompson", seed=1, **FAST)).propensities
    b = propose_batch(small_log, X, BanditConfig(algorithm="BootstrapThompson", seed=2, **FAST)).propensities
    assert not np.array_equal(a, b)


# -- Thompson family ---------------------------------------------------------------

def test_tallies_zero_variance_pick_argmax(rng):
    p = thompson_tallies(np.array([[1.0, 3.0, 2.0]]), np.zeros((1, 3)), 50, rng)
    np.testing.assert_array_equal(p, [[0, 1, 0]])


def test_tallies_symmetric_two_arms(rng):
    N = 1000
    p = thompson_tallies(np.array([[1.0, 1.0]]), np.ones((1, 2)), N, rng)[0]
    assert abs(p[0] - 0.5) <= 3 * np.sqrt(0.25 / N)


def test_tallies_match_gaussian_probability(rng):
    from scipy.stats import norm

    N = 20_000
    p = thompson_tallies(np.array([[0.0, 1.0]]), np.array([[1.0, 1.0]]), N, rng)[0]
    truth = norm.cdf(1 / np.sqrt(2))
    assert abs(p[1] - truth) <= 3 * np.sqrt(truth * (1 - truth) / N)


def test_exploration_weights_examples():
    np.testing.assert_allclose(exploration_weights(np.array([0.5, 0.5])), [[0.5, 0.5]])
    np.testing.assert_allclose(exploration_weights(np.array([0.8, 0.2])), [[0.5, 0.5]])
    np.testing.assert_allclose(exploration_weights(np.array([0.9, 0.05, 0.05])),
                               [[0.09 / 0.185, 0.0475 / 0.185, 0.0475 / 0.185]])
    np.testing.assert_allclose(exploration_weights(np.array([0.9, 0.05, 0.05])), [[0.486, 0.257, 0.257]],
                               atol=1e-3)


def test_top_two_deterministic_two_arms(rng):
    p, q = thompson_tallies(np.array([[2.0, 0.0]]), np.zeros((1, 2)), 100, rng, runner_up=True)
    np.testing.assert_array_equal(p, [[1, 0]])
    np.testing.assert_array_equal(q, [[0, 1]])
    np.testing.assert_allclose(top_two_weights(p, q, 0.5), [[0.5, 0.5]])


def test_top_two_three_symmetric_arms(rng):
    N = 6000
    p, q = thompson_tallies(np.zeros((1, 3)), np.ones((1, 3)), N, rng, runner_up=True)
    e = top_two_weights(p, q, 0.5)[0]
    # each component averages two shares of N draws; its SE is at most that of one share
    se = np.sqrt((1 / 3) * (2 / 3) / N)
    assert np.all(np.abs(e - 1 / 3) <= 3 * se)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_weights_are_distributions(K, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=(3, K))
    var = rng.uniform(0, 2, (3, K))
    p, q = thompson_tallies(mu, var, 200, rng, runner_up=True)
    for e in (p, q, exploration_weights(p), top_two_weights(p, q, 0.3)):
        np.testing.assert_allclose(e.sum(axis=1), 1, atol=1e-12)
        assert np.all(e >= 0)


def test_unseen_arm_gets_prior(rng):
    log = random_log(rng, n=100, K=3)
    keep = log.w != 2
    sub = log.subset(keep)
    mu, var = bootstrap_posterior(sub, rng.normal(size=(4, 3)), BanditConfig(**FAST), rng)
    np.testing.assert_array_equal(mu[:, 2], 0)
    np.testing.assert_array_equal(var[:, 2], 1)
    assert np.all(var[:, :2] < 1)


# -- configuration ---------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = BanditConfig(algorithm="BootstrapTTTS", S=7, beta_tt=0.3)
    path = tmp_path / "b.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert BanditConfig.from_json(path) == cfg


@pytest.mark.parametrize("bad", [{"algorithm": "LinUCB"}, {"S": 0}, {"M": 0}, {"N": 0}, {"alpha": 0},
                                 {"beta_tt": 2}, {"tree_depth": 4}, {"bogus": 1}])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        BanditConfig.from_dict(bad)
