import csv

import numpy as np
import pytest
from conftest import arm_set, real_schema

from treebagging.core import (
    ArmSet,
    FixedPolicy,
    Leaf,
    ObservationLog,
    PropensityError,
    Split,
    TreePolicy,
    sample_arms,
)
from treebagging.evaluation import (
    REGION_HEADER,
    VALUE_HEADER,
    batch_descriptives,
    contrast_per_region,
    estimate_policy_value,
    evaluation_mixture_propensity,
    ipw_policy_scores,
    power_across_sims,
    subgroup_means,
    write_region_table,
    write_value_table,
)
from treebagging.evaluation import (
    test_value_difference as value_difference,
)

ARMS8 = arm_set(8)


def tree_on_x0(arms, left, right, thr=0.0):
    return TreePolicy(Split(0, thr, Leaf(left), Leaf(right)), arms, ("x0",))


def make_log(X, w, y, e, arms, batch=None):
    n = len(w)
    t = np.arange(1, n + 1)
    return ObservationLog(real_schema(X.shape[1]), arms, t, np.ones(n, int) if batch is None else batch,
                          X, w, y, e)


def test_mixture_arithmetic():
    X = np.array([[-1.0], [1.0]])
    pc = tree_on_x0(ARMS8, 0, 3)
    pn = FixedPolicy(3, ARMS8)
    E = evaluation_mixture_propensity(X, pc, pn, 8, 0.3)
    assert E[0, 0] == pytest.approx(0.3875) and E[0, 3] == pytest.approx(0.3875)
    assert E[0, 1] == pytest.approx(0.0375)
    assert E[1, 3] == pytest.approx(0.7375)
    np.testing.assert_allclose(E.sum(axis=1), 1)
    np.testing.assert_allclose(evaluation_mixture_propensity(X, pc, pn, 8, 1.0), 1 / 8)


def test_mixture_bounds(rng):
    X = rng.normal(size=(100, 1))
    E = evaluation_mixture_propensity(X, tree_on_x0(ARMS8, 2, 5), FixedPolicy(1, ARMS8), 8, 0.2)
    assert np.all(E >= 0.2 / 8 - 1e-15)
    np.testing.assert_allclose(E.sum(axis=1), 1, atol=1e-12)


def test_ipw_with_unit_propensity_is_sample_mean(rng):
    arms = arm_set(2)
    n = 50
    w = rng.integers(0, 2, n)
    e = np.eye(2)[w]
    y = rng.normal(size=n)
    log = make_log(rng.normal(size=(n, 1)), w, y, e, arms)

    class Realized:
        def predict(self, X):
            return w

    est, se = estimate_policy_value(log, Realized())
    assert est == pytest.approx(y.mean())
    assert se == pytest.approx(y.std(ddof=1) / np.sqrt(n))


def test_ipw_uniform_constant_policy(rng):
    K, n = 4, 400
    arms = arm_set(K)
    w = rng.integers(0, K, n)
    y = rng.normal(size=n) + w
    log = make_log(rng.normal(size=(n, 1)), w, y, np.full((n, K), 1 / K), arms)
    for a in range(K):
        est, _ = estimate_policy_value(log, FixedPolicy(a, arms))
        hit = w == a
        assert est == pytest.approx(K * y[hit].mean() * hit.sum() / n)


def test_zero_propensity_rejected():
    arms = arm_set(2)
    log = make_log(np.zeros((1, 1)), np.array([0]), np.array([1.0]), np.array([[1.0, 0.0]]), arms)
    with pytest.raises(PropensityError):
        ipw_policy_scores(log, FixedPolicy(1, arms))


def test_same_policy_contrast():
    arms = arm_set(2)
    log = make_log(np.zeros((3, 1)), np.array([0, 1, 0]), np.array([1.0, 2, 3]), np.full((3, 2), 0.5), arms)
    c = value_difference(log, FixedPolicy(0, arms), FixedPolicy(0, arms))
    assert c.diff == 0 and c.p_value == 0.5


def test_contrast_is_antisymmetric(rng):
    arms = arm_set(3)
    n = 200
    X = rng.normal(size=(n, 1))
    w = rng.integers(0, 3, n)
    log = make_log(X, w, rng.normal(size=n), np.full((n, 3), 1 / 3), arms)
    a, b = tree_on_x0(arms, 0, 1), FixedPolicy(2, arms)
    c1, c2 = value_difference(log, a, b), value_difference(log, b, a)
    assert c1.diff == -c2.diff
    assert c1.se == c2.se
    assert c1.p_value + c2.p_value == pytest.approx(1.0)


def test_rows_never_matching_only_change_n(rng):
    arms = arm_set(3)
    n = 30
    X = rng.normal(size=(n, 1))
    w = rng.integers(0, 3, n)
    y = rng.normal(size=n)
    e = np.full((n, 3), 1 / 3)
    base = make_log(X, w, y, e, arms)
    pol = FixedPolicy(0, arms)
    extra = make_log(np.vstack([X, np.zeros((10, 1))]), np.concatenate([w, np.full(10, 1)]),
                     np.concatenate([y, np.full(10, 7.0)]), np.vstack([e, np.full((10, 3), 1 / 3)]), arms)
    s_base = ipw_policy_scores(base, pol)
    s_extra = ipw_policy_scores(extra, pol)
    np.testing.assert_array_equal(s_extra[n:], 0)
    assert s_extra.sum() == s_base.sum()
    assert estimate_policy_value(extra, pol)[0] == pytest.approx(s_base.sum() / (n + 10))


def test_region_whole_space_equals_global_contrast(rng):
    arms = arm_set(3)
    n = 100
    log = make_log(rng.normal(size=(n, 1)), rng.integers(0, 3, n), rng.normal(size=n), np.full((n, 3), 1 / 3),
                   arms)
    pc, pn = FixedPolicy(1, arms), FixedPolicy(2, arms)
    region = contrast_per_region(log, pc, pn)
    assert region[1] == value_difference(log, pc, pn)
    assert region[0].n == 0 and np.isnan(region[0].diff)


def test_region_estimates_recover_constant_effects(rng):
    K, n = 3, 60_000
    arms = arm_set(K)
    X = rng.uniform(-1, 1, (n, 1))
    pc, pn = tree_on_x0(arms, 0, 1), FixedPolicy(2, arms)
    E = evaluation_mixture_propensity(X, pc, pn, K, 0.3)
    w = sample_arms(E, rng.random(n))
    means = np.where(X[:, 0] <= 0, 1, 0)[:, None] * np.array([2.0, 0.0, 0.5]) + \
        np.where(X[:, 0] > 0, 1, 0)[:, None] * np.array([0.0, -1.0, 0.5])
    y = means[np.arange(n), w] + rng.normal(size=n)
    log = make_log(X, w, y, E, arms)
    res = contrast_per_region(log, pc, pn)
    assert abs(res[0].diff - 1.5) <= 3 * res[0].se
    assert abs(res[1].diff - (-1.5)) <= 3 * res[1].se


def test_subgroup_means():
    arms = arm_set(2)
    X = np.array([[0.0], [1.0], [1.0]])
    log = make_log(X, np.array([0, 0, 1]), np.array([4.0, 6.0, 1.0]), np.full((3, 2), 0.5), arms)
    rows = subgroup_means(log, {"pos": lambda Z: Z[:, 0] > 0.5, "zero": lambda Z: Z[:, 0] < 0.5})
    by = {(r["subgroup"], r["arm"]): r for r in rows}
    assert by[("pos", "a0")]["mean"] == 6.0 and np.isnan(by[("pos", "a0")]["se"])
    assert by[("zero", "a1")]["n"] == 0 and np.isnan(by[("zero", "a1")]["mean"])


def test_batch_descriptives_fixture():
    arms = arm_set(2)
    X = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    e = np.array([[0.5, 0.5], [0.5, 0.5], [0.8, 0.2], [0.3, 0.7]])
    log = make_log(X, np.array([0, 1, 0, 1]), np.array([1.0, 2.0, 3.0, 5.0]), e, arms,
                   batch=np.array([1, 1, 2, 2]))
    pc = tree_on_x0(arms, 0, 1)
    rows = batch_descriptives(log, pc, {"neg": lambda Z: Z[:, 0] < 0})
    get = {(r["batch"], r["statistic"], r["group"], r["arm"]): r["value"] for r in rows}
    assert get[(1, "mean_reward", "all", "")] == 1.5
    assert get[(2, "mean_reward", "neg", "")] == 3.0
    assert get[(2, "mean_propensity", "all", "a0")] == pytest.approx(0.55)
    assert get[(2, "recommended_propensity", "all", "")] == pytest.approx(0.75)
    assert get[(2, "median_context_propensity", "neg", "a0")] == 0.8
    assert all(0 <= r["value"] <= 1 for r in rows if "propensity" in r["statistic"])


def test_single_batch_has_one_row_per_statistic():
    arms = arm_set(2)
    log = make_log(np.zeros((2, 1)), np.array([0, 1]), np.array([1.0, 2.0]), np.full((2, 2), 0.5), arms)
    rows = batch_descriptives(log, FixedPolicy(0, arms))
    stats = [r["statistic"] for r in rows]
    assert stats.count("mean_reward") == 1 and stats.count("recommended_propensity") == 1


def test_power():
    assert power_across_sims([0.001] * 5) == 1.0
    assert power_across_sims([0.5] * 5) == 0.0


def test_tables_have_expected_headers(tmp_path, rng):
    arms = ArmSet(("a", "b", "c"))
    n = 50
    log = make_log(rng.normal(size=(n, 1)), rng.integers(0, 3, n), rng.normal(size=n), np.full((n, 3), 1 / 3),
                   arms)
    pc, pn = tree_on_x0(arms, 0, 1), FixedPolicy(1, arms)
    write_value_table(tmp_path / "v.csv", log, pc, pn)
    write_region_table(tmp_path / "r.csv", log, pc, pn)
    v = list(csv.reader(open(tmp_path / "v.csv")))
    r = list(csv.reader(open(tmp_path / "r.csv")))
    assert v[0] == VALUE_HEADER
    assert ", ".join(v[0][1:]) == "Est. Value, Std. Error, Est. Diff, Std. Error, p-value"
    assert r[0] == REGION_HEADER and "n" in r[0]
    empty = [row for row in r[1:] if row[0].startswith("c ")]
    assert empty and empty[0][-1] == "0"
