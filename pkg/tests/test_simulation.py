import numpy as np
import pytest

from treebagging.bandits import BanditConfig
from treebagging.core import ValidationError, rng_stream
from treebagging.regression import OrdinalModel, feature_map_dim
from treebagging.simulation import (
    ExperimentConfig,
    SemiSyntheticDGP,
    build_dgp,
    corpus_utilities,
    paired_comparison,
    parameter_sweep,
    run_replicate,
    run_study,
    summarize,
    synthetic_corpus,
    write_tidy_results,
)
from treebagging.survey import CHARITIES, SURVEY_SCHEMA


@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(n=900)


@pytest.fixture(scope="module")
def dgp(corpus):
    return build_dgp(corpus, [10.0], rng_stream(0, "test-dgp"))


def tiny_config(**over):
    cfg = dict(T=600, batch_size=100, replicates=2, n_value_contexts=500,
               algorithms=("Uniform", "TreeBagging", "BootstrapThompson"),
               bandit=BanditConfig(S=3, tree_depth=1, M=5, N=100))
    cfg.update(over)
    return ExperimentConfig(**cfg)


def constant_dgp(pool, arm_shift):
    """Ordinal model whose arm dummies shift the linear index; no covariate effects."""
    p, K = SURVEY_SCHEMA.p, CHARITIES.K
    d = feature_map_dim(p, K)
    coef = np.zeros(d)
    coef[2 * p:2 * p + K - 1] = arm_shift
    model = OrdinalModel(np.linspace(-3, 3, 20), coef, 1.0, np.zeros(d), np.ones(d))
    return SemiSyntheticDGP(pool, model, 1.0, CHARITIES, SURVEY_SCHEMA)


def test_corpus_shape(corpus):
    assert len(corpus) == 900
    assert corpus.schema == SURVEY_SCHEMA and corpus.arms == CHARITIES
    assert set(np.unique(corpus.y)) <= set(np.arange(-10, 11))
    best = corpus_utilities(corpus.X).argmax(axis=1)
    aliases = np.array(CHARITIES.aliases)
    assert set(aliases[np.unique(best)]) == {"blm", "green"}


def test_fitted_world_is_heterogeneous(dgp):
    # the noisy ordinal fit spreads the optimum over several arms
    assert len(np.unique(dgp.optimal_arm(dgp.pool))) >= 3


def test_dgp_mean_is_probability_weighted(dgp):
    X = dgp.pool[:20]
    for w in (0, 3, 7):
        P = dgp.probabilities(X, w)
        np.testing.assert_allclose(dgp.mu(X)[:, w], P @ dgp.model.level_values, atol=1e-10)
    np.testing.assert_allclose(P.sum(axis=1), 1, atol=1e-9)


def test_dgp_outcomes_on_grid(dgp, rng):
    X = dgp.pool[:100]
    y = dgp.sample_outcomes(X, rng.integers(0, 8, 100), rng.random(100))
    assert set(np.unique(y)) <= set(np.arange(-10.0, 11.0))
    back = SemiSyntheticDGP.from_dict(dgp.to_dict())
    np.testing.assert_allclose(back.mu(X), dgp.mu(X), atol=1e-12)


def test_dgp_needs_enough_rows(corpus):
    with pytest.raises(ValidationError):
        build_dgp(corpus.subset(np.arange(5)), [10.0], rng_stream(0))


def test_no_heterogeneity_means_constant_optimal_arm(corpus):
    dgp = constant_dgp(corpus.X, np.zeros(7) - np.arange(7) * 0.1)
    assert np.all(dgp.optimal_arm(corpus.X) == 0)
    flat = constant_dgp(corpus.X, np.zeros(7))
    cfg = tiny_config(algorithms=("Uniform",), replicates=1)
    s = run_replicate(flat, cfg, "Uniform", 0)
    assert s.regret_learning == pytest.approx(0, abs=1e-12)
    # ties resolve to the lowest index
    assert np.all(flat.optimal_arm(corpus.X[:5]) == 0)


def test_uniform_regret_matches_analytic_value(dgp):
    cfg = tiny_config(T=2000, algorithms=("Uniform",), replicates=1)
    regrets, analytic = [], []
    for rep in range(6):
        s = run_replicate(dgp, cfg, "Uniform", rep)
        regrets.append(s.regret_learning)
    mu = dgp.mu_pool
    analytic = float((mu.max(axis=1)[:, None] - mu).mean())
    r = np.array(regrets)
    assert abs(r.mean() - analytic) <= 3 * r.std(ddof=1) / np.sqrt(len(r)) + 0.02


def test_replicate_summary_is_sane(dgp):
    cfg = tiny_config()
    for alg in cfg.algorithms:
        s = run_replicate(dgp, cfg, alg, 0)
        assert s.true_value <= s.optimal_value + 1e-12
        assert s.regret_learning >= 0 and s.regret_evaluation >= 0
        assert len(s.selected_arms.split("|")) == cfg.pipeline.k
        for m in s.METRICS:
            assert np.isfinite(getattr(s, m))


def test_replicate_logs(dgp):
    cfg = tiny_config()
    s, full, result = run_replicate(dgp, cfg, "TreeBagging", 0, return_logs=True)
    assert len(full) == cfg.T and full.t_learn == cfg.t_learn
    assert len(full.learning().batch_ids()) == cfg.t_learn // cfg.batch_size
    full.learning().check_batch_consistency()
    np.testing.assert_allclose(full.e.sum(axis=1), 1, atol=1e-9)
    assert s.selected_arms == "|".join(CHARITIES.aliases[a] for a in result.selected)


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(T=3000, batch_size=7)
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"replicas": 3})
    desk = ExperimentConfig.from_dict({}, "desk")
    assert desk.replicates == 200 and desk.bandit.S == 20 and desk.bandit.tree_depth == 1
    full = ExperimentConfig.profile("full")
    assert full.replicates == 1000 and full.bandit.S == 50 and full.bandit.tree_depth == 2
    assert ExperimentConfig.from_dict(desk.to_dict()) == desk


@pytest.mark.slow
def test_study_is_deterministic_across_worker_counts(corpus, tmp_path):
    cfg = tiny_config()
    a = run_study(corpus, cfg, workers=1)
    b = run_study(corpus, cfg, workers=2)
    assert a == b
    write_tidy_results(tmp_path / "a.csv", a)
    write_tidy_results(tmp_path / "b.csv", run_study(corpus, cfg, workers=1))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_identical_configs_identical_rows(corpus):
    cfg = tiny_config(algorithms=("Uniform", "Uniform"), replicates=1)
    a, b = run_study(corpus, cfg)
    assert a == b


def test_paired_comparison_and_summary(corpus):
    cfg = tiny_config(algorithms=("Uniform", "TreeBagging"))
    res = run_study(corpus, cfg)
    pc = paired_comparison(res, "true_value", "TreeBagging", "Uniform")
    tv = {(s.algorithm, s.replicate): s.true_value for s in res}
    d = [tv["TreeBagging", r] - tv["Uniform", r] for r in range(2)]
    assert pc["mean_diff"] == pytest.approx(np.mean(d))
    assert pc["n"] == 2
    rows = summarize(res)
    assert rows[-1]["algorithm"] == "TreeBagging as % of Uniform"


def test_sweep_of_one_value_is_a_study(corpus):
    cfg = tiny_config(algorithms=("Uniform",), replicates=1)
    rows = parameter_sweep(corpus, cfg, "alpha", [cfg.bandit.alpha])
    ref = run_study(corpus, cfg)
    assert rows[0]["true_value"] == ref[0].true_value
    with pytest.raises(ValidationError):
        parameter_sweep(corpus, cfg, "alpha", [])
