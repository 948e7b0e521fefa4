"""Batch assignment designs: uniform, bagged tree policies, bootstrap Thompson variants."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import (
    ObservationLog,
    TreePolicy,
    ValidationError,
    aipw_scores,
    apply_probability_floor,
    floor_schedule,
    rng_stream,
    sample_arms,
    unique_rows,
)
from .policy_tree import build_split_grid, default_split_budget, solve_tree
from .regression import bootstrap_lasso, fit_crossfit_mu, lasso_cv_lambda

ALGORITHMS = ("Uniform", "TreeBagging", "BootstrapThompson", "BootstrapES", "BootstrapTTTS")


@dataclass(frozen=True)
class BanditConfig:
    """Design settings. Defaults follow the live study's settings where it gave them.

    S            bagged trees per batch
    alpha        floor decay exponent, floor(t) = t**-alpha / K
    M            bootstrap fits per arm for the Thompson family
    N            posterior draws per context
    beta_tt      top-two mixing weight
    min_propensity  clip level for the Thompson family
    tree_depth   depth of each bagged tree
    split_budget candidate thresholds per feature (None: 16 for depth <= 2, else 8)
    subset_size  cross-fitting block size for in-loop outcome models
    """

    algorithm: str = "TreeBagging"
    S: int = 50
    alpha: float = 1 / 16
    M: int = 50
    N: int = 1000
    beta_tt: float = 0.5
    min_propensity: float = 1e-3
    batch_size: int = 150
    seed: int = 0
    tree_depth: int = 2
    split_budget: int | None = None
    subset_size: int = 50
    lasso_folds: int = 5
    lasso_lambdas: int = 20

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        for name in ("S", "M", "N", "batch_size", "subset_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not self.alpha > 0:
            raise ValidationError("alpha must be positive")
        if not 0 <= self.beta_tt <= 1:
            raise ValidationError("beta_tt must lie in [0, 1]")
        if not 0 <= self.min_propensity < 1:
            raise ValidationError("min_propensity must lie in [0, 1)")
        if self.tree_depth not in (1, 2, 3):
            raise ValidationError("tree_depth must be 1, 2 or 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> BanditConfig:
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown bandit setting {sorted(extra)[0]!r}")
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> BanditConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def replace(self, **changes) -> BanditConfig:
        return BanditConfig.from_dict({**self.to_dict(), **changes})


@dataclass(frozen=True, eq=False)
class BatchProposal:
    """Propensities for one batch of contexts, plus the bagged trees behind them."""

    propensities: np.ndarray
    floor: float
    ensemble: tuple[TreePolicy, ...] = field(default_factory=tuple)


def uniform_assign(X, K: int) -> np.ndarray:
    if K < 2:
        raise ValidationError("need K >= 2")
    return np.full((len(np.atleast_2d(X)), K), 1.0 / K)


# -- bagged trees -----------------------------------------------------------

def in_loop_scores(log: ObservationLog, subset_size: int = 50):
    """AIPW scores for every logged row using cross-fitted ridge and logged propensities."""
    mu = fit_crossfit_mu(log, subset_size=subset_size).mu_rows()
    return aipw_scores(log.w, log.y, mu, log.e)


def fit_bagging_ensemble(log: ObservationLog, config: BanditConfig,
                         rng: np.random.Generator) -> tuple[TreePolicy, ...]:
    """``config.S`` trees, each solved on a bootstrap resample of the scored log."""
    if len(log) == 0:
        return ()
    scores = in_loop_scores(log, config.subset_size)
    grid = build_split_grid(log.X, config.split_budget or default_split_budget(config.tree_depth))
    n = len(log)
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=config.S)
    return tuple(
        solve_tree(scores, log.X, config.tree_depth, weights=c, grid=grid,
                   arms=log.arms, feature_names=log.schema.names)
        for c in counts
    )


def ensemble_votes(ensemble, X, K: int) -> np.ndarray:
    """Share of trees assigning each arm at each row of ``X``."""
    X = np.atleast_2d(X)
    votes = np.zeros((len(X), K))
    rows = np.arange(len(X))
    for pol in ensemble:
        np.add.at(votes, (rows, pol.predict(X)), 1.0)
    return votes / len(ensemble)


def treebagging_assign(log: ObservationLog, X, config: BanditConfig,
                       rng: np.random.Generator | None = None) -> BatchProposal:
    """Vote shares of bagged score-maximizing trees, lifted to the decaying floor.

    The floor uses ``t = len(log) + 1``, the period of the batch's first subject.
    With an empty log every row is uniform.
    """
    K = log.arms.K
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = len(log) + 1
    f = floor_schedule(t, config.alpha, K)
    if len(log) == 0:
        return BatchProposal(uniform_assign(X, K), f)
    rng = rng if rng is not None else _default_rng(log, config)
    ensemble = fit_bagging_ensemble(log, config, rng)
    uniq, inv = unique_rows(X)
    raw = ensemble_votes(ensemble, uniq, K)
    E = apply_probability_floor(raw, min(f, 1.0 / K))
    return BatchProposal(E[inv], f, ensemble)


# -- bootstrap Thompson family ------------------------------------------

def _standardizer(X):
    m = X.mean(axis=0)
    s = X.std(axis=0)
    s[s < 1e-12] = 1.0
    return m, s


def bootstrap_posterior(log: ObservationLog, X, config: BanditConfig, rng: np.random.Generator):
    """Mean and variance of each arm's predicted reward across bootstrap lasso fits.

    Returns ``(mu, var)`` of shape ``(len(X), K)``. An arm missing from every
    bootstrap sample gets mean 0 and variance 1.
    """
    K = log.arms.K
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.zeros((len(X), K))
    var = np.ones((len(X), K))
    n = len(log)
    if n == 0:
        return mu, var
    m, s = _standardizer(log.X)
    Z = (log.X - m) / s
    Zq = (X - m) / s
    counts = rng.multinomial(n, np.full(n, 1.0 / n), size=config.M)
    for w in range(K):
        rows = np.flatnonzero(log.w == w)
        if len(rows) == 0:
            continue
        lam = lasso_cv_lambda(Z[rows], log.y[rows], rng, n_folds=config.lasso_folds,
                              n_lambdas=config.lasso_lambdas)
        b0, B, ok = bootstrap_lasso(Z[rows], log.y[rows], counts[:, rows], lam)
        if not ok.any():
            continue
        pred = b0[ok][:, None] + B[ok] @ Zq.T
        mu[:, w] = pred.mean(axis=0)
        var[:, w] = pred.var(axis=0)
    return mu, var


def thompson_tallies(mu, var, N: int, rng: np.random.Generator, runner_up: bool = False):
    """Share of ``N`` independent normal draws in which each arm is largest.

    With ``runner_up=True`` also returns the share in which each arm is second.
    Ties in a draw go to the lower arm index.
    """
    mu = np.atleast_2d(mu)
    sd = np.sqrt(np.atleast_2d(var))
    U, K = mu.shape
    draws = mu[None] + sd[None] * rng.standard_normal((N, U, K))
    first = draws.argmax(axis=2)
    p = np.stack([(first == k).mean(axis=0) for k in range(K)], axis=1)
    if not runner_up:
        return p
    np.put_along_axis(draws, first[..., None], -np.inf, axis=2)
    second = draws.argmax(axis=2)
    q = np.stack([(second == k).mean(axis=0) for k in range(K)], axis=1)
    return p, q


def exploration_weights(p: np.ndarray) -> np.ndarray:
    """``p(1-p)`` normalized per row; rows with a certain arm keep ``p``."""
    p = np.atleast_2d(p)
    h = p * (1 - p)
    tot = h.sum(axis=1, keepdims=True)
    certain = (p == 1.0).any(axis=1, keepdims=True) | (tot <= 0)
    return np.where(certain, p, h / np.where(tot > 0, tot, 1.0))


def top_two_weights(p: np.ndarray, q: np.ndarray, beta: float) -> np.ndarray:
    return beta * np.atleast_2d(p) + (1 - beta) * np.atleast_2d(q)


def _thompson_family(log, X, config, rng, variant):
    K = log.arms.K
    X = np.atleast_2d(np.asarray(X, dtype=float))
    floor = min(config.min_propensity, 1.0 / K)
    if len(log) == 0:
        return BatchProposal(uniform_assign(X, K), floor)
    rng = rng if rng is not None else _default_rng(log, config)
    uniq, inv = unique_rows(X)
    mu, var = bootstrap_posterior(log, uniq, config, rng)
    if variant == "ttts":
        p, q = thompson_tallies(mu, var, config.N, rng, runner_up=True)
        raw = top_two_weights(p, q, config.beta_tt)
    else:
        p = thompson_tallies(mu, var, config.N, rng)
        raw = exploration_weights(p) if variant == "es" else p
    raw = raw / raw.sum(axis=1, keepdims=True)
    return BatchProposal(apply_probability_floor(raw, floor)[inv], floor)


def bootstrap_thompson_assign(log, X, config, rng=None) -> BatchProposal:
    return _thompson_family(log, X, config, rng, "ts")


def bootstrap_es_assign(log, X, config, rng=None) -> BatchProposal:
    return _thompson_family(log, X, config, rng, "es")


def bootstrap_ttts_assign(log, X, config, rng=None) -> BatchProposal:
    return _thompson_family(log, X, config, rng, "ttts")


def _default_rng(log: ObservationLog, config: BanditConfig) -> np.random.Generator:
    return rng_stream(config.seed, len(log.batch_ids()) + 1, config.algorithm)


def propose_batch(log: ObservationLog, X, config: BanditConfig,
                  rng: np.random.Generator | None = None) -> BatchProposal:
    """Dispatch to the configured design."""
    if config.algorithm == "Uniform":
        return BatchProposal(uniform_assign(X, log.arms.K), 1.0 / log.arms.K)
    fn = {
        "TreeBagging": treebagging_assign,
        "BootstrapThompson": bootstrap_thompson_assign,
        "BootstrapES": bootstrap_es_assign,
        "BootstrapTTTS": bootstrap_ttts_assign,
    }[config.algorithm]
    return fn(log, X, config, rng)


def draw_arms(E: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return sample_arms(E, rng.random(len(E)))
