"""Semi-synthetic outcome simulator, the batched experiment loop, and study drivers."""

from __future__ import annotations

import csv
import json
import os
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from .bandits import BanditConfig, propose_batch
from .core import (
    ArmSet,
    ContextSchema,
    ObservationLog,
    ValidationError,
    rng_stream,
    sample_arms,
)
from .evaluation import (
    estimate_policy_value,
    evaluation_mixture_propensity,
    test_value_difference,
)
from .pipeline import PipelineConfig, run_learning_pipeline
from .regression import (
    OrdinalModel,
    fit_ordinal,
    levels_from_outcomes,
    ordinal_feature_map,
)
from .survey import CHARITIES, SURVEY_SCHEMA

PILOT_LAMBDAS = (10.0, 50.0, 100.0, 500.0)
MAIN_LAMBDAS = (80.0, 100.0, 160.0, 320.0, 500.0, 640.0, 1280.0, 2560.0)


# -- bundled seed corpus ------------------------------------------------------

def corpus_utilities(X: np.ndarray, schema: ContextSchema = SURVEY_SCHEMA) -> np.ndarray:
    """Planted mean reward of each charity at each context.

    Greenpeace is the best arm almost everywhere; Black Lives Matter overtakes
    it among young liberals. Planned Parenthood and the NRA trail it by at
    most one point in their subgroups, so the noisy ordinal fit lets them win
    in parts of the covariate space.
    """
    ix = schema.index
    lib = (X[:, ix("political_leaning")] < 4).astype(float)
    young = (X[:, ix("age")] < 30).astype(float)
    gun = (X[:, ix("views_right_bear_arms")] >= 4).astype(float)
    anti = (X[:, ix("views_abortion")] >= 4).astype(float)
    u = {
        "aipac": 1.5 - 0.5 * lib,
        "blm": 2.0 + 3.5 * lib + 1.5 * young,
        "zuckerberg": 1.0 + 0.5 * lib,
        "clinton": -0.5 + 3.0 * lib,
        "green": 4.8 + 1.2 * lib,
        "nra": 0.5 - 2.5 * lib + 2.0 * gun + 1.5 * anti,
        "peta": 3.0 + lib,
        "planned": 3.0 + 2.0 * lib - 3.5 * anti,
    }
    return np.column_stack([u[a] for a in CHARITIES.aliases])


def synthetic_contexts(n: int, rng: np.random.Generator) -> np.ndarray:
    """Survey-shaped covariates driven by a latent left-right position."""
    left = rng.standard_normal(n)

    def ordinal(center, slope, lo, hi, noise=0.8):
        return np.clip(np.rint(center + slope * left + noise * rng.standard_normal(n)), lo, hi)

    def binary(logit):
        return (rng.random(n) < expit(logit)).astype(float)

    age = np.clip(np.rint(18 + rng.gamma(2.2, 11.0, n) - 2.0 * left), 18, 99)
    cols = {
        "age": age,
        "male": binary(-0.2 - 0.3 * left),
        "race": binary(0.9 - 0.4 * left),
        "married": binary(-0.3 + 0.02 * (age - 40) - 0.3 * left),
        "last_donation": rng.integers(1, 5, n).astype(float),
        "political_leaning": ordinal(4.0, -1.6, 1, 7, 0.9),
        "religious": binary(0.2 - 0.8 * left),
        "rural": binary(-0.4 - 0.6 * left),
        "views_immigration": ordinal(3.0, 1.0, 1, 5),
        "views_global_warming": ordinal(3.3, 1.1, 1, 5),
        "views_right_bear_arms": ordinal(3.0, -1.0, 1, 5),
        "views_abortion": ordinal(2.9, -1.1, 1, 5),
        "news_fox": ordinal(4.2, 1.0, 1, 6, 1.2),
        "news_cnn": ordinal(4.2, -0.8, 1, 6, 1.2),
        "news_nyt": ordinal(4.8, -0.8, 1, 6, 1.2),
        "news_wapo": ordinal(5.0, -0.6, 1, 6, 1.2),
        "news_wsj": ordinal(5.0, 0.0, 1, 6, 1.2),
        "social_media": ordinal(2.5 + 0.04 * (age - 40), 0.0, 1, 6, 1.3),
    }
    return np.column_stack([cols[f] for f in SURVEY_SCHEMA.names])


def synthetic_corpus(n: int = 3000, seed: int = 2024, noise_sd: float = 3.0,
                     batch_size: int = 150) -> ObservationLog:
    """Uniformly-assigned survey log with planted heterogeneity on the -10..10 scale."""
    rng = rng_stream(seed, "corpus")
    X = synthetic_contexts(n, rng)
    K = CHARITIES.K
    w = rng.integers(0, K, n)
    mu = corpus_utilities(X)[np.arange(n), w]
    y = np.clip(np.rint(mu + noise_sd * rng.standard_normal(n)), -10, 10)
    e = np.full((n, K), 1.0 / K)
    t = np.arange(1, n + 1)
    batch = (t - 1) // batch_size + 1
    return ObservationLog(SURVEY_SCHEMA, CHARITIES, t, batch, X, w, y, e)


# -- outcome simulator --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SemiSyntheticDGP:
    """Contexts resampled from ``pool``; outcomes drawn from an ordinal model.

    ``mu_pool[i, w]`` is the exact conditional mean at pool row ``i``.
    """

    pool: np.ndarray
    model: OrdinalModel
    lam: float
    arms: ArmSet
    schema: ContextSchema
    mu_pool: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.mu_pool is None:
            object.__setattr__(self, "mu_pool", self.mu(self.pool))

    @property
    def K(self) -> int:
        return self.arms.K

    def mu(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([self.model.expected_value(ordinal_feature_map(X, w, self.K))
                                for w in range(self.K)])

    def optimal_arm(self, X) -> np.ndarray:
        return np.argmax(self.mu(X), axis=1)

    def probabilities(self, X, w) -> np.ndarray:
        return self.model.predict_proba(ordinal_feature_map(X, w, self.K))

    def sample_outcomes(self, X, w, u) -> np.ndarray:
        """Inverse-CDF outcome draw from uniforms ``u`` (common random numbers)."""
        levels = self.model.sample_levels(ordinal_feature_map(X, w, self.K), u)
        return self.model.level_values[levels - 1]

    def sample_outcome(self, x, w, rng: np.random.Generator) -> float:
        return float(self.sample_outcomes(np.atleast_2d(x), np.array([w]), rng.random(1))[0])

    def to_dict(self) -> dict:
        return {"lam": self.lam, "model": self.model.to_dict(), "arms": list(self.arms.aliases),
                "schema": self.schema.to_dict(), "pool": self.pool.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> SemiSyntheticDGP:
        return cls(np.array(d["pool"], dtype=float), OrdinalModel.from_dict(d["model"]), float(d["lam"]),
                   ArmSet(tuple(d["arms"])), ContextSchema.from_dict(d["schema"]))


def build_dgp(corpus: ObservationLog, lambdas: Sequence[float], rng: np.random.Generator,
              n_levels: int = 21, lam: float | None = None) -> SemiSyntheticDGP:
    """Bootstrap the corpus, draw a penalty from ``lambdas`` and fit the ordinal model."""
    n = len(corpus)
    K = corpus.arms.K
    d = ordinal_feature_map(np.zeros((1, corpus.schema.p)), 0, K).shape[1]
    if n < 2 * K:
        raise ValidationError(f"corpus of {n} rows is too small to fit a {d}-coefficient model")
    idx = rng.integers(0, n, n)
    if lam is None:
        lam = float(lambdas[rng.integers(0, len(lambdas))])
    levels = levels_from_outcomes(corpus.y[idx], n_levels, corpus.schema.outcome_range)
    F = ordinal_feature_map(corpus.X[idx], corpus.w[idx], K)
    model = fit_ordinal(F, levels, lam, n_levels, corpus.schema.outcome_range,
                        meta={"p": corpus.schema.p, "K": K, "features": list(corpus.schema.names)})
    return SemiSyntheticDGP(corpus.X[idx].copy(), model, lam, corpus.arms, corpus.schema)


# -- experiment ---------------------------------------------------------------

PROFILES = {
    "desk": {"replicates": 200, "S": 20, "tree_depth": 1},
    "full": {"replicates": 1000, "S": 50, "tree_depth": 2},
}


@dataclass(frozen=True)
class ExperimentConfig:
    T: int = 3000
    learning_fraction: float = 0.5
    batch_size: int = 150
    epsilon: float = 0.3
    replicates: int = 200
    seed: int = 0
    lambdas: tuple[float, ...] = (10.0,)
    algorithms: tuple[str, ...] = ("Uniform", "TreeBagging", "BootstrapThompson")
    n_value_contexts: int = 10_000
    bandit: BanditConfig = field(default_factory=BanditConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if not 0 < self.learning_fraction < 1:
            raise ValidationError("learning_fraction must lie in (0, 1)")
        t_learn = self.T * self.learning_fraction
        if abs(t_learn - round(t_learn)) > 1e-9 or round(t_learn) % self.batch_size:
            raise ValidationError("the learning phase must split into whole batches")
        if round(t_learn) >= self.T:
            raise ValidationError("evaluation phase is empty")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if not self.lambdas:
            raise ValidationError("need at least one penalty value")

    @property
    def t_learn(self) -> int:
        return int(round(self.T * self.learning_fraction))

    @classmethod
    def profile(cls, name: str, **overrides) -> ExperimentConfig:
        if name not in PROFILES:
            raise ValidationError(f"unknown profile {name!r}")
        p = PROFILES[name]
        bandit = BanditConfig(S=p["S"], tree_depth=p["tree_depth"])
        return cls(replicates=p["replicates"], bandit=bandit, **overrides)

    def replace(self, **changes) -> ExperimentConfig:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return ExperimentConfig(**d)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lambdas"] = list(self.lambdas)
        d["algorithms"] = list(self.algorithms)
        d["bandit"] = self.bandit.to_dict()
        d["pipeline"] = self.pipeline.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict, profile: str | None = None) -> ExperimentConfig:
        d = dict(d)
        known = {f.name for f in fields(cls)} | {"profile"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown experiment setting {sorted(extra)[0]!r}")
        profile = profile or d.pop("profile", None)
        d.pop("profile", None)
        base = cls.profile(profile) if profile else cls()
        bandit = base.bandit.replace(**d.pop("bandit", {}))
        pipeline = PipelineConfig.from_dict({**base.pipeline.to_dict(), **d.pop("pipeline", {})})
        if profile and "replicates" not in d:
            d["replicates"] = base.replicates
        return base.replace(bandit=bandit, pipeline=pipeline, **d)

    @classmethod
    def from_json(cls, path: str | Path, profile: str | None = None) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()), profile)


@dataclass(frozen=True)
class SimSummary:
    algorithm: str
    lam: float
    replicate: int
    true_value: float
    true_value_fixed: float
    optimal_value: float
    regret_learning: float
    regret_evaluation: float
    est_value: float
    est_value_se: float
    est_diff: float
    diff_se: float
    p_value: float
    true_diff: float
    depth: int
    selected_arms: str

    METRICS = ("true_value", "true_value_fixed", "optimal_value", "regret_learning", "regret_evaluation",
               "est_value", "est_value_se", "est_diff", "diff_se", "p_value", "true_diff", "depth")

    @property
    def regret(self) -> float:
        return self.regret_learning


def _seed_int(*keys) -> int:
    return int(rng_stream(*keys).integers(0, 2**31 - 1))


def run_replicate(dgp: SemiSyntheticDGP, config: ExperimentConfig, algorithm: str, replicate: int = 0,
                  value_contexts: np.ndarray | None = None, value_mu: np.ndarray | None = None,
                  return_logs: bool = False):
    """One simulated experiment: adaptive learning phase, pipeline, evaluation phase.

    Context draws, outcome uniforms and assignment uniforms come from streams
    keyed only by ``(seed, replicate)`` so every algorithm sees the same ones.
    Per-period regret is ``mu(x, best arm) - mu(x, assigned arm)``; the
    learned policy's true value is averaged over ``value_contexts``.
    """
    T, t_learn, K = config.T, config.t_learn, dgp.K
    seed = config.seed
    idx = rng_stream(seed, "contexts", replicate).integers(0, len(dgp.pool), T)
    u_out = rng_stream(seed, "outcomes", replicate).random(T)
    u_arm = rng_stream(seed, "assignments", replicate).random(T)
    mu_ctx = dgp.mu_pool[idx]
    best = mu_ctx.max(axis=1)
    bandit = config.bandit.replace(algorithm=algorithm, seed=_seed_int(seed, "bandit", replicate))

    log = ObservationLog.empty(dgp.schema, dgp.arms)
    ensemble = None
    regret = np.zeros(T)
    bs = config.batch_size
    for b in range(t_learn // bs):
        sl = slice(b * bs, (b + 1) * bs)
        X = dgp.pool[idx[sl]]
        proposal = propose_batch(log, X, bandit)
        w = sample_arms(proposal.propensities, u_arm[sl])
        y = dgp.sample_outcomes(X, w, u_out[sl])
        log = log.append(b + 1, X, w, y, proposal.propensities)
        regret[sl] = best[sl] - mu_ctx[sl][np.arange(len(w)), w]
        ensemble = proposal.ensemble

    result = run_learning_pipeline(log, config.pipeline, ensemble=ensemble or None, bandit=bandit)
    pc, pn = result.contextual, result.fixed

    sl = slice(t_learn, T)
    X = dgp.pool[idx[sl]]
    E = evaluation_mixture_propensity(X, pc, pn, K, config.epsilon)
    w = sample_arms(E, u_arm[sl])
    y = dgp.sample_outcomes(X, w, u_out[sl])
    n_batches = t_learn // bs
    eval_batch = n_batches + 1 + np.arange(T - t_learn) // bs
    eval_log = ObservationLog(dgp.schema, dgp.arms, np.arange(t_learn + 1, T + 1), eval_batch, X, w, y, E)
    regret[sl] = best[sl] - mu_ctx[sl][np.arange(len(w)), w]

    if value_mu is None:
        vc = dgp.pool if value_contexts is None else value_contexts
        value_mu = dgp.mu(vc)
    else:
        vc = value_contexts
    rows = np.arange(len(value_mu))
    true_value = float(value_mu[rows, pc.predict(vc)].mean())
    true_fixed = float(value_mu[:, pn.arm].mean())
    est, est_se = estimate_policy_value(eval_log, pc)
    c = test_value_difference(eval_log, pc, pn)
    summary = SimSummary(
        algorithm=algorithm, lam=dgp.lam, replicate=replicate,
        true_value=true_value, true_value_fixed=true_fixed, optimal_value=float(value_mu.max(axis=1).mean()),
        regret_learning=float(regret[:t_learn].mean()), regret_evaluation=float(regret[t_learn:].mean()),
        est_value=est, est_value_se=est_se, est_diff=c.diff, diff_se=c.se, p_value=c.p_value,
        true_diff=true_value - true_fixed, depth=result.depth,
        selected_arms="|".join(dgp.arms.aliases[a] for a in result.selected),
    )
    if return_logs:
        full = ObservationLog(dgp.schema, dgp.arms, np.concatenate([log.t, eval_log.t]),
                              np.concatenate([log.batch, eval_log.batch]), np.vstack([log.X, eval_log.X]),
                              np.concatenate([log.w, eval_log.w]), np.concatenate([log.y, eval_log.y]),
                              np.vstack([log.e, eval_log.e]), t_learn)
        return summary, full, result
    return summary


def value_context_draw(corpus: ObservationLog, config: ExperimentConfig) -> np.ndarray:
    idx = rng_stream(config.seed, "value-contexts").integers(0, len(corpus), config.n_value_contexts)
    return corpus.X[idx]


def _unit(args):
    corpus, config, li, rep, value_contexts = args
    lam = config.lambdas[li]
    dgp = build_dgp(corpus, config.lambdas, rng_stream(config.seed, "dgp", li, rep), lam=lam)
    value_mu = dgp.mu(value_contexts)
    return [run_replicate(dgp, config, alg, rep, value_contexts, value_mu) for alg in config.algorithms]


def run_study(corpus: ObservationLog, config: ExperimentConfig, workers: int = 1,
              progress=None) -> list[SimSummary]:
    """Every algorithm on every (penalty, replicate) unit.

    A unit fits one simulator and runs each algorithm against it with common
    random numbers. Output order is fixed by (penalty, replicate, algorithm),
    so results do not depend on ``workers``.
    """
    value_contexts = value_context_draw(corpus, config)
    units = [(corpus, config, li, rep, value_contexts)
             for li in range(len(config.lambdas)) for rep in range(config.replicates)]
    out: list[SimSummary] = []
    if workers <= 1:
        for i, u in enumerate(units):
            out.extend(_unit(u))
            if progress:
                progress(i + 1, len(units))
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for i, res in enumerate(pool.map(_unit, units, chunksize=1)):
            out.extend(res)
            if progress:
                progress(i + 1, len(units))
    return out


def paired_comparison(summaries: Sequence[SimSummary], metric: str, a: str, b: str,
                      lam: float | None = None) -> dict:
    """Paired mean difference ``a - b`` of a metric across replicates, with a one-sided p-value
    for ``a > b`` and the ratio of means ``a / b``."""
    va, vb = {}, {}
    for s in summaries:
        if lam is not None and s.lam != lam:
            continue
        key = (s.lam, s.replicate)
        if s.algorithm == a:
            va[key] = getattr(s, metric)
        elif s.algorithm == b:
            vb[key] = getattr(s, metric)
    keys = sorted(set(va) & set(vb))
    if len(keys) < 2:
        raise ValidationError("need at least two paired replicates")
    x = np.array([va[k] for k in keys])
    y = np.array([vb[k] for k in keys])
    d = x - y
    se = float(d.std(ddof=1) / np.sqrt(len(d)))
    mean = float(d.mean())
    p = float(norm.sf(mean / se)) if se > 0 else (0.5 if mean == 0 else float(mean < 0))
    return {"mean_diff": mean, "se": se, "p_value": p, "ratio": float(x.mean() / y.mean()), "n": len(d)}


def summarize(summaries: Sequence[SimSummary], reference: str = "Uniform",
              focus: str = "TreeBagging") -> list[dict]:
    """Mean and SE of learned-policy value and regret per (algorithm, penalty),
    plus a ratio row ``focus / reference * 100`` per penalty."""
    rows = []
    lams = sorted({s.lam for s in summaries})
    algs = list(dict.fromkeys(s.algorithm for s in summaries))
    for lam in lams:
        stats = {}
        for alg in algs:
            sel = [s for s in summaries if s.lam == lam and s.algorithm == alg]
            if not sel:
                continue
            row = {"algorithm": alg, "lambda": lam, "replicates": len(sel)}
            for metric in ("true_value", "regret_learning", "regret_evaluation"):
                v = np.array([getattr(s, metric) for s in sel])
                row[f"{metric}_mean"] = float(v.mean())
                row[f"{metric}_se"] = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else float("nan")
            v = np.array([s.p_value for s in sel])
            row["power"] = float(np.mean(v < 0.05))
            stats[alg] = row
            rows.append(row)
        if reference in stats and focus in stats:
            ref, foc = stats[reference], stats[focus]
            rows.append({
                "algorithm": f"{focus} as % of {reference}", "lambda": lam, "replicates": foc["replicates"],
                "true_value_mean": 100 * foc["true_value_mean"] / ref["true_value_mean"],
                "regret_learning_mean": 100 * foc["regret_learning_mean"] / ref["regret_learning_mean"],
                "regret_evaluation_mean": 100 * foc["regret_evaluation_mean"] / ref["regret_evaluation_mean"],
            })
    return rows


SWEEP_PARAMETERS = ("evaluation_fraction", "alpha", "k", "T")


def _apply_sweep(config: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    if parameter == "evaluation_fraction":
        return config.replace(learning_fraction=1 - float(value))
    if parameter == "alpha":
        return config.replace(bandit=config.bandit.replace(alpha=float(value)))
    if parameter == "k":
        return config.replace(pipeline=PipelineConfig.from_dict({**config.pipeline.to_dict(), "k": int(value)}))
    if parameter == "T":
        return config.replace(T=int(value))
    raise ValidationError(f"cannot sweep {parameter!r}; choose from {SWEEP_PARAMETERS}")


def parameter_sweep(corpus: ObservationLog, config: ExperimentConfig, parameter: str, grid: Sequence,
                    workers: int = 1) -> list[dict]:
    """``run_study`` at each grid value of one parameter, others held at ``config``."""
    if len(grid) == 0:
        raise ValidationError("sweep grid is empty")
    rows = []
    for value in grid:
        cfg = _apply_sweep(config, parameter, value)
        res = run_study(corpus, cfg, workers)
        for alg in cfg.algorithms:
            sel = [s for s in res if s.algorithm == alg]
            get = lambda m: np.array([getattr(s, m) for s in sel])
            rows.append({
                "parameter": parameter, "value": value, "algorithm": alg,
                "true_value": float(get("true_value").mean()),
                "true_diff": float(get("true_diff").mean()),
                "est_diff": float(get("est_diff").mean()),
                "diff_se": float(get("diff_se").mean()),
                "power": float(np.mean(get("p_value") < 0.05)),
                "regret_learning": float(get("regret_learning").mean()),
            })
    return rows


def write_tidy_results(path: str | Path, summaries: Sequence[SimSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "lambda", "replicate", "metric", "value"])
        for s in summaries:
            for m in SimSummary.METRICS:
                w.writerow([s.algorithm, repr(s.lam), s.replicate, m, repr(getattr(s, m))])
            w.writerow([s.algorithm, repr(s.lam), s.replicate, "selected_arms", s.selected_arms])


def write_rows(path: str | Path, rows: list[dict]) -> None:
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
