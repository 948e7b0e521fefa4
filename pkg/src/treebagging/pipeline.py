"""End-of-learning-phase policy learning: prune arms, score, fit trees."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .bandits import BanditConfig, _default_rng, fit_bagging_ensemble
from .core import (
    ArmSet,
    FixedPolicy,
    ObservationLog,
    TreePolicy,
    ValidationError,
    aipw_scores,
    frequency_scores,
    policy_from_dict,
)
from .policy_tree import best_fixed_arm, select_depth_by_cv
from .regression import fit_crossfit_mu

FREQ_SCOPES = ("learning", "last_batch")


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 4
    subset_size: int = 50
    depths: tuple[int, ...] = (1, 2)
    train_fraction: float = 0.8
    split_budget: int | None = None
    freq_scope: str = "learning"

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if self.subset_size < 1:
            raise ValidationError("subset_size must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ValidationError("train_fraction must lie in (0, 1)")
        if self.freq_scope not in FREQ_SCOPES:
            raise ValidationError(f"freq_scope must be one of {FREQ_SCOPES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ValidationError(f"unknown pipeline setting {sorted(extra)[0]!r}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class PipelineResult:
    contextual: TreePolicy
    fixed: FixedPolicy
    selected: tuple[int, ...]
    freq_scores: np.ndarray
    depth: int
    held_out_values: dict
    arm_means: dict
    n_retained: int
    arms: ArmSet = field(repr=False, default=None)

    def report(self) -> dict:
        aliases = self.arms.aliases
        return {
            "selected_arms": [aliases[a] for a in self.selected],
            "freq_scores": {aliases[a]: float(s) for a, s in enumerate(self.freq_scores)},
            "depth": self.depth,
            "held_out_values": {str(d): v for d, v in self.held_out_values.items()},
            "contextual_policy": self.contextual.to_dict(),
            "fixed_policy": self.fixed.to_dict(),
            "mean_aipw": {aliases[a]: v for a, v in self.arm_means.items()},
            "n_retained": self.n_retained,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.report(), indent=2))


def load_policies(report: dict) -> tuple[TreePolicy, FixedPolicy]:
    return policy_from_dict(report["contextual_policy"]), policy_from_dict(report["fixed_policy"])


def reconstruct_ensemble(log: ObservationLog, bandit: BanditConfig):
    """Refit the bagged trees that assigned the log's final batch.

    Uses the history before that batch and the same random stream the design
    draws from, so a log produced by the bagged-tree design gets back exactly
    the ensemble it ran with. A single-batch log is bagged on itself.
    """
    last = int(log.batch_ids()[-1])
    prior = log.before_batch(last)
    if len(prior) == 0:
        prior = log
    return fit_bagging_ensemble(prior, bandit, _default_rng(prior, bandit))


def top_k_arms(freq: np.ndarray, k: int) -> tuple[int, ...]:
    """Indices of the ``k`` largest scores; ties go to the lower index."""
    order = np.lexsort((np.arange(len(freq)), -np.asarray(freq)))
    return tuple(sorted(int(a) for a in order[:k]))


def run_learning_pipeline(log: ObservationLog, config: PipelineConfig = PipelineConfig(),
                          ensemble: Sequence | None = None,
                          bandit: BanditConfig | None = None) -> PipelineResult:
    """Learn a tree policy and a best single arm from learning-phase data.

    ``ensemble`` is the bagged-tree ensemble of the final learning batch; when
    absent it is refit with :func:`reconstruct_ensemble` under ``bandit``.
    """
    if len(log) == 0:
        raise ValidationError("empty learning log")
    K = log.arms.K
    if config.k > K:
        raise ValidationError(f"k={config.k} exceeds the number of arms ({K})")
    if ensemble is None or len(ensemble) == 0:
        ensemble = reconstruct_ensemble(log, bandit or BanditConfig(tree_depth=1, S=20))
    if config.freq_scope == "last_batch":
        X_freq = log.X[log.batch == log.batch_ids()[-1]]
    else:
        X_freq = log.X
    freq = frequency_scores(ensemble, X_freq, K)
    selected = top_k_arms(freq, config.k)

    keep = np.flatnonzero(np.isin(log.w, selected))
    sub = log.subset(keep)
    missing = [log.arms.aliases[a] for a in selected if not np.any(sub.w == a)]
    if missing:
        raise ValidationError(f"selected arm {missing[0]!r} has no retained observations")
    e = sub.e[:, list(selected)]
    e = e / e.sum(axis=1, keepdims=True)
    mu = fit_crossfit_mu(sub.X, sub.w, sub.y, config.subset_size, arms=selected).mu_rows()
    scores = aipw_scores(sub.w, sub.y, mu, e, eligible=selected)

    choice = select_depth_by_cv(scores, sub.X, config.depths, config.train_fraction,
                                config.split_budget, arms=log.arms, feature_names=log.schema.names)
    fixed_arm, _ = best_fixed_arm(scores)
    means = {a: float(scores.column(a).mean()) for a in selected}
    return PipelineResult(choice.policy, FixedPolicy(fixed_arm, log.arms), selected, freq,
                          choice.depth, choice.held_out_values, means, len(sub), log.arms)


@dataclass(frozen=True)
class Region:
    arm: int
    leaves: tuple

    def contains(self, X, policy) -> np.ndarray:
        return np.asarray(policy.predict(X)) == self.arm


def region_partition(policy, arms: ArmSet) -> dict[int, Region]:
    """Map every arm to the (possibly empty) set of leaves recommending it."""
    leaves = policy.leaves() if isinstance(policy, TreePolicy) else [([], policy.arm)]
    out = {}
    for a in range(arms.K):
        out[a] = Region(a, tuple(tuple(path) for path, arm in leaves if arm == a))
    return out
