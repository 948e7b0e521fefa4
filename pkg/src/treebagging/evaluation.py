"""Evaluation-phase design and inference on policy values."""

from __future__ import annotations

import csv
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .core import ArmSet, ObservationLog, PropensityError, ValidationError


def evaluation_mixture_propensity(X, contextual, fixed, K: int, epsilon: float = 0.3) -> np.ndarray:
    """Uniform exploration with weight ``epsilon``; the rest split between two policies."""
    if not 0 < epsilon <= 1:
        raise ValidationError("epsilon must lie in (0, 1]")
    X = np.atleast_2d(X)
    n = len(X)
    E = np.full((n, K), epsilon / K)
    rows = np.arange(n)
    half = (1 - epsilon) / 2
    E[rows, contextual.predict(X)] += half
    E[rows, fixed.predict(X)] += half
    return E


def ipw_policy_scores(log: ObservationLog, policy) -> np.ndarray:
    """Per-row ``1{W = pi(X)} / e(X, pi(X)) * Y``."""
    pick = np.asarray(policy.predict(log.X))
    rows = np.arange(len(log))
    e = log.e[rows, pick]
    bad = ~(e > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PropensityError(f"row {i}: zero propensity for the policy's arm", row=i)
    return (log.w == pick) / e * log.y


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    n = len(v)
    if n == 0:
        return float("nan"), float("nan")
    se = float(np.std(v, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(np.mean(v)), se


def _upper_p(diff: float, se: float) -> float:
    if not np.isfinite(se):
        return float("nan")
    if se == 0:
        return 0.5 if diff == 0 else (0.0 if diff > 0 else 1.0)
    return float(norm.sf(diff / se))


def estimate_policy_value(log: ObservationLog, policy) -> tuple[float, float]:
    """IPW value estimate and its plug-in standard error."""
    return _mean_se(ipw_policy_scores(log, policy))


@dataclass(frozen=True)
class Contrast:
    diff: float
    se: float
    p_value: float
    n: int


def test_value_difference(log: ObservationLog, policy_a, policy_b) -> Contrast:
    """One-sided test of ``V(a) <= V(b)`` from differenced IPW scores."""
    d = ipw_policy_scores(log, policy_a) - ipw_policy_scores(log, policy_b)
    diff, se = _mean_se(d)
    return Contrast(diff, se, _upper_p(diff, se), len(d))


test_value_difference.__test__ = False


def contrast_per_region(log: ObservationLog, contextual, fixed, arms: ArmSet | None = None) -> dict[int, Contrast]:
    """The same contrast restricted to each region ``{x : contextual(x) = w}``.

    Regions with fewer than two rows are reported with NaN statistics.
    """
    arms = arms or log.arms
    region = np.asarray(contextual.predict(log.X))
    d = ipw_policy_scores(log, contextual) - ipw_policy_scores(log, fixed)
    out = {}
    for a in range(arms.K):
        v = d[region == a]
        if len(v) < 2:
            out[a] = Contrast(float(np.mean(v)) if len(v) else float("nan"), float("nan"), float("nan"), len(v))
            continue
        diff, se = _mean_se(v)
        out[a] = Contrast(diff, se, _upper_p(diff, se), len(v))
    return out


def subgroup_means(log: ObservationLog, predicates: Mapping[str, Callable], arms: ArmSet | None = None) -> list[dict]:
    """Mean outcome and SE per (subgroup, arm) over every row of the log."""
    arms = arms or log.arms
    out = []
    for name, pred in predicates.items():
        mask = np.asarray(pred(log.X), dtype=bool)
        for a, alias in enumerate(arms.aliases):
            y = log.y[mask & (log.w == a)]
            mean, se = _mean_se(y)
            out.append({"subgroup": name, "arm": alias, "mean": mean, "se": se, "n": len(y)})
    return out


def _nearest_row(X: np.ndarray, target: np.ndarray, scale: np.ndarray) -> int:
    return int(np.argmin(np.abs((X - target) / scale).sum(axis=1)))


def batch_descriptives(log: ObservationLog, contextual, subgroups: Mapping[str, Callable] | None = None,
                       propensity_fn: Callable | None = None) -> list[dict]:
    """Per-batch statistics in tidy form: ``batch, statistic, group, arm, value``.

    Statistics: ``mean_reward`` (group ``all`` and each subgroup),
    ``mean_propensity`` per arm, ``recommended_propensity`` (mean probability
    of the arm ``contextual`` recommends) and ``median_context_propensity`` per
    subgroup and arm. The last one evaluates ``propensity_fn(batch, x_med)``
    at the subgroup's coordinatewise median context; without a function it
    uses the logged row of that batch closest to the median.
    """
    subgroups = dict(subgroups or {})
    groups = {"all": lambda X: np.ones(len(X), bool), **subgroups}
    aliases = log.arms.aliases
    scale = log.X.std(axis=0) if len(log) else np.ones(log.schema.p)
    scale = np.where(scale > 0, scale, 1.0)
    rows = []
    for b in log.batch_ids():
        sel = log.batch == b
        Xb, yb, eb = log.X[sel], log.y[sel], log.e[sel]
        for g, pred in groups.items():
            m = np.asarray(pred(Xb), bool)
            rows.append({"batch": int(b), "statistic": "mean_reward", "group": g, "arm": "",
                         "value": float(yb[m].mean()) if m.any() else float("nan")})
        for a, alias in enumerate(aliases):
            rows.append({"batch": int(b), "statistic": "mean_propensity", "group": "all", "arm": alias,
                         "value": float(eb[:, a].mean())})
        rec = np.asarray(contextual.predict(Xb))
        rows.append({"batch": int(b), "statistic": "recommended_propensity", "group": "all", "arm": "",
                     "value": float(eb[np.arange(len(Xb)), rec].mean())})
        for g, pred in subgroups.items():
            members = log.X[np.asarray(pred(log.X), bool)]
            if len(members) == 0:
                continue
            x_med = np.median(members, axis=0)
            if propensity_fn is not None:
                e_med = np.asarray(propensity_fn(int(b), x_med[None, :]))[0]
            else:
                e_med = eb[_nearest_row(Xb, x_med, scale)]
            for a, alias in enumerate(aliases):
                rows.append({"batch": int(b), "statistic": "median_context_propensity", "group": g,
                             "arm": alias, "value": float(e_med[a])})
    return rows


def power_across_sims(p_values, alpha: float = 0.05) -> float:
    p = np.asarray(p_values, dtype=float)
    if p.size == 0:
        raise ValidationError("need at least one replicate")
    return float(np.mean(p < alpha))


# -- tables ---------------------------------------------------------------

VALUE_HEADER = ["Policy", "Est. Value", "Std. Error", "Est. Diff", "Std. Error", "p-value"]
REGION_HEADER = ["Region", "Est. Diff", "Std. Error", "p-value", "n"]
SUBGROUP_HEADER = ["Subgroup", "Arm", "Mean", "Std. Error", "n"]


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if not np.isfinite(v) else f"{v:.3f}"


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def value_table(log: ObservationLog, contextual, fixed) -> list[list]:
    """Rows: best single arm, then the tree policy with its contrast against it."""
    arms = log.arms
    vf, sf = estimate_policy_value(log, fixed)
    vc, sc = estimate_policy_value(log, contextual)
    c = test_value_difference(log, contextual, fixed)
    return [
        [f"Best fixed policy ({arms.aliases[fixed.arm]})", vf, sf, "", "", ""],
        [f"Learned contextual policy (depth={contextual.depth})", vc, sc, c.diff, c.se, c.p_value],
    ]


def region_table(log: ObservationLog, contextual, fixed) -> list[list]:
    res = contrast_per_region(log, contextual, fixed)
    fixed_alias = log.arms.aliases[fixed.arm]
    return [[f"{log.arms.aliases[a]} - {fixed_alias}", c.diff, c.se, c.p_value, c.n] for a, c in res.items()]


def write_value_table(path, log, contextual, fixed) -> None:
    _write(path, VALUE_HEADER, value_table(log, contextual, fixed))


def write_region_table(path, log, contextual, fixed) -> None:
    _write(path, REGION_HEADER, region_table(log, contextual, fixed))


def write_subgroup_table(path, rows: list[dict]) -> None:
    _write(path, SUBGROUP_HEADER, [[r["subgroup"], r["arm"], r["mean"], r["se"], r["n"]] for r in rows])


def write_tidy(path: str | Path, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
