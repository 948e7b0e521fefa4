"""Domain types, AIPW scoring, and the decaying probability floor."""

from __future__ import annotations

import csv
import json
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FORMAT_VERSION = 1
FEATURE_KINDS = ("integer-ordinal", "binary", "real")


class ValidationError(ValueError):
    """Input violates a documented contract."""


class InvalidFloorError(ValueError):
    """Probability floor exceeds 1/K."""


class PropensityError(ValueError):
    """Zero, negative or missing propensity on a realized arm."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


def rng_stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    String keys are hashed with crc32 so stream identity survives restarts.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode()))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class ArmSet:
    aliases: tuple[str, ...]

    def __post_init__(self):
        aliases = tuple(str(a) for a in self.aliases)
        object.__setattr__(self, "aliases", aliases)
        if any(not a for a in aliases):
            raise ValidationError("arm aliases must be non-empty")
        if len(set(aliases)) != len(aliases):
            raise ValidationError(f"duplicate arm aliases: {aliases}")
        if len(aliases) < 1:
            raise ValidationError("an arm set needs at least one arm")

    @property
    def K(self) -> int:
        return len(self.aliases)

    def index(self, alias: str) -> int:
        try:
            return self.aliases.index(alias)
        except ValueError:
            raise ValidationError(f"unknown arm alias {alias!r}") from None

    def __len__(self) -> int:
        return len(self.aliases)

    def __iter__(self):
        return iter(self.aliases)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    low: float
    high: float

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.low > self.high:
            raise ValidationError(f"feature {self.name!r}: empty range")


@dataclass(frozen=True)
class ContextSchema:
    features: tuple[Feature, ...]
    outcome_range: tuple[float, float] = (-10.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "outcome_range", tuple(float(v) for v in self.outcome_range))
        names = self.names
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    @property
    def p(self) -> int:
        return len(self.features)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown feature {name!r}") from None

    def validate_contexts(self, X: np.ndarray) -> np.ndarray:
        """Return ``X`` as a float matrix or raise on the first violation."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValidationError(f"contexts must have {self.p} columns, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("contexts contain non-finite values")
        for j, feat in enumerate(self.features):
            col = X[:, j]
            bad = (col < feat.low) | (col > feat.high)
            if feat.kind != "real":
                bad |= col != np.round(col)
            if feat.kind == "binary":
                bad |= (col != 0) & (col != 1)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise ValidationError(
                    f"row {i}: feature {feat.name!r} value {col[i]!r} outside "
                    f"[{feat.low}, {feat.high}] ({feat.kind})"
                )
        return X

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind, "low": f.low, "high": f.high}
                for f in self.features
            ],
            "outcome_range": list(self.outcome_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> ContextSchema:
        return cls(
            features=tuple(Feature(**f) for f in d["features"]),
            outcome_range=tuple(d.get("outcome_range", (-10.0, 10.0))),
        )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ObservationLog:
    """Append-only record of ``(t, batch, x, w, y, e)`` rows.

    Rows are stored column-wise. ``t_learn`` is the number of rows in the
    learning phase once it is known, ``None`` while learning is ongoing.
    """

    schema: ContextSchema
    arms: ArmSet
    t: np.ndarray
    batch: np.ndarray
    X: np.ndarray
    w: np.ndarray
    y: np.ndarray
    e: np.ndarray
    t_learn: int | None = None

    def __post_init__(self):
        n = len(self.t)
        K = self.arms.K
        t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        batch = np.asarray(self.batch, dtype=np.int64).reshape(-1)
        w = np.asarray(self.w, dtype=np.int64).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        e = np.asarray(self.e, dtype=float).reshape(n, K) if n else np.zeros((0, K))
        X = np.asarray(self.X, dtype=float).reshape(n, self.schema.p) if n else np.zeros((0, self.schema.p))
        if not (len(batch) == len(w) == len(y) == n):
            raise ValidationError("column lengths differ")
        if n:
            X = self.schema.validate_contexts(X)
            if np.any(np.diff(t) <= 0):
                raise ValidationError("t must be strictly increasing")
            if t[0] < 1:
                raise ValidationError("t is 1-based")
            if np.any(np.diff(batch) < 0):
                raise ValidationError("batch indices must be non-decreasing")
            if np.any((w < 0) | (w >= K)):
                raise ValidationError("arm index out of range")
            lo, hi = self.schema.outcome_range
            if not np.all(np.isfinite(y)) or np.any((y < lo) | (y > hi)):
                i = int(np.flatnonzero(~np.isfinite(y) | (y < lo) | (y > hi))[0])
                raise ValidationError(f"row {i}: outcome {y[i]!r} outside [{lo}, {hi}]")
            if not np.all(np.isfinite(e)) or np.any(e < 0):
                raise ValidationError("propensities must be finite and non-negative")
            if np.any(np.abs(e.sum(axis=1) - 1.0) > 1e-9):
                i = int(np.flatnonzero(np.abs(e.sum(axis=1) - 1.0) > 1e-9)[0])
                raise ValidationError(f"row {i}: propensities sum to {e[i].sum()!r}")
            realized = e[np.arange(n), w]
            if np.any(realized <= 0):
                i = int(np.flatnonzero(realized <= 0)[0])
                raise PropensityError(f"row {i}: zero propensity on realized arm", row=i)
        if self.t_learn is not None and not (0 <= self.t_learn <= n):
            raise ValidationError("t_learn outside the log")
        for name, arr in (("t", t), ("batch", batch), ("X", X), ("w", w), ("y", y), ("e", e)):
            object.__setattr__(self, name, _readonly(arr))

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n(self) -> int:
        return len(self.t)

    @classmethod
    def empty(cls, schema: ContextSchema, arms: ArmSet) -> ObservationLog:
        return cls(schema, arms, np.zeros(0), np.zeros(0), np.zeros((0, schema.p)),
                   np.zeros(0), np.zeros(0), np.zeros((0, arms.K)))

    def append(self, batch: int, X, w, y, e) -> ObservationLog:
        """New log with one batch of rows appended."""
        X = np.asarray(X, dtype=float).reshape(-1, self.schema.p)
        m = len(X)
        start = int(self.t[-1]) + 1 if self.n else 1
        return ObservationLog(
            self.schema, self.arms,
            np.concatenate([self.t, np.arange(start, start + m)]),
            np.concatenate([self.batch, np.full(m, batch)]),
            np.vstack([self.X, X]),
            np.concatenate([self.w, np.asarray(w, dtype=np.int64).reshape(-1)]),
            np.concatenate([self.y, np.asarray(y, dtype=float).reshape(-1)]),
            np.vstack([self.e, np.asarray(e, dtype=float).reshape(m, self.arms.K)]),
            self.t_learn,
        )

    def subset(self, rows) -> ObservationLog:
        """Rows selected by index or mask, phase marker dropped."""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return ObservationLog(self.schema, self.arms, self.t[rows], self.batch[rows], self.X[rows],
                              self.w[rows], self.y[rows], self.e[rows], None)

    def with_t_learn(self, t_learn: int | None) -> ObservationLog:
        return ObservationLog(self.schema, self.arms, self.t, self.batch, self.X, self.w,
                              self.y, self.e, t_learn)

    def learning(self) -> ObservationLog:
        if self.t_learn is None:
            return self.with_t_learn(None)
        return self.subset(np.arange(self.t_learn))

    def evaluation(self) -> ObservationLog:
        if self.t_learn is None:
            return self.subset(np.arange(0))
        return self.subset(np.arange(self.t_learn, self.n))

    def before_batch(self, batch: int) -> ObservationLog:
        return self.subset(self.batch < batch)

    def batch_ids(self) -> np.ndarray:
        return np.unique(self.batch)

    def check_batch_consistency(self, atol: float = 0.0) -> None:
        """Raise if duplicate contexts within a batch carry different propensities."""
        for b in self.batch_ids():
            idx = np.flatnonzero(self.batch == b)
            _, inverse = np.unique(self.X[idx], axis=0, return_inverse=True)
            inverse = inverse.reshape(-1)
            first = {}
            for i, g in zip(idx, inverse):
                if g in first:
                    if np.max(np.abs(self.e[i] - self.e[first[g]])) > atol:
                        raise ValidationError(f"batch {b}: rows {first[g]} and {i} share x but not e")
                else:
                    first[g] = i

    # -- serialization -------------------------------------------------
    def sidecar(self) -> dict:
        return {
            "version": LOG_FORMAT_VERSION,
            "schema": self.schema.to_dict(),
            "arms": list(self.arms.aliases),
            "t_learn": self.t_learn,
        }

    def write_csv(self, path: str | Path) -> None:
        """Write the columnar CSV plus a ``.json`` sidecar next to it."""
        path = Path(path)
        header = ["t", "batch", *self.schema.names, "arm", "outcome",
                  *[f"e_{a}" for a in self.arms.aliases]]
        kinds = [f.kind for f in self.schema.features]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.n):
                xs = [_fmt(v, k) for v, k in zip(self.X[i], kinds)]
                writer.writerow([int(self.t[i]), int(self.batch[i]), *xs,
                                 self.arms.aliases[self.w[i]], repr(float(self.y[i])),
                                 *[repr(float(v)) for v in self.e[i]]])
        sidecar_path(path).write_text(json.dumps(self.sidecar(), indent=2))

    @classmethod
    def read_csv(cls, path: str | Path, sidecar: dict | None = None) -> ObservationLog:
        path = Path(path)
        if sidecar is None:
            sidecar = json.loads(sidecar_path(path).read_text())
        if sidecar.get("version") != LOG_FORMAT_VERSION:
            raise ValidationError(f"unsupported log format version {sidecar.get('version')!r}")
        schema = ContextSchema.from_dict(sidecar["schema"])
        arms = ArmSet(tuple(sidecar["arms"]))
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            expected = ["t", "batch", *schema.names, "arm", "outcome",
                        *[f"e_{a}" for a in arms.aliases]]
            if header != expected:
                raise ValidationError(f"CSV header mismatch: expected {expected}, got {header}")
            rows = list(reader)
        p, K = schema.p, arms.K
        if not rows:
            log = cls.empty(schema, arms)
            return log.with_t_learn(sidecar.get("t_learn"))
        t = np.array([int(r[0]) for r in rows])
        batch = np.array([int(r[1]) for r in rows])
        X = np.array([[float(v) for v in r[2:2 + p]] for r in rows])
        w = np.array([arms.index(r[2 + p]) for r in rows])
        y = np.array([float(r[3 + p]) for r in rows])
        e = np.array([[float(v) for v in r[4 + p:4 + p + K]] for r in rows])
        return cls(schema, arms, t, batch, X, w, y, e, sidecar.get("t_learn"))


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _fmt(v: float, kind: str) -> str:
    if kind != "real" and float(v).is_integer():
        return str(int(v))
    return repr(float(v))


# -- policies -----------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    arm: int


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: Leaf | Split
    right: Leaf | Split


def _node_depth(node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(_node_depth(node.left), _node_depth(node.right))


@dataclass(frozen=True)
class TreePolicy:
    """Axis-aligned decision tree; ``x[feature] <= threshold`` goes left."""

    root: Leaf | Split
    arms: ArmSet
    feature_names: tuple[str, ...]

    @property
    def depth(self) -> int:
        return _node_depth(self.root)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X), dtype=np.int64)
        self._fill(self.root, X, np.arange(len(X)), out)
        return out

    def _fill(self, node, X, idx, out):
        if isinstance(node, Leaf):
            out[idx] = node.arm
            return
        go_left = X[idx, node.feature] <= node.threshold
        self._fill(node.left, X, idx[go_left], out)
        self._fill(node.right, X, idx[~go_left], out)

    def leaves(self) -> list[tuple[list[tuple[int, str, float]], int]]:
        """Each leaf as ``(path conditions, arm)``; a condition is ``(feature, '<=' | '>', threshold)``."""
        out = []

        def walk(node, path):
            if isinstance(node, Leaf):
                out.append((path, node.arm))
            else:
                walk(node.left, path + [(node.feature, "<=", node.threshold)])
                walk(node.right, path + [(node.feature, ">", node.threshold)])

        walk(self.root, [])
        return out

    def leaf_arms(self) -> set[int]:
        return {arm for _, arm in self.leaves()}

    def to_dict(self) -> dict:
        def enc(node):
            if isinstance(node, Leaf):
                return {"arm": self.arms.aliases[node.arm]}
            return {
                "feature": self.feature_names[node.feature],
                "threshold": float(node.threshold),
                "left": enc(node.left),
                "right": enc(node.right),
            }

        return {"type": "tree", "depth": self.depth, "arms": list(self.arms.aliases),
                "features": list(self.feature_names), "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d: dict) -> TreePolicy:
        arms = ArmSet(tuple(d["arms"]))
        names = tuple(d["features"])

        def dec(node):
            if "arm" in node:
                return Leaf(arms.index(node["arm"]))
            if node["feature"] not in names:
                raise ValidationError(f"unknown feature {node['feature']!r}")
            return Split(names.index(node["feature"]), float(node["threshold"]),
                         dec(node["left"]), dec(node["right"]))

        return cls(dec(d["root"]), arms, names)

    def render(self) -> str:
        """Indented text rendering in the style of ``policytree``'s printout."""
        lines = [
            "policy_tree object",
            f"Tree depth:  {self.depth}",
            "Actions:  " + " ".join(f"{i + 1}: {a}" for i, a in enumerate(self.arms.aliases)),
            "Variable splits:",
        ]
        counter = iter(range(1, 10**6))

        def walk(node, indent):
            k = next(counter)
            pad = "  " * indent
            if isinstance(node, Leaf):
                lines.append(f"{pad}({k}) * action: {node.arm + 1} ({self.arms.aliases[node.arm]})")
                return
            lines.append(f"{pad}({k}) split_variable: {self.feature_names[node.feature]}"
                         f"  split_value: {node.threshold:g}")
            walk(node.left, indent + 1)
            walk(node.right, indent + 1)

        walk(self.root, 0)
        return "\n".join(lines)


@dataclass(frozen=True)
class FixedPolicy:
    arm: int
    arms: ArmSet

    def __post_init__(self):
        if not 0 <= self.arm < self.arms.K:
            raise ValidationError(f"fixed arm {self.arm} not in arm set")

    depth = 0

    def predict(self, X) -> np.ndarray:
        return np.full(len(np.atleast_2d(X)), self.arm, dtype=np.int64)

    def to_dict(self) -> dict:
        return {"type": "fixed", "arm": self.arms.aliases[self.arm], "arms": list(self.arms.aliases)}

    @classmethod
    def from_dict(cls, d: dict) -> FixedPolicy:
        arms = ArmSet(tuple(d["arms"]))
        return cls(arms.index(d["arm"]), arms)


def policy_from_dict(d: dict) -> TreePolicy | FixedPolicy:
    if d.get("type") == "fixed":
        return FixedPolicy.from_dict(d)
    return TreePolicy.from_dict(d)


# -- AIPW ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AipwScoreTable:
    """Per-row doubly-robust scores; column ``j`` belongs to global arm ``eligible[j]``."""

    scores: np.ndarray
    eligible: tuple[int, ...]

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if s.ndim != 2 or s.shape[1] != len(self.eligible):
            raise ValidationError("score table width must equal the eligible-arm count")
        if not np.all(np.isfinite(s)):
            raise ValidationError("non-finite AIPW score")
        object.__setattr__(self, "scores", _readonly(s))
        object.__setattr__(self, "eligible", tuple(int(a) for a in self.eligible))

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def column(self, arm: int) -> np.ndarray:
        return self.scores[:, self.eligible.index(arm)]

    def take(self, rows) -> AipwScoreTable:
        return AipwScoreTable(self.scores[rows], self.eligible)


def aipw_scores(w, y, mu_hat, propensities, eligible: Sequence[int] | None = None) -> AipwScoreTable:
    """Doubly-robust scores ``mu + 1{W=w}/e * (Y - mu)`` for every eligible arm.

    Parameters
    ----------
    w : array of int, shape (n,)
        Realized arms as global indices; each must be in ``eligible``.
    y : array, shape (n,)
    mu_hat : array, shape (n, k)
        Outcome-model predictions for the eligible arms.
    propensities : array, shape (n, k)
        Assignment probabilities over the eligible arms.
    eligible : sequence of int, optional
        Global arm index of each column; defaults to ``range(k)``.
    """
    w = np.asarray(w, dtype=np.int64).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    mu_hat = np.asarray(mu_hat, dtype=float)
    e = np.asarray(propensities, dtype=float)
    n = len(w)
    if mu_hat.ndim != 2 or mu_hat.shape[0] != n or e.shape != mu_hat.shape or len(y) != n:
        raise ValidationError("aipw_scores: inconsistent input shapes")
    k = mu_hat.shape[1]
    eligible = tuple(range(k)) if eligible is None else tuple(int(a) for a in eligible)
    if len(eligible) != k:
        raise ValidationError("aipw_scores: eligible arms do not match column count")
    for name, arr in (("y", y), ("mu_hat", mu_hat), ("propensities", e)):
        if np.isnan(arr).any():
            raise ValidationError(f"aipw_scores: NaN in {name}")
    col = np.full(max(eligible, default=-1) + 1, -1, dtype=np.int64)
    col[list(eligible)] = np.arange(k)
    if n and (np.any(w >= len(col)) or np.any(col[np.minimum(w, len(col) - 1)] < 0)):
        raise ValidationError("aipw_scores: realized arm not eligible")
    j = col[w] if n else np.zeros(0, dtype=np.int64)
    rows = np.arange(n)
    realized = e[rows, j]
    bad = ~(realized > 0)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise PropensityError(f"row {i}: propensity {realized[i]!r} on realized arm", row=i)
    scores = mu_hat.copy()
    scores[rows, j] += (y - mu_hat[rows, j]) / realized
    return AipwScoreTable(scores, eligible)


# -- probability floor -------------------------------------------------

def floor_schedule(t, alpha: float, K: int) -> float | np.ndarray:
    """Decaying lower bound ``t**(-alpha) / K``."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 1):
        raise ValueError(f"floor_schedule: t must be >= 1, got {t!r}")
    if alpha <= 0:
        raise ValueError("floor_schedule: alpha must be positive")
    if K < 2:
        raise ValueError("floor_schedule: need K >= 2")
    out = t_arr ** (-alpha) / K
    return float(out) if out.ndim == 0 else out


def apply_probability_floor(raw, floor: float) -> np.ndarray:
    """Lift entries below ``floor`` to it and shrink the rest towards it.

    Works row-wise on a 2-D array. Entries at or above the floor become
    ``floor + c * (raw - floor)`` with ``c`` solving the sum-to-one
    constraint, so the map is order preserving and idempotent.
    """
    e = np.asarray(raw, dtype=float)
    one_d = e.ndim == 1
    e = np.atleast_2d(e)
    K = e.shape[1]
    if floor < 0 or floor > (1.0 / K) * (1 + 1e-12):
        raise InvalidFloorError(f"floor {floor!r} infeasible for K={K} (max {1.0 / K!r})")
    if np.any(e < 0) or np.any(np.abs(e.sum(axis=1) - 1.0) > 1e-9):
        raise ValidationError("raw probabilities must be non-negative and sum to 1")
    above = e >= floor
    excess = np.where(above, e - floor, 0.0).sum(axis=1, keepdims=True)
    slack = max(1.0 - K * floor, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(excess > 0, slack / np.where(excess > 0, excess, 1.0), 1.0)
    out = np.where(above, floor + c * (e - floor), floor)
    return out[0] if one_d else out


def frequency_scores(policies: Sequence, X, n_arms: int) -> np.ndarray:
    """Share of (ensemble policy, context) pairs that assign each arm."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValidationError("frequency_scores: no contexts")
    if len(policies) == 0:
        raise ValidationError("frequency_scores: empty ensemble")
    counts = np.zeros(n_arms)
    for pol in policies:
        counts += np.bincount(pol.predict(X), minlength=n_arms)[:n_arms]
    return counts / (len(policies) * len(X))


def unique_rows(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``X`` and the inverse index mapping each row to one."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        return X, np.zeros(0, dtype=np.int64)
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    return uniq, inverse.reshape(-1)


def sample_arms(E: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw of one arm per row from uniforms ``u``."""
    cdf = np.cumsum(E, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] >= cdf).sum(axis=1).astype(np.int64)

