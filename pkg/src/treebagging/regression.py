"""Outcome models: cross-fitted ridge, L1 regression, penalized ordinal logit."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .core import ObservationLog, ValidationError

RIDGE_GRID = np.logspace(-2, 4, 13)


# -- ridge ----------------------------------------------------------------

def fit_ridge(X, y, lam: float, fit_intercept: bool = True) -> tuple[float, np.ndarray]:
    """Minimize ``||y - b0 - X b||^2 + lam ||b||^2``; the intercept is unpenalized."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if fit_intercept:
        xm, ym = X.mean(axis=0), y.mean()
        Xc, yc = X - xm, y - ym
    else:
        Xc, yc = X, y
    p = X.shape[1]
    A = Xc.T @ Xc + lam * np.eye(p)
    coef = np.linalg.lstsq(A, Xc.T @ yc, rcond=None)[0] if lam == 0 else np.linalg.solve(A, Xc.T @ yc)
    b0 = float(ym - xm @ coef) if fit_intercept else 0.0
    return b0, coef


def ridge_gcv(X, y, grid=RIDGE_GRID) -> tuple[float, float, np.ndarray]:
    """Ridge fit on standardized columns with the penalty picked by generalized CV.

    Returns ``(intercept, coef, lam)`` with ``coef`` on the raw column scale.
    Constant columns get a zero coefficient.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    xm = X.mean(axis=0)
    sd = X.std(axis=0)
    live = sd > 1e-12
    coef = np.zeros(p)
    ym = y.mean()
    if not live.any():
        return float(ym), coef, float("nan")
    Z = (X[:, live] - xm[live]) / sd[live]
    yc = y - ym
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    uty = U.T @ yc
    resid_perp = yc @ yc - uty @ uty
    best = (np.inf, grid[0])
    s2 = s * s
    for lam in grid:
        d = s2 / (s2 + lam)
        rss = resid_perp + np.sum(((1 - d) * uty) ** 2)
        dof = n - d.sum() - 1.0
        if dof <= 0:
            continue
        gcv = n * rss / dof**2
        if gcv < best[0]:
            best = (gcv, lam)
    lam = float(best[1])
    z_coef = Vt.T @ (s / (s2 + lam) * uty)
    coef[live] = z_coef / sd[live]
    return float(ym - xm @ coef), coef, lam


@dataclass(frozen=True, eq=False)
class CrossFitMuHat:
    """Forward cross-fitted per-arm linear predictions.

    ``intercepts[m, j]`` and ``coefs[m, j]`` predict arm ``arms[j]`` for rows in
    subset ``m``; they were fit only on rows of subsets ``0..m-1``.
    """

    arms: tuple[int, ...]
    bounds: np.ndarray
    intercepts: np.ndarray
    coefs: np.ndarray
    X: np.ndarray

    @property
    def n_subsets(self) -> int:
        return len(self.bounds) - 1

    def subset_of(self, rows) -> np.ndarray:
        return np.searchsorted(self.bounds, np.asarray(rows), side="right") - 1

    def predict(self, X, subset: int) -> np.ndarray:
        """Predictions for arbitrary contexts using the model of ``subset``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercepts[subset][None, :] + X @ self.coefs[subset].T

    def mu_rows(self) -> np.ndarray:
        """``(n, len(arms))`` matrix of predictions for the rows the model was fit on."""
        m = self.subset_of(np.arange(len(self.X)))
        return self.intercepts[m] + np.einsum("np,nkp->nk", self.X, self.coefs[m])


def fit_crossfit_mu(log_or_X, w=None, y=None, subset_size: int = 50, arms: Sequence[int] | None = None,
                    ridge_lambda: float | None = None) -> CrossFitMuHat:
    """Forward cross-fit of per-arm ridge outcome models.

    Rows are split chronologically into consecutive subsets of ``subset_size``.
    Predictions for subset ``m`` come from ridge fits on all rows of earlier
    subsets, per arm; arms with fewer than ``p + 1`` earlier rows fall back to
    their earlier-row mean, and arms with none predict 0. Subset 0 is all zeros.
    ``ridge_lambda=None`` picks the penalty by generalized cross-validation.
    """
    if isinstance(log_or_X, ObservationLog):
        X, w, y = log_or_X.X, log_or_X.w, log_or_X.y
        if arms is None:
            arms = tuple(range(log_or_X.arms.K))
    else:
        X = log_or_X
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    if subset_size < 1:
        raise ValidationError("subset_size must be >= 1")
    if arms is None:
        arms = tuple(range(int(w.max()) + 1 if len(w) else 0))
    arms = tuple(int(a) for a in arms)
    n, p = X.shape
    bounds = np.append(np.arange(0, n, subset_size), n) if n else np.array([0, 0])
    n_sub = len(bounds) - 1
    intercepts = np.zeros((n_sub, len(arms)))
    coefs = np.zeros((n_sub, len(arms), p))
    for m in range(1, n_sub):
        end = bounds[m]
        for j, arm in enumerate(arms):
            rows = np.flatnonzero(w[:end] == arm)
            if len(rows) == 0:
                continue
            if len(rows) < p + 1:
                intercepts[m, j] = y[rows].mean()
                continue
            if ridge_lambda is None:
                b0, b, _ = ridge_gcv(X[rows], y[rows])
            else:
                b0, b = fit_ridge(X[rows], y[rows], ridge_lambda)
            intercepts[m, j] = b0
            coefs[m, j] = b
    return CrossFitMuHat(arms, bounds, intercepts, coefs, X)


# -- L1-penalized regression ---------------------------------------------

@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def _cd_solve(G, c, lam, beta, tol, max_iter):
    p = c.shape[0]
    half = 0.5 * lam
    for it in range(max_iter):
        max_step = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 1e-12:
                beta[j] = 0.0
                continue
            rho = c[j]
            for k in range(p):
                rho -= G[j, k] * beta[k]
            rho += gjj * beta[j]
            new = _soft(rho, half) / gjj
            step = abs(new - beta[j]) * np.sqrt(gjj)
            max_step = max(max_step, step)
            beta[j] = new
        if max_step < tol:
            return it + 1
    return max_iter


@njit(cache=True)
def _cd_batch(Gs, cs, lams, tol, max_iter):
    B, p = cs.shape
    out = np.zeros((B, p))
    for b in range(B):
        _cd_solve(Gs[b], cs[b], lams[b], out[b], tol, max_iter)
    return out


@njit(cache=True)
def _cd_path(G, c, lams, tol, max_iter):
    out = np.zeros((lams.shape[0], c.shape[0]))
    beta = np.zeros(c.shape[0])
    for i in range(lams.shape[0]):
        _cd_solve(G, c, lams[i], beta, tol, max_iter)
        out[i] = beta
    return out


def _gram(X, y, weights, fit_intercept):
    if weights is None:
        weights = np.ones(len(y))
    sw = weights.sum()
    if fit_intercept and sw > 0:
        xm = weights @ X / sw
        ym = weights @ y / sw
    else:
        xm, ym = np.zeros(X.shape[1]), 0.0
    Xc = X - xm
    yc = y - ym
    G = (Xc * weights[:, None]).T @ Xc
    c = (Xc * weights[:, None]).T @ yc
    return G, c, xm, ym, float(weights @ (yc * yc))


def _tol(yy: float) -> float:
    return 1e-11 * max(1.0, np.sqrt(yy))


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    intercept: float
    lam: float

    def predict(self, X) -> np.ndarray:
        return self.intercept + np.atleast_2d(X) @ self.coef


def fit_lasso(X, y, lam: float, fit_intercept: bool = False, weights=None,
              max_iter: int = 100_000) -> LassoFit:
    """Cyclic coordinate descent for ``sum w_i (y_i - b0 - x_i'b)^2 + lam * ||b||_1``.

    Coordinates are visited in column order, so the result is deterministic.
    Columns with zero (centered) norm get a zero coefficient.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) == 0:
        raise ValidationError("fit_lasso needs at least one row")
    if lam < 0:
        raise ValidationError("lam must be non-negative")
    wts = None if weights is None else np.asarray(weights, dtype=float)
    G, c, xm, ym, yy = _gram(X, y, wts, fit_intercept)
    beta = np.zeros(X.shape[1])
    if np.isinf(lam):
        return LassoFit(beta, float(ym), float(lam))
    _cd_solve(G, c, float(lam), beta, _tol(yy), max_iter)
    return LassoFit(beta, float(ym - xm @ beta), float(lam))


def lasso_lambda_max(X, y, fit_intercept: bool = True) -> float:
    """Smallest penalty for which the solution is all zeros."""
    G, c, *_ = _gram(np.asarray(X, float), np.asarray(y, float), None, fit_intercept)
    return float(2 * np.max(np.abs(c))) if len(c) else 0.0


def lasso_cv_lambda(X, y, rng: np.random.Generator, n_folds: int = 5, n_lambdas: int = 20,
                    ratio: float = 1e-3, fit_intercept: bool = True) -> float:
    """Penalty with the lowest K-fold CV error on a log grid from lambda_max down."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    lam_max = lasso_lambda_max(X, y, fit_intercept) if n else 0.0
    if n < 2 or lam_max <= 0:
        return lam_max
    grid = lam_max * np.logspace(0, np.log10(ratio), n_lambdas)
    folds = min(n_folds, n)
    assign = rng.permutation(n) % folds
    err = np.zeros(n_lambdas)
    for f in range(folds):
        tr, te = assign != f, assign == f
        G, c, xm, ym, yy = _gram(X[tr], y[tr], None, fit_intercept)
        # CV only ranks penalties, so a looser tolerance is enough here
        path = _cd_path(G, c, grid, 1e-7 * max(1.0, np.sqrt(yy)), 10_000)
        pred = ym + (X[te] - xm) @ path.T
        err += ((y[te][:, None] - pred) ** 2).sum(axis=0)
    return float(grid[int(np.argmin(err))])


def bootstrap_lasso(X, y, counts: np.ndarray, lam: float, fit_intercept: bool = True):
    """Weighted lasso fits, one per row of ``counts`` (bootstrap multiplicities).

    Returns ``(intercepts, coefs, ok)``; ``ok[m]`` is False when the m-th
    sample holds none of these rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    counts = np.asarray(counts, dtype=float)
    M, p = counts.shape[0], X.shape[1]
    sw = counts.sum(axis=1)
    ok = sw > 0
    safe = np.where(ok, sw, 1.0)
    xm = counts @ X / safe[:, None]
    ym = counts @ y / safe
    if not fit_intercept:
        xm[:] = 0.0
        ym[:] = 0.0
    outer = (X[:, :, None] * X[:, None, :]).reshape(len(X), p * p)
    XtWX = (counts @ outer).reshape(M, p, p)
    XtWy = counts @ (X * y[:, None])
    Gs = XtWX - sw[:, None, None] * xm[:, :, None] * xm[:, None, :]
    cs = XtWy - sw[:, None] * xm * ym[:, None]
    yy = float(np.max(counts @ (y * y))) if M else 0.0
    coefs = _cd_batch(np.ascontiguousarray(Gs), np.ascontiguousarray(cs),
                      np.full(M, float(lam)), _tol(yy), 10_000)
    intercepts = ym - np.einsum("mp,mp->m", xm, coefs)
    return intercepts, coefs, ok


# -- ordinal (proportional-odds) model ----------------------------------

def ordinal_feature_map(X, w, K: int) -> np.ndarray:
    """Covariates, their squares, K-1 arm dummies, and covariate x dummy interactions.

    Arm 0 is the baseline. Column order: ``x``, ``x**2``, ``d_1..d_{K-1}``,
    then ``x * d_1``, ..., ``x * d_{K-1}`` (one block of ``p`` per arm).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    w = np.broadcast_to(np.asarray(w, dtype=np.int64), (n,))
    D = np.zeros((n, K - 1))
    sel = w > 0
    D[np.flatnonzero(sel), w[sel] - 1] = 1.0
    inter = (D[:, :, None] * X[:, None, :]).reshape(n, (K - 1) * p)
    return np.hstack([X, X * X, D, inter])


def ordinal_feature_names(names: Sequence[str], aliases: Sequence[str]) -> list[str]:
    out = list(names) + [f"{n}^2" for n in names] + [f"arm={a}" for a in aliases[1:]]
    for a in aliases[1:]:
        out += [f"{n}*arm={a}" for n in names]
    return out


def feature_map_dim(p: int, K: int) -> int:
    return 2 * p + (K - 1) + p * (K - 1)


def thresholds_from_params(u: np.ndarray) -> np.ndarray:
    theta = np.empty_like(u)
    theta[0] = u[0]
    if len(u) > 1:
        theta[1:] = u[0] + np.cumsum(np.exp(u[1:]))
    return theta


def params_from_thresholds(theta: np.ndarray) -> np.ndarray:
    u = np.empty_like(theta)
    u[0] = theta[0]
    u[1:] = np.log(np.diff(theta))
    return u


def ordinal_objective(params: np.ndarray, Z: np.ndarray, levels: np.ndarray, lam: float,
                      n_levels: int) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its gradient.

    ``params = [u_1..u_{L-1}, beta]`` with thresholds ``theta_1 = u_1`` and
    ``theta_j = theta_{j-1} + exp(u_j)``, so any real vector is feasible.
    ``P(Y <= j | z) = sigmoid(theta_j - z'beta)``; levels are 1-based.
    """
    L = n_levels
    u, beta = params[:L - 1], params[L - 1:]
    theta = thresholds_from_params(u)
    ext = np.concatenate([[-np.inf], theta, [np.inf]])
    gaps = np.concatenate([[np.inf], np.exp(u[1:]), [np.inf]]) if L > 2 else np.array([np.inf, np.inf])
    eta = Z @ beta
    a = ext[levels] - eta
    b = ext[levels - 1] - eta
    gap = gaps[levels - 1]
    logp = np.log(-np.expm1(-gap)) + log_expit(a) + log_expit(-b)
    f = -logp.sum() + lam * beta @ beta
    inv = 1.0 / np.expm1(gap)
    da = inv + expit(-a)
    db = -inv - expit(b)
    g_ext = -(np.bincount(levels, weights=da, minlength=L + 1)
              + np.bincount(levels - 1, weights=db, minlength=L + 1))
    g_theta = g_ext[1:L]
    g_beta = Z.T @ (da + db) + 2 * lam * beta
    tail = np.cumsum(g_theta[::-1])[::-1]
    g_u = np.empty(L - 1)
    g_u[0] = tail[0]
    if L > 2:
        g_u[1:] = np.exp(u[1:]) * tail[1:]
    return float(f), np.concatenate([g_u, g_beta])


@dataclass(frozen=True, eq=False)
class OrdinalModel:
    """Fitted proportional-odds model over a fixed feature map.

    ``coef`` acts on standardized features ``(F - center) / scale``; outcome
    level ``j`` (1-based) maps linearly onto ``outcome_range``.
    """

    thresholds: np.ndarray
    coef: np.ndarray
    lam: float
    center: np.ndarray
    scale: np.ndarray
    outcome_range: tuple[float, float] = (-10.0, 10.0)
    grad_norm: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_levels(self) -> int:
        return len(self.thresholds) + 1

    @property
    def level_values(self) -> np.ndarray:
        lo, hi = self.outcome_range
        return np.linspace(lo, hi, self.n_levels)

    def linear(self, F) -> np.ndarray:
        return ((np.atleast_2d(F) - self.center) / self.scale) @ self.coef

    def cdf(self, F) -> np.ndarray:
        """``P(Y <= j)`` for ``j = 1..L-1``, shape ``(n, L-1)``."""
        return expit(self.thresholds[None, :] - self.linear(F)[:, None])

    def predict_proba(self, F) -> np.ndarray:
        c = self.cdf(F)
        n = c.shape[0]
        full = np.hstack([np.zeros((n, 1)), c, np.ones((n, 1))])
        return np.diff(full, axis=1)

    def expected_value(self, F) -> np.ndarray:
        v = self.level_values
        # E[v] = v_L - sum_j (v_{j+1} - v_j) P(Y <= j)
        return v[-1] - self.cdf(F) @ np.diff(v)

    def sample_levels(self, F, u) -> np.ndarray:
        """Inverse-CDF draw of 1-based levels from uniforms ``u``."""
        return 1 + (np.asarray(u)[:, None] >= self.cdf(F)).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "thresholds": self.thresholds.tolist(),
            "coef": self.coef.tolist(),
            "lam": self.lam,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "outcome_range": list(self.outcome_range),
            "grad_norm": self.grad_norm,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> OrdinalModel:
        return cls(np.array(d["thresholds"]), np.array(d["coef"]), float(d["lam"]),
                   np.array(d["center"]), np.array(d["scale"]), tuple(d["outcome_range"]),
                   float(d.get("grad_norm", 0.0)), dict(d.get("meta", {})))


def levels_from_outcomes(y, n_levels: int, outcome_range=(-10.0, 10.0)) -> np.ndarray:
    lo, hi = outcome_range
    pos = (np.asarray(y, dtype=float) - lo) / (hi - lo) * (n_levels - 1)
    levels = np.rint(pos).astype(np.int64) + 1
    if np.any(np.abs(pos - np.rint(pos)) > 1e-9) or np.any((levels < 1) | (levels > n_levels)):
        raise ValidationError("outcomes are not on the ordinal level grid")
    return levels


def fit_ordinal(F, levels, lam: float, n_levels: int, outcome_range=(-10.0, 10.0),
                standardize: bool = True, gtol: float = 1e-6, meta: dict | None = None) -> OrdinalModel:
    """Maximize the proportional-odds log-likelihood minus ``lam * ||beta||^2``.

    Raises if the final gradient norm (in the unconstrained threshold
    parametrization) exceeds ``gtol``.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    levels = np.asarray(levels, dtype=np.int64)
    if not np.all(np.isfinite(F)):
        raise ValidationError("fit_ordinal: non-finite features")
    if lam <= 0:
        raise ValidationError("fit_ordinal: lam must be positive")
    if np.any((levels < 1) | (levels > n_levels)):
        raise ValidationError("fit_ordinal: level outside 1..L")
    L = n_levels
    d = F.shape[1]
    if standardize:
        center = F.mean(axis=0)
        scale = F.std(axis=0)
        scale[scale < 1e-12] = 1.0
    else:
        center, scale = np.zeros(d), np.ones(d)
    Z = (F - center) / scale
    observed = np.unique(levels)
    m = len(observed)
    if m < 2:
        raise ValidationError("fit_ordinal: need at least two distinct levels")
    comp = np.searchsorted(observed, levels) + 1
    counts = np.bincount(comp, minlength=m + 1)[1:]
    cum = np.cumsum(counts)[:-1] / counts.sum()
    theta0 = np.log(cum / (1 - cum))
    x0 = np.concatenate([params_from_thresholds(theta0), np.zeros(d)])

    def fun(x):
        return ordinal_objective(x, Z, comp, lam, m)

    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 20_000, "maxcor": 30, "gtol": gtol * 0.1, "ftol": 1e-16})
    x = res.x
    f, g = fun(x)
    gn = float(np.linalg.norm(g))
    if gn > gtol:
        x, gn = _newton_polish(fun, x, gtol)
    if gn > gtol:
        raise RuntimeError(f"fit_ordinal did not converge: gradient norm {gn:.3g}")
    theta = _expand_thresholds(thresholds_from_params(x[:m - 1]), observed, L)
    return OrdinalModel(theta, x[m - 1:].copy(), float(lam), center, scale,
                        tuple(float(v) for v in outcome_range), gn, dict(meta or {}))


EMPTY_LEVEL_GAP = 1e-6
EMPTY_TAIL = 30.0


def _expand_thresholds(theta_obs: np.ndarray, observed: np.ndarray, L: int) -> np.ndarray:
    """Map thresholds fit on the observed levels back onto all ``L`` levels.

    Unobserved levels carry no likelihood, so their boundaries collapse onto a
    neighbour; they are kept strictly increasing with a tiny gap, and pushed
    far into the tails beyond the extreme observed levels.
    """
    m = len(observed)
    j = np.arange(1, L)
    c = np.searchsorted(observed, j, side="right")
    theta = np.empty(L - 1)
    inner = (c >= 1) & (c <= m - 1)
    theta[inner] = theta_obs[c[inner] - 1]
    theta[c == 0] = theta_obs[0] - EMPTY_TAIL
    theta[c == m] = theta_obs[-1] + EMPTY_TAIL
    for i in range(1, L - 1):
        theta[i] = max(theta[i], theta[i - 1] + EMPTY_LEVEL_GAP)
    return theta


def _newton_polish(fun, x, gtol, max_steps: int = 50):
    """Damped Newton steps with a finite-difference Hessian of the analytic gradient."""
    f, g = fun(x)
    n = len(x)
    for _ in range(max_steps):
        gn = float(np.linalg.norm(g))
        if gn <= gtol:
            break
        h = 1e-6
        H = np.empty((n, n))
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            H[:, i] = (fun(x + e)[1] - fun(x - e)[1]) / (2 * h)
        H = 0.5 * (H + H.T) + 1e-10 * np.eye(n)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        while t > 1e-8:
            fn, gnew = fun(x - t * step)
            if fn <= f + 1e-12 * abs(f):
                break
            t *= 0.5
        x = x - t * step
        f, g = fn, gnew
    return x, float(np.linalg.norm(g))


def select_regularization_one_se(X, w, y, K: int, lambdas: Sequence[float], rng: np.random.Generator,
                                 folds: int = 10, n_levels: int = 21, outcome_range=(-10.0, 10.0)):
    """One-standard-error rule over K-fold CV of the ordinal outcome model.

    Squared errors are computed on outcomes rescaled to [0, 1]. Returns
    ``(selected, cv_mean, cv_se)``; ``selected`` holds every penalty whose
    mean CV error is at most the best mean plus the best penalty's SE.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < folds:
        raise ValidationError(f"need at least {folds} rows for {folds}-fold CV, got {n}")
    lo, hi = outcome_range
    levels = levels_from_outcomes(y, n_levels, outcome_range)
    F = ordinal_feature_map(X, w, K)
    assign = rng.permutation(n) % folds
    lambdas = [float(v) for v in lambdas]
    mse = np.zeros((len(lambdas), folds))
    for f in range(folds):
        tr, te = assign != f, assign == f
        for i, lam in enumerate(lambdas):
            model = fit_ordinal(F[tr], levels[tr], lam, n_levels, outcome_range)
            pred = (model.expected_value(F[te]) - lo) / (hi - lo)
            mse[i, f] = np.mean(((y[te] - lo) / (hi - lo) - pred) ** 2)
    mean = mse.mean(axis=1)
    se = mse.std(axis=1, ddof=1) / np.sqrt(folds)
    best = int(np.argmin(mean))
    bound = mean[best] + se[best]
    selected = [lam for lam, m in zip(lambdas, mean) if m <= bound]
    return selected, mean, se


def one_se_from_scores(lambdas: Sequence[float], mean, se) -> list[float]:
    mean = np.asarray(mean, dtype=float)
    best = int(np.argmin(mean))
    return [float(l) for l, m in zip(lambdas, mean) if m <= mean[best] + se[best]]
