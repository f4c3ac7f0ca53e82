"""Numeric kernels: logistic-likelihood optimizer, forest importances,
Nelder-Mead simplex, AIC, rank-sum test, and seedable rng streams."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from sklearn.ensemble import RandomForestClassifier


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *key); same key, same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


# --- logistic regression by iteratively reweighted least squares -------------

@dataclass
class IrlsResult:
    beta: np.ndarray
    log_lik: float
    iterations: int
    converged: bool


def sigmoid(eta):
    """Overflow-safe logistic function."""
    eta = np.asarray(eta, dtype=float)
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    expe = np.exp(eta[~pos])
    out[~pos] = expe / (1.0 + expe)
    return out


def _log_lik(X, y, beta):
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def irls_fit(X, y, ridge: float = 0.0, tol: float = 1e-8, max_iter: int = 100,
             trace: list | None = None) -> IrlsResult:
    """Maximize the (optionally ridge-penalized) binomial log-likelihood.

    Newton steps with step halving, so the penalized objective never decreases.
    Raises numpy.linalg.LinAlgError when the weighted normal system is singular
    (the caller may retry with ridge > 0).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite design matrix or labels")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")

    n, m = X.shape
    beta = np.zeros(m)
    penalized = lambda b: _log_lik(X, y, b) - 0.5 * ridge * float(b @ b)
    current = penalized(beta)
    if trace is not None:
        trace.append(current)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = X @ beta
        mu = sigmoid(eta)
        weights = mu * (1.0 - mu)
        hessian = X.T @ (weights[:, None] * X) + ridge * np.eye(m)
        gradient = X.T @ (y - mu) - ridge * beta
        step = np.linalg.solve(hessian, gradient)
        if not np.all(np.isfinite(step)):
            raise np.linalg.LinAlgError("non-finite Newton step")
        scale = 1.0
        candidate = penalized(beta + step)
        while candidate < current and scale > 1e-10:
            scale *= 0.5
            candidate = penalized(beta + scale * step)
        beta = beta + scale * step
        if trace is not None:
            trace.append(candidate)
        if candidate - current < tol:
            current = candidate
            converged = True
            break
        current = candidate
    return IrlsResult(beta=beta, log_lik=_log_lik(X, y, beta),
                      iterations=it, converged=converged)


# --- random-forest impurity importances ---------------------------------------

def forest_importance(X, y, n_trees: int = 100, max_features: int | None = None,
                      rng: np.random.Generator | None = None,
                      max_depth: int | None = None) -> np.ndarray:
    """Normalized total Gini-decrease importance per feature.

    Bootstrap-bagged classification trees with ``max_features`` candidate
    features per split (default: ceil(sqrt(n_features))).  Importances sum to
    one unless no tree ever splits, in which case they are all zero.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes")
    if max_features is None:
        max_features = max(1, math.ceil(math.sqrt(X.shape[1])))
    rng = rng if rng is not None else np.random.default_rng(0)
    forest = RandomForestClassifier(
        n_estimators=n_trees,
        criterion="gini",
        max_features=min(max_features, X.shape[1]),
        max_depth=max_depth,
        bootstrap=True,
        random_state=int(rng.integers(2**31 - 1)),
    )
    forest.fit(X, y)
    importances = np.asarray(forest.feature_importances_, dtype=float)
    total = importances.sum()
    if total <= 0:
        return np.zeros_like(importances)
    return importances / total


# --- Nelder-Mead simplex -------------------------------------------------------

@dataclass(frozen=True)
class SimplexConfig:
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    tol: float = 1e-8
    max_iter: int = 2000


@dataclass
class NmResult:
    x: np.ndarray
    fx: float
    iterations: int
    converged: bool


def nelder_mead(f, x0, cfg: SimplexConfig = SimplexConfig()) -> NmResult:
    """Minimize f by the reflect/expand/contract/shrink simplex loop.

    Terminates when the simplex diameter drops below cfg.tol or after
    cfg.max_iter iterations (the latter leaves ``converged`` False).
    """
    x0 = np.asarray(x0, dtype=float)
    dim = x0.size
    simplex = [x0.copy()]
    for i in range(dim):
        vertex = x0.copy()
        vertex[i] += 0.05 * vertex[i] if vertex[i] != 0 else 0.00025
        simplex.append(vertex)
    values = [float(f(v)) for v in simplex]

    def order():
        idx = np.argsort(values, kind="stable")
        return [simplex[i] for i in idx], [values[i] for i in idx]

    simplex, values = order()
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        diameter = max(np.max(np.abs(v - simplex[0])) for v in simplex[1:])
        if diameter < cfg.tol:
            converged = True
            break
        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        reflected = centroid + cfg.reflection * (centroid - worst)
        fr = float(f(reflected))
        if fr < values[0]:
            expanded = centroid + cfg.expansion * cfg.reflection * (centroid - worst)
            fe = float(f(expanded))
            if fe < fr:
                simplex[-1], values[-1] = expanded, fe
            else:
                simplex[-1], values[-1] = reflected, fr
        elif fr < values[-2]:
            simplex[-1], values[-1] = reflected, fr
        else:
            if fr < values[-1]:
                contracted = centroid + cfg.contraction * cfg.reflection * (centroid - worst)
            else:
                contracted = centroid - cfg.contraction * (centroid - worst)
            fc = float(f(contracted))
            if fc < min(fr, values[-1]):
                simplex[-1], values[-1] = contracted, fc
            else:
                best = simplex[0]
                simplex = [best] + [best + cfg.shrink * (v - best) for v in simplex[1:]]
                values = [values[0]] + [float(f(v)) for v in simplex[1:]]
        simplex, values = order()
    return NmResult(x=simplex[0].copy(), fx=values[0], iterations=it, converged=converged)


# --- model comparison and rank statistics --------------------------------------

def aic(log_lik: float, k: int) -> float:
    """Akaike information criterion for a k-parameter fit."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return 2.0 * k - 2.0 * log_lik


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def mann_whitney_u(a, b, alternative: str = "two-sided") -> tuple[float, float]:
    """Rank-sum U statistic of ``a`` versus ``b`` and its p-value.

    Exact enumeration of the permutation distribution when both samples have
    fewer than 8 observations; otherwise a tie-corrected normal approximation
    with continuity correction.  ``alternative`` is 'less', 'greater', or
    'two-sided' (stochastic ordering of a relative to b).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be non-empty")
    if alternative not in ("less", "greater", "two-sided"):
        raise ValueError(f"unknown alternative {alternative!r}")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_obs = float(np.sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0)

    if n1 < 8 and n2 < 8:
        stats = []
        base = n1 * (n1 + 1) / 2.0
        for chosen in combinations(range(n1 + n2), n1):
            stats.append(float(np.sum(ranks[list(chosen)]) - base))
        stats = np.asarray(stats)
        eps = 1e-9
        p_less = float(np.mean(stats <= u_obs + eps))
        p_greater = float(np.mean(stats >= u_obs - eps))
    else:
        mean = n1 * n2 / 2.0
        n = n1 + n2
        _, counts = np.unique(pooled, return_counts=True)
        tie_term = float(np.sum(counts**3 - counts)) / (n * (n - 1))
        var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
        if var <= 0:
            p_less = p_greater = 1.0
        else:
            sd = math.sqrt(var)
            p_less = 1.0 - _normal_sf((u_obs - mean + 0.5) / sd)
            p_greater = _normal_sf((u_obs - mean - 0.5) / sd)

    if alternative == "less":
        p = p_less
    elif alternative == "greater":
        p = p_greater
    else:
        p = min(1.0, 2.0 * min(p_less, p_greater))
    return u_obs, p
