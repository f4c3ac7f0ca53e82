"""Safe-WCET border inference: feature reduction, second-order logistic model
with stepwise term selection, imbalance pruning, refinement with boundary-
focused sampling, cross-validated precision, and best-size range selection.

Conventions: the model predicts the deadline-miss probability, so rows labelled
``unsafe`` are the positive class *of the regression*; for precision/recall the
positive class is ``safe`` (a false positive is an unsafe vector classified
safe, the hazardous error).  The safe region at probability p is
``{w : predicted miss probability <= p}``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .gasearch import Individual, LabelledDataset
from .numerics import (
    SimplexConfig,
    aic,
    forest_importance,
    irls_fit,
    nelder_mead,
    sigmoid,
    substream,
)
from .simulator import UNSAFE, label_scenario, simulate
from .taskmodel import TaskSet

INTERCEPT = ("intercept",)

P_FLOOR = 1e-9
P_CAP = 0.999999
P_TOL = 1e-6

# substream tags so independent consumers never share a stream
_TAG_SAMPLE = 3
_TAG_KFOLD = 4
_TAG_FOREST = 5
_TAG_BEST_SIZE = 6


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


class DegenerateDatasetError(ValueError):
    """Dataset carries a single label; nothing can be learned from it."""


class EmptySafeRegionError(ValueError):
    """No point inside the bounds is classified safe at the selected p."""


@dataclass
class ReducedDataset:
    """Labelled rows projected onto the retained uncertain-task columns."""

    columns: tuple[str, ...]
    X: np.ndarray  # (rows, columns) WCET values in ticks
    y: np.ndarray  # True = unsafe
    bounds: dict[str, tuple[int, int]]  # current [wmin, wmax], shrinks on pruning
    original_bounds: dict[str, tuple[int, int]]

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ReducedDataset":
        return ReducedDataset(self.columns, self.X[idx], self.y[idx],
                              dict(self.bounds), dict(self.original_bounds))

    def append_rows(self, X_new, y_new) -> None:
        self.X = np.vstack([self.X, np.asarray(X_new, dtype=float)])
        self.y = np.concatenate([self.y, np.asarray(y_new, dtype=bool)])

    @classmethod
    def from_labelled(cls, d: LabelledDataset) -> "ReducedDataset":
        X = np.array([row.wcets for row in d.rows], dtype=float).reshape(len(d.rows), len(d.columns))
        y = np.array([row.label == UNSAFE for row in d.rows], dtype=bool)
        bounds = {c: tuple(d.bounds[c]) for c in d.columns}
        return cls(tuple(d.columns), X, y, dict(bounds), dict(bounds))


@dataclass
class RsmModel:
    """Second-order logistic model over scaled WCET variables.

    Columns are affinely mapped to [0, 1] by the recorded per-column
    (low, span) pairs before any term is evaluated; coefficients live in that
    scaled space.
    """

    columns: tuple[str, ...]
    terms: tuple[tuple, ...]
    coef: np.ndarray
    scaling: tuple[tuple[float, float], ...]  # (low, span) per column, ticks
    log_lik: float = float("nan")
    stabilized: bool = False

    def scale(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lows = np.array([s[0] for s in self.scaling])
        spans = np.array([s[1] for s in self.scaling])
        return (X - lows) / spans

    def linear_predictor(self, X) -> np.ndarray:
        return design_matrix(self.scale(X), self.terms) @ self.coef

    def predict_miss_probability(self, X) -> np.ndarray:
        return sigmoid(self.linear_predictor(X))

    def gradient_ticks(self, X) -> np.ndarray:
        """d(linear predictor)/d(WCET ticks), one row per input point."""
        U = self.scale(X)
        grads = np.zeros_like(U)
        for term, c in zip(self.terms, self.coef):
            kind = term[0]
            if kind == "lin":
                grads[:, term[1]] += c
            elif kind == "quad":
                grads[:, term[1]] += 2.0 * c * U[:, term[1]]
            elif kind == "inter":
                i, j = term[1], term[2]
                grads[:, i] += c * U[:, j]
                grads[:, j] += c * U[:, i]
        spans = np.array([s[1] for s in self.scaling])
        return grads / spans

    @property
    def k(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class SafeBorder:
    """Iso-probability contour of the model at miss probability p; the region
    at or below p is safe."""

    model: RsmModel
    p: float

    def classify_safe(self, X) -> np.ndarray:
        return self.model.predict_miss_probability(X) <= self.p


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # default ceil(sqrt(n_columns))
    max_depth: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class RefineConfig:
    ns: int = 100  # WCET samples per solution per refinement
    nl: int = 100  # refinement budget
    pt: float = 0.99  # precision threshold for early stopping
    k_folds: int = 10
    r_candidates: int = 100  # candidates per distance-based draw
    sampling: str = "distance"  # "distance" | "uniform"
    seed: int = 0
    workers: int = 1
    reselect_terms: bool = False  # re-run stepwise search each refinement

    def __post_init__(self):
        if min(self.ns, self.k_folds, self.r_candidates, self.workers) < 1 or self.nl < 0:
            raise ValueError("counts must be positive")
        if not (0.0 < self.pt < 1.0):
            raise ValueError("pt must lie in (0, 1)")
        if self.sampling not in ("distance", "uniform"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")


# --- term machinery -----------------------------------------------------------

def rsm_term_pool(n_columns: int) -> list[tuple]:
    """Full second-order pool: linear, quadratic, pairwise interactions."""
    pool = [("lin", i) for i in range(n_columns)]
    pool += [("quad", i) for i in range(n_columns)]
    pool += [("inter", i, j) for i in range(n_columns) for j in range(i + 1, n_columns)]
    return pool


def design_matrix(U: np.ndarray, terms) -> np.ndarray:
    cols = []
    for term in terms:
        kind = term[0]
        if kind == "intercept":
            cols.append(np.ones(len(U)))
        elif kind == "lin":
            cols.append(U[:, term[1]])
        elif kind == "quad":
            cols.append(U[:, term[1]] ** 2)
        elif kind == "inter":
            cols.append(U[:, term[1]] * U[:, term[2]])
        else:
            raise ValueError(f"unknown term {term!r}")
    return np.column_stack(cols)


# --- operations ----------------------------------------------------------------

def retained_columns(importances: np.ndarray, columns) -> list[str]:
    """Columns whose importance exceeds the mean importance (1/n for a
    normalized vector); falls back to the single best column if none qualify."""
    columns = list(columns)
    threshold = 1.0 / len(columns)
    kept = [c for c, imp in zip(columns, importances) if imp > threshold]
    if not kept:
        kept = [columns[int(np.argmax(importances))]]
    return kept


def reduce_dimension(d: LabelledDataset, cfg: ForestConfig = ForestConfig()) -> ReducedDataset:
    """Drop uncertain-task columns whose forest importance is at most average.

    Keeps every row.  A single-column dataset bypasses the forest entirely
    (the mean-importance threshold is meaningless for one feature).
    """
    full = ReducedDataset.from_labelled(d)
    if len(np.unique(full.y)) < 2:
        raise DegenerateDatasetError("dataset has a single label")
    if len(full.columns) <= 1:
        return full
    importances = forest_importance(
        full.X, full.y.astype(int),
        n_trees=cfg.n_trees, max_features=cfg.max_features,
        max_depth=cfg.max_depth, rng=substream(cfg.seed, _TAG_FOREST),
    )
    kept = retained_columns(importances, full.columns)
    idx = [full.columns.index(c) for c in kept]
    return ReducedDataset(
        columns=tuple(kept),
        X=full.X[:, idx],
        y=full.y,
        bounds={c: full.bounds[c] for c in kept},
        original_bounds={c: full.original_bounds[c] for c in kept},
    )


def _scaling_from(d: ReducedDataset) -> tuple[tuple[float, float], ...]:
    out = []
    for c in d.columns:
        lo, hi = d.original_bounds[c]
        out.append((float(lo), float(hi - lo)))
    return tuple(out)


def fit_logistic(d: ReducedDataset, terms) -> RsmModel:
    """Fit the given terms by penalty-free IRLS, falling back to a ridge-
    stabilized fit (penalty 1e-6, model flagged) on separation or divergence."""
    terms = tuple(terms)
    if len(d) <= len(terms):
        raise ValueError("need more rows than terms")
    scaling = _scaling_from(d)
    model = RsmModel(d.columns, terms, np.zeros(len(terms)), scaling)
    U = model.scale(d.X)
    Xd = design_matrix(U, terms)
    y = d.y.astype(float)
    stabilized = False
    try:
        res = irls_fit(Xd, y)
        diverged = (
            not np.all(np.isfinite(res.beta))
            or np.max(np.abs(res.beta)) > 1e4
            or not res.converged
            or res.log_lik > -1e-6  # perfect separation: likelihood at 1
        )
        if diverged:
            raise np.linalg.LinAlgError("separation or divergence")
    except np.linalg.LinAlgError:
        res = irls_fit(Xd, y, ridge=1e-6)
        stabilized = True
    model.coef = res.beta
    model.log_lik = res.log_lik
    model.stabilized = stabilized
    return model


def stepwise_select(d: ReducedDataset) -> RsmModel:
    """Bidirectional stepwise AIC search over the second-order term pool,
    starting from the intercept-only model."""
    if len(np.unique(d.y)) < 2:
        raise DegenerateDatasetError("dataset has a single label")
    pool = rsm_term_pool(len(d.columns))
    current = [INTERCEPT]
    best_model = fit_logistic(d, current)
    best_aic = aic(best_model.log_lik, best_model.k)
    while True:
        moves = []
        for term in pool:
            if term not in current and len(d) > len(current) + 1:
                moves.append(current + [term])
        for term in current:
            if term != INTERCEPT:
                moves.append([t for t in current if t != term])
        improved = None
        for candidate in moves:
            model = fit_logistic(d, candidate)
            score = aic(model.log_lik, model.k)
            if score < best_aic - 1e-12:
                best_aic = score
                improved = (candidate, model)
        if improved is None:
            return best_model
        current, best_model = improved


def select_probability(model: RsmModel, d: ReducedDataset) -> float:
    """Largest miss probability whose safe region contains no unsafe row.

    Binary search to 1e-6 over p, exploiting that the safe region only grows
    with p; capped at 0.999999 when the dataset has no unsafe rows and floored
    at 1e-9.
    """
    q = model.predict_miss_probability(d.X)
    unsafe_q = q[d.y]

    def no_false_safe(p):
        return not np.any(unsafe_q <= p)

    lo, hi = P_FLOOR, P_CAP
    if unsafe_q.size == 0 or no_false_safe(hi):
        return hi
    if not no_false_safe(lo):
        return lo
    while hi - lo > P_TOL:
        mid = 0.5 * (lo + hi)
        if no_false_safe(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _axis_intercept(model: RsmModel, level: float, col: int,
                    anchor: np.ndarray, lo: float, hi: float) -> float | None:
    """Smallest value in (lo, hi] where the linear predictor crosses `level`
    along the axis of `col`, all other coordinates pinned at `anchor`."""

    def eta(value):
        point = anchor.copy()
        point[col] = value
        return float(model.linear_predictor(point[None, :])[0]) - level

    grid = np.linspace(lo, hi, 513)
    values = [eta(v) for v in grid]
    for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
        if fa == 0.0:
            return float(a) if a > lo else None
        if fa * fb < 0:
            left, right = a, b
            for _ in range(60):
                mid = 0.5 * (left + right)
                if eta(left) * eta(mid) <= 0:
                    right = mid
                else:
                    left = mid
            return 0.5 * (left + right)
    if values[-1] == 0.0:
        return float(grid[-1])
    return None


def handle_imbalance(d: ReducedDataset, model: RsmModel,
                     anchor: str = "wmin") -> tuple[ReducedDataset, float]:
    """Prune WCET ranges that almost surely miss, rebalancing the dataset.

    Finds the smallest probability p_u whose safe region covers every safe row,
    then cuts each column at the p_u contour's intercept along that column's
    axis (other retained columns held at wmin, or at mid-range with
    anchor="center").  Rows outside the shrunk box are dropped.  Returns the
    pruned dataset and p_u.
    """
    if len(np.unique(d.y)) < 2:
        raise DegenerateDatasetError("dataset has a single label")
    if anchor not in ("wmin", "center"):
        raise ValueError(f"unknown anchor {anchor!r}")
    q = model.predict_miss_probability(d.X)
    safe_q = q[~d.y]

    def all_safe_covered(p):
        return bool(np.all(safe_q <= p))

    lo, hi = P_FLOOR, 1.0 - P_FLOOR
    if all_safe_covered(lo):
        p_u = lo
    elif not all_safe_covered(hi):
        p_u = hi
    else:
        while hi - lo > P_TOL:
            mid = 0.5 * (lo + hi)
            if all_safe_covered(mid):
                hi = mid
            else:
                lo = mid
        p_u = hi

    level = logit(p_u)
    anchor_point = np.array([
        float(d.bounds[c][0]) if anchor == "wmin"
        else 0.5 * (d.bounds[c][0] + d.bounds[c][1])
        for c in d.columns
    ])
    new_bounds = dict(d.bounds)
    for i, c in enumerate(d.columns):
        wmin, wmax = d.bounds[c]
        crossing = _axis_intercept(model, level, i, anchor_point, float(wmin), float(wmax))
        if crossing is None:
            continue
        new_bounds[c] = (wmin, max(wmin, min(wmax, int(math.floor(crossing)))))

    uppers = np.array([new_bounds[c][1] for c in d.columns], dtype=float)
    keep = np.all(d.X <= uppers, axis=1)
    return (
        ReducedDataset(d.columns, d.X[keep], d.y[keep], new_bounds, dict(d.original_bounds)),
        p_u,
    )


def _uniform_in_bounds(bounds, columns, rng) -> np.ndarray:
    return np.array(
        [int(rng.integers(bounds[c][0], bounds[c][1] + 1)) for c in columns], dtype=float
    )


def distance_sample(border: SafeBorder, bounds, r: int, rng) -> np.ndarray:
    """Of r uniform draws in the bounds box, the one closest to the border.

    Distance is the first-order estimate |eta(x) - logit(p)| / ||grad eta(x)||
    in tick units; a vanishing gradient off the contour counts as infinitely
    far.
    """
    if r < 1:
        raise ValueError("r must be at least 1")
    columns = border.model.columns
    cand = np.vstack([_uniform_in_bounds(bounds, columns, rng) for _ in range(r)])
    if r == 1:
        return cand[0]
    eta = border.model.linear_predictor(cand)
    gap = np.abs(eta - logit(border.p))
    norms = np.linalg.norm(border.model.gradient_ticks(cand), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(norms > 0, gap / norms, np.where(gap == 0, 0.0, np.inf))
    return cand[int(np.argmin(dist))]


def exact_contour_distance(border: SafeBorder, x, bounds) -> float:
    """Verification mode: Euclidean distance from x to the border contour via
    penalized simplex search (slow; used to sanity-check the first-order
    distance)."""
    x = np.asarray(x, dtype=float)
    level = logit(border.p)
    model = border.model
    spans = np.array([s[1] for s in model.scaling])
    scale = float(np.mean(spans))

    def objective(y):
        gap = model.linear_predictor(y[None, :])[0] - level
        return float(np.sum((y - x) ** 2) + 1e4 * scale**2 * gap**2)

    best = None
    for start_scale in (1.0, 0.5, 1.5):
        res = nelder_mead(objective, x * start_scale + (1 - start_scale) *
                          np.array([bounds[c][0] for c in model.columns], dtype=float),
                          SimplexConfig(tol=1e-10, max_iter=4000))
        d = float(np.linalg.norm(res.x - x))
        if best is None or d < best:
            best = d
    return best


@dataclass(frozen=True)
class PrecisionResult:
    precision: float
    tp: int
    fp: int
    fn: int
    no_positive_predictions: bool = False

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 1.0


def kfold_precision(terms, d: ReducedDataset, k: int, rng) -> PrecisionResult:
    """Shuffled k-fold cross-validated precision of the safe classification.

    Per fold: fit the fixed term set on the other folds, pick p with no false
    safes on the training rows, classify the held-out rows.  True/false
    positives are pooled across folds; the positive class is ``safe``.  With no
    positive predictions at all the precision is 1 by convention and flagged.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(d) < k:
        raise ValueError("fewer rows than folds")
    perm = rng.permutation(len(d))
    folds = np.array_split(perm, k)
    tp = fp = fn = 0
    for f in range(k):
        test_idx = folds[f]
        train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
        train = d.subset(train_idx)
        if len(np.unique(train.y)) < 2:
            # degenerate fold: classify everything as the only label seen
            predicted_safe = np.full(len(test_idx), not bool(train.y[0]))
        else:
            model = fit_logistic(train, terms)
            p = select_probability(model, train)
            predicted_safe = SafeBorder(model, p).classify_safe(d.X[test_idx])
        actual_safe = ~d.y[test_idx]
        tp += int(np.sum(predicted_safe & actual_safe))
        fp += int(np.sum(predicted_safe & ~actual_safe))
        fn += int(np.sum(~predicted_safe & actual_safe))
    if tp + fp == 0:
        return PrecisionResult(1.0, tp, fp, fn, no_positive_predictions=True)
    return PrecisionResult(tp / (tp + fp), tp, fp, fn)


@dataclass(frozen=True)
class RefinementRecord:
    refinement: int
    dataset_size: int
    p: float
    precision: float
    precision_flagged: bool


def _complete_assignment(ts: TaskSet, columns, values, rng) -> dict[str, int]:
    """Full WCET assignment: retained columns fixed, other uncertain tasks
    drawn uniformly from their original ranges, fixed tasks at their value."""
    w = {}
    retained = dict(zip(columns, (int(v) for v in values)))
    for task in ts.tasks:
        if task.id in retained:
            w[task.id] = retained[task.id]
        elif task.has_uncertain_wcet:
            w[task.id] = int(rng.integers(task.wcet_min, task.wcet_max + 1))
        else:
            w[task.id] = task.wcet_min
    return w


def _sample_rows_for_solution(args):
    border, bounds, ts, seq, cfg, refinement, sol_idx = args
    columns = border.model.columns
    X_new = np.empty((cfg.ns, len(columns)))
    y_new = np.empty(cfg.ns, dtype=bool)
    for s in range(cfg.ns):
        rng = substream(cfg.seed, _TAG_SAMPLE, refinement, sol_idx, s)
        if cfg.sampling == "distance":
            v = distance_sample(border, bounds, cfg.r_candidates, rng)
        else:
            v = _uniform_in_bounds(bounds, columns, rng)
        w = _complete_assignment(ts, columns, v, rng)
        sc = simulate(ts, seq, w)
        X_new[s] = v
        y_new[s] = label_scenario(sc, ts) == UNSAFE
    return X_new, y_new


def refine(d: ReducedDataset, border: SafeBorder, population: list[Individual],
           ts: TaskSet, cfg: RefineConfig) -> tuple[SafeBorder, list[RefinementRecord]]:
    """Iteratively grow the dataset near the border and refit the model.

    Each refinement simulates cfg.ns boundary-focused WCET samples per
    population solution, appends the labelled rows to ``d`` (mutated in
    place), refits the coefficients on the fixed term set, reselects p, and
    stops early once cross-validated precision exceeds cfg.pt.
    """
    if not population:
        raise ValueError("empty population")
    history: list[RefinementRecord] = []
    pool = ProcessPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for refinement in range(1, cfg.nl + 1):
            jobs = [
                (border, dict(d.bounds), ts, ind.seq, cfg, refinement, sol_idx)
                for sol_idx, ind in enumerate(population)
            ]
            if pool is not None:
                results = list(pool.map(_sample_rows_for_solution, jobs))
            else:
                results = [_sample_rows_for_solution(job) for job in jobs]
            for X_new, y_new in results:
                d.append_rows(X_new, y_new)
            if cfg.reselect_terms:
                model = stepwise_select(d)
            else:
                model = fit_logistic(d, border.model.terms)
            p = select_probability(model, d)
            border = SafeBorder(model, p)
            result = kfold_precision(model.terms, d, cfg.k_folds,
                                     substream(cfg.seed, _TAG_KFOLD, refinement))
            history.append(RefinementRecord(
                refinement, len(d), p, result.precision, result.no_positive_predictions
            ))
            if result.precision > cfg.pt:
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return border, history


def best_size_point(border: SafeBorder, bounds, rng=None, starts: int = 20) -> np.ndarray:
    """Point on the border maximizing the volume of the box [wmin, w].

    Penalized Nelder-Mead from multiple random starts, each polished by
    projecting along its ray from the wmin corner back onto the contour.  If
    the whole bounds box is safe the box corner is returned (no contour to sit
    on); if nothing in the box is safe EmptySafeRegionError is raised.
    """
    model = border.model
    columns = model.columns
    rng = rng if rng is not None else np.random.default_rng(0)
    level = logit(border.p)
    lows = np.array([bounds[c][0] for c in columns], dtype=float)
    highs = np.array([bounds[c][1] for c in columns], dtype=float)
    spans = np.array([s[1] for s in model.scaling])
    scaled_high = (highs - lows) / spans

    def eta_scaled(u):
        x = lows + np.atleast_2d(u) * spans
        return model.linear_predictor(x)

    # coarse feasibility scan over the box, corners included
    probe = rng.random((256, len(columns))) * scaled_high
    probe = np.vstack([probe, np.zeros(len(columns)), scaled_high])
    if np.all(eta_scaled(probe) > level):
        raise EmptySafeRegionError("no point in the bounds is classified safe")
    if float(eta_scaled(scaled_high[None, :])[0]) <= level:
        return lows + scaled_high * spans

    def objective(u):
        clipped = np.clip(u, 1e-12, scaled_high)
        volume = float(np.prod(clipped / np.maximum(scaled_high, 1e-12)))
        gap = float(eta_scaled(u)[0]) - level
        box_violation = float(np.sum(np.maximum(u - scaled_high, 0.0) ** 2)
                              + np.sum(np.maximum(-u, 0.0) ** 2))
        return -volume + 50.0 * gap**2 + 100.0 * box_violation

    def ray_polish(u):
        """Largest multiple of u (within the box) lying on the contour."""
        u = np.clip(u, 1e-12, scaled_high)
        s_max = float(np.min(scaled_high / u))
        grid = np.linspace(1e-6, s_max, 257)
        values = eta_scaled(grid[:, None] * u[None, :]) - level
        crossing = None
        for a, b, fa, fb in zip(grid, grid[1:], values, values[1:]):
            if fa * fb <= 0 and not (fa == 0 and fb == 0):
                crossing = (a, b)
        if crossing is None:
            return None
        left, right = crossing
        for _ in range(60):
            mid = 0.5 * (left + right)
            fl = float(eta_scaled((left * u)[None, :])[0]) - level
            fm = float(eta_scaled((mid * u)[None, :])[0]) - level
            if fl * fm <= 0:
                right = mid
            else:
                left = mid
        return 0.5 * (left + right) * u

    best_u, best_volume = None, -1.0
    for _ in range(starts):
        u0 = (0.05 + 0.9 * rng.random(len(columns))) * scaled_high
        res = nelder_mead(objective, u0, SimplexConfig(tol=1e-10, max_iter=3000))
        for candidate in (ray_polish(res.x), ray_polish(u0)):
            if candidate is None:
                continue
            volume = float(np.prod(candidate))
            if volume > best_volume:
                best_volume, best_u = volume, candidate
    if best_u is None:
        raise EmptySafeRegionError("no contour point found inside the bounds")
    return lows + best_u * spans
