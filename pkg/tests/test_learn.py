import math

import numpy as np
import pytest

from schedsafe.gasearch import LabelledDataset, LabelledRow
from schedsafe.learn import (
    INTERCEPT,
    DegenerateDatasetError,
    ForestConfig,
    ReducedDataset,
    RsmModel,
    SafeBorder,
    best_size_point,
    design_matrix,
    distance_sample,
    exact_contour_distance,
    fit_logistic,
    handle_imbalance,
    kfold_precision,
    logit,
    reduce_dimension,
    retained_columns,
    rsm_term_pool,
    select_probability,
    stepwise_select,
)
from schedsafe.numerics import sigmoid, substream


def make_dataset(X, y, bounds, columns=None):
    columns = columns or tuple(f"v{i}" for i in range(X.shape[1]))
    b = {c: bounds[i] for i, c in enumerate(columns)}
    return ReducedDataset(tuple(columns), np.asarray(X, float),
                          np.asarray(y, bool), dict(b), dict(b))


def synthetic_1d(rng, n, c0, c1, lo=0, hi=100):
    """Rows whose miss probability follows logit = c0 + c1 * u, u scaled."""
    X = rng.integers(lo, hi + 1, size=(n, 1)).astype(float)
    u = (X[:, 0] - lo) / (hi - lo)
    y = rng.random(n) < sigmoid(c0 + c1 * u)
    return make_dataset(X, y, [(lo, hi)])


def linear_model(columns, bounds, coefs, intercept):
    """Hand-built model: eta = intercept + sum(coefs * u)."""
    scaling = tuple((float(lo), float(hi - lo)) for lo, hi in bounds)
    terms = [INTERCEPT] + [("lin", i) for i in range(len(columns))]
    coef = np.array([intercept] + list(coefs), dtype=float)
    return RsmModel(tuple(columns), tuple(terms), coef, scaling)


class TestReduceDimension:
    def test_paper_style_threshold_rule(self):
        importances = np.zeros(26)
        importances[0], importances[1], importances[2] = 0.773, 0.093, 0.016
        importances[3:] = (1 - importances[:3].sum()) / 23
        columns = [f"T{i}" for i in range(26)]
        assert retained_columns(importances, columns) == ["T0", "T1"]

    def test_exact_threshold_label_keeps_driving_column(self):
        rng = np.random.default_rng(0)
        X = rng.integers(0, 101, size=(1500, 10))
        y = X[:, 1] > 60
        d = LabelledDataset(
            columns=[f"t{i}" for i in range(10)],
            bounds={f"t{i}": (0, 100) for i in range(10)},
            rows=[LabelledRow(tuple(int(v) for v in row), "unsafe" if lbl else "safe")
                  for row, lbl in zip(X, y)],
        )
        reduced = reduce_dimension(d, ForestConfig(seed=3))
        assert "t1" in reduced.columns
        assert len(reduced.columns) <= 3
        assert len(reduced) == len(d)

    def test_single_column_bypasses_forest(self):
        d = LabelledDataset(
            columns=["only"], bounds={"only": (1, 9)},
            rows=[LabelledRow((1,), "safe"), LabelledRow((9,), "unsafe")],
        )
        reduced = reduce_dimension(d)
        assert reduced.columns == ("only",)

    def test_single_label_rejected(self):
        d = LabelledDataset(
            columns=["a"], bounds={"a": (0, 5)},
            rows=[LabelledRow((1,), "safe"), LabelledRow((2,), "safe")],
        )
        with pytest.raises(DegenerateDatasetError):
            reduce_dimension(d)


class TestFitLogistic:
    def test_recovers_coefficients_in_scaled_space(self):
        rng = np.random.default_rng(1)
        d = synthetic_1d(rng, 100_000, -3.0, 2.0)
        model = fit_logistic(d, [INTERCEPT, ("lin", 0)])
        assert model.coef[0] == pytest.approx(-3.0, abs=0.05)
        assert model.coef[1] == pytest.approx(2.0, abs=0.05)
        assert not model.stabilized

    def test_label_noise_gives_null_model(self):
        rng = np.random.default_rng(2)
        X = rng.integers(0, 101, size=(100_000, 1)).astype(float)
        y = rng.random(100_000) < 0.5
        d = make_dataset(X, y, [(0, 100)])
        model = fit_logistic(d, [INTERCEPT, ("lin", 0)])
        assert abs(model.coef[1]) < 0.05

    def test_separated_data_stabilized(self):
        X = np.array([[0.0], [1.0], [99.0], [100.0]])
        y = np.array([False, False, True, True])
        d = make_dataset(X, y, [(0, 100)])
        model = fit_logistic(d, [INTERCEPT, ("lin", 0)])
        assert model.stabilized
        assert np.all(np.isfinite(model.coef))


class TestStepwise:
    def test_linear_signal_found(self):
        rng = np.random.default_rng(3)
        n = 10_000
        X = rng.integers(0, 101, size=(n, 2)).astype(float)
        u1 = X[:, 0] / 100
        y = rng.random(n) < sigmoid(-3 + 4 * u1)
        d = make_dataset(X, y, [(0, 100), (0, 100)])
        model = stepwise_select(d)
        assert ("lin", 0) in model.terms or ("quad", 0) in model.terms
        assert ("lin", 1) not in model.terms

    def test_interaction_signal_found(self):
        rng = np.random.default_rng(4)
        n = 10_000
        X = rng.integers(0, 101, size=(n, 2)).astype(float)
        u = X / 100
        y = rng.random(n) < sigmoid(-4 + 8 * u[:, 0] * u[:, 1])
        d = make_dataset(X, y, [(0, 100), (0, 100)])
        model = stepwise_select(d)
        assert ("inter", 0, 1) in model.terms

    def test_pure_noise_keeps_intercept_only(self):
        rng = np.random.default_rng(6)
        n = 4000
        X = rng.integers(0, 101, size=(n, 2)).astype(float)
        y = rng.random(n) < 0.4
        d = make_dataset(X, y, [(0, 100), (0, 100)])
        model = stepwise_select(d)
        assert model.terms == (INTERCEPT,)


class TestSelectProbability:
    def test_threshold_sits_below_least_confident_unsafe(self):
        model = linear_model(["v0"], [(0, 100)], [6.0], -3.0)
        X = np.array([[10.0], [50.0], [90.0]])
        y = np.array([False, False, True])
        d = make_dataset(X, y, [(0, 100)])
        p = select_probability(model, d)
        q_unsafe = float(model.predict_miss_probability(np.array([[90.0]]))[0])
        assert p < q_unsafe <= p + 2e-6
        assert not np.any(model.predict_miss_probability(X[y]) <= p)

    def test_no_unsafe_rows_caps(self):
        model = linear_model(["v0"], [(0, 100)], [6.0], -3.0)
        d = make_dataset(np.array([[10.0]]), np.array([False]), [(0, 100)])
        assert select_probability(model, d) == pytest.approx(0.999999)

    def test_property_on_random_datasets(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            model = linear_model(
                ["v0", "v1"], [(0, 50), (0, 80)],
                rng.normal(scale=3, size=2), rng.normal(scale=2),
            )
            X = np.column_stack([rng.integers(0, 51, 30), rng.integers(0, 81, 30)]).astype(float)
            y = rng.random(30) < 0.5
            d = make_dataset(X, y, [(0, 50), (0, 80)])
            p = select_probability(model, d)
            q = model.predict_miss_probability(X)
            assert not np.any(q[y] <= p)  # no false safes at p
            if np.any(y) and p + 1e-3 <= 1:
                assert np.any(q[y] <= min(p + 1e-3, 1.0)) or p == pytest.approx(1e-9)


class TestHandleImbalance:
    def test_pu_matches_hand_scan(self):
        model = linear_model(["v0"], [(0, 100)], [8.0], -4.0)
        X = np.array([[10.0], [40.0], [70.0], [90.0]])
        y = np.array([False, False, True, True])
        d = make_dataset(X, y, [(0, 100)])
        _, p_u = handle_imbalance(d, model)
        max_safe_q = float(np.max(model.predict_miss_probability(X[~y])))
        assert max_safe_q <= p_u <= max_safe_q + 2e-6

    def test_everything_safe_leaves_bounds_alone(self):
        # the most miss-prone row (at the box corner) is itself observed safe,
        # so p_u covers the whole axis and the contour never enters the range
        model = linear_model(["v0"], [(0, 100)], [1.0], -10.0)
        X = np.array([[10.0], [100.0], [50.0], [70.0]])
        y = np.array([False, False, True, False])
        d = make_dataset(X, y, [(0, 100)])
        out, p_u = handle_imbalance(d, model)
        assert out.bounds["v0"] == (0, 100)
        assert len(out) == 4

    def test_unsafe_region_pruned_and_ratio_improves(self):
        rng = np.random.default_rng(7)
        n = 4000
        X = np.column_stack([rng.integers(0, 101, n), rng.integers(0, 101, n)]).astype(float)
        u1 = X[:, 0] / 100
        y = rng.random(n) < sigmoid(-8 + 16 * u1)  # misses concentrate at large v0
        d = make_dataset(X, y, [(0, 100), (0, 100)])
        model = fit_logistic(d, [INTERCEPT, ("lin", 0), ("lin", 1)])
        out, p_u = handle_imbalance(d, model)
        assert out.bounds["v0"][1] < 100
        assert out.bounds["v1"] == (0, 100)
        before = np.mean(d.y)
        after = np.mean(out.y)
        assert after < before
        # no safe row was dropped spuriously below the cut
        assert np.all(out.X[:, 0] <= out.bounds["v0"][1])

    def test_single_label_rejected(self):
        model = linear_model(["v0"], [(0, 10)], [1.0], 0.0)
        d = make_dataset(np.array([[1.0], [2.0]]), np.array([True, True]), [(0, 10)])
        with pytest.raises(DegenerateDatasetError):
            handle_imbalance(d, model)


class TestDistanceSample:
    def test_r_one_is_plain_uniform(self):
        model = linear_model(["v0"], [(0, 100)], [5.0], -2.5)
        border = SafeBorder(model, 0.5)
        bounds = {"v0": (0, 100)}
        draws_a = [distance_sample(border, bounds, 1, substream(0, i))[0] for i in range(50)]
        draws_b = [float(substream(0, i).integers(0, 101)) for i in range(50)]
        assert draws_a == draws_b

    def test_on_contour_candidate_wins(self):
        model = linear_model(["v0"], [(0, 100)], [1.0], -0.5)
        border = SafeBorder(model, 0.5)  # contour at u = 0.5 -> v0 = 50

        class Seq:
            def __init__(self, values):
                self.values = list(values)

            def integers(self, lo, hi):
                return self.values.pop(0)

        sample = distance_sample(border, {"v0": (0, 100)}, 3, Seq([10, 50, 93]))
        assert sample[0] == 50.0

    def test_mean_distance_shrinks_with_r(self):
        model = linear_model(["v0", "v1"], [(0, 100), (0, 100)], [4.0, 4.0], -4.0)
        border = SafeBorder(model, 0.5)
        bounds = {"v0": (0, 100), "v1": (0, 100)}
        level = logit(border.p)

        def mean_gap(r, tag):
            gaps = []
            for i in range(150):
                v = distance_sample(border, bounds, r, substream(1, tag, i))
                gaps.append(abs(float(model.linear_predictor(v[None, :])[0]) - level))
            return np.mean(gaps)

        g1, g10, g100 = mean_gap(1, 0), mean_gap(10, 1), mean_gap(100, 2)
        assert g10 < g1
        assert g100 < g10

    def test_first_order_distance_tracks_exact_projection(self):
        model = linear_model(["v0", "v1"], [(0, 100), (0, 100)], [3.0, 3.0], -3.0)
        border = SafeBorder(model, 0.5)
        bounds = {"v0": (0, 100), "v1": (0, 100)}
        rng = substream(2, 0)
        for _ in range(5):
            x = np.array([float(rng.integers(0, 101)), float(rng.integers(0, 101))])
            eta = float(model.linear_predictor(x[None, :])[0])
            grad = np.linalg.norm(model.gradient_ticks(x[None, :]))
            first_order = abs(eta - logit(border.p)) / grad
            exact = exact_contour_distance(border, x, bounds)
            # linear border: the first-order distance is exact
            assert first_order == pytest.approx(exact, rel=0.05, abs=0.5)


class TestKfoldPrecision:
    def test_separable_data_perfect_precision(self):
        # six copies of each grid value so every fold trains on the borderline
        values = np.repeat(np.arange(0, 101, 10), 6).astype(float)
        y = values >= 60
        d = make_dataset(values[:, None], y, [(0, 100)])
        res = kfold_precision([INTERCEPT, ("lin", 0)], d, 5, substream(3, 1))
        assert res.precision == 1.0
        assert not res.no_positive_predictions

    def test_all_unsafe_predictions_flagged(self):
        rng = substream(4, 0)
        X = rng.integers(0, 101, size=(24, 1)).astype(float)
        d = make_dataset(X, np.ones(24, dtype=bool), [(0, 100)])
        res = kfold_precision([INTERCEPT], d, 4, substream(4, 1))
        assert res.precision == 1.0
        assert res.no_positive_predictions

    def test_hand_tallied_counts(self):
        # 12 rows, clearly separated except one borderline unsafe row; replay
        # the documented split rule to predict the tally independently
        X = np.array([[5.0], [10.0], [15.0], [20.0], [25.0], [30.0],
                      [55.0], [80.0], [85.0], [90.0], [95.0], [100.0]])
        y = np.array([False] * 6 + [True] * 6)
        d = make_dataset(X, y, [(0, 100)])
        k, seed = 3, 77
        res = kfold_precision([INTERCEPT, ("lin", 0)], d, k, substream(seed, 0))

        perm = substream(seed, 0).permutation(len(d))
        folds = np.array_split(perm, k)
        tp = fp = fn = 0
        for f in range(k):
            test_idx = folds[f]
            train_idx = np.concatenate([folds[g] for g in range(k) if g != f])
            model = fit_logistic(d.subset(train_idx), [INTERCEPT, ("lin", 0)])
            p = select_probability(model, d.subset(train_idx))
            predicted_safe = model.predict_miss_probability(X[test_idx]) <= p
            actual_safe = ~y[test_idx]
            tp += int(np.sum(predicted_safe & actual_safe))
            fp += int(np.sum(predicted_safe & ~actual_safe))
            fn += int(np.sum(~predicted_safe & actual_safe))
        assert (res.tp, res.fp, res.fn) == (tp, fp, fn)
        assert res.precision == pytest.approx(tp / (tp + fp))


class TestBestSizePoint:
    def test_linear_border_lagrange_solution(self):
        # eta = -6 + 6(u1 + u2); contour u1 + u2 = 1 at p = 0.5; with wmin = 0
        # the product u1*u2 peaks at u1 = u2 = 1/2
        model = linear_model(["v0", "v1"], [(0, 100), (0, 100)], [6.0, 6.0], -6.0)
        border = SafeBorder(model, 0.5)
        point = best_size_point(border, {"v0": (0, 100), "v1": (0, 100)}, substream(5, 0))
        assert point[0] == pytest.approx(50.0, abs=0.5)
        assert point[1] == pytest.approx(50.0, abs=0.5)

    def test_symmetric_border_gives_symmetric_point(self):
        model = RsmModel(
            ("v0", "v1"),
            (INTERCEPT, ("quad", 0), ("quad", 1)),
            np.array([-2.0, 4.0, 4.0]),
            ((0.0, 100.0), (0.0, 100.0)),
        )
        border = SafeBorder(model, 0.5)
        point = best_size_point(border, {"v0": (0, 100), "v1": (0, 100)}, substream(6, 0))
        assert abs(point[0] - point[1]) < 1e-3 * 100

    def test_beats_random_contour_points(self):
        rng = substream(7, 0)
        model = RsmModel(
            ("v0", "v1"),
            (INTERCEPT, ("lin", 0), ("lin", 1), ("inter", 0, 1)),
            np.array([-5.0, 4.0, 6.0, 2.0]),
            ((0.0, 100.0), (0.0, 100.0)),
        )
        border = SafeBorder(model, 0.3)
        bounds = {"v0": (0, 100), "v1": (0, 100)}
        point = best_size_point(border, bounds, substream(7, 1))
        best_volume = np.prod(point)
        level = logit(border.p)
        beaten = 0
        for _ in range(2000):
            u0 = rng.random(2)
            # walk along u0's ray to the contour, if it crosses
            s_grid = np.linspace(1e-6, 1.0 / max(u0), 200)
            etas = model.linear_predictor((s_grid[:, None] * u0[None, :]) * 100.0)
            signs = etas - level
            cross = np.nonzero(signs[:-1] * signs[1:] <= 0)[0]
            if cross.size == 0:
                continue
            s = s_grid[cross[-1]]
            candidate = s * u0 * 100.0
            if np.prod(candidate) > best_volume * (1 + 1e-6):
                beaten += 1
        assert beaten == 0

    def test_fully_safe_box_returns_corner(self):
        model = linear_model(["v0"], [(0, 100)], [1.0], -10.0)
        border = SafeBorder(model, 0.5)
        point = best_size_point(border, {"v0": (0, 100)}, substream(8, 0))
        assert point[0] == pytest.approx(100.0)


def test_design_matrix_layout():
    U = np.array([[0.5, 2.0], [1.0, 3.0]])
    terms = [INTERCEPT, ("lin", 1), ("quad", 0), ("inter", 0, 1)]
    M = design_matrix(U, terms)
    assert np.allclose(M, [[1
, 2.0, 0.25, 1.0], [1, 3.0, 1.0, 3.0]])


def test_rsm_term_pool_size():
    assert len(rsm_term_pool(3)) == 3 + 3 + 3
    assert len(rsm_term_pool(5)) == 5 + 5 + 10
