import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cacti.dataset import ScalerState
from cacti.errors import MetricError
from cacti.metrics import (evaluate, mean_impute, mean_impute_with,
                           column_means, paired_t_test_one_sided, r_squared,
                           rmse, student_t_sf, wasserstein_1d, wd_metric)
from cacti.rng import stream

from _helpers import table_from

finite_floats = st.floats(min_value=-100, max_value=100, allow_nan=False)


def full_mask(shape):
    return np.ones(shape, np.uint8)


class TestRSquared:
    def test_perfect_imputation(self):
        truth = stream(0, "t").normal(size=(50, 3))
        _, mean = r_squared(truth, truth.copy(), full_mask(truth.shape))
        assert mean == pytest.approx(1.0)

    def test_constant_prediction_scores_zero(self):
        truth = stream(1, "t").normal(size=(100, 2))
        imputed = np.full_like(truth, 3.14)
        cols, mean = r_squared(truth, imputed, full_mask(truth.shape))
        assert mean == 0.0 and all(v == 0.0 for v in cols.values())

    def test_affine_invariance(self):
        truth = stream(2, "t").normal(size=(80, 4))
        imputed = truth + stream(3, "n").normal(size=truth.shape) * 0.3
        _, base = r_squared(truth, imputed, full_mask(truth.shape))
        _, shifted = r_squared(truth, 2.0 * imputed + 7.0, full_mask(truth.shape))
        assert shifted == pytest.approx(base, rel=1e-12)
        assert base == pytest.approx(
            r_squared(truth, 2 * truth + 7, full_mask(truth.shape))[1] * base)

    def test_reads_only_eval_cells(self):
        truth = stream(4, "t").normal(size=(60, 2))
        imputed = truth + 0.1
        mask = (stream(5, "m").random(truth.shape) < 0.4).astype(np.uint8)
        _, before = r_squared(truth, imputed, mask)
        poked = imputed.copy()
        poked[mask == 0] = 999.0
        _, after = r_squared(truth, poked, mask)
        assert before == after

    def test_no_eligible_column_errors(self):
        truth = np.ones((3, 1))
        mask = np.zeros((3, 1), np.uint8)
        mask[0, 0] = 1  # single eval cell, below the minimum of 2
        with pytest.raises(MetricError):
            r_squared(truth, truth.copy(), mask)


class TestRmse:
    def test_perfect_is_zero_on_every_scale(self):
        truth = stream(6, "t").normal(size=(40, 3))
        scaler = ScalerState(truth.min(axis=0), truth.max(axis=0))
        for scale in ("standardized", "original", "minmax"):
            assert rmse(truth, truth.copy(), full_mask(truth.shape), scale,
                        scaler) == 0.0

    def test_single_cell_original_scale(self):
        truth = np.array([[4.0], [0.0]])
        imputed = np.array([[7.0], [0.0]])
        mask = np.array([[1], [0]], np.uint8)
        assert rmse(truth, imputed, mask, "original") == pytest.approx(3.0)

    def test_mean_imputer_standardized_near_one(self):
        col = stream(7, "t").normal(size=(20_000, 1))
        imputed = np.full_like(col, col.mean())
        mask = (stream(8, "m").random(col.shape) < 0.3).astype(np.uint8)
        value = rmse(col, imputed, mask, "standardized")
        assert 0.95 < value < 1.05

    def test_constant_column_skipped_standardized(self):
        truth = np.hstack([np.ones((30, 1)), stream(9, "t").normal(size=(30, 1))])
        imputed = truth + 0.5
        value = rmse(truth, imputed, full_mask(truth.shape), "standardized")
        assert np.isfinite(value)


class TestWasserstein:
    def test_identical_multisets(self):
        a = np.array([3.0, 1.0, 2.0])
        assert wasserstein_1d(a, a.copy()) == 0.0

    def test_point_masses(self):
        assert wasserstein_1d(np.array([0.0]), np.array([1.0])) == 1.0

    def test_quantile_integral_example(self):
        assert wasserstein_1d(np.array([0.0, 0.0]),
                              np.array([0.0, 2.0])) == 1.0

    def test_unequal_sizes(self):
        # merged quantile integral, cross-checked against direct calculation:
        # W1({0,1}, {0.5}) = int |F_a - F_b| = 0.5*0.5 + 0.5*0.5 = 0.5
        assert wasserstein_1d(np.array([0.0, 1.0]),
                              np.array([0.5])) == pytest.approx(0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite_floats, min_size=1, max_size=20),
           st.lists(finite_floats, min_size=1, max_size=20))
    def test_symmetry_and_identity(self, xs, ys):
        a, b = np.array(xs), np.array(ys)
        assert wasserstein_1d(a, b) == pytest.approx(wasserstein_1d(b, a),
                                                     abs=1e-9)
        assert wasserstein_1d(a, a.copy()) == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(finite_floats, min_size=1, max_size=12),
           st.lists(finite_floats, min_size=1, max_size=12),
           st.lists(finite_floats, min_size=1, max_size=12))
    def test_triangle_inequality(self, xs, ys, zs):
        a, b, c = np.array(xs), np.array(ys), np.array(zs)
        assert (wasserstein_1d(a, c)
                <= wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-9)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wasserstein_1d(np.array([]), np.array([1.0]))


class TestMeanImpute:
    def test_fills_with_column_mean(self):
        t = table_from([[2.0], [np.nan], [4.0]])
        out = mean_impute(t)
        assert out.values[1, 0] == 3.0
        assert np.all(out.observed == 1)

    def test_no_missing_is_identity(self):
        t = table_from([[1.0, 2.0], [3.0, 4.0]])
        out = mean_impute(t)
        assert np.array_equal(out.values, t.values)

    def test_r2_zero_by_constant_rule(self):
        rng = stream(10, "t")
        truth = rng.normal(size=(500, 2))
        observed = (rng.random(truth.shape) > 0.3).astype(np.uint8)
        observed[observed.sum(axis=1) == 0, 0] = 1
        t = table_from(np.where(observed == 1, truth, np.nan), observed)
        out = mean_impute(t)
        eval_mask = (observed == 0).astype(np.uint8)
        _, mean = r_squared(truth, out.values, eval_mask)
        assert mean == 0.0

    def test_fully_missing_column_errors(self):
        t = table_from([[1.0, np.nan], [2.0, np.nan]])
        with pytest.raises(ValueError):
            mean_impute(t)

    def test_train_means_applied_out_of_sample(self):
        train = table_from([[0.0, 1.0], [4.0, 3.0]])
        test = table_from([[np.nan, 0.0]])
        out = mean_impute_with(test, column_means(train))
        assert out.values[0, 0] == 2.0


class TestPairedTTest:
    def test_symmetric_differences_give_half(self):
        a = np.array([1.0, 0.0, 1.0, 0.0])
        b = np.array([0.0, 1.0, 0.0, 1.0])
        t, p = paired_t_test_one_sided(a, b)
        assert t == pytest.approx(0.0)
        assert p == pytest.approx(0.5)

    def test_dof1_arctan_golden(self):
        # d = {1, 3}: t = 2, dof 1; upper tail = 1/2 - atan(2)/pi = 0.147583...
        t, p = paired_t_test_one_sided(np.array([2.0, 4.0]),
                                       np.array([1.0, 1.0]))
        assert t == pytest.approx(2.0, rel=1e-12)
        expected = 0.5 - math.atan(2.0) / math.pi
        assert p == pytest.approx(expected, abs=1e-8)
        assert p == pytest.approx(0.1476, abs=5e-5)

    def test_identical_samples_degenerate(self):
        a = np.array([1.0, 2.0, 3.0])
        with pytest.raises(MetricError):
            paired_t_test_one_sided(a, a.copy())

    def test_cdf_matches_normal_for_large_dof(self):
        # t sf at 1.96 with dof 10^6 ~ normal upper tail 0.025
        assert student_t_sf(1.96, 1_000_000) == pytest.approx(0.025, abs=2e-4)

    def test_negative_t_symmetry(self):
        assert student_t_sf(-1.3, 7) == pytest.approx(
            1.0 - student_t_sf(1.3, 7), abs=1e-12)


class TestEvaluateReport:
    def test_report_fields_and_json(self):
        rng = stream(11, "t")
        truth_vals = rng.normal(size=(200, 3))
        truth = table_from(truth_vals)
        imputed = table_from(truth_vals + 0.1 * rng.normal(size=(200, 3)))
        eval_mask = (rng.random((200, 3)) < 0.3).astype(np.uint8)
        report = evaluate(truth, imputed, eval_mask)
        d = report.to_dict()
        assert set(d["aggregates"]) == {"r2_mean", "rmse", "wd_mean"}
        assert 0 <= d["aggregates"]["r2_mean"] <= 1
        assert d["aggregates"]["rmse"] >= 0 and d["aggregates"]["wd_mean"] >= 0
        assert len(d["per_column"]) == 3
        assert "c0" in report.format_text()

    def test_eval_cells_must_have_truth(self):
        truth = table_from([[1.0, np.nan]])
        imputed = table_from([[1.0, 2.0]])
        with pytest.raises(MetricError):
            evaluate(truth, imputed, np.array([[0, 1]], np.uint8))

    def test_report_reads_only_eval_cells(self):
        rng = stream(12, "t")
        truth = table_from(rng.normal(size=(150, 3)))
        imputed_vals = truth.values + 0.2 * rng.normal(size=(150, 3))
        eval_mask = (rng.random((150, 3)) < 0.3).astype(np.uint8)
        base = evaluate(truth, table_from(imputed_vals), eval_mask).to_dict()
        poked = imputed_vals.copy()
        poked[eval_mask == 0] = -1e6
        after = evaluate(truth, table_from(poked), eval_mask).to_dict()
        assert base == after
