#!/usr/bin/env python3
"""
Tests for bootstrap and cross-validated scoring and the selection rule
"""
import sys
import os
import math

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from services.backend_service import FitResult, MethodSpec
from services.qscore_service import hard_score, smooth_score
from services.resampling_service import (
    SelectionReport, bootstrap_score, bootstrap_scores, cv_score, fold_assignment, in_sample_score, refit_outcomes,
    select, summarize_bootstrap, summarize_cv, tied_best,
)
from services.work_queue import run_indexed
from utils.errors import ComputeError, DegenerateFit, FoldTooSmall, NoApplicableMethod, TooManyFailures
from utils.rng import SeededRng
from utils.types import ClusterConfiguration, DataMatrix, Partition, ScoreMode


def two_blobs(seed=0, n=60, spread=0.5):
    generator = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    centers = np.array([[-3.0, 0.0], [3.0, 0.0]])
    return DataMatrix(centers[labels] + spread * generator.standard_normal((n, 2)), labels)


FIXED_THETA = ClusterConfiguration.from_arrays([0.5, 0.5], [[-3.0, 0.0], [3.0, 0.0]], [np.eye(2), np.eye(2)])


def fixed_fitter(values, spec, rng):
    n = values.shape[0]
    return FitResult(spec, FIXED_THETA, Partition(np.zeros(n, dtype=int), 2), 0.0, 1, True, 1)


def flaky_fitter(failing):
    """Fails whenever the fit stream is one of the listed stream ids"""
    def fitter(values, spec, rng):
        if rng.stream_id in failing:
            raise DegenerateFit("collapsed")
        return fixed_fitter(values, spec, rng)
    return fitter


class TestInSampleScore:
    def test_dispatch(self):
        data = two_blobs()
        assert in_sample_score(data, FIXED_THETA, ScoreMode.HARD) == hard_score(data, FIXED_THETA)
        assert in_sample_score(data, FIXED_THETA, ScoreMode.SMOOTH) == smooth_score(data, FIXED_THETA)

    def test_single_cluster_modes_agree(self):
        data = two_blobs()
        theta = ClusterConfiguration.from_arrays([1.0], [[0.0, 0.0]], [np.diag([9.0, 0.3])])
        assert in_sample_score(data, theta, 'hard') == in_sample_score(data, theta, 'smooth')


class TestBootstrap:
    def test_percentile_bounds_hand_example(self):
        summary = summarize_bootstrap([1.0, 3.0], n=25, alpha=0.05)
        assert summary.w_tilde == 2.0
        assert summary.lower == pytest.approx(1.0, abs=1e-12)
        assert summary.upper == pytest.approx(3.0, abs=1e-12)

    def test_fixed_backend_has_zero_width(self):
        data = two_blobs()
        summary = bootstrap_score(data, MethodSpec('gem', 2), ScoreMode.SMOOTH, 10, 0.05, SeededRng(0),
                                  fitter=fixed_fitter, workers=1)
        assert summary.lower == pytest.approx(summary.w_tilde, abs=1e-12)
        assert summary.upper == pytest.approx(summary.w_tilde, abs=1e-12)
        assert summary.w_tilde == pytest.approx(smooth_score(data, FIXED_THETA), rel=1e-12)

    def test_bounds_bracket_the_mean(self):
        data = two_blobs()
        summary = bootstrap_score(data, MethodSpec('kmeans', 2), ScoreMode.HARD, 30, 0.05, SeededRng(1), workers=1)
        assert summary.lower <= summary.w_tilde <= summary.upper
        assert summary.b == 30 and summary.failures == 0

    def test_wider_alpha_narrows_the_window(self):
        scores = np.random.default_rng(2).normal(size=200)
        narrow = summarize_bootstrap(scores, 50, 0.2)
        wide = summarize_bootstrap(scores, 50, 0.05)
        assert narrow.lower >= wide.lower
        assert narrow.upper <= wide.upper

    def test_reproducible_across_worker_counts(self):
        data = two_blobs()
        spec = MethodSpec('gem', 2, restarts=1)
        serial = bootstrap_scores(data, spec, 12, 0.05, SeededRng(3), workers=1)
        threaded = bootstrap_scores(data, spec, 12, 0.05, SeededRng(3), workers=4)
        for mode in ScoreMode:
            np.testing.assert_array_equal(serial[mode].replicate_scores, threaded[mode].replicate_scores)
            assert serial[mode].lower == threaded[mode].lower

    def test_failures_are_skipped(self):
        data = two_blobs()
        rng = SeededRng(4)
        spec = MethodSpec('gem', 2)
        failing = {rng.derive('fit', 0, spec.method_id).stream_id}
        summary = bootstrap_score(data, spec, 'hard', 8, 0.05, rng, fitter=flaky_fitter(failing), workers=1)
        assert summary.failures == 1
        assert np.isnan(summary.replicate_scores[0])
        assert np.isfinite(summary.replicate_scores[1:]).all()

    def test_too_many_failures(self):
        data = two_blobs()
        rng = SeededRng(5)
        spec = MethodSpec('gem', 2)
        failing = {rng.derive('fit', b, spec.method_id).stream_id for b in range(3)}
        with pytest.raises(TooManyFailures):
            bootstrap_score(data, spec, 'hard', 8, 0.05, rng, fitter=flaky_fitter(failing), workers=1)

    def test_failed_replicate_keeps_its_position(self):
        data = two_blobs()
        rng = SeededRng(6)
        spec = MethodSpec('gem', 2)
        failing = {rng.derive('fit', 5, spec.method_id).stream_id}
        summary = bootstrap_score(data, spec, 'hard', 8, 0.05, rng, fitter=flaky_fitter(failing), workers=3)
        assert np.flatnonzero(np.isnan(summary.replicate_scores)).tolist() == [5]

    def test_programming_errors_propagate(self):
        def broken(values, spec, rng):
            raise TypeError("bad fitter")

        with pytest.raises(TypeError):
            bootstrap_score(two_blobs(), MethodSpec('gem', 2), 'hard', 4, 0.05, SeededRng(0), fitter=broken)

    def test_refit_outcomes_split(self):
        def odd_only(x):
            if x % 2 == 0:
                raise DegenerateFit(f"unit {x}")
            return x

        ok, failed = refit_outcomes(run_indexed(odd_only, range(5), workers=2))
        assert ok == [1, 3]
        assert [failure.index for failure in failed] == [0, 2, 4]

    def test_head_uses_first_replicates(self):
        scores = np.arange(10, dtype=float)
        summary = summarize_bootstrap(scores, 16, 0.05)
        head = summary.head(4)
        assert head.b == 4
        assert head.w_tilde == 1.5

    def test_arguments_checked(self):
        with pytest.raises(ComputeError):
            bootstrap_score(two_blobs(), MethodSpec('gem', 2), 'hard', 1, 0.05, SeededRng(0), fitter=fixed_fitter)
        with pytest.raises(ComputeError):
            bootstrap_score(two_blobs(), MethodSpec('gem', 2), 'hard', 5, 1.0, SeededRng(0), fitter=fixed_fitter)


class TestCrossValidation:
    def test_hand_example(self):
        summary = summarize_cv([0.0, 1.0], delta=1.0)
        assert summary.mean == 0.5
        assert summary.sd == pytest.approx(math.sqrt(0.5))
        assert summary.adjusted == pytest.approx(0.0, abs=1e-15)

    def test_zero_delta(self):
        summary = summarize_cv([0.3, -1.0, 2.0], delta=0.0)
        assert summary.adjusted == summary.mean

    def test_identical_folds(self):
        summary = summarize_cv([1.5, 1.5, 1.5], delta=1.96)
        assert summary.sd == 0.0
        assert summary.adjusted == 1.5

    def test_folds_partition_the_sample(self):
        folds = fold_assignment(23, 5, SeededRng(6))
        assert sorted(np.concatenate(folds).tolist()) == list(range(23))
        assert {len(f) for f in folds} <= {4, 5}

    def test_folds_shared_across_methods(self):
        a = fold_assignment(30, 10, SeededRng(7))
        b = fold_assignment(30, 10, SeededRng(7))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_fold_too_small(self):
        with pytest.raises(FoldTooSmall):
            fold_assignment(3, 5, SeededRng(0))
        with pytest.raises(FoldTooSmall):
            cv_score(two_blobs(n=10), MethodSpec('gem', 9), 'hard', 5, 1.96, SeededRng(0))

    def test_fixed_backend(self):
        data = two_blobs()
        summary = cv_score(data, MethodSpec('gem', 2), 'smooth', 6, 1.96, SeededRng(8), fitter=fixed_fitter)
        assert summary.fold_scores.shape == (6,)
        assert summary.adjusted <= summary.mean

    def test_reproducible(self):
        data = two_blobs()
        first = cv_score(data, MethodSpec('kmeans', 2), 'hard', 5, 1.96, SeededRng(9), workers=1)
        second = cv_score(data, MethodSpec('kmeans', 2), 'hard', 5, 1.96, SeededRng(9), workers=3)
        np.testing.assert_array_equal(first.fold_scores, second.fold_scores)


class TestSelection:
    def test_single_method(self):
        assert select({'only': -3.0}, 'BQS', SeededRng(0)) == 'only'

    def test_tie_is_a_seeded_draw(self):
        values = {'m0': 2.0, 'm1': 5.0, 'm2': 5.0}
        assert tied_best(values) == ['m1', 'm2']
        picks = {select(values, 'BQS', SeededRng(seed)) for seed in range(40)}
        assert picks == {'m1', 'm2'}
        assert select(values, 'BQS', SeededRng(11)) == select(values, 'BQS', SeededRng(11))

    def test_inapplicable_values_skipped(self):
        assert select({'a': None, 'b': float('nan'), 'c': -1.0}, 'AIC', SeededRng(0)) == 'c'
        with pytest.raises(NoApplicableMethod):
            select({'a': None}, 'AIC', SeededRng(0))

    def test_common_shift_keeps_the_winner(self):
        generator = np.random.default_rng(12)
        values = {f'm{i}': float(v) for i, v in enumerate(generator.normal(size=8))}
        shifted = {key: value + 7.25 for key, value in values.items()}
        assert select(values, 'BQH', SeededRng(0)) == select(shifted, 'BQH', SeededRng(0))

    def test_naive_scan(self):
        values = {f'm{i}': float(v) for i, v in enumerate(np.random.default_rng(13).normal(size=20))}
        assert select(values, 'BQS', SeededRng(0)) == max(values, key=values.get)

    def test_report_records_ties(self):
        report = SelectionReport(rows=[
            {'method_id': 'a', 'criteria': {'QH': 1.0, 'AIC': None}},
            {'method_id': 'b', 'criteria': {'QH': 1.0, 'AIC': None}},
        ])
        selected = report.select_all(['QH', 'AIC'], SeededRng(0))
        assert selected['QH'] in ('a', 'b')
        assert report.ties['QH'] == ['a', 'b']
        assert 'AIC' not in selected
