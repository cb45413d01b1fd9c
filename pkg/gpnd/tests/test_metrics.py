"""Tests for the evaluation metrics, including brute-force oracles."""

import math

import numpy as np
import pytest

from gpnd.errors import DataError, DimensionError, NumericError
from gpnd.metrics import (
    ScoredSet,
    aupr,
    auroc,
    compute_metrics,
    detection_error,
    f1,
    fpr_at_tpr,
    operating_point,
)


def _set(inliers, outliers):
    scores = list(inliers) + list(outliers)
    return ScoredSet.of(scores, [True] * len(inliers) + [False] * len(outliers))


# ── Oracles ───────────────────────────────────────────────────────────────────

def _pair_count_auroc(scores, labels):
    inl = [s for s, y in zip(scores, labels) if y]
    out = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in inl for b in out)
    return total / (len(inl) * len(out))


def _sweep_operating_point(scores, labels, target=0.95):
    n_in = sum(labels)
    n_out = len(labels) - n_in
    for gamma in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if y and s >= gamma)
        if tp / n_in >= target:
            fp = sum(1 for s, y in zip(scores, labels) if not y and s >= gamma)
            return tp / n_in, fp / n_out
    raise AssertionError("unreachable: the lowest score always gives TPR 1")


def _stepped_average_precision(scores, positives):
    n_pos = sum(positives)
    ap, prev_recall = 0.0, 0.0
    for gamma in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, positives) if y and s >= gamma)
        predicted = sum(1 for s in scores if s >= gamma)
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / predicted)
        prev_recall = recall
    return ap


def _random_sets(count):
    rng = np.random.default_rng(2024)
    for _ in range(count):
        size = int(rng.integers(2, 51))
        scores = rng.integers(0, 12, size).astype(float)
        labels = rng.random(size) < rng.uniform(0.2, 0.8)
        labels[0], labels[-1] = True, False
        yield scores.tolist(), labels.tolist()


# ── Tests ─────────────────────────────────────────────────────────────────────

class TestScoredSet:
    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            ScoredSet.of([1.0, 2.0], [True])

    def test_empty(self):
        with pytest.raises(DataError):
            ScoredSet.of([], [])

    def test_non_finite(self):
        with pytest.raises(NumericError):
            ScoredSet.of([1.0, np.nan], [True, False])


class TestF1:
    def test_perfect_separation(self):
        assert f1(_set([3, 4], [0, 1]), 2.0) == 1.0

    def test_predict_all_inlier_half_split(self):
        assert f1(_set([1, 2, 3], [4, 5, 6]), -math.inf) == pytest.approx(2 / 3)

    def test_hand_count(self):
        scored = _set([0.9, 0.7, 0.4, 0.2], [0.8, 0.5, 0.3, 0.1])
        # predicted inlier at 0.45: 0.9, 0.7 (tp) and 0.8, 0.5 (fp); misses 0.4, 0.2
        assert f1(scored, 0.45) == pytest.approx(2 * 2 / (2 * 2 + 2 + 2))

    def test_nothing_predicted(self):
        assert f1(_set([1, 2], [0]), math.inf) == 0.0

    def test_single_class(self):
        with pytest.raises(DataError):
            f1(ScoredSet.of([1.0, 2.0], [True, True]), 0.0)


class TestAuroc:
    def test_separable(self):
        assert auroc(_set([2, 3], [0, 1])) == 1.0

    def test_pair_count(self):
        assert auroc(_set([1, 3], [0, 2])) == pytest.approx(0.75)

    def test_all_equal(self):
        assert auroc(_set([1, 1, 1], [1, 1])) == pytest.approx(0.5)

    def test_single_class(self):
        with pytest.raises(DataError):
            auroc(ScoredSet.of([1.0, 2.0], [False, False]))


class TestFprAtTpr:
    def test_separable(self):
        assert fpr_at_tpr(_set(range(10, 30), range(10))) == 0.0

    def test_inverted(self):
        assert fpr_at_tpr(_set(range(10), range(10, 30))) == 1.0

    def test_interleaved_matches_sweep(self):
        inl = np.arange(0, 40, 2, dtype=float)
        out = inl + 1
        scored = _set(inl, out)
        _, fpr = _sweep_operating_point(scored.scores.tolist(), scored.is_inlier.tolist())
        assert fpr_at_tpr(scored) == fpr

    def test_operating_point_threshold_is_kth_inlier(self):
        gamma, tpr, _ = operating_point(_set(range(1, 21), [0.5]))
        assert (gamma, tpr) == (2.0, 0.95)


class TestDetectionError:
    def test_separable(self):
        assert detection_error(_set(range(100, 120), range(10))) == pytest.approx(0.025)

    def test_with_false_positives(self):
        # 20 inliers 1..20: gamma = 2, TPR 0.95; one of 10 outliers scores >= 2
        assert detection_error(_set(range(1, 21), [5.0] + [0.0] * 9)) == pytest.approx(0.075)


class TestAupr:
    def test_separable(self):
        assert aupr(_set([5, 6], [1, 2]), "inlier") == pytest.approx(1.0)

    def test_hand_stepped(self):
        scored = ScoredSet.of([3.0, 2.0, 1.0], [True, False, True])
        assert aupr(scored, "inlier") == pytest.approx(0.5 * (1 + 2 / 3))

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        scores = rng.normal(size=30)
        labels = rng.random(30) < 0.5
        labels[:2] = [True, False]
        flipped = ScoredSet.of(-scores, ~labels)
        assert aupr(ScoredSet.of(scores, labels), "inlier") == pytest.approx(aupr(flipped, "outlier"))

    def test_unknown_positives(self):
        with pytest.raises(ValueError):
            aupr(_set([1], [0]), "both")


class TestOracles:
    @pytest.mark.parametrize("scores, labels", list(_random_sets(500)))
    def test_every_metric_matches_enumeration(self, scores, labels):
        scored = ScoredSet.of(scores, labels)
        assert auroc(scored) == pytest.approx(_pair_count_auroc(scores, labels), abs=1e-12)
        tpr, fpr = _sweep_operating_point(scores, labels)
        assert fpr_at_tpr(scored) == fpr
        assert detection_error(scored) == pytest.approx(0.5 * (1 - tpr) + 0.5 * fpr, abs=1e-15)
        assert aupr(scored, "inlier") == pytest.approx(_stepped_average_precision(scores, labels), abs=1e-12)
        negated = [-s for s in scores]
        outliers = [not y for y in labels]
        assert aupr(scored, "outlier") == pytest.approx(_stepped_average_precision(negated, outliers), abs=1e-12)

    def test_invariant_under_increasing_transform(self):
        rng = np.random.default_rng(9)
        scores = rng.normal(size=80)
        labels = scores + rng.normal(size=80) > 0
        a = compute_metrics(ScoredSet.of(scores, labels), 0.1)
        b = compute_metrics(ScoredSet.of(np.exp(scores) * 2, labels), math.exp(0.1) * 2)
        for name in ("f1", "auroc", "fpr_at_95tpr", "detection_error", "aupr_in", "aupr_out"):
            assert getattr(a, name) == pytest.approx(getattr(b, name), abs=1e-12)


class TestComputeMetrics:
    def test_report_fields(self):
        report = compute_metrics(_set([3, 4, 5], [0, 1]), 2.0, ratio=0.4, fold=2, mode="pz_only")
        assert report.n_inliers == 3 and report.n_outliers == 2
        assert (report.ratio, report.fold, report.mode) == (0.4, 2, "pz_only")
        assert report.f1 == 1.0 and report.auroc == 1.0
        values = report.as_dict()
        assert all(0.0 <= values[k] <= 1.0 for k in ("f1", "auroc", "fpr_at_95tpr", "detection_error"))
