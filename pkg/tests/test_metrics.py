import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from segmicro import metrics
from segmicro.errors import DataError, ShapeError
from segmicro.gradcheck import numeric_grad, relative_error
from segmicro.layers import softmax_channels

from oracles import confusion_tally


def test_one_hot():
    y = metrics.one_hot(np.array([[0, 2]]), 3)
    np.testing.assert_array_equal(y, [[[1, 0, 0], [0, 0, 1]]])
    with pytest.raises(DataError):
        metrics.one_hot(np.array([3]), 3)


class TestCrossEntropy:
    def test_perfect_prediction(self):
        y = metrics.one_hot(np.array([[[0, 1], [2, 1]]]), 3, np.float64)
        loss, _ = metrics.cross_entropy(y, y)
        assert abs(loss) < 1e-6

    def test_uniform_is_ln3(self):
        p = np.full((1, 2, 2, 3), 1 / 3)
        y = metrics.one_hot(np.zeros((1, 2, 2), int), 3, np.float64)
        loss, _ = metrics.cross_entropy(p, y)
        assert loss == pytest.approx(np.log(3), abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.cross_entropy(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 2, 2)))

    def test_fused_gradient_matches_finite_differences(self, rng):
        z = rng.standard_normal((2, 3, 3, 4))
        y = metrics.one_hot(rng.integers(0, 4, (2, 3, 3)), 4, np.float64)
        _, grad = metrics.cross_entropy(softmax_channels(z), y)

        def f():
            return metrics.cross_entropy(softmax_channels(z), y)[0]

        assert relative_error(grad, numeric_grad(f, z)) < 1e-4

    def test_gradient_sums_to_zero_per_pixel(self, rng):
        p = softmax_channels(rng.standard_normal((1, 4, 4, 3)))
        y = metrics.one_hot(rng.integers(0, 3, (1, 4, 4)), 3, np.float64)
        _, grad = metrics.cross_entropy(p, y)
        assert np.max(np.abs(grad.sum(-1))) < 1e-6


class TestAccuracy:
    def test_identical(self):
        a = np.array([[0, 1], [2, 1]])
        assert metrics.pixel_accuracy(a, a) == 1.0

    def test_complementary(self):
        a = np.array([[0, 1], [1, 0]])
        assert metrics.pixel_accuracy(a, 1 - a) == 0.0

    def test_two_of_four(self):
        assert metrics.pixel_accuracy(np.array([[0, 1], [1, 1]]), np.array([[0, 0], [1, 0]])) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.pixel_accuracy(np.zeros((2, 2)), np.zeros((2, 3)))


class TestDice:
    def test_identical(self):
        a = np.array([[0, 1], [1, 2]])
        assert metrics.dice(a, a, 1) == 1.0

    def test_disjoint(self):
        assert metrics.dice(np.array([[1, 0]]), np.array([[0, 1]]), 1) == 0.0

    def test_constructed_counts(self):
        pred = np.array([[1, 1, 1], [0, 0, 0]])
        truth = np.array([[1, 1, 0], [1, 0, 0]])
        assert metrics.confusion_counts(pred, truth, 1) == (2, 1, 1)
        assert metrics.dice(pred, truth, 1) == pytest.approx(4 / 6)

    def test_empty_empty_is_one(self):
        z = np.zeros((3, 3), int)
        assert metrics.dice(z, z, 2) == 1.0

    def test_all_background_against_nonempty_truth_is_zero(self):
        truth = np.zeros((3, 3), int)
        truth[1, 1] = 2
        assert metrics.dice(np.zeros((3, 3), int), truth, 2) == 0.0

    def test_class_out_of_range(self):
        with pytest.raises(DataError):
            metrics.dice(np.zeros((2, 2)), np.zeros((2, 2)), 3, num_classes=3)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2))
    def test_properties(self, seed, c):
        r = np.random.default_rng(seed)
        p, t = r.integers(0, 3, (2, 8, 8))
        d = metrics.dice(p, t, c)
        assert d == metrics.dice(t, p, c)
        assert 0 <= d <= 1
        assert (d == 1) == np.array_equal(p == c, t == c)
        tp, fp, fn = metrics.confusion_counts(p, t, c)
        assert 2 * tp + fp + fn == np.count_nonzero(p == c) + np.count_nonzero(t == c)


class TestReport:
    def test_single_pair_matches_per_pair_ops(self, rng):
        p, t = rng.integers(0, 3, (2, 6, 6))
        r = metrics.dice_report([p], [t], 3)
        assert r.accuracy == metrics.pixel_accuracy(p, t)
        assert r.per_class_dice == {1: metrics.dice(p, t, 1), 2: metrics.dice(p, t, 2)}
        assert r.sample_count == 1

    def test_duplicated_pair_is_unchanged(self, rng):
        p, t = rng.integers(0, 3, (2, 6, 6))
        a = metrics.dice_report([p], [t], 3)
        b = metrics.dice_report([p, p], [t, t], 3)
        assert (a.accuracy, a.per_class_dice) == (b.accuracy, b.per_class_dice)

    def test_two_samples_match_global_tally(self):
        preds = [np.array([[1, 1], [0, 2]]), np.array([[2, 2, 0], [0, 0, 1]])]
        truths = [np.array([[1, 0], [0, 2]]), np.array([[2, 0, 0], [1, 1, 1]])]
        counts, correct, total = confusion_tally(preds, truths, 3)
        r = metrics.dice_report(preds, truths, 3, include_background=True)
        assert r.accuracy == correct / total
        for c, (tp, fp, fn) in counts.items():
            assert r.per_class_dice[c] == 2 * tp / (2 * tp + fp + fn)

    def test_pooled_differs_from_per_image(self):
        preds = [np.array([[1, 0, 0, 0]]), np.ones((1, 4), int)]
        truths = [np.array([[0, 1, 0, 0]]), np.ones((1, 4), int)]
        pooled = metrics.dice_report(preds, truths, 2)
        averaged = metrics.dice_report(preds, truths, 2, per_image=True)
        assert pooled.per_class_dice[1] == pytest.approx(8 / 10)
        assert averaged.per_class_dice[1] == pytest.approx(0.5)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.dice_report([np.zeros((2, 2))], [], 2)

    def test_json_round_trip(self):
        r = metrics.MetricsReport(0.9, {1: 0.8, 2: 0.7}, 4)
        d = json.loads(r.to_json())
        assert list(d) == ["accuracy", "dice.1", "dice.2", "samples"]
        assert metrics.MetricsReport.from_dict(d) == r
        assert r.mean_dice == pytest.approx(0.75)
