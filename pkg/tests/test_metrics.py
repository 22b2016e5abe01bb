import numpy as np
import pytest

from buddytrack.geometry import BoundingBox, vor
from buddytrack.metrics import ope_metrics


def _boxes(rows):
    return [BoundingBox(*r) for r in rows]


class TestOpeMetrics:
    def test_perfect_tracking(self):
        truth = _boxes([(0, 0, 10, 10), (5, 5, 10, 10), (8, 2, 12, 9)])
        report = ope_metrics(truth, truth)
        assert report.auc == 1.0
        assert report.precision_at_20 == 1.0
        np.testing.assert_array_equal(report.success_curve, 1.0)

    def test_total_failure(self):
        truth = _boxes([(0, 0, 10, 10)] * 4)
        results = _boxes([(500, 500, 10, 10)] * 4)
        report = ope_metrics(results, truth)
        assert report.auc <= 0.01
        assert report.precision_at_20 == 0.0

    def test_half_and_half(self):
        truth = _boxes([(0, 0, 10, 10)] * 10)
        results = _boxes([(0, 0, 10, 10)] * 5 + [(900, 900, 10, 10)] * 5)
        report = ope_metrics(results, truth)
        np.testing.assert_allclose(report.success_curve[:-1], 0.5)

    def test_curves_monotone(self):
        rng = np.random.default_rng(0)
        truth = _boxes(
            np.column_stack(
                [rng.uniform(0, 50, 30), rng.uniform(0, 50, 30),
                 rng.uniform(5, 30, 30), rng.uniform(5, 30, 30)]
            )
        )
        results = _boxes(
            np.column_stack(
                [rng.uniform(0, 50, 30), rng.uniform(0, 50, 30),
                 rng.uniform(5, 30, 30), rng.uniform(5, 30, 30)]
            )
        )
        report = ope_metrics(results, truth)
        assert np.all(np.diff(report.success_curve) <= 1e-12)
        assert np.all(np.diff(report.precision_curve) >= -1e-12)
        assert np.all((report.success_curve >= 0) & (report.success_curve <= 1))
        assert np.all((report.precision_curve >= 0) & (report.precision_curve <= 1))

    def test_threshold_zero_is_fraction_with_positive_overlap(self):
        truth = _boxes([(0, 0, 10, 10)] * 4)
        results = _boxes(
            [(0, 0, 10, 10), (9, 9, 10, 10), (50, 50, 10, 10), (90, 0, 10, 10)]
        )
        report = ope_metrics(results, truth)
        positive = np.mean([vor(r, t) > 0 for r, t in zip(results, truth)])
        assert report.success_curve[0] == positive

    def test_strict_thresholds_in_interior(self):
        truth = _boxes([(0, 0, 10, 10)] * 2)
        # overlap exactly 1/3: succeeds at 0.33, fails at 0.34 by strictness
        results = _boxes([(5, 0, 10, 10)] * 2)
        report = ope_metrics(results, truth)
        assert report.success_curve[33] == 1.0
        assert report.success_curve[34] == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ope_metrics(_boxes([(0, 0, 1, 1)]), _boxes([(0, 0, 1, 1)] * 2))

    def test_report_rows(self):
        truth = _boxes([(0, 0, 10, 10)] * 2)
        rows = ope_metrics(truth, truth).to_rows()
        kinds = {r[0] for r in rows}
        assert kinds == {"success", "precision", "auc", "precision_at_20"}
        assert len([r for r in rows if r[0] == "success"]) == 101
        assert len([r for r in rows if r[0] == "precision"]) == 51
