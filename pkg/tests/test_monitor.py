from __future__ import annotations

import numpy as np
import pytest

from drivestress.monitor import (
    UNSAFE_THRESHOLD_M,
    MonitorOutcome,
    auroc,
    confusion_metrics,
    label_outcomes,
    monitor_report,
)
from drivestress.records import EvalRecord


def record(clip, condition, l2, changed, sim, kind="noise", sigma=30.0, defense="none"):
    return EvalRecord(
        clip_id=clip, condition=condition, kind=kind, defense=defense, with_coc=True,
        ade_m=l2 / 8.0, fde_m=l2 / 8.0, delta_ade_m=l2 / 8.0, l2_deviation_m=l2,
        coc_clean="Keep lane because clear.",
        coc_perturbed="Stop now because blocked." if changed else "Keep lane because clear.",
        coc_changed=changed, word_similarity=sim, seed=42, latency_ms=25.0,
        sigma=sigma if kind == "noise" else None,
    )


def outcome(alarm, unsafe, score=0.5):
    return MonitorOutcome(alarm=alarm, unsafe=unsafe, score=score)


def outcomes_from_counts(tp, fp, fn, tn):
    return (
        [outcome(True, True)] * tp
        + [outcome(True, False)] * fp
        + [outcome(False, True)] * fn
        + [outcome(False, False)] * tn
    )


class TestConfusionMetrics:
    def test_known_counts(self):
        m = confusion_metrics(outcomes_from_counts(3, 1, 2, 4))
        assert (m.tp, m.fp, m.fn, m.tn) == (3, 1, 2, 4)
        assert m.precision == pytest.approx(0.75)
        assert m.recall == pytest.approx(0.6)
        assert m.fpr == pytest.approx(0.2)

    def test_zero_denominators_are_absent(self):
        m = confusion_metrics(outcomes_from_counts(0, 0, 0, 5))
        assert m.precision is None
        assert m.recall is None
        assert m.fpr == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            confusion_metrics([])


class TestLabeling:
    def test_threshold_is_strict(self):
        outcomes = label_outcomes([record("a", "noise_30", 5.0, False, 1.0)])
        assert outcomes[0].unsafe is False
        outcomes = label_outcomes([record("a", "noise_30", 5.0000001, False, 1.0)])
        assert outcomes[0].unsafe is True

    def test_alarm_is_coc_flip(self):
        outcomes = label_outcomes(
            [record("a", "noise_30", 1.0, True, 0.2), record("b", "noise_30", 9.0, False, 1.0)]
        )
        assert outcomes[0].alarm is True
        assert outcomes[1].alarm is False

    def test_score_is_one_minus_similarity(self):
        out = label_outcomes([record("a", "noise_30", 1.0, True, 0.25)])[0]
        assert out.score == pytest.approx(0.75)

    def test_default_threshold(self):
        assert UNSAFE_THRESHOLD_M == 5.0


class TestAuroc:
    def test_separable(self):
        scores = [0.9, 0.8, 0.2, 0.1]
        labels = [True, True, False, False]
        assert auroc(scores, labels) == 1.0

    def test_needs_both_classes(self):
        with pytest.raises(ValueError):
            auroc([0.5, 0.6], [True, True])

    def test_ties_count_half(self):
        assert auroc([0.5, 0.5], [True, False]) == 0.5


class TestMonitorReport:
    def test_aggregate_pools_conditions(self):
        records = [
            record("a", "noise_30", 9.0, True, 0.2),    # tp
            record("b", "noise_30", 1.0, False, 1.0),   # tn
            record("a", "dark", 2.0, True, 0.3, kind="dark"),   # fp
            record("b", "dark", 8.0, False, 1.0, kind="dark"),  # fn
        ]
        report = monitor_report(records)
        agg = report["aggregate"]
        assert (agg.tp, agg.fp, agg.fn, agg.tn) == (1, 1, 1, 1)
        assert set(report) == {"noise_30", "dark", "aggregate"}
        assert report["noise_30"].tp == 1
        assert report["noise_30"].tn == 1

    def test_order_independence(self):
        records = [
            record("a", "noise_30", 9.0, True, 0.2),
            record("b", "noise_30", 1.0, False, 1.0),
            record("c", "noise_30", 7.0, True, 0.4),
        ]
        fwd = monitor_report(records)["noise_30"]
        rev = monitor_report(list(reversed(records)))["noise_30"]
        assert fwd == rev

    def test_formatting_fixture(self):
        m = confusion_metrics(outcomes_from_counts(832, 168, 227, 773))
        assert m.precision == pytest.approx(0.832)
        assert m.recall == pytest.approx(832 / 1059)


class TestScoreAuroc:
    def test_report_auroc_uses_scores(self):
        records = [
            record("a", "noise_30", 9.0, True, 0.1),
            record("b", "noise_30", 8.0, True, 0.3),
            record("c", "noise_30", 1.0, False, 0.9),
            record("d", "noise_30", 2.0, False, 0.95),
        ]
        report = monitor_report(records)["noise_30"]
        assert report.auroc == 1.0
