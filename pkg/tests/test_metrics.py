import numpy as np
import pytest

from cxrcad.data import ClassLabel
from cxrcad.metrics import (
    BinaryCounts,
    ConfusionMatrix3,
    binary_stats,
    cohens_kappa,
    collapse_binary,
    confusion,
    fmt_ci,
    fmt_percent,
    fmt_rate,
    full_report,
    macro_avg,
    overall_accuracy,
    parse_machine_report,
    per_class_rates,
    render_machine_report,
    render_text_report,
    round_half_up,
    wald_ci,
    weighted_avg,
)

# Reference confusion matrices, rows = truth (Normal, Pneumonia, COVID19)
FULL = ConfusionMatrix3(np.array([[260, 24, 4], [16, 494, 8], [0, 0, 42]]))
FILTER_BASE = ConfusionMatrix3(np.array([[228, 55, 5], [6, 503, 9], [1, 0, 41]]))
SIMPLE = ConfusionMatrix3(np.array([[197, 81, 10], [4, 506, 8], [1, 1, 40]]))


class TestConfusion:
    def test_identity_diagonal(self):
        m = confusion([0, 1, 2], [0, 1, 2])
        assert np.trace(m.counts) == 3
        assert m.counts.sum() == 3

    def test_row_placement(self):
        m = confusion([2, 2], [0, 1])
        np.testing.assert_array_equal(m.counts[2], [1, 1, 0])

    def test_reconstructed_full_matrix_consistency(self):
        # trace 796 over n 848; row sums are the class supports;
        # the COVID column carries the 12 false positives (4 normal + 8 pneumonia)
        assert int(np.trace(FULL.counts)) == 796
        assert FULL.n == 848
        np.testing.assert_array_equal(FULL.row_sums(), [288, 518, 42])
        assert FULL.counts[0, 2] == 4 and FULL.counts[1, 2] == 8

    def test_errors(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0])
        with pytest.raises(ValueError):
            confusion([], [])
        with pytest.raises(ValueError):
            confusion([0, 3], [0, 0])

    def test_row_col_sums_match_label_counts(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 3, 60)
        pred = rng.integers(0, 3, 60)
        m = confusion(truth, pred)
        for c in range(3):
            assert m.row_sums()[c] == (truth == c).sum()
            assert m.col_sums()[c] == (pred == c).sum()


class TestPerClass:
    def test_full_model_covid_row(self):
        precision, recall, f1, support = per_class_rates(FULL)
        covid = int(ClassLabel.COVID19)
        assert abs(precision[covid] - 42 / 54) < 1e-12
        assert recall[covid] == 1.0
        assert abs(f1[covid] - 84 / 96) < 1e-12
        assert support[covid] == 42

    def test_full_model_normal_row_display(self):
        precision, recall, f1, _ = per_class_rates(FULL)
        assert fmt_rate(precision[0]) == "0.94"
        assert fmt_rate(recall[0]) == "0.90"
        assert fmt_rate(f1[0]) == "0.92"

    def test_full_model_pneumonia_row_display(self):
        precision, recall, f1, _ = per_class_rates(FULL)
        assert (fmt_rate(precision[1]), fmt_rate(recall[1]), fmt_rate(f1[1])) == (
            "0.95", "0.95", "0.95",
        )

    def test_identity_matrix_all_ones(self):
        m = ConfusionMatrix3(np.eye(3, dtype=int) * 5)
        precision, recall, f1, _ = per_class_rates(m)
        assert precision == [1.0, 1.0, 1.0]
        assert recall == [1.0, 1.0, 1.0]
        assert f1 == [1.0, 1.0, 1.0]

    def test_empty_predicted_column_undefined(self):
        m = ConfusionMatrix3(np.array([[5, 0, 0], [5, 0, 0], [5, 0, 0]]))
        precision, recall, f1, _ = per_class_rates(m)
        assert precision[1] is None and precision[2] is None
        assert fmt_rate(precision[1]) == "—"


class TestAccuracy:
    def test_full_796_of_848(self):
        assert abs(overall_accuracy(FULL) - 796 / 848) < 1e-15
        assert fmt_percent(overall_accuracy(FULL)) == "93.9%"

    def test_filter_base_91_percent(self):
        assert abs(overall_accuracy(FILTER_BASE) - 772 / 848) < 1e-15
        assert fmt_percent(overall_accuracy(FILTER_BASE)) == "91.0%"

    def test_simple_876_percent(self):
        assert abs(overall_accuracy(SIMPLE) - 743 / 848) < 1e-15
        assert fmt_percent(overall_accuracy(SIMPLE)) == "87.6%"

    def test_equals_support_weighted_recall(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            counts = rng.integers(0, 40, (3, 3))
            if counts.sum() == 0 or (counts.sum(axis=1) == 0).any():
                continue
            m = ConfusionMatrix3(counts)
            _, recall, _, support = per_class_rates(m)
            assert abs(overall_accuracy(m) - weighted_avg(recall, support)) < 1e-12


class TestAverages:
    def test_macro_averages_full_matrix(self):
        precision, recall, _, _ = per_class_rates(FULL)
        assert fmt_rate(macro_avg(precision)) == "0.89"
        assert fmt_rate(macro_avg(recall)) == "0.95"

    def test_weighted_precision_full_matrix(self):
        precision, _, _, support = per_class_rates(FULL)
        value = weighted_avg(precision, support)
        assert fmt_rate(value) == "0.94"
        assert abs(value - 0.941) < 1e-3

    def test_macro_constant(self):
        assert macro_avg([0.7, 0.7, 0.7]) == pytest.approx(0.7)

    def test_weighted_equal_supports_is_macro(self):
        values = [0.2, 0.5, 0.8]
        assert weighted_avg(values, [10, 10, 10]) == pytest.approx(macro_avg(values))

    def test_weighted_single_class(self):
        assert weighted_avg([0.3, 0.9, 0.1], [0, 848, 0]) == pytest.approx(0.9)

    def test_skip_undefined_with_warning(self):
        with pytest.warns(UserWarning):
            assert macro_avg([0.5, None, 0.7]) == pytest.approx(0.6)
        assert macro_avg([None, None, None]) is None


class TestKappa:
    def test_filter_base_0821(self):
        assert abs(cohens_kappa(FILTER_BASE) - 0.821) < 5e-4

    def test_simple_0748(self):
        assert abs(cohens_kappa(SIMPLE) - 0.748) < 5e-4

    def test_full_0880(self):
        assert abs(cohens_kappa(FULL) - 0.8805) < 5e-4

    def test_diagonal_matrix_is_one(self):
        m = ConfusionMatrix3(np.diag([10, 5, 3]))
        assert cohens_kappa(m) == pytest.approx(1.0)

    def test_single_class_degenerate_zero(self):
        m = ConfusionMatrix3(np.array([[7, 0, 0], [0, 0, 0], [0, 0, 0]]))
        with pytest.warns(UserWarning):
            assert cohens_kappa(m) == 0.0

    def test_matches_brute_force_from_labels(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            truth = rng.integers(0, 3, 80)
            pred = rng.integers(0, 3, 80)
            m = confusion(truth, pred)
            # independent recomputation straight from the label lists
            n = len(truth)
            p_obs = float(np.mean(truth == pred))
            p_exp = sum(
                (np.mean(truth == c)) * (np.mean(pred == c)) for c in range(3)
            )
            want = (p_obs - p_exp) / (1 - p_exp)
            assert cohens_kappa(m) == pytest.approx(want, abs=1e-12)
            assert cohens_kappa(m) <= 1.0


class TestBinary:
    def test_full_model_collapse(self):
        b = collapse_binary(FULL, ClassLabel.COVID19)
        assert (b.tp, b.fn, b.fp, b.tn) == (42, 0, 12, 794)

    def test_identity_no_errors(self):
        m = ConfusionMatrix3(np.diag([4, 4, 4]))
        for positive in ClassLabel:
            b = collapse_binary(m, positive)
            assert b.fp == 0 and b.fn == 0

    def test_filter_base_collapse(self):
        b = collapse_binary(FILTER_BASE, ClassLabel.COVID19)
        assert (b.tp, b.fn, b.fp, b.tn) == (41, 1, 14, 792)

    def test_conserves_n(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            counts = rng.integers(0, 30, (3, 3))
            if counts.sum() == 0:
                continue
            m = ConfusionMatrix3(counts)
            for positive in ClassLabel:
                assert collapse_binary(m, positive).n == m.n

    def test_stats_full_model(self):
        stats = binary_stats(BinaryCounts(tp=42, fp=12, tn=794, fn=0))
        assert stats.sensitivity == 1.0
        assert abs(stats.specificity - 794 / 806) < 1e-12
        assert abs(stats.accuracy - 836 / 848) < 1e-12
        assert fmt_percent(stats.sensitivity) == "100.0%"
        assert fmt_percent(stats.specificity) == "98.5%"
        assert fmt_percent(stats.accuracy) == "98.6%"

    def test_recall_is_sensitivity(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            tp, fp, tn, fn = (int(v) for v in rng.integers(0, 50, 4))
            if tp + fp + tn + fn == 0:
                continue
            stats = binary_stats(BinaryCounts(tp, fp, tn, fn))
            assert stats.recall == stats.sensitivity

    def test_undefined_cases(self):
        stats = binary_stats(BinaryCounts(tp=0, fp=0, tn=3, fn=2))
        assert stats.sensitivity == 0.0
        assert stats.f1 == 0.0
        none_pos = binary_stats(BinaryCounts(tp=0, fp=0, tn=5, fn=0))
        assert none_pos.sensitivity is None and none_pos.f1 is None

    def test_symmetric_half(self):
        stats = binary_stats(BinaryCounts(1, 1, 1, 1))
        assert stats.sensitivity == 0.5
        assert stats.specificity == 0.5
        assert stats.accuracy == 0.5
        assert stats.f1 == 0.5


class TestWaldCI:
    def test_full_displays_092_096(self):
        ci = wald_ci(796, 848)
        assert ci[0] == pytest.approx(0.9225, abs=5e-4)
        assert ci[1] == pytest.approx(0.9548, abs=5e-4)
        assert fmt_ci(ci) == "[0.92,0.96]"

    def test_filter_base_displays_089_093(self):
        assert fmt_ci(wald_ci(772, 848)) == "[0.89,0.93]"

    def test_simple_displays_085_090(self):
        assert fmt_ci(wald_ci(743, 848)) == "[0.85,0.90]"

    def test_width_shrinks_like_sqrt_n(self):
        lo1, hi1 = wald_ci(90, 100)
        lo2, hi2 = wald_ci(360, 400)
        assert (hi2 - lo2) == pytest.approx((hi1 - lo1) / 2, rel=1e-9)

    def test_clipping_and_validation(self):
        assert wald_ci(0, 10)[0] == 0.0
        assert wald_ci(10, 10)[1] == 1.0
        with pytest.raises(ValueError):
            wald_ci(5, 0)
        with pytest.raises(ValueError):
            wald_ci(11, 10)


class TestRounding:
    def test_half_up(self):
        assert round_half_up(0.875, 2) == 0.88
        assert round_half_up(0.915, 2) == 0.92
        assert round_half_up(0.9386792, 2) == 0.94
        assert round_half_up(93.87, 1) == 93.9

    def test_fmt_percent_reference_values(self):
        assert fmt_percent(796 / 848) == "93.9%"
        assert fmt_percent(836 / 848) == "98.6%"


class TestRendering:
    def test_text_report_full_matrix_cells(self):
        report = full_report(FULL)
        counts = collapse_binary(FULL, ClassLabel.COVID19)
        text = render_text_report(report, binary_stats(counts), counts, matrix=FULL)
        normalized = [" ".join(line.split()) for line in text.splitlines()]
        for row in (
            "Normal 0.94 0.90 0.92 288",
            "Other Pneumonia 0.95 0.95 0.95 518",
            "COVID19 0.78 1.00 0.88 42",
            "Accuracy --- --- 0.94 848",
            "Macro avg 0.89 0.95 0.92 848",
            "Weighted avg 0.94 0.94 0.94 848",
        ):
            assert row in normalized, row
        for fragment in (
            "93.9% (796 / 848)",
            "[0.92,0.96]",
            "Cohen's kappa: 0.88",
            "Sensitivity 100.0% (42/42)",
            "Specificity 98.5% (794/806)",
            "Accuracy 98.6% (836/848)",
        ):
            assert fragment in text, fragment

    def test_machine_report_roundtrip(self):
        report = full_report(FILTER_BASE)
        counts = collapse_binary(FILTER_BASE, ClassLabel.COVID19)
        text = render_machine_report(
            report, binary_stats(counts), counts, matrix=FILTER_BASE
        )
        kv = parse_machine_report(text)
        assert kv["n"] == "848"
        assert float(kv["accuracy"]) == pytest.approx(772 / 848)
        assert float(kv["kappa"]) == pytest.approx(0.8210125808870498)
        assert kv["ci.display"] == "[0.89,0.93]"
        assert kv["confusion.0.1"] == "55"
        assert kv["binary.tp"] == "41"
        assert float(kv["precision.covid19"]) == pytest.approx(41 / 55)
