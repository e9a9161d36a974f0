"""
Unit tests for edge-set metrics.
"""

import math

import pytest
import numpy as np

import sys
import os
sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from metrics import CSV_COLUMNS, EvalReport, evaluate, frobenius_error, shd

import allure


def naive_counts(estimated, truth, p):
    tp = fp = tn = fn = 0
    for a in range(p):
        for b in range(p):
            if a == b:
                continue
            e, t = (a, b) in estimated, (a, b) in truth
            tp += e and t
            fp += e and not t
            fn += t and not e
            tn += not e and not t
    return tp, fp, tn, fn


def naive_shd(g1, g2, p):
    return sum(
        ((a, b) in g1, (b, a) in g1) != ((a, b) in g2, (b, a) in g2)
        for a in range(p) for b in range(a + 1, p)
    )


class TestEvalReport:

    @allure.feature("Metrics")
    @allure.story("Confusion Metrics")
    @pytest.mark.unit
    def test_hand_case(self):
        report = EvalReport.from_counts(tp=8, fp=2, tn=88, fn=2)
        assert report.fpr == pytest.approx(2 / 90, abs=1e-12)
        assert report.fdr == pytest.approx(0.2, abs=1e-12)
        assert report.fscore == pytest.approx(0.8, abs=1e-12)
        assert report.mcc == pytest.approx(700 / 900, abs=1e-12)

    @allure.feature("Metrics")
    @allure.story("Confusion Metrics")
    @pytest.mark.unit
    def test_undefined_metrics_are_none(self):
        report = EvalReport.from_counts(tp=0, fp=0, tn=6, fn=0)
        assert report.fscore is None
        assert report.fdr is None
        assert report.mcc is None
        assert report.fpr == 0.0

    @allure.feature("Metrics")
    @allure.story("CSV")
    @pytest.mark.unit
    def test_csv_renders_na(self):
        report = EvalReport.from_counts(tp=0, fp=0, tn=6, fn=0)
        header, row = report.to_csv().splitlines()
        assert header.split(",") == list(CSV_COLUMNS)
        values = dict(zip(CSV_COLUMNS, row.split(",")))
        assert values["fscore"] == "NA"
        assert values["frobenius"] == "NA"
        assert values["tn"] == "6"

    @allure.feature("Metrics")
    @allure.story("CSV")
    @pytest.mark.unit
    def test_table_lists_every_metric(self):
        table = EvalReport.from_counts(tp=1, fp=0, tn=1, fn=0).table()
        assert [line.split()[0] for line in table.splitlines()] == list(CSV_COLUMNS)


class TestGraphMetrics:

    @allure.feature("Metrics")
    @allure.story("Structural Hamming Distance")
    @pytest.mark.unit
    def test_flip_plus_delete(self):
        assert shd({(0, 1), (1, 2)}, {(1, 0)}, 3) == 2

    @allure.feature("Metrics")
    @allure.story("Structural Hamming Distance")
    @pytest.mark.unit
    def test_identical_graphs(self):
        edges = {(0, 1), (0, 2)}
        report = evaluate(edges, edges, 3)
        assert report.shd == 0
        assert (report.tp, report.fp, report.fn, report.tn) == (2, 0, 0, 4)
        assert report.fscore == 1.0

    @allure.feature("Metrics")
    @allure.story("Validation")
    @pytest.mark.unit
    def test_self_loop_rejected(self):
        with pytest.raises(ValueError, match="self-loop"):
            evaluate({(1, 1)}, set(), 3)

    @allure.feature("Metrics")
    @allure.story("Validation")
    @pytest.mark.unit
    def test_out_of_range_edge_rejected(self):
        with pytest.raises(ValueError):
            shd({(0, 5)}, set(), 3)

    @allure.feature("Metrics")
    @allure.story("Frobenius")
    @pytest.mark.unit
    def test_frobenius(self):
        assert frobenius_error(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0, 3.0], [1.0, 0.0]])) == 5.0
        report = evaluate({(0, 1)}, {(0, 1)}, 2, np.zeros((2, 2)), np.ones((2, 2)))
        assert report.frobenius == 4.0

    @allure.feature("Metrics")
    @allure.story("Oracle")
    @pytest.mark.unit
    def test_agrees_with_naive_enumeration(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            p = int(rng.integers(2, 51))
            density = rng.random() * 0.2
            pairs = [(a, b) for a in range(p) for b in range(p) if a != b]
            g1 = {pair for pair in pairs if rng.random() < density}
            g2 = {pair for pair in pairs if rng.random() < density}

            report = evaluate(g1, g2, p)

            tp, fp, tn, fn = naive_counts(g1, g2, p)
            assert (report.tp, report.fp, report.tn, report.fn) == (tp, fp, tn, fn)
            assert report.shd == naive_shd(g1, g2, p)
            assert report.tp + report.fp + report.tn + report.fn == p * (p - 1)
            if tp + fp and tp + fn:
                assert report.fscore == pytest.approx(2 * tp / (2 * tp + fp + fn), abs=1e-12)
            marginals = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
            if marginals:
                assert report.mcc == pytest.approx((tp * tn - fp * fn) / math.sqrt(marginals), abs=1e-12)
