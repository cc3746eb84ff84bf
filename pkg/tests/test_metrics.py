"""Accuracy-matrix bookkeeping and the ACC/BWT formulas against brute force."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clbench.errors import ConfigError, ProtocolError, StateError
from clbench.metrics import (
    AccuracyMatrix,
    MetricReport,
    average_accuracy,
    backward_transfer,
)

from helpers import brute_force_acc, brute_force_bwt


def filled_matrix(values: np.ndarray) -> AccuracyMatrix:
    t = values.shape[0]
    m = AccuracyMatrix(t)
    for i in range(t):
        for j in range(i + 1):
            m.record(i, j, float(values[i][j]))
    return m


@st.composite
def lower_triangles(draw):
    t = draw(st.integers(min_value=1, max_value=8))
    vals = np.zeros((t, t))
    for i in range(t):
        for j in range(i + 1):
            vals[i][j] = draw(st.floats(0.0, 1.0, allow_nan=False))
    return vals


class TestRecording:
    def test_record_and_read(self):
        m = AccuracyMatrix(3)
        m.record(0, 0, 0.9)
        assert m.value(0, 0) == 0.9
        assert not m.defined(1, 0)

    def test_write_once(self):
        m = AccuracyMatrix(2)
        m.record(0, 0, 0.5)
        with pytest.raises(ProtocolError):
            m.record(0, 0, 0.6)

    def test_rejects_upper_triangle_and_bad_values(self):
        m = AccuracyMatrix(3)
        with pytest.raises(ConfigError):
            m.record(0, 1, 0.5)
        with pytest.raises(ConfigError):
            m.record(1, 0, 1.5)

    def test_row_completeness_counter(self):
        m = AccuracyMatrix(4)
        for j in range(4):
            m.record(3, j, 0.25 * j)
        assert m.row_complete(3)
        assert sum(m.defined(3, j) for j in range(4)) == 4


class TestAverageAccuracy:
    def test_single_task(self):
        m = AccuracyMatrix(1)
        m.record(0, 0, 0.9)
        assert average_accuracy(m) == 0.9

    def test_hand_arithmetic(self):
        vals = np.array([[0.95, 0, 0], [0.9, 0.9, 0], [0.9, 0.8, 0.7]])
        assert average_accuracy(filled_matrix(vals)) == pytest.approx(0.8, abs=1e-12)

    def test_constant_row(self):
        vals = np.full((3, 3), 0.4)
        assert average_accuracy(filled_matrix(vals)) == pytest.approx(0.4, abs=1e-12)

    def test_incomplete_row_errors(self):
        m = AccuracyMatrix(2)
        m.record(0, 0, 0.9)
        m.record(1, 0, 0.8)
        with pytest.raises(StateError):
            average_accuracy(m)


class TestBackwardTransfer:
    def test_no_forgetting_is_zero(self):
        vals = np.array([[0.8, 0, 0], [0.8, 0.6, 0], [0.8, 0.6, 0.9]])
        assert backward_transfer(filled_matrix(vals)) == pytest.approx(0.0, abs=1e-15)

    def test_hand_arithmetic(self):
        vals = np.array([[0.9, 0.0], [0.7, 0.95]])
        assert backward_transfer(filled_matrix(vals)) == pytest.approx(-0.2, abs=1e-12)

    def test_single_task_is_an_error(self):
        m = AccuracyMatrix(1)
        m.record(0, 0, 0.9)
        with pytest.raises(StateError):
            backward_transfer(m)

    def test_bounds(self):
        vals = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert backward_transfer(filled_matrix(vals)) == -1.0


class TestBruteForceAgreement:
    @settings(max_examples=200, deadline=None)
    @given(lower_triangles())
    def test_acc_and_bwt_match_brute_force(self, vals):
        m = filled_matrix(vals)
        assert abs(average_accuracy(m) - brute_force_acc(vals)) < 1e-12
        assert 0.0 <= average_accuracy(m) <= 1.0
        if vals.shape[0] >= 2:
            bwt = backward_transfer(m)
            assert abs(bwt - brute_force_bwt(vals)) < 1e-12
            assert -1.0 <= bwt <= 1.0


class TestCsv:
    def test_roundtrip_with_blanks(self):
        m = AccuracyMatrix(3)
        m.record(0, 0, 0.5)
        m.record(1, 0, 0.25)
        m.record(1, 1, 1.0)
        text = m.to_csv()
        assert text.splitlines()[0] == "after_task,task1,task2,task3"
        back = AccuracyMatrix.from_csv(text)
        a, b = m.as_array(), back.as_array()
        assert np.array_equal(np.isnan(a), np.isnan(b))
        assert np.array_equal(a[~np.isnan(a)], b[~np.isnan(b)])

    def test_report_from_matrix(self):
        vals = np.array([[0.9, 0.0], [0.7, 0.95]])
        rep = MetricReport.from_matrix(filled_matrix(vals))
        assert rep.acc == pytest.approx(0.825, abs=1e-12)
        assert rep.bwt == pytest.approx(-0.2, abs=1e-12)
        single = AccuracyMatrix(1)
        single.record(0, 0, 0.7)
        rep1 = MetricReport.from_matrix(single)
        assert rep1.bwt is None
        assert rep1.per_task_final == [0.7]
