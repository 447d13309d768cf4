"""Peak detection and classification on sample-wise profiles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tripledescent.orchestrator.peaks import (
    InsufficientGridError,
    classify,
    detect_peaks,
    median3,
)

D, P = 100, 1000
GRID = np.round(D * np.logspace(-1, 2, 25))


def two_bumps(lin=3.0, nonlin=5.0, width=0.25):
    x = np.log10(GRID)
    base = 2.0 - 0.3 * (x - x[0])
    return (base + lin * np.exp(-0.5 * ((x - math.log10(D)) / width) ** 2)
            + nonlin * np.exp(-0.5 * ((x - math.log10(P)) / width) ** 2))


class TestClassify:
    def test_classes(self):
        assert classify(100, D, P) == "Linear"
        assert classify(1000, D, P) == "Nonlinear"
        assert classify(320, D, P) == "Other"
        assert classify(170, D, P) == "Linear"
        assert classify(190, D, P) == "Other"

    @given(st.floats(1.0, 1e5))
    @settings(max_examples=50)
    def test_window_is_symmetric_in_log(self, n):
        to_d = abs(math.log10(n / D))
        cls = classify(n, D, P)
        if cls == "Linear":
            assert to_d <= 0.25
        if cls == "Nonlinear":
            assert abs(math.log10(n / P)) <= 0.25


class TestMedian:
    def test_keeps_ends_and_kills_spikes(self):
        y = np.array([1.0, 9.0, 1.0, 1.0, 5.0])
        np.testing.assert_array_equal(median3(y), [1.0, 1.0, 1.0, 1.0, 5.0])

    @given(st.lists(st.floats(-100, 100), min_size=3, max_size=30))
    @settings(max_examples=50)
    def test_source_index(self, vals):
        y = np.array(vals)
        out, src = median3(y, return_source=True)
        np.testing.assert_array_equal(out, y[src])
        assert np.all(np.abs(src - np.arange(y.size)) <= 1)


class TestDetect:
    def test_decreasing_profile(self):
        y = np.linspace(5, 1, GRID.size)
        assert detect_peaks(GRID, y, np.full(GRID.size, 0.01), D, P).peaks == []

    def test_two_gaussians(self):
        rep = detect_peaks(GRID, two_bumps(), np.full(GRID.size, 0.01), D, P)
        assert rep.classes() == ["Linear", "Nonlinear"]
        assert rep.find("Linear").N == pytest.approx(100)
        assert rep.find("Nonlinear").N == pytest.approx(1000)
        assert rep.find("Nonlinear").width_dex > 0

    def test_noise_gate(self):
        y = two_bumps(lin=0.5)
        assert detect_peaks(GRID, y, np.full(GRID.size, 0.001), D, P).count("Linear") == 1
        assert detect_peaks(GRID, y, np.full(GRID.size, 1.0), D, P).count("Linear") == 0

    def test_single_point_spike(self):
        # a one-point spike survives median smoothing as a plateau
        y = np.linspace(3, 1, GRID.size)
        k = int(np.argmin(np.abs(GRID - D)))
        y[k - 1] += 5.0
        y[k] += 50.0
        se = np.full(GRID.size, 0.05)
        se[k] = 30.0
        rep = detect_peaks(GRID, y, se, D, P)
        assert rep.classes() == ["Linear"]

    @given(st.floats(1.0, 5.0), st.floats(1.0, 5.0), st.floats(-0.05, 0.05))
    @settings(max_examples=30, deadline=None)
    def test_amplitude_invariance(self, lin, nonlin, shift):
        x = GRID * 10 ** shift
        rep = detect_peaks(x, two_bumps(lin, nonlin), np.full(GRID.size, 0.01), D, P)
        assert rep.classes() == ["Linear", "Nonlinear"]

    def test_errors(self):
        with pytest.raises(InsufficientGridError):
            detect_peaks(GRID[:5], np.ones(5), np.zeros(5), D, P)
        with pytest.raises(InsufficientGridError):
            detect_peaks(GRID[:12], np.ones(12), np.zeros(12), D, P)
        with pytest.raises(ValueError):
            detect_peaks(GRID[::-1], np.ones(25), np.zeros(25), D, P)
        y = np.ones(25)
        y[3] = np.nan
        with pytest.raises(ValueError):
            detect_peaks(GRID, y, np.zeros(25), D, P)
