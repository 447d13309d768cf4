"""Peak detection on sample-wise loss profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, peak_widths

CLASS_WINDOW_DEX = 0.25
MIN_POINTS = 7


class InsufficientGridError(ValueError):
    pass


@dataclass(frozen=True)
class Peak:
    location: float          # N / D
    N: float
    height: float
    prominence: float
    width_dex: float         # full width at half prominence, in log10 N
    cls: str


@dataclass
class PeakReport:
    peaks: list = field(default_factory=list)
    D: int = 0
    P: float = 0.0

    def classes(self) -> list:
        return [p.cls for p in self.peaks]

    def count(self, cls: str) -> int:
        return sum(p.cls == cls for p in self.peaks)

    def find(self, cls: str):
        matches = [p for p in self.peaks if p.cls == cls]
        return max(matches, key=lambda p: p.height) if matches else None


def classify(N: float, D: float, P: float, window: float = CLASS_WINDOW_DEX) -> str:
    to_d = abs(math.log10(N / D))
    to_p = abs(math.log10(N / P))
    if to_d < to_p and to_d <= window:
        return "Linear"
    if to_p < to_d and to_p <= window:
        return "Nonlinear"
    return "Other"


def median3(y: np.ndarray, return_source: bool = False):
    """3-point running median; end points are kept.

    With ``return_source`` also returns, for each output, the index of the
    input point whose value was selected.
    """
    y = np.asarray(y, dtype=float)
    src = np.arange(y.size)
    if y.size >= 3:
        win = np.stack([src[:-2], src[1:-1], src[2:]])
        order = np.argsort(y[win], axis=0, kind="stable")
        src = src.copy()
        src[1:-1] = np.take_along_axis(win, order[1:2], axis=0)[0]
    out = y[src]
    return (out, src) if return_source else out


def detect_peaks(n_values, loss, stderr, D: float, P: float, smooth: bool = True,
                 sigmas: float = 2.0) -> PeakReport:
    """Interior local maxima of the (median-smoothed) profile in log N whose
    prominence exceeds ``sigmas`` times the local standard error.

    The local standard error is that of the raw point the median selected
    at the peak, i.e. the standard error of the smoothed value itself.
    On a plateau of the smoothed profile the location is the raw maximum.
    """
    n = np.asarray(n_values, dtype=float)
    y = np.asarray(loss, dtype=float)
    se = np.broadcast_to(np.asarray(stderr, dtype=float), y.shape)
    if n.size < MIN_POINTS:
        raise InsufficientGridError(f"need at least {MIN_POINTS} grid points, got {n.size}")
    if np.any(np.diff(n) <= 0):
        raise ValueError("n_values must be strictly increasing")
    if not (n[0] <= D <= n[-1] and n[0] <= P <= n[-1]):
        raise InsufficientGridError("grid must span both N = D and N = P")
    if not np.all(np.isfinite(y)):
        raise ValueError("profile contains non-finite losses")
    ys, src = median3(y, return_source=True) if smooth else (y, np.arange(y.size))
    idx, props = find_peaks(ys, prominence=0.0, plateau_size=1)
    if idx.size == 0:
        return PeakReport([], int(D), P)
    logn = np.log10(n)
    widths, _, left, right = peak_widths(ys, idx, rel_height=0.5, prominence_data=(
        props["prominences"], props["left_bases"], props["right_bases"]))
    grid = np.arange(n.size)
    peaks = []
    for k, i in enumerate(idx):
        local = se[src[i]]
        prom = float(props["prominences"][k])
        if prom <= sigmas * local:
            continue
        # median smoothing flattens sharp maxima into plateaus; report the
        # raw maximum inside the plateau
        lo, hi = props["left_edges"][k], props["right_edges"][k]
        N = float(n[lo + int(np.argmax(y[lo:hi + 1]))])
        w = float(np.interp(right[k], grid, logn) - np.interp(left[k], grid, logn))
        peaks.append(Peak(N / D, N, float(ys[i]), prom, w, classify(N, D, P)))
    return PeakReport(peaks, int(D), P)
