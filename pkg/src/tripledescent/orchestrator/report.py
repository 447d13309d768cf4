"""Text and (optional) matplotlib rendering of emitted CSVs.

The numerical core never imports matplotlib; ``render_*`` import it lazily
and raise a clear error when it is missing.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np


class RenderingUnavailable(RuntimeError):
    pass


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def sweep_profiles(rows: list, metric: str = "loss") -> dict:
    """{(P, epoch): (N, mean, stderr)} from the aggregate rows of a sweep CSV."""
    means, ses = defaultdict(dict), defaultdict(dict)
    for r in rows:
        if r.get("metric_name") != metric or r.get("row_type") not in ("mean", "stderr"):
            continue
        key = (int(r["P"]), r["epoch"])
        target = means if r["row_type"] == "mean" else ses
        target[key][int(r["N"])] = float(r["value"])
    out = {}
    for key, vals in means.items():
        ns = np.array(sorted(vals))
        out[key] = (ns, np.array([vals[n] for n in ns]),
                    np.array([ses[key].get(n, 0.0) for n in ns]))
    return out


def ascii_profile(n, y, width: int = 60, label: str = "loss") -> str:
    """Horizontal bar per grid point, bar length on a log scale of y."""
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (y > 0)
    if not ok.any():
        return "(no finite positive values)"
    ly = np.log10(y[ok])
    lo, hi = ly.min(), ly.max()
    span = hi - lo if hi > lo else 1.0
    lines = [f"{'N':>8}  {label:>12}"]
    for N, v in zip(n, y):
        if v > 0 and math.isfinite(v):
            bar = "#" * (1 + int(round((math.log10(v) - lo) / span * (width - 1))))
        else:
            bar = "?"
        lines.append(f"{int(N):>8}  {v:>12.5g}  {bar}")
    return "\n".join(lines)


def _pyplot():
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RenderingUnavailable(
            "matplotlib is not installed; install the 'plot' extra to render figures") from exc
    return plt


def render_sweep(csv_path, out_dir=None, metrics=("loss", "norm_a", "norm_b", "test_loss")) -> list:
    """One log-log profile figure per metric present in the CSV."""
    plt = _pyplot()
    rows = read_rows(csv_path)
    if not rows:
        return []
    out_dir = Path(out_dir) if out_dir else Path(csv_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    D = int(rows[0]["D"])
    stem = Path(csv_path).stem
    written = []
    for metric in metrics:
        prof = sweep_profiles(rows, metric)
        if not prof:
            continue
        fig, ax = plt.subplots(figsize=(5.5, 3.8))
        for (P, epoch), (n, m, s) in sorted(prof.items()):
            lab = f"P={P}" + (f", epoch {epoch}" if epoch else "")
            ax.errorbar(n / D, m, yerr=s, marker="o", ms=3, capsize=2, label=lab)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.axvline(1.0, color="0.6", ls=":", lw=1)
        ax.set_xlabel("N / D")
        ax.set_ylabel(metric)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / f"{stem}_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_spectra(csv_path, out_dir=None) -> list:
    """Density panels (analytic line, empirical steps) per N."""
    plt = _pyplot()
    rows = [r for r in read_rows(csv_path) if r["quantity"] == "density"]
    if not rows:
        return []
    out_dir = Path(out_dir) if out_dir else Path(csv_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    series = defaultdict(lambda: ([], []))
    for r in rows:
        xs, vs = series[(int(r["N"]), r["source"])]
        xs.append(float(r["x"]))
        vs.append(float(r["value"]))
    ns = sorted({k[0] for k in series})
    fig, axes = plt.subplots(1, len(ns), figsize=(3.2 * len(ns), 3.0), squeeze=False)
    for ax, N in zip(axes[0], ns):
        for source, style in (("empirical", dict(drawstyle="steps-mid", color="0.5")),
                              ("analytic", dict(color="C0"))):
            if (N, source) in series:
                xs, vs = series[(N, source)]
                ax.plot(xs, vs, lw=1, label=source, **style)
        ax.set_yscale("log")
        ax.set_ylim(bottom=1e-4)
        ax.set_title(f"N={N}", fontsize=9)
        ax.set_xlabel("lambda")
    axes[0][0].legend(fontsize=7)
    fig.tight_layout()
    path = out_dir / f"{Path(csv_path).stem}_density.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
