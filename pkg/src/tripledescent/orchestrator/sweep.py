"""Seeded sweep execution with crash-safe CSV journaling.

Work is split into units: for RF one unit is (P index, replicate) and covers
every N of the profile (the test features depend only on Theta); for NN one
unit is (width index, N index, replicate).  Completed units are appended to
``<out>.partial`` followed by a completion marker row.  On resume, rows of
units without a marker are discarded.  When every unit is done the final CSV
is written in a fixed sort order with aggregate rows, so the file does not
depend on worker count or completion order.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from .. import __version__
from ..nnsim import MLP, ensemble_records, make_teacher, run_cell
from ..rfcore import (RFProblem, SeedSchedule, TestSet, derive_seed,
                      ridge_solve, solve_cell)
from .config import ConfigError, SweepGrid

WORKERS_ENV = "TRIPLEDESCENT_WORKERS"
COLUMNS = ("experiment_id", "model", "D", "N", "P", "width", "r", "eta", "zeta", "snr", "gamma",
           "K", "epoch", "seed_tuple", "replicate", "row_type", "metric_name", "value", "error",
           "config_hash", "schedule_id", "code_version")
MARKER = "__unit_complete__"
BEGIN = "__unit_begin__"


def worker_count(requested: Optional[int] = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# units


def units(grid: SweepGrid) -> list:
    if grid.model == "RF":
        return [(p, r) for p in range(len(grid.p_values)) for r in range(grid.replicates)]
    return [(p, n, r) for p in range(len(grid.p_values)) for n in range(len(grid.n_values))
            for r in range(grid.replicates)]


def unit_key(unit) -> str:
    return ":".join(str(u) for u in unit)


def _base_row(grid: SweepGrid, N, P, width, replicate, seeds, epoch=""):
    act = grid.act
    return {
        "experiment_id": grid.experiment_id, "model": grid.model, "D": grid.D, "N": N, "P": P,
        "width": width, "r": act.r, "eta": act.eta, "zeta": act.zeta, "snr": grid.snr,
        "gamma": grid.gamma if grid.model == "RF" else grid.train_config.weight_decay,
        "K": grid.K, "epoch": epoch, "seed_tuple": seeds, "replicate": replicate,
        "row_type": "cell", "error": "",
    }


def _rf_unit(grid: SweepGrid, unit) -> list:
    p_index, rep = unit
    P = grid.p_values[p_index]
    schedule = SeedSchedule(grid.master_seed, grid.experiment_id)
    template = RFProblem(grid.D, 1, P, grid.act, grid.snr, grid.gamma)
    rows = []
    tests = None
    for j, N in enumerate(grid.n_values):
        seeds = schedule.seeds(rep, j, p_index)
        base = _base_row(grid, N, P, "", rep, str(seeds))
        try:
            if tests is None:
                tests = [TestSet.build(template.with_(seeds=schedule.seeds(rep, 0, p_index, k)),
                                       grid.m_test, schedule.test_seed(rep)) for k in range(grid.K)]
            metrics = solve_cell(template, N, seeds, tests[0])
            if grid.K > 1:
                pred = np.zeros(grid.m_test)
                for k, test in enumerate(tests):
                    prob = template.with_(N=N, seeds=schedule.seeds(rep, j, p_index, member=k))
                    pred += test.Z @ ridge_solve(prob).a
                metrics["loss_single"] = metrics["loss"]
                metrics["loss"] = float(((pred / grid.K - tests[0].target) ** 2).mean())
        except Exception as exc:  # recorded per cell, the sweep continues
            rows.append({**base, "metric_name": "error", "value": float("nan"),
                         "error": type(exc).__name__})
            continue
        for name, value in metrics.items():
            rows.append({**base, "metric_name": name, "value": float(value)})
    return rows


def _nn_unit(grid: SweepGrid, unit) -> list:
    p_index, n_index, rep = unit
    width = grid.p_values[p_index]
    N = grid.n_values[n_index]
    n_params = MLP.init(grid.D, width, grid.act, 0).n_params
    teacher_seed = derive_seed(grid.master_seed, grid.experiment_id, "teacher")
    rows = []
    members = range(rep * grid.K, (rep + 1) * grid.K) if grid.ensemble else [rep]
    preds = []
    for member in members:
        store = {} if grid.ensemble else None
        try:
            recs = run_cell(grid.D, width, N, grid.snr, grid.train_config, grid.act,
                            grid.checkpoint_epochs, member, grid.master_seed, teacher_seed,
                            grid.m_test, n_index, grid.teacher_width, grid.experiment_id, store)
        except Exception as exc:
            base = _base_row(grid, N, n_params, width, rep, "")
            rows.append({**base, "metric_name": "error", "value": float("nan"),
                         "error": type(exc).__name__})
            return rows
        preds.append(store)
        for rec in recs:
            base = _base_row(grid, N, n_params, width, rep, f"{rec.seed:x}", rec.epoch)
            err = "Divergence" if rec.diverged else ""
            name = "test_loss" if not grid.ensemble else f"test_loss_m{member - rep * grid.K}"
            rows.append({**base, "metric_name": name, "value": rec.test_loss, "error": err})
            rows.append({**base, "metric_name": "train_loss" if not grid.ensemble else
                         f"train_loss_m{member - rep * grid.K}", "value": rec.train_loss,
                         "error": err})
    if grid.ensemble:
        teacher = make_teacher(grid.D, grid.teacher_width, teacher_seed)
        X_test = np.random.default_rng(derive_seed(grid.master_seed, grid.experiment_id, "test")
                                       ).standard_normal((grid.m_test, grid.D))
        for rec in ensemble_records(preds, teacher(X_test), width, N):
            base = _base_row(grid, N, n_params, width, rep, "", rec.epoch)
            rows.append({**base, "metric_name": "test_loss", "value": rec.test_loss,
                         "error": "Divergence" if rec.diverged else ""})
    return rows


def run_unit(grid_dict: dict, unit) -> tuple:
    """Worker entry point (module level so it pickles)."""
    with threadpool_limits(1):
        grid = SweepGrid.from_dict(grid_dict)
        rows = _rf_unit(grid, unit) if grid.model == "RF" else _nn_unit(grid, unit)
    return unit, rows


# ---------------------------------------------------------------------------
# journal


def _provenance(grid: SweepGrid) -> dict:
    return {"config_hash": grid.config_hash(),
            "schedule_id": f"{grid.experiment_id}@{grid.master_seed}",
            "code_version": __version__}


def _read_journal(path: Path, config_hash: str):
    """Rows of completed units, keyed by unit.

    Each unit is written as a begin marker, its rows and a completion
    marker.  Rows are kept only between a begin and its matching completion,
    so leftovers of an interrupted attempt never merge into a rerun.
    """
    done = {}
    if not path.exists():
        return done
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return done
        if list(reader.fieldnames) != ["unit", *COLUMNS]:
            raise ConfigError(f"{path}: journal has an unexpected header")
        key, rows = None, []
        for row in reader:
            if None in row or None in row.values():
                key, rows = None, []  # torn line from an interrupted write
                continue
            if row["config_hash"] != config_hash:
                raise ConfigError(f"{path}: journal belongs to a different config; remove it")
            unit = row.pop("unit")
            if row["metric_name"] == BEGIN:
                key, rows = unit, []
            elif unit != key:
                key, rows = None, []
            elif row["metric_name"] == MARKER:
                done[key] = rows
                key, rows = None, []
            else:
                rows.append(row)
    return done


def _append(path: Path, key: str, rows: list, prov: dict):
    new = not path.exists() or path.stat().st_size == 0
    if not new:
        with open(path, "rb") as fh:
            fh.seek(-1, os.SEEK_END)
            torn = fh.read(1) != b"\n"
    with open(path, "a", newline="") as fh:
        if not new and torn:
            fh.write("\r\n")
        w = csv.writer(fh)
        if new:
            w.writerow(["unit", *COLUMNS])
        begin = {"metric_name": BEGIN, "row_type": "cell", **prov}
        w.writerow([key, *(begin.get(c, "") for c in COLUMNS)])
        for row in rows:
            full = {**row, **prov}
            w.writerow([key, *(_fmt(full.get(c, "")) for c in COLUMNS)])
        marker = {"metric_name": MARKER, "row_type": "cell", **prov}
        w.writerow([key, *(marker.get(c, "") for c in COLUMNS)])
        fh.flush()
        os.fsync(fh.fileno())


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class SweepResult:
    grid: SweepGrid
    csv_path: Optional[Path]
    table: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    rows: list = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not self.errors

    def profile(self, metric: Optional[str] = None, P: Optional[int] = None, epoch=""):
        """(N, mean, stderr) arrays along N at one P (parameter count for NN)
        and epoch.  The default metric is the test loss of the model."""
        if metric is None:
            metric = "loss" if self.grid.model == "RF" else "test_loss"
        if P is None:
            P = self.grid.p_values[0] if self.grid.model == "RF" else self._nn_params()[0]
        ns, means, ses = [], [], []
        for N in self.grid.n_values:
            key = (str(P), str(N), str(epoch), metric)
            if key in self.table:
                m, s, _ = self.table[key]
                ns.append(N)
                means.append(m)
                ses.append(s)
        return np.array(ns), np.array(means), np.array(ses)

    def _nn_params(self):
        return [MLP.init(self.grid.D, w, self.grid.act, 0).n_params for w in self.grid.widths]


def _sort_key(row):
    def num(v):
        try:
            return float(v)
        except ValueError:
            return -1.0
    return (num(row["P"]), num(row["width"]), num(row["N"]), num(row["epoch"]),
            {"cell": 0, "mean": 1, "stderr": 2}[row["row_type"]], num(row["replicate"]),
            row["metric_name"])


def _aggregate(rows: list):
    groups = {}
    for row in rows:
        if row["metric_name"] == "error":
            continue
        key = (row["P"], row["N"], row["epoch"], row["metric_name"])
        groups.setdefault(key, []).append(row)
    table, agg_rows = {}, []
    for key, grp in groups.items():
        vals = np.array([float(r["value"]) for r in grp])
        vals = vals[np.isfinite(vals)]
        mean = float(vals.mean()) if vals.size else float("nan")
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        table[key] = (mean, se, int(vals.size))
        tmpl = dict(grp[0])
        tmpl.update(replicate="", seed_tuple="", error="")
        agg_rows.append({**tmpl, "row_type": "mean", "value": _fmt(mean)})
        agg_rows.append({**tmpl, "row_type": "stderr", "value": _fmt(se)})
    return table, agg_rows


def run_sweep(grid: SweepGrid, out: Optional[str] = None, workers: Optional[int] = None,
              max_units: Optional[int] = None) -> SweepResult:
    """Execute every unit not yet journaled; write the final CSV when done.

    ``max_units`` stops after that many new units (used to simulate an
    interrupted run); the journal is kept and the final CSV not written.
    """
    prov = _provenance(grid)
    out_path = Path(out) if out else None
    journal = out_path.with_name(out_path.name + ".partial") if out_path else None
    done = _read_journal(journal, prov["config_hash"]) if journal else {}
    todo = [u for u in units(grid) if unit_key(u) not in done]
    if max_units is not None:
        todo = todo[:max_units]
    n_workers = worker_count(workers)
    grid_dict = grid.to_dict()

    def record(unit, rows):
        key = unit_key(unit)
        if journal:
            _append(journal, key, rows, prov)
        done[key] = [{c: _fmt({**row, **prov}.get(c, "")) for c in COLUMNS} for row in rows]

    if n_workers == 1 or len(todo) <= 1:
        for u in todo:
            record(*run_unit(grid_dict, u))
    else:
        with ProcessPoolExecutor(n_workers) as pool:
            futures = [pool.submit(run_unit, grid_dict, u) for u in todo]
            for fut in futures:
                record(*fut.result())

    complete = all(unit_key(u) in done for u in units(grid))
    rows = [r for key in sorted(done) for r in done[key]]
    table, agg = _aggregate(rows)
    errors = [r for r in rows if r["error"]]
    rows = sorted(rows + agg, key=_sort_key)
    if out_path and complete:
        tmp = out_path.with_name(out_path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in rows:
                w.writerow([r[c] for c in COLUMNS])
        os.replace(tmp, out_path)
        journal.unlink(missing_ok=True)
    return SweepResult(grid, out_path if complete else None, table, errors, rows)
