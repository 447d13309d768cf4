"""Non-sweep jobs: spectra, gap curves, bias-variance and MNIST spectra.

Each job writes one CSV and returns the numbers it wrote.
"""

from __future__ import annotations

import csv
import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .. import __version__
from .. import spectral as S
from ..activation import get_activation
from ..biasvar import TERMS, decompose, direct_loss
from ..rfcore import RFProblem, derive_seed, features
from .config import ConfigError, parse_snr
from .sweep import worker_count

SPECTRUM_COLUMNS = ("experiment_id", "source", "D", "N", "P", "eta", "zeta", "quantity", "x",
                    "value", "config_hash", "code_version")
BIASVAR_COLUMNS = ("experiment_id", "D", "N", "P", "N/D", "P/D", "r", "snr", "gamma", "K",
                   *TERMS, "total", *(f"stderr_{t}" for t in (*TERMS, "total")),
                   "direct_loss", "stderr_direct", "conditioning", "seeds_used", "config_hash",
                   "code_version")


def params_hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write(path, columns, rows):
    if path is None:
        return
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in columns])
    tmp.replace(path)


# ---------------------------------------------------------------------------
# spectra


def _moments(activation=None, eta=None, zeta=None):
    if activation is not None:
        act = get_activation(activation)
        return act, act.eta, act.zeta
    if eta is None or zeta is None:
        raise ConfigError("give an activation or both eta and zeta")
    return None, float(eta), float(zeta)


def spectra_job(D: int, p_over_d: float, n_over_d: Sequence[float], activation=None,
                eta=None, zeta=None, seeds: int = 10, mode: str = "both", master: int = 0,
                experiment_id: str = "spectra", out: Optional[str] = None) -> list:
    """Analytic and/or empirical spectra at several N/D.

    Empirical spectra need an activation (or zeta = eta, i.e. linear
    features); they are pooled over ``seeds`` independent draws.
    """
    if mode not in ("analytic", "empirical", "both"):
        raise ConfigError(f"mode must be analytic, empirical or both, got {mode!r}")
    act, eta, zeta = _moments(activation, eta, zeta)
    if mode != "analytic" and act is None:
        if abs(zeta - eta) > 1e-12:
            raise ConfigError("empirical spectra need an activation")
        act = get_activation("linear")
    P = max(1, round(D * p_over_d))
    cfg = dict(D=D, p_over_d=p_over_d, n_over_d=list(n_over_d), activation=str(activation),
               eta=eta, zeta=zeta, seeds=seeds, mode=mode, master=master)
    prov = {"experiment_id": experiment_id, "config_hash": params_hash(cfg),
            "code_version": __version__}
    rows, summary = [], []
    for j, nd in enumerate(n_over_d):
        N = max(1, round(D * nd))
        base = {**prov, "D": D, "N": N, "P": P, "eta": eta, "zeta": zeta}
        info = {"N": N, "n_over_d": nd}
        an = None
        if mode in ("analytic", "both"):
            an = S.analytic_spectrum(S.SpectralParams.from_sizes(D, N, P, eta, zeta))
            for lam, rho in zip(an.lambda_grid, an.density):
                rows.append({**base, "source": "analytic", "quantity": "density", "x": lam,
                             "value": rho})
            for q in ("atom_at_zero", "gap", "right_edge", "mass"):
                rows.append({**base, "source": "analytic", "quantity": q, "x": "",
                             "value": getattr(an, q)})
            info.update(atom=an.atom_at_zero, gap=an.gap, right_edge=an.right_edge)
        if mode in ("empirical", "both"):
            evs, atoms, lin_edges = [], [], []
            for s in range(seeds):
                rng = np.random.default_rng(derive_seed(master, experiment_id, j, s))
                X = rng.standard_normal((N, D))
                Th = rng.standard_normal((P, D))
                ev = S.gram_eigenvalues(features(act, X, Th))
                emp = S.spectrum_from_eigenvalues(ev, N)
                evs.append(ev[ev > emp.zero_cut])
                atoms.append(emp.atom_at_zero)
                lin_edges.append(S.linear_component_edge(ev, D, N))
            pooled = np.concatenate(evs)
            edges = np.linspace(0.0, pooled.max() * 1.02, 201)
            hist, _ = np.histogram(pooled, bins=edges)
            hist = hist / (P * seeds * np.diff(edges))
            for x, v in zip(0.5 * (edges[1:] + edges[:-1]), hist):
                rows.append({**base, "source": "empirical", "quantity": "density", "x": x,
                             "value": v})
            emp_summary = {"atom_at_zero": float(np.mean(atoms)),
                           "gap": float(np.mean([e.min() if e.size else 0.0 for e in evs])),
                           "linear_edge": float(np.mean(lin_edges))}
            for q, v in emp_summary.items():
                rows.append({**base, "source": "empirical", "quantity": q, "x": "", "value": v})
            info.update({f"empirical_{k}": v for k, v in emp_summary.items()})
            info["atoms"] = atoms
            if an is not None:
                w1 = S.wasserstein_continuous(an, pooled)
                rows.append({**base, "source": "comparison", "quantity": "w1_normalized", "x": "",
                             "value": w1})
                info["w1"] = w1
        summary.append(info)
    _write(out, SPECTRUM_COLUMNS, rows)
    return summary


def gap_job(eta: float, zetas: Sequence[float], p_over_d: float, n_over_d: Sequence[float],
            experiment_id: str = "gaps", out: Optional[str] = None) -> dict:
    cfg = dict(eta=eta, zetas=list(zetas), p_over_d=p_over_d, n_over_d=list(n_over_d))
    prov = {"experiment_id": experiment_id, "config_hash": params_hash(cfg),
            "code_version": __version__}
    rows, curves = [], {}
    for zeta in zetas:
        curve = S.gap_curve(eta, zeta, p_over_d, n_over_d)
        curves[zeta] = curve
        for nd, g in zip(curve.n_over_d, curve.gap):
            rows.append({**prov, "source": "analytic", "D": "", "N": "", "P": "", "eta": eta,
                         "zeta": zeta, "quantity": "gap", "x": nd, "value": g})
    _write(out, SPECTRUM_COLUMNS, rows)
    return curves


# ---------------------------------------------------------------------------
# bias-variance


def _biasvar_cell(args):
    template_kw, S_theta, S_noise, S_data, m_test, master, direct_runs = args
    with threadpool_limits(1):
        template = RFProblem(**template_kw)
        rep = decompose(template, S_theta, S_noise, S_data, m_test, master)
        direct = direct_loss(template, direct_runs, m_test, master) if direct_runs else (
            float("nan"), float("nan"))
    return rep, direct


def biasvar_job(D: int, p_over_d: float, n_over_d: Sequence[float], activation="relu",
                snr=0.2, gamma: float = 1e-5, S_theta: int = 10, S_noise: int = 10,
                S_data: int = 10, m_test: int = 10_000, direct_runs: int = 0, master: int = 0,
                experiment_id: str = "biasvar", out: Optional[str] = None,
                workers: Optional[int] = None) -> list:
    snr = parse_snr(snr)
    act = get_activation(activation)
    P = max(1, round(D * p_over_d))
    cfg = dict(D=D, p_over_d=p_over_d, n_over_d=list(n_over_d), activation=act.token,
               snr=str(snr), gamma=gamma, S=(S_theta, S_noise, S_data), m_test=m_test,
               direct_runs=direct_runs, master=master)
    jobs = [(dict(D=D, N=max(1, round(D * nd)), P=P, activation=act.token, snr=snr,
                  gamma=gamma), S_theta, S_noise, S_data, m_test, master, direct_runs)
            for nd in n_over_d]
    n = worker_count(workers)
    if n == 1:
        results = [_biasvar_cell(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_biasvar_cell, jobs))
    rows = []
    for job, (rep, direct) in zip(jobs, results):
        N = job[0]["N"]
        row = {"experiment_id": experiment_id, "D": D, "N": N, "P": P, "N/D": N / D,
               "P/D": P / D, "r": act.r, "snr": snr, "gamma": gamma, "K": 1,
               **rep.terms(), "total": rep.total,
               **{f"stderr_{k}": v for k, v in rep.mc_stderr.items()},
               "direct_loss": direct[0], "stderr_direct": direct[1],
               "conditioning": rep.conditioning, "seeds_used": "/".join(map(str, rep.seeds_used)),
               "config_hash": params_hash(cfg), "code_version": __version__}
        rows.append(row)
    _write(out, BIASVAR_COLUMNS, rows)
    return [dict(r, report=res[0]) for r, res in zip(rows, results)]


# ---------------------------------------------------------------------------
# MNIST spectra


def mnist_spectrum_job(data, p_over_d: float = 10.0, n_over_d: Sequence[float] = (0.5, 1, 2, 10),
                       activation="tanh", seeds: int = 3, master: int = 0,
                       experiment_id: str = "appC_mnist", out: Optional[str] = None) -> list:
    """Empirical spectra of RF features on ingested inputs, with the top-D
    (linear) / rest (nonlinear) split and the distance between them."""
    act = get_activation(activation)
    ext = data.as_external() if hasattr(data, "as_external") else data
    D = ext.D
    P = max(1, round(D * p_over_d))
    prov = {"experiment_id": experiment_id, "config_hash": params_hash(
        dict(p_over_d=p_over_d, n_over_d=list(n_over_d), activation=act.token, seeds=seeds,
             master=master, source=ext.name)), "code_version": __version__}
    rows, out_info = [], []
    for j, nd in enumerate(n_over_d):
        N = max(1, round(D * nd))
        split_gaps = []
        for s in range(seeds):
            X = ext.draw(N, derive_seed(master, experiment_id, "rows", j, s))
            Th = np.random.default_rng(derive_seed(master, experiment_id, "theta", s)
                                       ).standard_normal((P, D))
            ev = S.gram_eigenvalues(features(act, X, Th))
            res = S.spectrum_from_eigenvalues(ev, N)
            nz = ev[ev > res.zero_cut]
            k = min(D, nz.size)
            if k < nz.size:
                # distance between the smallest linear and the largest nonlinear eigenvalue
                split_gaps.append(float((nz[nz.size - k] - nz[nz.size - k - 1]) / nz[-1]))
        base = {**prov, "source": ext.name, "D": D, "N": N, "P": P, "eta": act.eta,
                "zeta": act.zeta, "x": ""}
        gap = float(np.mean(split_gaps)) if split_gaps else float("nan")
        rows.append({**base, "quantity": "component_gap_relative", "value": gap})
        out_info.append({"N": N, "component_gap_relative": gap})
    _write(out, SPECTRUM_COLUMNS, rows)
    return out_info
