"""Bias-variance decomposition of the RF test loss over a seed lattice.

Predictions f(x; X_d, Theta_s, eps_n) are computed on a fixed probe set for
every (d, s, n).  Conditioning is noise innermost, initialization middle,
sampling outermost:

    var_noise    = E_x E_{d,s} Var_n f
    var_init     = E_x E_d Var_s E_n f
    var_sampling = E_x Var_d E_{s,n} f
    bias2        = E_x (E_{d,s,n} f - f*(x))^2

All expectations are plug-in means, so the four terms add up exactly to the
lattice-averaged squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rfcore import (RFProblem, RidgeFactor, SeedSchedule, TestSet, derive_seed, features,
                     ridge_solve, _stderr)

TERMS = ("bias2", "var_init", "var_noise", "var_sampling")
CONDITIONING = "noise|init|sampling"


class InsufficientReplicatesError(ValueError):
    pass


@dataclass
class BiasVarianceReport:
    bias2: float
    var_init: float
    var_noise: float
    var_sampling: float
    total: float
    mc_stderr: dict
    seeds_used: tuple
    conditioning: str = CONDITIONING
    N: int = 0

    def terms(self) -> dict:
        return {k: getattr(self, k) for k in TERMS}

    @property
    def largest_variance(self) -> str:
        return max(("var_init", "var_noise", "var_sampling"), key=lambda k: getattr(self, k))


def _var(x: np.ndarray, axis: int, ddof: int) -> np.ndarray:
    """Variance via deviations from the first slice; exactly zero when
    every slice along ``axis`` is identical (e.g. noise at SNR = inf)."""
    d = x - np.take(x, [0], axis=axis)
    n = x.shape[axis]
    m = d.mean(axis=axis)
    return np.maximum((d * d).mean(axis=axis) - m * m, 0.0) * n / (n - ddof)


def terms_from_tensor(F: np.ndarray, target: np.ndarray, bessel: bool = False) -> dict:
    """Plug-in decomposition of a prediction tensor F[d, s, n, m].

    With ``bessel`` every per-source variance gets the S/(S-1) factor; the
    terms then no longer sum to the lattice-mean squared error.
    """
    Sd, Ss, Sn, _ = F.shape
    ddof = 1 if bessel else 0
    over_n = F.mean(axis=2)
    over_sn = over_n.mean(axis=1)
    grand = over_sn.mean(axis=0)
    out = {
        "var_noise": float(_var(F, 2, ddof).mean()),
        "var_init": float(_var(over_n, 1, ddof).mean()),
        "var_sampling": float(_var(over_sn, 0, ddof).mean()),
        "bias2": float(((grand - target) ** 2).mean()),
    }
    out["total"] = sum(out[k] for k in TERMS)
    return out


def infinite_ensemble_loss(F: np.ndarray, target: np.ndarray) -> float:
    """Loss of the predictor averaged over init, E_d E_n (E_s f - f*)^2.

    Equals bias2 + var_sampling + E_d Var_n E_s f.  Because noise is the
    innermost source, var_noise also holds the init x noise interaction,
    so this limit lies below bias2 + var_noise + var_sampling.
    """
    return float(((F.mean(axis=1) - target) ** 2).mean())


def _jackknife(F, target, bessel):
    """Sum over sources of delete-one jackknife variances."""
    var = {k: 0.0 for k in (*TERMS, "total")}
    for axis in range(3):
        S = F.shape[axis]
        if S < 3:
            # a delete-one lattice of size 1 has no variance to estimate
            continue
        reps = [terms_from_tensor(np.delete(F, j, axis=axis), target, bessel) for j in range(S)]
        for k in var:
            vals = np.array([r[k] for r in reps])
            var[k] += (S - 1) / S * float(((vals - vals.mean()) ** 2).sum())
    return {k: math.sqrt(v) for k, v in var.items()}


def prediction_tensor(template: RFProblem, S_theta: int, S_noise: int, S_data: int,
                      m_test: int, master: int = 0, experiment: str = "biasvar"):
    """(F[d, s, n, m], f*(probe)) with beta and the probe set shared."""
    for name, S in (("S_theta", S_theta), ("S_noise", S_noise), ("S_data", S_data)):
        if S < 2:
            raise InsufficientReplicatesError(f"{name} must be >= 2, got {S}")
    beta = np.random.default_rng(derive_seed(master, experiment, "beta")).standard_normal(template.D)
    probe = template.sample_inputs(m_test, derive_seed(master, experiment, "probe"))
    target = probe @ beta / math.sqrt(template.D)
    thetas = [np.random.default_rng(derive_seed(master, experiment, "theta", s))
              .standard_normal((template.P, template.D)) for s in range(S_theta)]
    probe_Z = [features(template.activation, probe, th) for th in thetas]
    F = np.empty((S_data, S_theta, S_noise, m_test))
    for d in range(S_data):
        X = template.sample_inputs(template.N, derive_seed(master, experiment, "data", template.N, d))
        clean = X @ beta / math.sqrt(template.D)
        Y = np.stack([clean + template.sample_noise(
            template.N, derive_seed(master, experiment, "noise", template.N, d, n))
            for n in range(S_noise)], axis=1)
        for s, th in enumerate(thetas):
            factor = RidgeFactor(features(template.activation, X, th))
            A = factor.weights(Y, template.gamma, template.D)
            F[d, s] = (probe_Z[s] @ A).T
    return F, target


def decompose(template: RFProblem, S_theta: int = 10, S_noise: int = 10, S_data: int = 10,
              m_test: int = 10_000, master: int = 0, experiment: str = "biasvar",
              bessel: bool = False) -> BiasVarianceReport:
    F, target = prediction_tensor(template, S_theta, S_noise, S_data, m_test, master, experiment)
    return report_from_tensor(F, target, bessel, N=template.N)


def report_from_tensor(F, target, bessel=False, N=0) -> BiasVarianceReport:
    t = terms_from_tensor(F, target, bessel)
    if not bessel:
        direct = float(((F - target) ** 2).mean())
        if abs(direct - t["total"]) > 1e-9 * max(1.0, direct):
            raise ArithmeticError(f"additivity violated: {t['total']} vs {direct}")
    se = _jackknife(F, target, bessel)
    S_data, S_theta, S_noise = F.shape[:3]
    return BiasVarianceReport(t["bias2"], t["var_init"], t["var_noise"], t["var_sampling"],
                              t["total"], se, (S_theta, S_noise, S_data), N=N)


def direct_loss(template: RFProblem, runs: int, m_test: int, master: int = 0,
                experiment: str = "biasvar-direct") -> tuple[float, float]:
    """Mean test loss over independent (X, Theta, eps) draws with the same
    beta and probe set as :func:`decompose` at the same master seed."""
    beta = np.random.default_rng(derive_seed(master, "biasvar", "beta")).standard_normal(template.D)
    probe = template.sample_inputs(m_test, derive_seed(master, "biasvar", "probe"))
    target = probe @ beta / math.sqrt(template.D)
    losses = []
    for k in range(runs):
        rng = np.random.default_rng(derive_seed(master, experiment, template.N, k))
        th = rng.standard_normal((template.P, template.D))
        X = template.sample_inputs(template.N, derive_seed(master, experiment, "data", template.N, k))
        y = X @ beta / math.sqrt(template.D) + template.sample_noise(
            template.N, derive_seed(master, experiment, "noise", template.N, k))
        a = RidgeFactor(features(template.activation, X, th)).weights(y, template.gamma, template.D)
        losses.append(float(((features(template.activation, probe, th) @ a - target) ** 2).mean()))
    losses = np.asarray(losses)
    return float(losses.mean()), float(losses.std(ddof=1) / math.sqrt(runs))


@dataclass
class EnsembleProfile:
    n_values: np.ndarray
    K: int
    loss: np.ndarray
    stderr: np.ndarray
    raw: np.ndarray = field(repr=False, default=None)


def ensembled_profile(template: RFProblem, K: int, n_grid: Sequence[int], replicates: int = 10,
                      m_test: int = 10_000, schedule: SeedSchedule = SeedSchedule(),
                      p_index: int = 0) -> EnsembleProfile:
    """Test loss of the K-member ensemble mean predictor.

    Member k uses theta seed (replicate, member=k); data, noise, beta and
    the probe set are shared within a replicate, so K = 1 reproduces
    :func:`rfcore.sample_profile` with the same schedule.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n_grid = np.asarray([int(n) for n in n_grid])
    raw = np.empty((replicates, len(n_grid)))
    for rep in range(replicates):
        members = [template.with_(seeds=schedule.seeds(rep, 0, p_index, member=k)) for k in range(K)]
        tests = [TestSet.build(m, m_test, schedule.test_seed(rep)) for m in members]
        for j, N in enumerate(n_grid):
            pred = np.zeros(m_test)
            for k in range(K):
                prob = template.with_(N=int(N), seeds=schedule.seeds(rep, j, p_index, member=k))
                pred += tests[k].Z @ ridge_solve(prob).a
            target = tests[0].target
            raw[rep, j] = float(((pred / K - target) ** 2).mean())
    return EnsembleProfile(n_grid, K, raw.mean(0), _stderr(raw), raw)
