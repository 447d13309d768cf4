"""Figure recipes at desk scale.

A recipe expands to a list of steps with every parameter materialized.
Step kinds: ``sweep`` (a SweepGrid), ``spectra``, ``gaps``, ``biasvar`` and
``mnist``.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Optional

from .config import ConfigError, SweepGrid, log_grid

FIG6_ACTIVATIONS = ("abs", "relu", "tanh", "linear")


def _sweep(name, **kw):
    kw.setdefault("experiment_id", name)
    return {"kind": "sweep", "output": f"{name}.csv", "grid": SweepGrid(**kw).to_dict()}


def _rf_phase(name, snr):
    return [_sweep(name, model="RF", D=100, p_over_d=log_grid(1.0, 100.0, 7),
                   n_over_d=log_grid(0.1, 1000.0, 17), activation="tanh", snr=snr, gamma=1e-1,
                   replicates=3, m_test=4000)]


def _fig4():
    return [
        {"kind": "spectra", "output": "fig4_spectra.csv",
         "params": dict(D=100, p_over_d=10.0, n_over_d=[0.5, 1.0, 2.0, 10.0, 100.0],
                        activation="tanh", seeds=10, mode="both", experiment_id="fig4_spectra")},
        _sweep("fig4_loss", model="RF", D=100, p_over_d=[10.0], n_over_d=log_grid(0.1, 100.0, 25),
               activation="tanh", snr=0.2, gamma=1e-5, replicates=10),
    ]


def _fig5_spectra():
    return [{"kind": "gaps", "output": "fig5_gaps.csv",
             "params": dict(eta=1.0, zetas=[0.0, 0.5, 0.92, 1.0], p_over_d=10.0,
                            n_over_d=log_grid(0.1, 100.0, 25), experiment_id="fig5_spectra_r")},
            {"kind": "spectra", "output": "fig5_spectra.csv",
             "params": dict(D=100, p_over_d=10.0, n_over_d=[0.5, 1.0, 2.0, 10.0, 100.0],
                            eta=1.0, zeta=0.92, seeds=0, mode="analytic",
                            experiment_id="fig5_spectra_r")}]


def _fig5bv():
    grid = [0.5, 0.75, 1.0, 1.5, 2.0, 5.0, 10.0, 15.0, 20.0, 30.0, 40.0]
    steps = []
    for tag, snr, gamma in (("vanilla", 0.2, 1e-5), ("noiseless", "inf", 1e-5),
                            ("regularized", 0.2, 1e-3)):
        steps.append({"kind": "biasvar", "output": f"fig5bv_{tag}.csv",
                      "params": dict(D=50, p_over_d=20.0, n_over_d=grid, activation="relu",
                                     snr=snr, gamma=gamma, S_theta=6, S_noise=6, S_data=6,
                                     m_test=4000, direct_runs=10,
                                     experiment_id=f"fig5bv_{tag}")})
    steps.append(_sweep("fig5bv_ensemble", model="RF", D=50, p_over_d=[20.0],
                        n_over_d=grid, activation="relu", snr=0.2, gamma=1e-5,
                        K=10, replicates=6, m_test=4000))
    return steps


def _fig6():
    return [_sweep(f"fig6_{a}", model="RF", D=100, p_over_d=[10.0],
                   n_over_d=log_grid(0.1, 100.0, 25), activation=a, snr=0.2, gamma=1e-3,
                   replicates=10)
            for a in FIG6_ACTIVATIONS]


def _nn(name, **kw):
    base = dict(model="NN", D=49, widths=[20], n_over_d=log_grid(0.2, 200.0, 19),
                activation="tanh", snr=0.2, replicates=10, m_test=4000,
                checkpoint_epochs=[10, 30, 100, 300, 1000])
    base.update(kw)
    return _sweep(name, **base)


def _fig7():
    return [_nn("fig7_vanilla"),
            _nn("fig7_ensemble", K=10, ensemble=True, replicates=1),
            _nn("fig7_weight_decay", train={"epochs": 1000, "lr": 0.01, "momentum": 0.9,
                                            "weight_decay": 0.05, "loss": "mse"})]


def _fig8():
    return [_nn("fig8_dynamics_tanh"), _nn("fig8_dynamics_relu", activation="relu")]


def _fig9():
    return [_sweep("fig9_norms", model="RF", D=100, p_over_d=[10.0],
                   n_over_d=log_grid(0.1, 100.0, 25), activation="tanh", snr=0.2, gamma=1e-1,
                   replicates=10)]


def _appC():
    return [{"kind": "mnist", "output": "appC_mnist.csv",
             "params": dict(images="train-images-idx3-ubyte", labels="train-labels-idx1-ubyte",
                            side=10, p_over_d=10.0, n_over_d=[0.5, 1.0, 2.0, 10.0],
                            activation="tanh", seeds=3, experiment_id="appC_mnist")},
            {"kind": "spectra", "output": "appC_gaussian.csv",
             "params": dict(D=100, p_over_d=10.0, n_over_d=[0.5, 1.0, 2.0, 10.0],
                            activation="tanh", seeds=3, mode="empirical",
                            experiment_id="appC_gaussian")}]


RECIPES = {
    "fig3_rf_low_snr": lambda: _rf_phase("fig3_rf_low_snr", 0.2),
    "fig3_rf_high_snr": lambda: _rf_phase("fig3_rf_high_snr", 2.0),
    "fig4_spectra": _fig4,
    "fig5_spectra_r": _fig5_spectra,
    "fig5bv_biasvar": _fig5bv,
    "fig6_nonlinearities": _fig6,
    "fig7_nn_reg": _fig7,
    "fig8_dynamics": _fig8,
    "fig9_norms": _fig9,
    "appC_mnist": _appC,
}


def recipe(name: str, master_seed: Optional[int] = None) -> dict:
    """Fully resolved config for a named recipe."""
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; valid names: {', '.join(sorted(RECIPES))}")
    steps = copy.deepcopy(RECIPES[name]())
    if master_seed is not None:
        for st in steps:
            if st["kind"] == "sweep":
                st["grid"]["master_seed"] = int(master_seed)
            else:
                st["params"]["master"] = int(master_seed)
    return {"recipe": name, "steps": steps}


def run_step(step: dict, out_dir: Path, workers: Optional[int] = None, data_dir=None):
    from . import tasks
    from .mnist import ingest_mnist
    from .sweep import run_sweep

    out = str(Path(out_dir) / step["output"])
    kind = step["kind"]
    if kind == "sweep":
        return run_sweep(SweepGrid.from_dict(step["grid"]), out, workers)
    p = dict(step["params"])
    if kind == "spectra":
        return tasks.spectra_job(out=out, **p)
    if kind == "gaps":
        return tasks.gap_job(out=out, **p)
    if kind == "biasvar":
        return tasks.biasvar_job(out=out, workers=workers, **p)
    if kind == "mnist":
        base = Path(data_dir) if data_dir else Path(".")
        data = ingest_mnist(base / p.pop("images"), base / p.pop("labels"), p.pop("side"))
        return tasks.mnist_spectrum_job(data, out=out, **p)
    raise ConfigError(f"unknown step kind {kind!r}")


def run_recipe(name: str, out_dir, master_seed: Optional[int] = None,
               workers: Optional[int] = None, data_dir=None) -> list:
    cfg = recipe(name, master_seed)
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    return [run_step(st, Path(out_dir), workers, data_dir) for st in cfg["steps"]]

