"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 some cells failed.
Worker count comes from the TRIPLEDESCENT_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .. import __version__
from ..activation import ActivationError, BUILTIN_NAMES, gaussian_moments, get_activation
from .config import ConfigError, SweepGrid, load_config, log_grid, parse_snr
from .mnist import DatasetConsistencyError, IDXFormatError, ZeroVarianceError
from .peaks import InsufficientGridError, detect_peaks

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _ratios(text):
    """'0.1:100:25' (log grid) or '0.5,1,2'."""
    if text is None:
        return None
    try:
        if ":" in text:
            lo, hi, num = text.split(":")
            return log_grid(float(lo), float(hi), int(num))
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad ratio list {text!r}") from None


def _ints(text):
    return None if text is None else [int(v) for v in text.split(",") if v.strip()]


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# ---------------------------------------------------------------------------
# commands


def cmd_moments(args):
    rows = []
    for tok in args.activations or list(BUILTIN_NAMES):
        m = gaussian_moments(get_activation(tok), args.order)
        rows.append({"activation": tok, "eta": m.eta, "zeta": m.zeta, "r": m.r, "mean": m.mean})
    if args.json:
        _print_json(rows)
    else:
        print(f"{'activation':<12} {'eta':>12} {'zeta':>12} {'r':>10}")
        for r in rows:
            print(f"{r['activation']:<12} {r['eta']:>12.8f} {r['zeta']:>12.8f} {r['r']:>10.6f}")
    return EXIT_OK


def cmd_spectrum(args):
    from .tasks import spectra_job
    act = None if args.eta is not None else args.activation
    summary = spectra_job(args.D, args.p_over_d, _ratios(args.n_over_d) or [1.0], act,
                          args.eta, args.zeta, args.seeds, args.mode, args.seed,
                          args.experiment_id or "spectrum", args.out)
    for s in summary:
        s.pop("atoms", None)
    _print_json(summary)
    return EXIT_OK


def _grid_from_args(args, model, **fixed):
    over = {
        "model": model, "D": args.D, "n_over_d": _ratios(args.n_over_d),
        "replicates": args.replicates, "activation": args.activation,
        "snr": args.snr, "m_test": args.m_test, "K": args.K,
        "experiment_id": args.experiment_id, "master_seed": args.seed,
    }
    if model == "RF":
        over.update(p_over_d=_ratios(args.p_over_d), gamma=args.gamma)
    else:
        over.update(widths=_ints(args.widths), ensemble=args.ensemble or None,
                    checkpoint_epochs=_ints(args.checkpoints))
        train = {k: v for k, v in (("epochs", args.epochs), ("lr", args.lr),
                                   ("momentum", args.momentum),
                                   ("weight_decay", args.weight_decay)) if v is not None}
        if train:
            base = load_config(args.config).train if args.config else {}
            over["train"] = {**base, **train}
    over.update(fixed)
    grid = load_config(args.config, over)
    if grid.model != model:
        raise ConfigError(f"config is for model {grid.model}, command needs {model}")
    return grid


def _report_sweep(result, grid: SweepGrid, metric: str):
    for P in (grid.p_values if grid.model == "RF" else result._nn_params()):
        epochs = [""] if grid.model == "RF" else sorted(
            {int(k[2]) for k in result.table if k[0] == str(P)})
        for epoch in epochs:
            n, m, s = result.profile(metric, P, epoch)
            if n.size == 0:
                continue
            head = f"P={P}" + (f" epoch={epoch}" if epoch != "" else "")
            print(head)
            from .report import ascii_profile
            print(ascii_profile(n, m, label=metric))
            try:
                rep = detect_peaks(n, m, s, grid.D, P)
                print("peaks:", ", ".join(f"{p.cls}@N/D={p.location:.3g}" for p in rep.peaks)
                      or "none")
            except (InsufficientGridError, ValueError) as exc:
                print(f"peaks: not evaluated ({exc})")


def _sweep_command(args, model, metric):
    from .sweep import run_sweep
    grid = _grid_from_args(args, model)
    if args.dump_config:
        _print_json(grid.resolved())
        return EXIT_OK
    result = run_sweep(grid, args.out)
    if not args.quiet:
        _report_sweep(result, grid, metric)
    if result.errors:
        print(f"{len(result.errors)} cell(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_rf_profile(args):
    if args.p_over_d and "," in args.p_over_d:
        raise ConfigError("rf-profile takes a single P/D; use rf-phase for several")
    return _sweep_command(args, "RF", "loss")


def cmd_rf_phase(args):
    return _sweep_command(args, "RF", "loss")


def cmd_nn_phase(args):
    return _sweep_command(args, "NN", "test_loss")


def cmd_biasvar(args):
    from .tasks import biasvar_job
    params = dict(D=args.D, p_over_d=float(args.p_over_d or 20.0),
                  n_over_d=_ratios(args.n_over_d) or [1.0, 20.0], activation=args.activation,
                  snr=args.snr, gamma=args.gamma, S_theta=args.S, S_noise=args.S, S_data=args.S,
                  m_test=args.m_test, direct_runs=args.direct_runs, master=args.seed,
                  experiment_id=args.experiment_id or "biasvar")
    if args.dump_config:
        _print_json(params)
        return EXIT_OK
    rows = biasvar_job(out=args.out, **params)
    print(f"{'N':>7} {'bias2':>10} {'var_init':>10} {'var_noise':>10} {'var_samp':>10} "
          f"{'total':>10} {'direct':>10}")
    for r in rows:
        print(f"{r['N']:>7} {r['bias2']:>10.4g} {r['var_init']:>10.4g} {r['var_noise']:>10.4g} "
              f"{r['var_sampling']:>10.4g} {r['total']:>10.4g} {r['direct_loss']:>10.4g}")
    return EXIT_OK


def cmd_ingest_mnist(args):
    from .mnist import ingest_mnist
    data = ingest_mnist(args.images, args.labels, args.side)
    if args.out:
        np.savez_compressed(args.out, X=data.X, labels=data.labels, side=data.side,
                            mean=data.mean, std=data.std)
    _print_json({"n": int(data.X.shape[0]), "D": data.D, "mean": data.mean, "std": data.std,
                 "out": args.out})
    return EXIT_OK


def cmd_recipe(args):
    from .recipes import recipe, run_recipe
    cfg = recipe(args.name, args.seed)
    if not args.run:
        _print_json(cfg)
        return EXIT_OK
    results = run_recipe(args.name, args.out_dir, args.seed, data_dir=args.data_dir)
    failed = sum(len(getattr(r, "errors", [])) for r in results)
    print(f"recipe {args.name}: {len(results)} step(s) written to {args.out_dir}")
    return EXIT_PARTIAL if failed else EXIT_OK


def _load_profile(args):
    from .report import read_rows, sweep_profiles
    rows = read_rows(args.csv)
    if not rows:
        raise ConfigError(f"{args.csv} is empty")
    prof = sweep_profiles(rows, args.metric)
    if not prof:
        raise ConfigError(f"no aggregate rows for metric {args.metric!r} in {args.csv}")
    key = None
    for k in sorted(prof):
        if (args.P is None or k[0] == args.P) and (args.epoch is None or k[1] == str(args.epoch)):
            key = k
            break
    if key is None:
        raise ConfigError("no profile matches --P/--epoch")
    return int(rows[0]["D"]), key, prof[key]


def cmd_peaks(args):
    D, (P, epoch), (n, m, s) = _load_profile(args)
    rep = detect_peaks(n, m, s, D, args.reference_p or P)
    _print_json({"D": D, "P": P, "epoch": epoch, "peaks": [p.__dict__ for p in rep.peaks]})
    return EXIT_OK


def cmd_ascii_profile(args):
    from .report import ascii_profile
    D, (P, epoch), (n, m, s) = _load_profile(args)
    print(f"D={D} P={P}" + (f" epoch={epoch}" if epoch else ""))
    print(ascii_profile(n, m, label=args.metric))
    return EXIT_OK


def cmd_report(args):
    from .report import RenderingUnavailable, render_spectra, render_sweep, read_rows
    written = []
    try:
        for path in args.csv:
            rows = read_rows(path)
            if rows and "quantity" in rows[0]:
                written += render_spectra(path, args.out_dir)
            else:
                written += render_sweep(path, args.out_dir)
    except RenderingUnavailable as exc:
        raise ConfigError(str(exc)) from None
    for p in written:
        print(p)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p):
    p.add_argument("--config", help="JSON config file (CLI flags override its fields)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--experiment-id")
    p.add_argument("--D", type=int)
    p.add_argument("--n-over-d", help="'lo:hi:num' log grid or comma list")
    p.add_argument("--activation")
    p.add_argument("--snr", type=parse_snr)
    p.add_argument("--replicates", type=int)
    p.add_argument("--m-test", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tripledescent",
                                 description="Random-feature and small-network triple descent lab")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("--seed", type=int, default=0, help="master seed")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", help="Gaussian moments eta, zeta, r")
    p.add_argument("activations", nargs="*", help="e.g. tanh relu pwl:0.5")
    p.add_argument("--order", type=int, default=200)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("spectrum", help="analytic and/or empirical spectrum of Z^T Z / N")
    p.add_argument("--mode", choices=("analytic", "empirical", "both"), default="analytic")
    p.add_argument("--D", type=int, default=100)
    p.add_argument("--p-over-d", type=float, default=10.0)
    p.add_argument("--n-over-d", default="1")
    p.add_argument("--activation", default="tanh")
    p.add_argument("--eta", type=float)
    p.add_argument("--zeta", type=float)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--experiment-id")
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    for name, func, help_ in (("rf-profile", cmd_rf_profile, "sample-wise RF profile"),
                              ("rf-phase", cmd_rf_phase, "RF (P/D, N/D) phase space")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.add_argument("--p-over-d", help="ratio or list")
        p.add_argument("--gamma", type=float)
        p.set_defaults(func=func)

    p = sub.add_parser("nn-phase", help="teacher-student NN (width, N/D) sweep")
    _common(p)
    p.add_argument("--widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--checkpoints", help="comma list of epochs")
    p.add_argument("--ensemble", action="store_true", help="average K members' predictions")
    p.set_defaults(func=cmd_nn_phase)

    p = sub.add_parser("biasvar", help="bias-variance decomposition along N")
    p.add_argument("--D", type=int, default=50)
    p.add_argument("--p-over-d")
    p.add_argument("--n-over-d")
    p.add_argument("--activation", default="relu")
    p.add_argument("--snr", type=parse_snr, default=0.2)
    p.add_argument("--gamma", type=float, default=1e-5)
    p.add_argument("--S", type=int, default=10, help="replicates per randomness source")
    p.add_argument("--m-test", type=int, default=10_000)
    p.add_argument("--direct-runs", type=int, default=0)
    p.add_argument("--experiment-id")
    p.add_argument("--out")
    p.add_argument("--dump-config", action="store_true")
    p.set_defaults(func=cmd_biasvar)

    p = sub.add_parser("ingest-mnist", help="parse IDX files, downsample, standardize")
    p.add_argument("images")
    p.add_argument("labels")
    p.add_argument("--side", type=int, default=10)
    p.add_argument("--out", help=".npz output")
    p.set_defaults(func=cmd_ingest_mnist)

    p = sub.add_parser("recipe", help="print (or run) a figure recipe")
    p.add_argument("name")
    p.add_argument("--run", action="store_true")
    p.add_argument("--out-dir", default="results")
    p.add_argument("--data-dir", help="directory holding MNIST IDX files (appC_mnist)")
    p.set_defaults(func=cmd_recipe)

    for name, func, help_ in (("peaks", cmd_peaks, "detect peaks in a sweep CSV"),
                              ("ascii-profile", cmd_ascii_profile, "print a log-scale profile")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("csv")
        p.add_argument("--metric", default="loss")
        p.add_argument("--P", type=int, help="P (RF) or parameter count (NN) column value")
        p.add_argument("--epoch", type=int)
        if name == "peaks":
            p.add_argument("--reference-p", type=float,
                           help="N location of the nonlinear threshold (default: the P column)")
        p.set_defaults(func=func)

    p = sub.add_parser("report", help="render PNG figures from CSVs (needs matplotlib)")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, ActivationError, InsufficientGridError, FileNotFoundError,
            IDXFormatError, DatasetConsistencyError, ZeroVarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
