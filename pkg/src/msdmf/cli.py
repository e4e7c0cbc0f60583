"""Command-line entry point: simulate / fit / forecast / eval / report."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, report as report_mod
from .em import FitConfig, fit
from .forecast import ForecastConfig, rolling_eval
from .metrics import evaluate
from .model import Dims
from .simulate import ERROR_DISTS, MODEL_VARIANTS, SimConfig, SimOutput, simulate

__all__ = ["main", "run"]

PRESETS = {
    # two persistent regimes, diagonal AR factors, unit observation noise
    "paper-5.1": {"p": 10, "q": 10, "k1": 2, "k2": 2, "regimes": 2,
                  "b": 0.5, "psi": 0.1, "sigma2": 1.0, "p_stay": 0.95,
                  "error_dist": "gaussian", "variant": "full_switching"},
}


def thread_cap(cli_value: int | None) -> int:
    if cli_value is not None:
        return max(int(cli_value), 1)
    env = os.environ.get("MSDMF_THREADS")
    return max(int(env), 1) if env else 1


def _build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(
        prog="msdmf",
        description="Markov-switching dynamic matrix factor models")
    parser.add_argument("--json-errors", action="store_true",
                        help="emit failures as machine-readable JSON on stderr")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker pool cap (falls back to MSDMF_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", formatter_class=fmt,
                         help="generate a synthetic dataset")
    sim.add_argument("--out", required=True, help="output dataset path")
    sim.add_argument("--preset", choices=sorted(PRESETS), default=None,
                     help="named parameter recipe (overrides shape flags)")
    sim.add_argument("--n", type=int, default=200, help="series length")
    sim.add_argument("--p", type=int, default=10, help="observation rows")
    sim.add_argument("--q", type=int, default=10, help="observation columns")
    sim.add_argument("--k1", type=int, default=2, help="row factors")
    sim.add_argument("--k2", type=int, default=2, help="column factors")
    sim.add_argument("--regimes", type=int, default=2, help="number of regimes")
    sim.add_argument("--b", type=float, default=0.5, help="regime-1 intercept scale")
    sim.add_argument("--psi", type=float, default=0.1, help="error AR coefficient")
    sim.add_argument("--sigma2", type=float, default=1.0, help="error variance")
    sim.add_argument("--p-stay", type=float, default=0.95, dest="p_stay",
                     help="regime persistence probability")
    sim.add_argument("--error-dist", choices=ERROR_DISTS, default="gaussian")
    sim.add_argument("--variant", choices=MODEL_VARIANTS, default="full_switching")
    sim.add_argument("--seed", type=int, default=0, help="RNG seed")
    sim.add_argument("--format", choices=("csv", "json"), default="csv")

    fit_p = sub.add_parser("fit", formatter_class=fmt, help="fit a model by EM")
    fit_p.add_argument("--data", required=True, help="dataset path")
    fit_p.add_argument("--k1", type=int, required=True, help="row factors")
    fit_p.add_argument("--k2", type=int, required=True, help="column factors")
    fit_p.add_argument("--regimes", type=int, required=True, help="number of regimes")
    fit_p.add_argument("--eps", type=float, default=1e-6,
                       help="squared parameter-change convergence threshold")
    fit_p.add_argument("--max-iter", type=int, default=500, help="iteration cap")
    fit_p.add_argument("--init", default=None, help="optional starting params JSON")
    fit_p.add_argument("--seed", type=int, default=0, help="auto-init seed")
    fit_p.add_argument("--out-prefix", required=True,
                       help="prefix for params/weights/states/factors/loglik outputs")

    fc = sub.add_parser("forecast", formatter_class=fmt,
                        help="rolling one-step-ahead forecast comparison")
    fc.add_argument("--data", required=True, help="dataset path")
    fc.add_argument("--window", type=int, required=True, help="training window length")
    fc.add_argument("--origins", required=True,
                    help="1-based forecast targets: 'a:b' range or comma list")
    fc.add_argument("--k1", type=int, required=True, help="row factors")
    fc.add_argument("--k2", type=int, required=True, help="column factors")
    fc.add_argument("--regimes", type=int, required=True, help="switching-model regimes")
    fc.add_argument("--methods", default="msdmf,mfm_var,ar1",
                    help="comma-separated subset of msdmf,mfm_var,ar1")
    fc.add_argument("--eps", type=float, default=1e-5, help="fit convergence threshold")
    fc.add_argument("--max-iter", type=int, default=200, help="fit iteration cap")
    fc.add_argument("--seed", type=int, default=0, help="auto-init seed")
    fc.add_argument("--out", required=True, help="report CSV path")

    ev = sub.add_parser("eval", formatter_class=fmt,
                        help="score a fit against simulation ground truth")
    ev.add_argument("--fit-prefix", required=True, help="prefix used by 'fit'")
    ev.add_argument("--truth", required=True,
                    help="dataset path with factors/states/truth companions")
    ev.add_argument("--out", required=True, help="evaluation CSV path")

    rep = sub.add_parser("report", formatter_class=fmt,
                         help="aggregate evaluation CSVs into a summary + figures")
    rep.add_argument("inputs", nargs="+", help="evaluation CSV files")
    rep.add_argument("--out", required=True, help="summary CSV path")
    rep.add_argument("--figdir", default=None,
                     help="directory for PNG figures (default: alongside --out)")
    return parser


def _parse_origins(spec: str) -> tuple[int, ...]:
    if ":" in spec:
        lo, _, hi = spec.partition(":")
        vals = range(int(lo), int(hi))
    else:
        vals = [int(tok) for tok in spec.split(",") if tok]
    out = tuple(int(v) - 1 for v in vals)
    if not out:
        raise ValueError(f"empty origin specification {spec!r}")
    return out


def _cmd_simulate(args) -> int:
    opts = dict(PRESETS[args.preset]) if args.preset else {
        "p": args.p, "q": args.q, "k1": args.k1, "k2": args.k2,
        "regimes": args.regimes, "b": args.b, "psi": args.psi,
        "sigma2": args.sigma2, "p_stay": args.p_stay,
        "error_dist": args.error_dist, "variant": args.variant,
    }
    dims = Dims(p=opts["p"], q=opts["q"], k1=opts["k1"], k2=opts["k2"],
                M=opts["regimes"], n=args.n)
    config = SimConfig(dims=dims, b=opts["b"], psi=opts["psi"],
                       sigma2=opts["sigma2"], error_dist=opts["error_dist"],
                       model_variant=opts["variant"], seed=args.seed,
                       p_stay=opts["p_stay"])
    out = simulate(config)
    dataio.save_dataset(args.out, out.Y, factors=out.F, states=out.s,
                        truth=out.truth, fmt=args.format)
    print(f"wrote {args.out} (n={args.n}, p={dims.p}, q={dims.q}, "
          f"M={dims.M}, seed={args.seed})")
    return 0


def _cmd_fit(args) -> int:
    ds = dataio.load_dataset(args.data)
    n, p, q = ds.Y.shape
    dims = Dims(p=p, q=q, k1=args.k1, k2=args.k2, M=args.regimes, n=n)
    init = dataio.load_params(args.init) if args.init else None
    config = FitConfig(eps=args.eps, n_max=args.max_iter, init=init,
                       seed=args.seed)
    result = fit(ds.Y, dims, config)
    dataio.save_fit(args.out_prefix, result)
    status = "converged" if result.converged else "stopped"
    print(f"{status} after {result.iterations} iterations, "
          f"loglik={result.loglik_trace[-1]:.4f}; outputs at {args.out_prefix}.*")
    return 0


def _cmd_forecast(args, threads: int) -> int:
    ds = dataio.load_dataset(args.data)
    config = ForecastConfig(
        window=args.window, origins=_parse_origins(args.origins),
        k1=args.k1, k2=args.k2, M=args.regimes,
        methods=tuple(m.strip() for m in args.methods.split(",") if m.strip()),
        eps=args.eps, n_max=args.max_iter, seed=args.seed)
    rep = rolling_eval(ds.Y, config, threads=threads)
    rows = [{**row, "origin": int(row["origin"]) + 1} for row in rep.rows]
    dataio.write_csv_rows(args.out, rows)
    for method in config.methods:
        print(f"{method}: mean MAE {rep.method_mae(method):.6f}")
    print(f"wrote {args.out}")
    return 0


def _cmd_eval(args) -> int:
    result = dataio.load_fit(args.fit_prefix)
    ds = dataio.load_dataset(args.truth)
    missing = [name for name, val in
               (("factors", ds.factors), ("states", ds.states), ("truth", ds.truth))
               if val is None]
    if missing:
        raise ValueError(f"truth dataset {args.truth} lacks companions: {missing}")
    truth = SimOutput(Y=ds.Y, F=ds.factors, s=ds.states, truth=ds.truth)
    rep = evaluate(result, truth)
    dataio.write_csv_rows(args.out, [rep.to_row()])
    print(f"rand={rep.rand_s:.4f} dist_R={np.round(rep.dist_R, 4).tolist()} "
          f"-> {args.out}")
    return 0


def _cmd_report(args) -> int:
    rows = []
    for path in args.inputs:
        rows.extend(dataio.read_csv_rows(path))
    summary = report_mod.summarize(rows)
    dataio.write_csv_rows(args.out, summary)
    figdir = args.figdir or str(Path(args.out).parent / "figures")
    written = report_mod.render_figures(rows, figdir)
    print(f"wrote {args.out} and {len(written)} figure(s) in {figdir}")
    return 0


def run(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    threads = thread_cap(args.threads)
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "forecast":
            return _cmd_forecast(args, threads)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "report":
            return _cmd_report(args)
        raise ValueError(f"unknown command {args.command!r}")
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        if args.json_errors:
            print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
