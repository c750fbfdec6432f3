"""Command-line entry point.

Exit codes: 0 ok, 1 config error, 2 numerical failure, 3 acceptance violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from ..concentration import config_hash, tail_csv
from ..errors import ConfigError, DimensionError, NumericalError, PathCoverageError
from ..linalg import vec_norm
from ..simulate import run_ensemble, run_sa, summary_csv, trajectory_csv
from ..stability import SoloInput, load_matrix_path, path_from_model, solo_test
from ..variational import alekseev_decompose, decomposition_csv
from .config import apply_overrides, build_experiment, load_document
from .pipeline import analyze, noise_constants, run_concentration, stability_of
from .report import emit_report, write_csv
from .sweep import SweepSpec, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3
RESIDUAL_RTOL = 1e-4


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text.rstrip("\n") + "\n")


def _experiment(args):
    doc = load_document(args.config)
    doc = apply_overrides(doc, seed=args.seed, replicas=args.replicas, threads=args.threads)
    return doc, build_experiment(doc)


def cmd_simulate(args):
    _, exp = _experiment(args)
    s = run_ensemble(exp.model, exp.noise, exp.perturbation, exp.sim, exp.replicas,
                     threads=exp.threads)
    write_csv(_out(args, "summary.csv"), *summary_csv(s))
    tr = run_sa(exp.model, exp.noise, exp.perturbation, exp.sim, stream=0)
    write_csv(_out(args, "trajectory.csv"), *trajectory_csv(tr))
    print(f"replicas={s.n_replicas} N={exp.sim.horizon_N} stationary_rms={s.stationary_rms():.6g} "
          f"C_star={s.C_star:.6g}")
    return EXIT_OK


def cmd_decompose(args):
    _, exp = _experiment(args)
    tr = run_sa(exp.model, exp.noise, exp.perturbation, exp.sim, stream=0)
    steps = args.n or [exp.sim.horizon_N]
    terms = [alekseev_decompose(exp.model, tr, n, substeps=args.substeps) for n in steps]
    write_csv(_out(args, "decomposition.csv"), *decomposition_csv(terms))
    code = EXIT_OK
    for t in terms:
        tol = RESIDUAL_RTOL * (1.0 + float(vec_norm(t.x_bar)))
        ok = t.residual <= tol
        print(f"n={t.n} residual={t.residual:.3e} tol={tol:.3e} {'ok' if ok else 'FAIL'}")
        if not ok:
            code = EXIT_ACCEPTANCE
    return code


def cmd_bounds(args):
    doc, exp = _experiment(args)
    an = analyze(exp)
    _write_text(_out(args, "bounds.txt"), an.report.text())
    write_csv(_out(args, "bounds.csv"), *an.report.csv())
    write_csv(_out(args, "summary.csv"), *summary_csv(an.summary))
    with open(_out(args, "ledger.json"), "w", encoding="utf-8") as fh:
        json.dump({"constants": an.ledger.constants(), "provenance": an.ledger.provenance,
                   "c": an.c_conc}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(an.report.text())
    v = an.verdict
    print(f"all-time domination: {'pass' if v.passed else 'FAIL'} "
          f"(worst margin {v.worst_margin:.4g} at step {v.worst_index})")
    return EXIT_OK if v.passed else EXIT_ACCEPTANCE


def cmd_sweep(args):
    doc, _ = _experiment(args)
    res = run_sweep(SweepSpec.from_document(doc), threads=args.threads or 1)
    write_csv(_out(args, "sweep_cells.csv"), *res.table())
    write_csv(_out(args, "scaling_fits.csv"), *res.fit_table())
    for f in res.fits.values():
        print(f"{f.axis}: slope {f.slope:.4f} +/- {f.stderr:.4f} ({f.n_points} points)")
    if any(c.failed for c in res.cells):
        return EXIT_NUMERICAL
    if any(c.all_time_ok is False for c in res.cells):
        return EXIT_ACCEPTANCE
    return EXIT_OK


def cmd_stability(args):
    _, exp = _experiment(args)
    opts = exp.stability
    if opts.matrix_csv:
        t, A = load_matrix_path(opts.matrix_csv)
        inp = SoloInput(t, A, opts.window_T, None, opts.params)
        est = None
    else:
        est, _, base = stability_of(exp)
        inp = path_from_model(exp.model, base, opts.window_T, opts.params, opts.stride)
    rep = solo_test(inp)
    text = rep.text()
    if est is not None:
        text += f"\nfitted C_Phi    = {est.C_Phi:.6g}\nfitted beta     = {est.beta:.6g}"
    _write_text(_out(args, "solo.txt"), text)
    write_csv(_out(args, "solo.csv"), *rep.csv())
    print(text)
    return EXIT_OK if rep.verdict else EXIT_ACCEPTANCE


def cmd_concentration(args):
    doc, exp = _experiment(args)
    pair = noise_constants(exp)
    if pair is None:
        raise ConfigError("concentration needs a noise family other than 'none'")
    stab, _, _ = stability_of(exp)
    run = run_concentration(exp, stab, pair)
    write_csv(_out(args, "tail.csv"), *tail_csv(run.held_out, run.params))
    cal = run.calibration
    with open(_out(args, "calibration.json"), "w", encoding="utf-8") as fh:
        json.dump({"config_hash": config_hash(doc), "c": cal.c,
                   "calibration_seed": exp.concentration.calibration_seed,
                   "validation_seed": exp.concentration.validation_seed, "grid_index": cal.grid_index, "at_grid_min": cal.at_grid_min,
                   "at_grid_max": cal.at_grid_max, "held_out_dominated": run.passed,
                   "weight_sum": run.held_out.weight_sum, "weight_max": run.held_out.weight_max},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"c={cal.c:g} held-out domination: {'pass' if run.passed else 'FAIL'}")
    return EXIT_OK if run.passed else EXIT_ACCEPTANCE


def cmd_report(args):
    doc, _ = _experiment(args)
    res = run_sweep(SweepSpec.from_document(doc), threads=args.threads or 1) if doc.get("sweep") else None
    for p in emit_report(res, args.out):
        print(p)
    if res is not None and any(c.all_time_ok is False for c in res.cells):
        return EXIT_ACCEPTANCE
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "run a Monte Carlo ensemble"),
    "decompose": (cmd_decompose, "exact error decomposition of one run"),
    "bounds": (cmd_bounds, "constants ledger and all-time bound against the ensemble"),
    "sweep": (cmd_sweep, "parameter sweep with scaling fits"),
    "stability": (cmd_stability, "sufficient exponential-stability test"),
    "concentration": (cmd_concentration, "calibrate and validate the tail-bound constant"),
    "report": (cmd_report, "sweep tables, plots and manifest"),
}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser():
    parser = argparse.ArgumentParser(prog="satrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=_u64, default=None, help="master seed (overrides sim.seed)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--replicas", type=_positive, default=None, help="Monte Carlo replicas")
        p.add_argument("--threads", type=_positive, default=None, help="worker threads")
        if name == "decompose":
            p.add_argument("--n", type=_positive, action="append", help="step index (repeatable)")
            p.add_argument("--substeps", type=_positive, default=None, help="quadrature substeps")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except (ConfigError, DimensionError, PathCoverageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
