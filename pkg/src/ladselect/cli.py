"""``ladselect`` command-line front end.

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
JSON output is always an array of report objects matching ``REPORT_SCHEMA``;
floats are written with ``repr`` (shortest round-trip form) and non-finite
values become ``null``.  CSV floats use 17 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from typing import Optional, Sequence

import numpy as np

from . import harness
from .data import LossMatrix, ModelMeta, bias_correct, default_names, format_float, load_loss_matrix, load_meta, read_numeric_csv
from .errors import LadError, LadNumericalError, LadValidationError
from .models import gmm_loss_matrix, noise_reference
from .selector import (
    SelectorConfig,
    SlcReport,
    analyze,
    draw_posterior,
    posterior_path,
    prepare_losses,
    tolerance_from_tau,
)

SCHEMA_VERSION = 1

_num = {"type": ["number", "null"]}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ladselect report",
    "type": "object",
    "required": ["schema_version", "config", "per_model", "delta", "tau", "noise_mu", "selected", "warnings"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "config": {"type": "object"},
        "per_model": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "name", "complexity", "dims", "p_hat", "r_hat", "w_hat",
                    "mu_mean", "mu_sd", "mu_q025", "mu_q50", "mu_q975", "gap_mean",
                ],
                "properties": {
                    "name": {"type": "string"},
                    "complexity": _num,
                    "dims": _num,
                    "p_hat": _num,
                    "r_hat": _num,
                    "w_hat": _num,
                    "mu_mean": _num,
                    "mu_sd": _num,
                    "mu_q025": _num,
                    "mu_q50": _num,
                    "mu_q975": _num,
                    "gap_mean": _num,
                },
            },
        },
        "delta": _num,
        "tau": _num,
        "noise_mu": _num,
        "selected": {"type": "array", "items": {"type": "string"}},
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}

ANALYZE_CSV_COLUMNS = (
    "delta", "tau", "noise_mu", "name", "complexity", "dims", "p_hat", "r_hat", "w_hat",
    "mu_mean", "mu_sd", "mu_q025", "mu_q50", "mu_q975", "gap_mean", "selected",
)


class UsageError(LadValidationError):
    pass


def _clean(x):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"


def report_to_dict(report: SlcReport, meta: ModelMeta, config: dict) -> dict:
    s = report.mu_summary
    per_model = []
    for k, m in enumerate(report.models):
        per_model.append(
            {
                "name": m.name,
                "complexity": m.complexity,
                "dims": meta.dims[k],
                "p_hat": m.p_hat,
                "r_hat": m.r_hat,
                "w_hat": m.w_hat,
                "mu_mean": s.mean[k] if s else None,
                "mu_sd": s.sd[k] if s else None,
                "mu_q025": s.q025[k] if s else None,
                "mu_q50": s.q50[k] if s else None,
                "mu_q975": s.q975[k] if s else None,
                "gap_mean": s.gap_mean[k] if s else None,
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "config": config,
        "per_model": per_model,
        "delta": report.delta,
        "tau": report.tau,
        "noise_mu": report.noise_mu,
        "selected": [report.models[k].name for k in report.selected],
        "warnings": list(report.warnings),
    }


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return format_float(float(v)) if math.isfinite(v) else ""
    return str(v)


def reports_to_csv(docs: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ANALYZE_CSV_COLUMNS)
    for doc in docs:
        chosen = set(doc["selected"])
        for m in doc["per_model"]:
            row = [doc["delta"], doc["tau"], doc["noise_mu"]]
            row += [m[c] for c in ANALYZE_CSV_COLUMNS[3:-1]]
            row.append(int(m["name"] in chosen))
            w.writerow([_csv_cell(v) for v in row])
    return buf.getvalue()


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


# --- argument parsing -----------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one number")
    return vals


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def parse_tau_grid(text: str) -> np.ndarray:
    """``LO:HI:STEP`` inclusive of HI when it falls on the grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"--tau-grid must be LO:HI:STEP, got {text!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--tau-grid must be numeric, got {text!r}") from None
    if not step > 0:
        raise UsageError("--tau-grid step must be positive")
    if hi < lo:
        raise UsageError(f"--tau-grid is inverted: {lo} > {hi}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def _add_selector_flags(p: argparse.ArgumentParser, tolerances: bool = True) -> None:
    p.add_argument("--bias-correct", action="store_true", help="add d_k/(2n) to each loss column")
    if tolerances:
        g = p.add_mutually_exclusive_group()
        g.add_argument("--delta", type=_float_list, help="comma-separated absolute tolerances")
        g.add_argument("--tau", type=_float_list, help="comma-separated rescaled tolerances (needs --noise-mu)")
    p.add_argument("--noise-mu", type=float, help="average loss of the noise reference model")
    p.add_argument("--draws", type=int, default=1000, help="posterior draws T (default 1000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha-exp", type=float, default=0.45, help="soft-min exponent in (0, 0.5)")
    p.add_argument("--variant", choices=("soft", "hard", "plugin"), default="soft")
    p.add_argument("--cov", choices=("full", "diag"), default="full")
    p.add_argument("--omega", type=float, default=0.5, help="selection threshold on the score")
    p.add_argument("--out", default="-", help="output path, '-' for stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ladselect", description="Model selection from per-observation losses.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="score models for one or more tolerances")
    p.add_argument("--loss", required=True, help="n x K loss CSV")
    p.add_argument("--meta", required=True, help="JSON with names, complexity, dims")
    _add_selector_flags(p)

    p = sub.add_parser("path", help="score path over a grid of rescaled tolerances (CSV)")
    p.add_argument("--loss", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--tau-grid", required=True, help="LO:HI:STEP")
    _add_selector_flags(p, tolerances=False)

    p = sub.add_parser("simulate", help="replicated method comparison (Brier loss)")
    p.add_argument("--scenario", choices=tuple(harness.SCENARIOS), default="mvn-table1")
    p.add_argument("--n", type=_int_list, required=True, help="comma-separated sample sizes")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--delta", type=_float_list, required=True)
    p.add_argument("--methods", default="lad-soft,lad-hard,aic,bic")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--alpha-exp", type=float, default=0.45)
    p.add_argument("--kappa0", type=float, default=1.0, help="c-posterior prior precision (shared by bayes)")
    p.add_argument("--prior-mean", type=float, default=0.0, help="c-posterior prior mean for every free coordinate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("gmm", help="fit k = 1..kmax mixtures to univariate data, then analyze")
    p.add_argument("--data", required=True, help="univariate CSV")
    p.add_argument("--kmax", type=int, required=True)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--tau-grid", help="emit a score path instead of reports")
    _add_selector_flags(p)

    p = sub.add_parser("ties", help="uniformity of scores for two tied models")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=("soft", "hard"), default="hard")
    p.add_argument("--out", default="-")

    p = sub.add_parser("instability", help="argmin frequencies under a near-tie Gaussian")
    p.add_argument("--draws", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    return parser


def _config(args, **extra) -> SelectorConfig:
    return SelectorConfig(
        alpha_exponent=args.alpha_exp,
        T=args.draws,
        seed=args.seed,
        omega=args.omega,
        variant=args.variant,
        cov=args.cov,
        bias_correct=args.bias_correct,
        **extra,
    )


def _config_echo(args) -> dict:
    skip = {"func", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _run_reports(args, Z: LossMatrix, meta: ModelMeta) -> list[dict]:
    if args.tau is not None and args.noise_mu is None:
        raise UsageError("--tau requires --noise-mu")
    if args.delta is None and args.tau is None:
        raise UsageError("one of --delta or --tau is required")
    base = _config(args)
    Z, meta = prepare_losses(Z, meta, base.bias_correct)
    draws = draw_posterior(Z, base.T, base.seed, base.cov)
    if args.tau is not None:
        mu_min = float(Z.values.mean(axis=0).min())
        deltas = [tolerance_from_tau(t, args.noise_mu, mu_min) for t in args.tau]
    else:
        deltas = list(args.delta)
    echo = _config_echo(args)
    docs = []
    for d in deltas:
        cfg = _config(args, delta=d)
        report = analyze(Z, meta, cfg, noise_mu=args.noise_mu, draws=draws)
        docs.append(report_to_dict(report, meta, echo))
    return docs


def _emit_reports(args, docs: list[dict]) -> None:
    _write(dump_json(docs) if args.format == "json" else reports_to_csv(docs), args.out)


def _path_csv(args, Z: LossMatrix, meta: ModelMeta, grid: np.ndarray) -> str:
    if args.noise_mu is None:
        raise UsageError("path output requires --noise-mu")
    cfg = _config(args)
    Z, meta = prepare_losses(Z, meta, cfg.bias_correct)
    draws = draw_posterior(Z, cfg.T, cfg.seed, cfg.cov)
    path = posterior_path(draws, meta, grid, args.noise_mu, cfg.alpha_n(Z.n))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "delta", *path.model_names])
    for g in range(path.tau.size):
        w.writerow([format_float(path.tau[g]), format_float(path.delta[g]), *(format_float(v) for v in path.w_hat[g])])
    return buf.getvalue()


def _load_inputs(args) -> tuple[LossMatrix, ModelMeta]:
    """A headerless loss file takes its column names from the meta file."""
    Z = load_loss_matrix(args.loss)
    meta = load_meta(args.meta)
    headerless = Z.model_names == default_names(Z.K)
    if headerless and len(set(meta.model_names) - set(Z.model_names)) == meta.K:
        Z = LossMatrix(Z.values, meta.model_names)
    return Z, meta


def cmd_analyze(args) -> int:
    Z, meta = _load_inputs(args)
    _emit_reports(args, _run_reports(args, Z, meta))
    return 0


def cmd_path(args) -> int:
    grid = parse_tau_grid(args.tau_grid)
    Z, meta = _load_inputs(args)
    _write(_path_csv(args, Z, meta, grid), args.out)
    return 0


def cmd_simulate(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    for m in methods:
        try:
            harness.parse_method(m)
        except LadValidationError as exc:
            raise UsageError(str(exc)) from None
    scenario = harness.SCENARIOS[args.scenario](args.seed)
    cfg = harness.ExperimentConfig(
        scenario=scenario,
        n_grid=tuple(args.n),
        deltas=tuple(args.delta),
        reps=args.reps,
        methods=methods,
        seed=args.seed,
        T=args.draws,
        alpha_exponent=args.alpha_exp,
        kappa0=args.kappa0,
        prior_mean=args.prior_mean,
    )
    table = harness.run_comparison(cfg)
    if args.format == "json":
        _write(dump_json(table.to_json()), args.out)
    elif args.out == "-":
        table.write_csv(sys.stdout)
    else:
        table.to_csv(args.out)
    return 0


def cmd_gmm(args) -> int:
    values, _ = read_numeric_csv(args.data)
    if values.ndim != 2 or values.shape[1] != 1:
        raise LadValidationError(f"--data must have exactly one column, got {values.shape[1]}")
    x = values[:, 0]
    if args.kmax < 1:
        raise LadValidationError("--kmax must be >= 1")
    if args.kmax > x.size:
        raise LadValidationError(f"--kmax={args.kmax} exceeds the number of observations ({x.size})")
    Z, meta, _ = gmm_loss_matrix(x, args.kmax, restarts=args.restarts, seed=args.seed)
    Z = bias_correct(Z, meta)
    args.bias_correct = False  # already applied with d_k = 3k - 1
    if args.noise_mu is None:
        args.noise_mu = noise_reference(x, "uniform_range")
    if args.tau_grid:
        _write(_path_csv(args, Z, meta, parse_tau_grid(args.tau_grid)), args.out)
    else:
        _emit_reports(args, _run_reports(args, Z, meta))
    return 0


def cmd_ties(args) -> int:
    res = harness.tie_uniformity_experiment(args.reps, args.n, T=args.draws, seed=args.seed, variant=args.variant)
    doc = {"schema_version": SCHEMA_VERSION, "reps": args.reps, "n": args.n, "ks": res.ks, "p_value": res.p_value}
    _write(dump_json(doc), args.out)
    return 0


def cmd_instability(args) -> int:
    freq = harness.argmin_instability_experiment(T=args.draws, seed=args.seed)
    _write(dump_json({"schema_version": SCHEMA_VERSION, "T": args.draws, "frequencies": freq}), args.out)
    return 0


COMMANDS = {
    "analyze": cmd_analyze,
    "path": cmd_path,
    "simulate": cmd_simulate,
    "gmm": cmd_gmm,
    "ties": cmd_ties,
    "instability": cmd_instability,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (LadNumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"ladselect: numerical error: {exc}", file=sys.stderr)
        return 3
    except (LadError, ValueError, OSError) as exc:
        print(f"ladselect: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
