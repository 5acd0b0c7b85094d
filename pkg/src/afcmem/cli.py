"""Command line: ``afcmem simulate | tomography | afc | report``.

Exit codes: 0 success, 2 configuration or parse error, 3 numerical
non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from afcmem.config import load_afc_config, load_config
from afcmem.errors import AfcError
from afcmem.pipeline import (
    NonConvergenceError,
    StageError,
    dumps_json,
    missing_standard_settings,
    run_afc,
    run_simulate,
    run_tomography,
)
from afcmem.report import build_report, collect_inputs, load_baseline, render_text
from afcmem.tomography import TomographyOptions, load_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGENCE = 3
EXIT_IO = 4


def _err(msg: str) -> None:
    print(f"afcmem: error: {msg}", file=sys.stderr)


def _warn(msg: str) -> None:
    print(f"afcmem: warning: {msg}", file=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = run_simulate(cfg, Path(args.out))
    bad = [label for label, arm in out["arms"].items() if not arm.result.converged]
    for label, arm in out["arms"].items():
        m = arm.metrics
        print(f"rho_{label}: purity {m.purity:.4f}  concurrence {m.concurrence:.4f}  "
              f"eof {m.eof_normalized:.4f}  s_max {m.s_max:.4f}  F(phi+) {m.fidelity_phi_plus:.4f}")
    print(f"F(rho_in, rho_out) = {out['io']['input_output_fidelity']:.4f}")
    if bad:
        raise NonConvergenceError("reconstruction did not converge for arm(s): " + ", ".join(bad))
    return EXIT_OK


def _label_for(path: Path) -> str:
    stem = path.stem
    return stem[2:] if stem.startswith("p_") and len(stem) > 2 else stem


def cmd_tomography(args) -> int:
    data_path = Path(args.data)
    dataset = load_dataset(data_path)
    missing = missing_standard_settings(dataset)
    if missing:
        _warn("dataset lacks settings " + ", ".join(missing))
    options = TomographyOptions(mode=args.mode, model=args.model, seed=args.seed)
    label = args.label or _label_for(data_path)
    result, metrics = run_tomography(dataset, label, args.resamples, args.seed, Path(args.out), options)
    for note in result.warnings:
        _warn(note)
    sig = metrics.sigmas
    for k, v in metrics.values().items():
        s = f" +- {sig[k]:.4f}" if k in sig else ""
        print(f"{k:>18s}: {v:.4f}{s}")
    print(f"{'hessian_condition':>18s}: {result.hessian_condition:.3g} (rank {result.hessian_rank}/{result.n_parameters})")
    if not result.converged:
        raise NonConvergenceError(f"reconstruction did not converge (gradient norm {result.gradient_norm:.3g})")
    return EXIT_OK


def cmd_afc(args) -> int:
    comb, chirp = load_afc_config(args.config)
    design = run_afc(comb, chirp, Path(args.out))
    print(f"tooth spacing from chirp: {design['chirp_spacing_hz'] / 1e6:.3f} MHz")
    print(f"storage time: {design['storage_time_s'] * 1e9:.3f} ns")
    print(f"finesse: {design['finesse']:.4f}")
    print(f"forward efficiency (closed form): {design['efficiency_forward']:.4f}")
    print(f"forward ceiling over d1: {design['forward_ceiling']:.6f} at d1 = {design['forward_ceiling_d1']:.4f}")
    print(f"backward efficiency: {design['efficiency_backward']:.4f} (asymptote {design['backward_asymptote']:.4f})")
    orders = design["echo_orders"]
    print("echo orders: " + ", ".join(f"{k}: {v:.4g}" for k, v in list(orders.items())[:6]))
    return EXIT_OK


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.inputs]
    inputs = collect_inputs(dirs)
    baseline = load_baseline(args.baseline) if args.baseline else None
    report = build_report(inputs, baseline)
    text = render_text(report)
    out = Path(args.out) if args.out else dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(text)
    (out / "report.json").write_text(dumps_json(_json_safe(report)))
    sys.stdout.write(text)
    return EXIT_OK


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="afcmem", description="AFC quantum-memory entanglement-storage toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate both arms, reconstruct and score them")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("tomography", help="reconstruct a state from a probability or counts table")
    t.add_argument("--data", required=True)
    t.add_argument("--resamples", type=int, default=500, help="Monte Carlo resamples (0 disables, else >= 100)")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--label", help="output file label (default: data file stem without 'p_')")
    t.add_argument("--mode", choices=("auto", "probabilities", "counts"), default="auto")
    t.add_argument("--model", choices=("relative", "conditional"), default="relative")
    t.set_defaults(func=cmd_tomography)

    a = sub.add_parser("afc", help="comb design table, echo orders and profile data")
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_afc)

    r = sub.add_parser("report", help="render probability and figure-of-merit tables, optionally against a baseline")
    r.add_argument("--in", dest="inputs", action="append", required=True, help="stage output directory (repeatable)")
    r.add_argument("--baseline", "--paper-baseline", dest="baseline",
                   help="baseline tables (JSON) to compare against, e.g. the shipped baseline_tables.json")
    r.add_argument("--out", help="where to write report.txt/report.json (default: first --in)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "resamples", 0) and 0 < args.resamples < 100:
        parser.error("--resamples must be 0 or >= 100")
    if getattr(args, "seed", 0) is not None and not (0 <= getattr(args, "seed", 0) < 2**64):
        parser.error("--seed must lie in [0, 2^64)")
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        _err(str(exc))
        return EXIT_NONCONVERGENCE
    except StageError as exc:
        _err(str(exc))
        return EXIT_IO if isinstance(exc.cause, OSError) else EXIT_CONFIG
    except OSError as exc:
        _err(f"I/O failure: {exc}")
        return EXIT_IO
    except (AfcError, ValueError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
