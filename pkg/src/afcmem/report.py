"""Table-style comparison of pipeline outputs with a baseline (published) data file."""

from __future__ import annotations

import json
import math
from pathlib import Path

from afcmem.core import DensityMatrix
from afcmem.errors import AfcError, ParseError
from afcmem.metrics import METRIC_NAMES, MetricsReport, fidelity
from afcmem.tomography import MeasurementDataset, read_dataset

_PATTERNS = ("p_*.csv", "metrics_*.json", "diagnostics_*.json", "rho_*.json", "fidelity_io.json", "*.tsv")


class ReportError(AfcError):
    """Report inputs are missing or contradict each other."""


def collect_inputs(dirs: list[Path]) -> dict[str, tuple[Path, str]]:
    """Stage outputs by file name; the same name with different content in two places is an error."""
    found: dict[str, tuple[Path, str]] = {}
    for d in dirs:
        if not d.is_dir():
            raise ReportError(f"input directory {d} does not exist")
        for pattern in _PATTERNS:
            for path in sorted(d.glob(pattern)):
                text = path.read_text()
                prev = found.get(path.name)
                if prev is not None and prev[1] != text:
                    raise ReportError(f"conflicting inputs: {prev[0]} and {path} differ")
                found.setdefault(path.name, (path, text))
    if not any(name.startswith("metrics_") for name in found):
        raise ReportError("no metrics_<label>.json found in " + ", ".join(str(d) for d in dirs))
    return found


def _value_sigma(rec, where: str) -> tuple[float, float]:
    try:
        return float(rec["value"]), float(rec["sigma"])
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{where}: expected {{'value': number, 'sigma': number}}") from None


def load_baseline(path: str | Path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, source=str(path)) from None
    out = {"probabilities": {}, "figures_of_merit": {}, "input_output_fidelity": None}
    for label, rows in (raw.get("probabilities") or {}).items():
        entries = [(r["setting_a"], r["setting_b"], r["probability"], r["sigma"]) for r in rows]
        out["probabilities"][label] = MeasurementDataset.from_table(entries)
    for label, metrics in (raw.get("figures_of_merit") or {}).items():
        out["figures_of_merit"][label] = {k: _value_sigma(v, f"{path}: figures_of_merit.{label}.{k}") for k, v in metrics.items()}
    if raw.get("input_output_fidelity") is not None:
        out["input_output_fidelity"] = _value_sigma(raw["input_output_fidelity"], f"{path}: input_output_fidelity")
    return out


def _z(model: float, ref: float, sigma: float) -> float:
    """Per-cell z-score against the baseline's printed sigma."""
    return (model - ref) / sigma if sigma > 0 else float("nan")


def build_report(inputs: dict[str, tuple[Path, str]], baseline: dict | None = None) -> dict:
    labels = sorted(n[len("metrics_"):-len(".json")] for n in inputs if n.startswith("metrics_"))
    report = {"labels": labels, "probabilities": {}, "figures_of_merit": {}, "plot_data": sorted(n for n in inputs if n.endswith(".tsv"))}
    for label in labels:
        name = f"p_{label}.csv"
        if name in inputs:
            data = read_dataset(inputs[name][1], source=str(inputs[name][0]))
            ref = (baseline or {}).get("probabilities", {}).get(label)
            ref_map = {(e.setting_a, e.setting_b): e for e in ref.entries} if ref else {}
            rows = []
            for e in data.entries:
                row = {"setting_a": str(e.setting_a), "setting_b": str(e.setting_b),
                       "model": e.value, "model_sigma": e.sigma}
                p = ref_map.get((e.setting_a, e.setting_b))
                if p is not None:
                    row.update(baseline=p.value, baseline_sigma=p.sigma, z=_z(e.value, p.value, p.sigma))
                rows.append(row)
            report["probabilities"][label] = rows
        path, text = inputs[f"metrics_{label}.json"]
        try:
            m = MetricsReport.from_record(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"cannot read metrics record ({exc})", source=str(path)) from None
        ref = (baseline or {}).get("figures_of_merit", {}).get(label, {})
        rows = {}
        for k in METRIC_NAMES:
            row = {"model": getattr(m, k), "model_sigma": m.sigmas.get(k)}
            if k in ref:
                row.update(baseline=ref[k][0], baseline_sigma=ref[k][1], z=_z(getattr(m, k), *ref[k]))
            rows[k] = row
        report["figures_of_merit"][label] = rows
    rec = None
    if "fidelity_io.json" in inputs:
        rec = json.loads(inputs["fidelity_io.json"][1])
    elif "rho_in.json" in inputs and "rho_out.json" in inputs:
        # separate tomography runs: the value is known, its spread is not
        states = [DensityMatrix.from_record(json.loads(inputs[n][1])) for n in ("rho_in.json", "rho_out.json")]
        rec = {"input_output_fidelity": fidelity(*states), "input_output_fidelity_sigma": None}
    if rec is not None:
        row = {"model": rec["input_output_fidelity"], "model_sigma": rec.get("input_output_fidelity_sigma")}
        ref = (baseline or {}).get("input_output_fidelity")
        if ref:
            row.update(baseline=ref[0], baseline_sigma=ref[1], z=_z(row["model"], *ref))
        report["input_output_fidelity"] = row
    return report


def _fmt(x, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.{digits}f}"


def _cell(row: dict, with_ref: bool, digits: int = 4) -> list[str]:
    cells = [_fmt(row["model"], digits), _fmt(row.get("model_sigma"), digits)]
    if with_ref:
        cells += [_fmt(row.get("baseline"), digits), _fmt(row.get("baseline_sigma"), digits), _fmt(row.get("z"), 2)]
    return cells


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(header)]

    def line(cells):
        return "  ".join(c.rjust(w) for c, w in zip(cells, widths))

    return "\n".join([line(header), line(["-" * w for w in widths])] + [line(r) for r in rows])


def render_text(report: dict) -> str:
    out = []
    cmp_cols = ["model", "sigma", "baseline", "baseline_sigma", "z"]
    for label, rows in report["probabilities"].items():
        with_ref = any("baseline" in r for r in rows)
        header = ["setting"] + (cmp_cols if with_ref else cmp_cols[:2])
        body = [[f"{r['setting_a']} x {r['setting_b']}"] + _cell(r, with_ref, 3) for r in rows]
        out.append(f"Joint-detection probabilities P_{label}\n" + _table(header, body))
    for label, rows in report["figures_of_merit"].items():
        with_ref = any("baseline" in r for r in rows.values())
        header = ["metric"] + (cmp_cols if with_ref else cmp_cols[:2])
        body = [[k] + _cell(r, with_ref) for k, r in rows.items()]
        out.append(f"Figures of merit rho_{label}\n" + _table(header, body))
    if "input_output_fidelity" in report:
        r = report["input_output_fidelity"]
        with_ref = "baseline" in r
        header = ["quantity"] + (cmp_cols if with_ref else cmp_cols[:2])
        out.append("Input-output fidelity\n" + _table(header, [["F(rho_in, rho_out)"] + _cell(r, with_ref)]))
    if report["plot_data"]:
        out.append("Plot data: " + ", ".join(report["plot_data"]))
    return "\n\n".join(out) + "\n"
