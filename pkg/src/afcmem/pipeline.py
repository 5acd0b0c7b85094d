"""End-to-end stages used by the command line: simulate, reconstruct, design the comb, report."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from afcmem import __version__
from afcmem.afc import (
    TOOTH_SHAPES,
    CombParams,
    ChirpParams,
    apply_memory,
    comb_spacing_from_chirp,
    echo_efficiencies,
    echo_tsv,
    efficiency_backward,
    efficiency_forward,
    finesse,
    forward_ceiling,
    profile_tsv,
    reversible_optical_depth,
    storage_time,
)
from afcmem.analyzer import (
    STREAM_COUNTS,
    STREAM_COUNTS_OUT,
    STREAM_HISTOGRAM_OUT,
    CoincidenceRecord,
    RunPlan,
    simulate_counts,
    time_histogram,
    write_counts_table,
)
from afcmem.config import RunConfig
from afcmem.core import DensityMatrix, MeasurementSetting, dumps_density_matrix, projector, tensor
from afcmem.errors import AfcError, DatasetError, ParameterError
from afcmem.metrics import MetricsReport, fidelity, metric_values
from afcmem.source import STANDARD_SETTINGS, bell_phi_plus, source_state
from afcmem.tomography import (
    MeasurementDataset,
    MonteCarloReport,
    TomographyOptions,
    TomographyResult,
    UnderdeterminedWarning,
    dataset_from_counts,
    mle_reconstruct,
    monte_carlo_uncertainty,
)


class StageError(AfcError):
    """A pipeline stage failed; ``stage`` names it and ``cause`` keeps the original error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class NonConvergenceError(AfcError):
    pass


def measured_settings() -> list[tuple[MeasurementSetting, MeasurementSetting]]:
    """Standard settings followed by the partners (a, -b) that the normalized ratio needs."""
    out = list(STANDARD_SETTINGS)
    for a, b in STANDARD_SETTINGS:
        if (a, -b) not in out:
            out.append((a, -b))
    return out


def plan_matching_sigmas(
    dataset: MeasurementDataset,
    pair_rate: float,
    detection_probability: float = 1.0,
    rho: DensityMatrix | None = None,
) -> RunPlan:
    """Integration times whose binomial sigmas reproduce the dataset's sigmas.

    A normalized probability p built from N coincidences has sigma
    sqrt(p(1-p)/N), so N = p(1-p)/sigma^2 counts are needed over the pair
    (a, b), (a, -b). Their mean is pair_rate * t * eta * tr(rho Pa x I); the
    795 nm marginal defaults to 1/2.
    """
    if pair_rate <= 0 or detection_probability <= 0:
        raise ParameterError("pair_rate and detection_probability must be positive")
    overrides = {}
    for e in dataset.entries:
        a, b = e.setting_a, e.setting_b
        if (a, b) in overrides:
            continue
        if e.sigma is None or e.sigma <= 0 or not (0 < e.value < 1):
            raise DatasetError(f"cannot match sigma for ({a},{b}): need 0 < p < 1 and sigma > 0")
        n = e.value * (1 - e.value) / e.sigma**2
        marg = 0.5 if rho is None else float(np.real(np.trace(rho.mat @ tensor(projector(a), np.eye(2)))))
        t = n / (pair_rate * detection_probability * marg)
        overrides[(a, b)] = t
        overrides[(a, -b)] = t
    return RunPlan(pair_rate, 1.0, overrides)


@dataclass
class ArmResult:
    label: str
    rho_true: DensityMatrix
    records: list[CoincidenceRecord]
    table: MeasurementDataset
    result: TomographyResult
    metrics: MetricsReport
    mc: MonteCarloReport | None


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (AfcError, ValueError) as exc:
        raise StageError(name, exc) from exc


def reconstruct(
    dataset: MeasurementDataset,
    resamples: int,
    seed: int,
    options: TomographyOptions | None = None,
    reference: DensityMatrix | None = None,
) -> tuple[TomographyResult, MetricsReport, MonteCarloReport | None]:
    """MLE, metrics and (when ``resamples`` > 0) Monte Carlo sigmas for one dataset."""
    options = options or TomographyOptions(seed=seed)
    reference = reference or bell_phi_plus()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderdeterminedWarning)
        result = mle_reconstruct(dataset, options)
    mc = None
    vals = metric_values(result.rho_hat, reference)
    sigmas = {}
    if resamples:
        mc = monte_carlo_uncertainty(dataset, resamples, seed, reference=reference, options=options, nominal=result)
        sigmas = dict(mc.sigma)
    return result, MetricsReport(**vals, sigmas=sigmas), mc


def simulate_arm(label: str, rho: DensityMatrix, plan: RunPlan, cfg: RunConfig, recall: float,
                 stream: int, mc_seed: int) -> ArmResult:
    records = _stage(f"simulate[{label}]", simulate_counts, rho, measured_settings(), plan, cfg.detectors,
                     cfg.seed, recall, stream=stream)
    data = _stage(f"normalize[{label}]", dataset_from_counts, records)
    table = data.restrict(list(STANDARD_SETTINGS))
    result, metrics, mc = _stage(f"tomography[{label}]", reconstruct, data, cfg.resamples, mc_seed,
                                 TomographyOptions(mode="counts", seed=cfg.seed))
    return ArmResult(label, rho, records, table, result, metrics, mc)


def paired_fidelity(mc_a: MonteCarloReport | None, mc_b: MonteCarloReport | None) -> float:
    """Spread of F(rho_a, rho_b) over resamples paired by index."""
    if mc_a is None or mc_b is None:
        return float("nan")
    vals = [fidelity(x, y) for x, y in zip(mc_a.states, mc_b.states)]
    return float(np.std(vals, ddof=1))


def simulate_experiment(cfg: RunConfig) -> dict[str, ArmResult]:
    rho_in = _stage("source", source_state, cfg.source)
    rho_out, recall = _stage("memory", apply_memory, rho_in, cfg.memory)
    # the two arms use separate count streams and separate resampling seeds
    arm_in = simulate_arm("in", rho_in, cfg.plan_in, cfg, 1.0, STREAM_COUNTS, cfg.seed)
    arm_out = simulate_arm("out", rho_out, cfg.plan_out, cfg, recall, STREAM_COUNTS_OUT, (cfg.seed + 1) % 2**64)
    return {"in": arm_in, "out": arm_out}


# ---------------------------------------------------------------- file output

def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def write_arm(out: Path, label: str, result: TomographyResult, metrics: MetricsReport,
              table: MeasurementDataset, records: list[CoincidenceRecord] | None = None,
              rho_true: DensityMatrix | None = None) -> None:
    _write(out, f"rho_{label}.json", dumps_density_matrix(result.rho_hat))
    _write(out, f"metrics_{label}.json", dumps_json(metrics.to_record()))
    _write(out, f"diagnostics_{label}.json", dumps_json(result.diagnostics()))
    _write(out, f"p_{label}.csv", table.to_table())
    if records is not None:
        _write(out, f"counts_{label}.csv", write_counts_table(records))
    if rho_true is not None:
        _write(out, f"rho_true_{label}.json", dumps_density_matrix(rho_true))


def write_io_fidelity(out: Path, rho_in: DensityMatrix, rho_out: DensityMatrix, sigma: float) -> dict:
    rec = {"input_output_fidelity": fidelity(rho_in, rho_out), "input_output_fidelity_sigma": sigma}
    _write(out, "fidelity_io.json", dumps_json(rec))
    return rec


def run_simulate(cfg: RunConfig, out: Path) -> dict:
    arms = simulate_experiment(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for label, arm in arms.items():
        write_arm(out, label, arm.result, arm.metrics, arm.table, arm.records, arm.rho_true)
    io = write_io_fidelity(out, arms["in"].result.rho_hat, arms["out"].result.rho_hat,
                           paired_fidelity(arms["in"].mc, arms["out"].mc))
    if cfg.histogram_coincidences > 0:
        # the arrival-time histograms of the recalled arm in the z basis
        for a in (MeasurementSetting("z", 1), MeasurementSetting("z", -1)):
            b = MeasurementSetting("z", 1)
            hist = _stage("histogram", time_histogram, arms["out"].rho_true, a, b, cfg.analyzers,
                          cfg.histogram_coincidences, cfg.seed, stream=STREAM_HISTOGRAM_OUT)
            _write(out, f"histogram_out_{a}.tsv", hist.to_tsv())
    run = {"command": "simulate", "seed": cfg.seed, "resamples": cfg.resamples, "version": __version__,
           "converged": {k: a.result.converged for k, a in arms.items()}}
    _write(out, "run.json", dumps_json(run))
    return {"arms": arms, "io": io}


def run_tomography(dataset: MeasurementDataset, label: str, resamples: int, seed: int, out: Path,
                   options: TomographyOptions | None = None) -> tuple[TomographyResult, MetricsReport]:
    result, metrics, _ = _stage("tomography", reconstruct, dataset, resamples, seed,
                                options or TomographyOptions(seed=seed))
    out.mkdir(parents=True, exist_ok=True)
    table = dataset
    if set(STANDARD_SETTINGS) <= set(dataset.settings()):
        table = dataset.restrict(list(STANDARD_SETTINGS))
    write_arm(out, label, result, metrics, table)
    return result, metrics


def missing_standard_settings(dataset: MeasurementDataset) -> list[str]:
    have = set(dataset.settings())
    return [f"({a},{b})" for a, b in STANDARD_SETTINGS if (a, b) not in have]


# ---------------------------------------------------------------- comb design

def afc_design(comb: CombParams, chirp: ChirpParams, samples: int = 4096) -> dict:
    f = finesse(comb)
    d1_opt, ceiling = forward_ceiling(f, comb.d0)
    echoes = echo_efficiencies(comb, samples=samples)
    shapes = {}
    for shape in TOOTH_SHAPES:
        other = CombParams(comb.delta, comb.gamma, comb.bandwidth, comb.d1, comb.d0, shape)
        shapes[shape] = {
            "first_echo": echo_efficiencies(other, samples=samples, max_order=1)[1],
            "mean_reversible_optical_depth": reversible_optical_depth(other),
        }
    return {
        "chirp_spacing_hz": comb_spacing_from_chirp(chirp),
        "chirp_storage_time_s": chirp.delta_beat / chirp.alpha,
        "delta_hz": comb.delta,
        "gamma_hz": comb.gamma,
        "storage_time_s": storage_time(comb.delta),
        "finesse": f,
        "n_teeth": comb.n_teeth,
        "tooth_shape": comb.tooth_shape,
        "d1": comb.d1,
        "d0": comb.d0,
        "efficiency_forward": efficiency_forward(comb.d1, f, comb.d0),
        "efficiency_backward": efficiency_backward(comb.d1, f),
        "forward_ceiling": ceiling,
        "forward_ceiling_d1": d1_opt,
        "backward_asymptote": math.exp(-7.0 / f**2),
        "echo_orders": {str(k): v for k, v in echoes.items()},
        "first_echo_by_shape": shapes,
    }


def run_afc(comb: CombParams, chirp: ChirpParams, out: Path) -> dict:
    design = afc_design(comb, chirp)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "afc_design.json", dumps_json(design))
    _write(out, "echo_orders.tsv", echo_tsv(comb))
    grid = np.linspace(-2 * comb.delta, 2 * comb.delta, 4 * 128 + 1)
    _write(out, "comb_profile.tsv", profile_tsv(comb, grid))
    return design
