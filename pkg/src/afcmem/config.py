"""Run configuration: a YAML document whose physical keys carry their unit as a suffix."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from afcmem.afc import ChirpParams, CombParams, MemoryChannelParams
from afcmem.analyzer import AnalyzerConfig, DetectorParams, RunPlan
from afcmem.core import MeasurementSetting
from afcmem.errors import ConfigError, ParameterError
from afcmem.source import SourceParams

# yaml key -> constructor field
_SOURCE_KEYS = {
    "p_deph": "p_deph",
    "p_white": "p_white",
    "rep_rate_hz": "rep_rate",
    "bin_separation_s": "bin_separation",
    "pair_rate_hz": "pair_rate",
    "etalon_bandwidth_hz": "etalon_bandwidth",
    "fbg_bandwidth_hz": "fbg_bandwidth",
}
_COMB_KEYS = {
    "delta_hz": "delta",
    "gamma_hz": "gamma",
    "bandwidth_hz": "bandwidth",
    "d1": "d1",
    "d0": "d0",
    "tooth_shape": "tooth_shape",
}
_CHIRP_KEYS = {
    "delta_beat_hz": "delta_beat",
    "alpha_hz_per_s": "alpha",
    "sweep_start_hz": "sweep_start",
    "sweep_end_hz": "sweep_end",
    "cycles": "cycles",
    "prepare_ms": "prepare_ms",
    "wait_ms": "wait_ms",
    "store_ms": "store_ms",
}
_MEMORY_KEYS = {
    "eta_system": "eta_system",
    "phase_error_rad": "phase_error",
    "noise_floor": "noise_floor",
}
_ANALYZER_KEYS = {
    "kind": "kind",
    "interferometer_phase_rad": "interferometer_phase",
    "bin_separation_s": "bin_separation",
    "timing_jitter_sigma_s": "timing_jitter_sigma",
    "window_half_width_s": "window_half_width",
}
_DETECTOR_KEYS = {
    "eta_795": "eta_795",
    "eta_1532": "eta_1532",
    "accidental_rate_hz": "accidental_rate",
}
_TOP_KEYS = {"seed", "resamples", "source", "comb", "chirp", "memory", "analyzers", "detectors", "run"}
_RUN_KEYS = {"integration_in_s", "integration_out_s", "overrides_in_s", "overrides_out_s",
             "histogram_coincidences"}


@dataclass
class RunConfig:
    seed: int
    resamples: int = 500
    source: SourceParams = field(default_factory=SourceParams)
    comb: CombParams = field(default_factory=CombParams)
    chirp: ChirpParams = field(default_factory=ChirpParams)
    memory: MemoryChannelParams = field(default_factory=MemoryChannelParams)
    analyzers: tuple[AnalyzerConfig, AnalyzerConfig] = (AnalyzerConfig(), AnalyzerConfig())
    detectors: DetectorParams = field(default_factory=DetectorParams)
    plan_in: RunPlan | None = None
    plan_out: RunPlan | None = None
    histogram_coincidences: float = 0.0

    def __post_init__(self):
        if self.plan_in is None:
            self.plan_in = RunPlan(self.source.pair_rate, 300.0)
        if self.plan_out is None:
            self.plan_out = RunPlan(self.source.pair_rate, 18000.0)


def _number(value: Any) -> Any:
    # YAML 1.1 reads 80e6 (no dot) as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def _section(raw: dict, name: str, keys: dict[str, str], cls, where: str):
    body = raw.get(name, {}) or {}
    if not isinstance(body, dict):
        raise ConfigError(f"{where}{name}: expected a mapping")
    unknown = sorted(set(body) - set(keys))
    if unknown:
        raise ConfigError(f"{where}{name}: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(keys)}")
    kwargs = {keys[k]: _number(v) for k, v in body.items()}
    try:
        return cls(**kwargs)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"{where}{name}: {exc}") from None


def _overrides(body: Any, label: str) -> dict:
    if body is None:
        return {}
    if not isinstance(body, dict):
        raise ConfigError(f"run.{label}: expected a mapping of 'a,b' -> seconds")
    out = {}
    for key, value in body.items():
        try:
            a_text, b_text = str(key).split(",")
            pair = (MeasurementSetting.parse(a_text), MeasurementSetting.parse(b_text))
            seconds = float(_number(value))
        except (ValueError, ParameterError):
            raise ConfigError(f"run.{label}: cannot read entry {key!r}: {value!r}") from None
        if seconds <= 0:
            raise ConfigError(f"run.{label}: integration time for {key!r} must be positive")
        out[pair] = seconds
    return out


def _comb(raw: dict, chirp: ChirpParams, where: str) -> CombParams:
    body = raw.get("comb") or {}
    if not isinstance(body, dict):
        raise ConfigError(f"{where}comb: expected a mapping")
    body = dict(body)
    if "delta_hz" not in body:
        # tooth spacing follows from the chirp; finesse 2 unless gamma is given
        body["delta_hz"] = chirp.alpha / chirp.delta_beat
        body.setdefault("gamma_hz", body["delta_hz"] / 2)
    return _section({"comb": body}, "comb", _COMB_KEYS, CombParams, where)


def _read_yaml(path: Path) -> Any:
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}:{line} invalid YAML ({getattr(exc, 'problem', exc)})") from None


def load_afc_config(path: str | Path) -> tuple[CombParams, ChirpParams]:
    """Comb and chirp sections only; other sections of a full run config are ignored."""
    path = Path(path)
    raw = _read_yaml(path) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key(s) {', '.join(unknown)}")
    where = f"{path}: "
    chirp = _section(raw, "chirp", _CHIRP_KEYS, ChirpParams, where)
    return _comb(raw, chirp, where), chirp


def parse_config(raw: Any, source: str = "<config>") -> RunConfig:
    where = f"{source}: "
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}top level must be a mapping")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"{where}unknown top-level key(s) {', '.join(unknown)}")
    if "seed" not in raw:
        raise ConfigError(f"{where}seed is mandatory")
    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ConfigError(f"{where}seed must be an integer in [0, 2^64), got {seed!r}")
    resamples = raw.get("resamples", 500)
    if isinstance(resamples, bool) or not isinstance(resamples, int) or resamples < 100:
        raise ConfigError(f"{where}resamples must be an integer >= 100, got {resamples!r}")

    source_params = _section(raw, "source", _SOURCE_KEYS, SourceParams, where)
    chirp = _section(raw, "chirp", _CHIRP_KEYS, ChirpParams, where)
    comb = _comb(raw, chirp, where)
    memory = _section(raw, "memory", _MEMORY_KEYS, MemoryChannelParams, where)
    detectors = _section(raw, "detectors", _DETECTOR_KEYS, DetectorParams, where)

    an = raw.get("analyzers", {}) or {}
    if not isinstance(an, dict) or set(an) - {"a", "b"}:
        raise ConfigError(f"{where}analyzers: expected a mapping with keys 'a' (795 nm) and 'b' (1532 nm)")
    analyzers = (
        _section(an, "a", _ANALYZER_KEYS, AnalyzerConfig, where + "analyzers."),
        _section(an, "b", _ANALYZER_KEYS, AnalyzerConfig, where + "analyzers."),
    )

    run = raw.get("run", {}) or {}
    if not isinstance(run, dict):
        raise ConfigError(f"{where}run: expected a mapping")
    unknown = sorted(set(run) - _RUN_KEYS)
    if unknown:
        raise ConfigError(f"{where}run: unknown key(s) {', '.join(unknown)}")
    try:
        t_in = float(_number(run.get("integration_in_s", 300.0)))
        t_out = float(_number(run.get("integration_out_s", 18000.0)))
        hist = float(_number(run.get("histogram_coincidences", 0.0)))
    except (TypeError, ValueError):
        raise ConfigError(f"{where}run: integration times must be numbers") from None
    if t_in <= 0 or t_out <= 0 or hist < 0:
        raise ConfigError(f"{where}run: integration times must be positive and histogram_coincidences >= 0")
    plan_in = RunPlan(source_params.pair_rate, t_in, _overrides(run.get("overrides_in_s"), "overrides_in_s"))
    plan_out = RunPlan(source_params.pair_rate, t_out, _overrides(run.get("overrides_out_s"), "overrides_out_s"))

    return RunConfig(seed=seed, resamples=resamples, source=source_params, comb=comb, chirp=chirp,
                     memory=memory, analyzers=analyzers, detectors=detectors, plan_in=plan_in,
                     plan_out=plan_out, histogram_coincidences=hist)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(_read_yaml(path), str(path))
