"""Qubit analyzers: projection probabilities, coincidence counting and arrival-time histograms.

Random numbers come from numpy's PCG64 generator. Each (setting_a, setting_b)
pair draws from its own substream, seeded by ``SeedSequence(seed,
spawn_key=(stream_tag, code(a), code(b)))``, where ``code`` maps
``+x,-x,+y,-y,+z,-z`` to 0..5. So results do not depend on the order in
which settings are simulated.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from afcmem.core import (
    DensityMatrix,
    MeasurementSetting,
    bloch_projector,
    joint_projector,
    normalized_ratio,
    projector,
    tensor,
)
from afcmem.errors import DatasetError, ParameterError, ParseError

SETTING_CODES = {"+x": 0, "-x": 1, "+y": 2, "-y": 3, "+z": 4, "-z": 5}
COUNTS_HEADER = ("setting_a", "setting_b", "counts", "integration_s")

STREAM_COUNTS = 1
STREAM_HISTOGRAM = 2
# the recalled ("out") arm of a two-arm experiment
STREAM_COUNTS_OUT = 3
STREAM_HISTOGRAM_OUT = 4

DEFAULT_JITTER_S = 100e-12
BIN_SEPARATION_S = 1.4e-9


def setting_code(s: MeasurementSetting) -> int:
    return SETTING_CODES[str(s)]


def substream(seed: int, stream: int, a: MeasurementSetting, b: MeasurementSetting) -> np.random.Generator:
    if not (0 <= int(seed) < 2**64):
        raise ParameterError(f"seed must be a 64-bit unsigned value, got {seed!r}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream, setting_code(a), setting_code(b)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class AnalyzerConfig:
    kind: str = "interferometer"
    interferometer_phase: float = 0.0
    bin_separation: float = BIN_SEPARATION_S
    timing_jitter_sigma: float = DEFAULT_JITTER_S
    window_half_width: float = 0.3e-9

    def __post_init__(self):
        if self.kind not in ("delay_line", "interferometer"):
            raise ParameterError(f"analyzer kind must be 'delay_line' or 'interferometer', got {self.kind!r}")
        if self.bin_separation <= 0:
            raise ParameterError("bin_separation must be positive")
        if self.timing_jitter_sigma < 0:
            raise ParameterError("timing_jitter_sigma must be >= 0")
        if not (0 < self.window_half_width < self.bin_separation / 2):
            raise ParameterError("window_half_width must lie in (0, bin_separation/2)")

    def for_setting(self, s: MeasurementSetting) -> "AnalyzerConfig":
        """The same analyzer switched to the hardware that realises ``s`` (delay line for z)."""
        kind = "delay_line" if s.axis == "z" else "interferometer"
        return AnalyzerConfig(kind, self.interferometer_phase, self.bin_separation,
                              self.timing_jitter_sigma, self.window_half_width)

    def effective_projector(self, s: MeasurementSetting) -> np.ndarray:
        """Projector realised by this analyzer, including its phase offset in the x-y plane."""
        if s.axis == "z" or self.interferometer_phase == 0.0:
            return projector(s)
        phi = (0.0 if s.axis == "x" else math.pi / 2) + self.interferometer_phase
        return bloch_projector((s.sign * math.cos(phi), s.sign * math.sin(phi), 0.0))


@dataclass(frozen=True)
class DetectorParams:
    eta_795: float = 1.0
    eta_1532: float = 1.0
    accidental_rate: float = 0.0

    def __post_init__(self):
        for name in ("eta_795", "eta_1532"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must be in [0, 1], got {v!r}")
        if self.accidental_rate < 0:
            raise ParameterError("accidental_rate must be >= 0")


@dataclass(frozen=True)
class CoincidenceRecord:
    setting_a: MeasurementSetting
    setting_b: MeasurementSetting
    counts: int
    integration_time: float = 1.0

    def __post_init__(self):
        if self.counts < 0:
            raise DatasetError(f"negative counts for ({self.setting_a},{self.setting_b})")
        if self.integration_time <= 0:
            raise DatasetError("integration_time must be positive")


def _born(rho: DensityMatrix, a: MeasurementSetting, b: MeasurementSetting) -> float:
    return float(np.real(np.trace(rho.mat @ joint_projector(a, b))))


def joint_probability(rho: DensityMatrix, a: MeasurementSetting, b: MeasurementSetting) -> float:
    """Normalized joint-detection probability C(a,b) / (C(a,b) + C(a,-b)) from Born probabilities."""
    p = max(_born(rho, a, b), 0.0)
    q = max(_born(rho, a, -b), 0.0)
    if p + q <= 1e-15:
        raise DatasetError(f"degenerate setting ({a},{b}): projection onto {a} has zero probability")
    return normalized_ratio(p, q)


def expected_coincidences(
    rho: DensityMatrix,
    a: MeasurementSetting,
    b: MeasurementSetting,
    pairs_emitted: float,
    det: DetectorParams,
    recall_probability: float = 1.0,
    integration_time: float = 0.0,
) -> float:
    """Mean coincidence count. Accidentals add ``accidental_rate * integration_time``."""
    if pairs_emitted < 0:
        raise ParameterError("pairs_emitted must be >= 0")
    signal = pairs_emitted * max(_born(rho, a, b), 0.0) * det.eta_795 * det.eta_1532 * recall_probability
    return signal + det.accidental_rate * integration_time


@dataclass
class RunPlan:
    """Integration time per setting pair; ``pair_rate`` is emitted pairs per second."""

    pair_rate: float
    integration_s: float = 1.0
    overrides: dict[tuple[MeasurementSetting, MeasurementSetting], float] = field(default_factory=dict)

    def time_for(self, a: MeasurementSetting, b: MeasurementSetting) -> float:
        return self.overrides.get((a, b), self.integration_s)


def simulate_counts(
    rho: DensityMatrix,
    settings: Iterable[tuple[MeasurementSetting, MeasurementSetting]],
    run_plan: RunPlan,
    det: DetectorParams,
    seed: int,
    recall_probability: float = 1.0,
    *,
    stream: int = STREAM_COUNTS,
) -> list[CoincidenceRecord]:
    records = []
    for a, b in settings:
        t = run_plan.time_for(a, b)
        mean = expected_coincidences(rho, a, b, run_plan.pair_rate * t, det, recall_probability, t)
        rng = substream(seed, stream, a, b)
        records.append(CoincidenceRecord(a, b, int(rng.poisson(mean)), t))
    return records


@dataclass
class TimeHistogram:
    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if len(self.edges) != len(self.counts) + 1:
            raise ParameterError("histogram needs len(edges) == len(counts) + 1")
        widths = np.diff(self.edges)
        if np.any(widths <= 0) or not np.allclose(widths, widths[0], rtol=1e-9, atol=0):
            raise ParameterError("histogram bins must be uniform")
        if np.any(self.counts < 0):
            raise ParameterError("histogram counts must be >= 0")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_tsv(self) -> str:
        lines = ["time_s\tcounts"]
        lines += [f"{t:.6e}\t{c}" for t, c in zip(self.centers, self.counts)]
        return "\n".join(lines) + "\n"


def window_select(hist: TimeHistogram, center: float, half_width: float) -> int:
    lo, hi = center - half_width, center + half_width
    if half_width < 0 or lo < hist.edges[0] - 1e-18 or hi > hist.edges[-1] + 1e-18:
        raise ParameterError(
            f"window [{lo:.3e}, {hi:.3e}] s lies outside histogram span "
            f"[{hist.edges[0]:.3e}, {hist.edges[-1]:.3e}] s"
        )
    c = hist.centers
    mask = (c >= lo) & (c <= hi)
    return int(hist.counts[mask].sum())


def histogram_peaks(
    rho: DensityMatrix,
    a: MeasurementSetting,
    b: MeasurementSetting,
    cfg_a: AnalyzerConfig,
    cfg_b: AnalyzerConfig,
) -> list[tuple[float, float]]:
    """Peak positions (t_795 - t_1532, seconds) and weights per analyzed pair.

    Two delay lines resolve the bins directly: the 795 nm arrival selects
    ``a``; the peak at 0 holds the 1532 nm photons in the same bin and the
    peak at -+bin_separation those in the opposite bin, so one histogram
    carries both (a, +-z) settings. With at least one interferometer, half of the
    pairs take path combinations that overlap in time and interfere (central
    peak, weight Born/2); the other half split into two side peaks, each
    sharing its 1/4 of the pairs equally over the four detector-port pairs.
    """
    ca, cb = cfg_a.for_setting(a), cfg_b.for_setting(b)
    tau = cfg_a.bin_separation
    if ca.kind == "delay_line" and cb.kind == "delay_line":
        p_same = _born(rho, a, MeasurementSetting("z", a.sign))
        p_opp = _born(rho, a, MeasurementSetting("z", -a.sign))
        # 795 early (a=+z), 1532 late -> t_795 - t_1532 = -tau
        t_opp = -tau if a.sign > 0 else tau
        return [(0.0, p_same), (t_opp, p_opp)]
    m = tensor(ca.effective_projector(a), cb.effective_projector(b))
    central = float(np.real(np.trace(rho.mat @ m))) / 2
    side = 1.0 / 16
    return [(-tau, side), (0.0, max(central, 0.0)), (tau, side)]


def time_histogram(
    rho: DensityMatrix,
    a: MeasurementSetting,
    b: MeasurementSetting,
    configs: tuple[AnalyzerConfig, AnalyzerConfig],
    total_coincidences: float,
    seed: int,
    *,
    bin_width: float = 20e-12,
    accidental_counts: float = 0.0,
    stream: int = STREAM_HISTOGRAM,
) -> TimeHistogram:
    """Sampled histogram of detection-time differences for ``total_coincidences`` analyzed pairs."""
    cfg_a, cfg_b = configs
    tau = cfg_a.bin_separation
    # independent detector jitters add in quadrature on the time difference
    jitter = math.hypot(cfg_a.timing_jitter_sigma, cfg_b.timing_jitter_sigma)
    if jitter >= tau / 4:
        raise ParameterError(f"peaks unresolvable: jitter {jitter:.3g} s >= bin_separation/4")
    if total_coincidences < 0 or accidental_counts < 0:
        raise ParameterError("total_coincidences and accidental_counts must be >= 0")
    span = 2 * tau
    nbins = int(round(2 * span / bin_width))
    edges = np.linspace(-span, span, nbins + 1)
    rng = substream(seed, stream, a, b)
    samples = []
    for t0, w in histogram_peaks(rho, a, b, cfg_a, cfg_b):
        n = rng.poisson(total_coincidences * w) if w > 0 else 0
        samples.append(t0 + jitter * rng.standard_normal(n))
    n_acc = rng.poisson(accidental_counts) if accidental_counts > 0 else 0
    samples.append(rng.uniform(-span, span, n_acc))
    counts, _ = np.histogram(np.concatenate(samples), bins=edges)
    return TimeHistogram(edges, counts)


def format_setting(s: MeasurementSetting) -> str:
    return str(s)


def write_counts_table(records: Sequence[CoincidenceRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTS_HEADER)
    for r in records:
        w.writerow([str(r.setting_a), str(r.setting_b), r.counts, repr(float(r.integration_time))])
    return buf.getvalue()


def _parse_setting(text: str, line: int, source: str | None) -> MeasurementSetting:
    try:
        return MeasurementSetting.parse(text)
    except ParameterError as exc:
        raise ParseError(str(exc), line=line, source=source) from None


def read_counts_table(text: str, source: str | None = None) -> list[CoincidenceRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != COUNTS_HEADER:
        raise ParseError(f"expected header {','.join(COUNTS_HEADER)}", line=1, source=source)
    out = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno, source=source)
        a = _parse_setting(row[0], lineno, source)
        b = _parse_setting(row[1], lineno, source)
        try:
            counts = int(row[2])
            t = float(row[3])
        except ValueError:
            raise ParseError("counts must be an integer and integration_s a number", line=lineno, source=source) from None
        if (a, b) in seen:
            raise ParseError(f"duplicate setting pair ({a},{b})", line=lineno, source=source)
        seen.add((a, b))
        try:
            out.append(CoincidenceRecord(a, b, counts, t))
        except DatasetError as exc:
            raise ParseError(str(exc), line=lineno, source=source) from None
    return out


def load_counts_table(path: str | Path) -> list[CoincidenceRecord]:
    return read_counts_table(Path(path).read_text(), source=str(path))
