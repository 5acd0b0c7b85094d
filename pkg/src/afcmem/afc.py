"""Atomic frequency comb: comb synthesis, chirp arithmetic, echo efficiencies, memory channel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import erf as _erf

from afcmem.core import DensityMatrix, tensor
from afcmem.errors import ParameterError

TOOTH_SHAPES = ("sinusoidal", "gaussian", "square")
_FOUR_LN2 = 4.0 * math.log(2.0)


@dataclass(frozen=True)
class CombParams:
    delta: float = 1.0 / 7e-9
    gamma: float = 0.5 / 7e-9
    bandwidth: float = 5e9
    d1: float = 4.0
    d0: float = 0.0
    tooth_shape: str = "gaussian"

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"delta must be > 0, got {self.delta!r}")
        if not self.gamma > 0:
            raise ParameterError(f"gamma must be > 0, got {self.gamma!r}")
        if self.delta / self.gamma < 1 - 1e-12:
            raise ParameterError(f"delta/gamma must be >= 1, got {self.delta / self.gamma:.4g}")
        if self.d1 < 0:
            raise ParameterError(f"d1 must be >= 0, got {self.d1!r}")
        if self.d0 < 0:
            raise ParameterError(f"d0 must be >= 0, got {self.d0!r}")
        if self.bandwidth < self.delta:
            raise ParameterError("bandwidth must be >= delta")
        if self.tooth_shape not in TOOTH_SHAPES:
            raise ParameterError(f"tooth_shape must be one of {TOOTH_SHAPES}, got {self.tooth_shape!r}")

    @property
    def n_teeth(self) -> int:
        return int(self.bandwidth // self.delta)


@dataclass(frozen=True)
class ChirpParams:
    delta_beat: float = 0.35e6
    alpha: float = 5.0e13
    sweep_start: float = 5e9
    sweep_end: float = 10e9
    cycles: int = 100
    prepare_ms: float = 10.0
    wait_ms: float = 2.2
    store_ms: float = 40.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError(f"alpha must be > 0, got {self.alpha!r}")
        if not self.sweep_end > self.sweep_start:
            raise ParameterError("sweep_end must exceed sweep_start")
        if self.cycles < 1:
            raise ParameterError("cycles must be >= 1")
        for name in ("prepare_ms", "wait_ms", "store_ms"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    @property
    def sweep_duration(self) -> float:
        return (self.sweep_end - self.sweep_start) / self.alpha

    @property
    def prepared_bandwidth(self) -> float:
        return self.sweep_end - self.sweep_start


@dataclass(frozen=True)
class MemoryChannelParams:
    eta_system: float = 0.002
    phase_error: float = 0.0
    noise_floor: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.eta_system <= 1.0):
            raise ParameterError("eta_system must be in [0, 1]")
        if not (0.0 <= self.noise_floor <= 1.0):
            raise ParameterError("noise_floor must be in [0, 1]")
        if not math.isfinite(self.phase_error):
            raise ParameterError("phase_error must be finite")


def storage_time(delta: float) -> float:
    if not delta > 0:
        raise ParameterError(f"tooth spacing must be > 0, got {delta!r}")
    return 1.0 / delta


def comb_spacing_from_chirp(chirp: ChirpParams) -> float:
    """Tooth spacing alpha/delta_beat, i.e. the inverse of T_s = delta_beat/alpha."""
    if chirp.delta_beat == 0:
        raise ParameterError("delta_beat must be non-zero")
    return chirp.alpha / chirp.delta_beat


def finesse(comb: CombParams) -> float:
    return comb.delta / comb.gamma


def _check_domain(d1: float, f: float, d0: float = 0.0) -> None:
    if d1 < 0 or not math.isfinite(d1):
        raise ParameterError(f"d1 must be finite and >= 0, got {d1!r}")
    if f < 1 or not math.isfinite(f):
        raise ParameterError(f"finesse must be finite and >= 1, got {f!r}")
    if d0 < 0 or not math.isfinite(d0):
        raise ParameterError(f"d0 must be finite and >= 0, got {d0!r}")


def efficiency_forward(d1: float, f: float, d0: float = 0.0) -> float:
    """First forward echo for gaussian teeth: (d1/F)^2 exp(-d1/F) exp(-7/F^2) exp(-d0)."""
    _check_domain(d1, f, d0)
    x = d1 / f
    return x * x * math.exp(-x) * math.exp(-7.0 / f**2) * math.exp(-d0)


def efficiency_backward(d1: float, f: float) -> float:
    """Phase-matched backward recall: (1 - exp(-d1/F))^2 exp(-7/F^2)."""
    _check_domain(d1, f)
    return (1.0 - math.exp(-d1 / f)) ** 2 * math.exp(-7.0 / f**2)


def forward_ceiling(f: float, d0: float = 0.0) -> tuple[float, float]:
    """``(d1_opt, efficiency)`` maximizing the first forward echo over d1 at fixed finesse."""
    _check_domain(0.0, f, d0)
    res = minimize_scalar(lambda d1: -efficiency_forward(d1, f, d0), bounds=(0.0, 20.0 * f),
                          method="bounded", options={"xatol": 1e-10})
    return float(res.x), float(-res.fun)


# edge width of square teeth inside the echo computation; hard edges never converge
SQUARE_EDGE_FRACTION = 1.0 / 256


def _profile(comb: CombParams, x: np.ndarray, soft_edges: bool = False) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if comb.tooth_shape == "sinusoidal":
        return comb.d0 + comb.d1 * (1.0 + np.cos(2 * np.pi * x / comb.delta)) / 2
    # distance to the nearest tooth centre
    u = x - comb.delta * np.round(x / comb.delta)
    if comb.tooth_shape == "square":
        if soft_edges:
            w = SQUARE_EDGE_FRACTION * comb.delta * math.sqrt(2.0)
            half = comb.gamma / 2
            acc = np.zeros_like(u)
            for k in (-1, 0, 1):
                v = u - k * comb.delta
                acc += 0.5 * (_erf((v + half) / w) - _erf((v - half) / w))
            return comb.d0 + comb.d1 * acc
        return comb.d0 + comb.d1 * (np.abs(u) <= comb.gamma / 2)
    reach = int(math.ceil(6 * comb.gamma / comb.delta)) + 1
    acc = np.zeros_like(u)
    for k in range(-reach, reach + 1):
        acc += np.exp(-_FOUR_LN2 * (u - k * comb.delta) ** 2 / comb.gamma**2)
    return comb.d0 + comb.d1 * acc


def comb_profile(comb: CombParams, grid) -> np.ndarray:
    """Optical depth sampled on the detuning ``grid`` (Hz)."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ParameterError("grid must be a 1-D array of detunings")
    span = grid.max() - grid.min()
    periods = span / comb.delta
    if periods < 1 - 1e-9:
        raise ParameterError(f"grid spans {periods:.3g} periods, need at least one")
    if (len(grid) - 1) / periods < 64 - 1e-9:
        raise ParameterError("grid is under-sampled: need >= 64 samples per comb period")
    return _profile(comb, grid)


def reversible_optical_depth(comb: CombParams, samples: int = 4096) -> float:
    """Period-averaged optical depth of the teeth above the background d0."""
    x = np.arange(samples) * comb.delta / samples
    return float(np.mean(_profile(comb, x)) - comb.d0)


def _transfer_coefficients(comb: CombParams, samples: int, causal: bool) -> np.ndarray:
    x = np.arange(samples) * comb.delta / samples
    d = _profile(comb, x, soft_edges=True)
    if causal:
        c = np.fft.fft(d) / samples
        half = samples // 2
        one_sided = np.zeros(samples, dtype=complex)
        one_sided[0] = c[0]
        one_sided[1:half] = 2 * c[1:half]
        h = np.exp(-0.5 * np.fft.ifft(one_sided) * samples)
    else:
        h = np.exp(-0.5 * d).astype(complex)
    return np.fft.fft(h) / samples, float(np.mean(np.exp(-d)))


def echo_efficiencies(
    comb: CombParams,
    *,
    samples: int = 4096,
    causal: bool = True,
    max_order: int | None = None,
) -> dict[int, float]:
    """Intensity fraction re-emitted at t = k / delta for echo orders k >= 0.

    Order 0 is the directly transmitted part. The orders are the squared
    Fourier coefficients of the amplitude transfer function over one comb
    period. Square teeth get error-function edges of width
    ``SQUARE_EDGE_FRACTION * delta`` here so the series converges. With ``causal=True`` (default) the transfer function is
    exp(-D/2) where D is the one-sided (analytic) continuation of the optical
    depth, so |H|^2 = exp(-d) still holds but the dispersion that accompanies
    the absorption is present and all echoes fall at t >= 0. ``causal=False``
    uses the real function exp(-d/2), which splits each echo symmetrically
    between +k and -k.
    """
    if samples < 64 or samples % 2:
        raise ParameterError("samples must be an even number >= 64")
    a, mean_transmission = _transfer_coefficients(comb, samples, causal)
    power = np.abs(a) ** 2
    half = samples // 2
    # signed order k sits at index k mod samples
    if not causal:
        folded = power[: half + 1].copy()
        folded[1:half] += power[:-half:-1]
    else:
        folded = power[: half + 1]
    total = float(power.sum())
    if abs(total - mean_transmission) > 1e-6:
        raise ParameterError(f"Parseval check failed: {total:.3g} vs {mean_transmission:.3g}")
    alias = float(folded[half // 2:].sum())
    if alias > 1e-6:
        raise ParameterError(f"echo series not converged: {alias:.3g} of the energy sits above order {half // 2}")
    cumulative = np.cumsum(folded)
    k_conv = int(np.searchsorted(cumulative, total - 1e-6)) + 1
    k_max = max_order if max_order is not None else max(k_conv, 1)
    # for the real transfer function this is the +k half of each symmetric pair
    return {k: float(power[k]) for k in range(k_max + 1)}


def echo_table(comb: CombParams, **kwargs) -> list[tuple[float, float]]:
    return [(k / comb.delta, v) for k, v in echo_efficiencies(comb, **kwargs).items()]


def apply_memory(rho: DensityMatrix, mem: MemoryChannelParams) -> tuple[DensityMatrix, float]:
    """Recall channel on the stored 795 nm qubit: relative phase, then white-noise admixture."""
    u = tensor(np.diag([1.0, np.exp(1j * mem.phase_error)]), np.eye(2))
    rotated = u @ rho.mat @ u.conj().T
    out = (1.0 - mem.noise_floor) * rotated + mem.noise_floor * np.eye(4) / 4
    return DensityMatrix.from_matrix(out), mem.eta_system


def profile_tsv(comb: CombParams, grid) -> str:
    grid = np.asarray(grid, dtype=float)
    od = comb_profile(comb, grid)
    return "detuning_Hz\toptical_depth\n" + "".join(f"{x:.9e}\t{y:.9e}\n" for x, y in zip(grid, od))


def echo_tsv(comb: CombParams, **kwargs) -> str:
    return "time_s\tintensity_fraction\n" + "".join(f"{t:.9e}\t{v:.9e}\n" for t, v in echo_table(comb, **kwargs))


def measured_fwhm(comb: CombParams, samples: int = 8192) -> float:
    """Full width at half maximum of one tooth, measured on the sampled profile above d0."""
    x = (np.arange(samples) / samples - 0.5) * comb.delta
    y = _profile(comb, x) - comb.d0
    half = y.max() / 2
    above = x[y >= half]
    step = comb.delta / samples
    return float(above.max() - above.min() + step)
