"""Time-bin entangled pair source with dephasing and white-noise admixture."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from afcmem.core import DensityMatrix, MeasurementSetting, normalized_ratio
from afcmem.errors import DatasetError, ParameterError

REP_RATE_HZ = 80e6
BIN_SEPARATION_S = 1.4e-9


@dataclass(frozen=True)
class SourceParams:
    p_deph: float = 0.0
    p_white: float = 0.0
    rep_rate: float = REP_RATE_HZ
    bin_separation: float = BIN_SEPARATION_S
    pair_rate: float = 1000.0
    # documentation only, no effect on the state
    etalon_bandwidth: float = 6e9
    fbg_bandwidth: float = 9e9

    def __post_init__(self):
        for name in ("p_deph", "p_white"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ParameterError(f"{name} must be in [0, 1], got {v!r}")
        if self.p_deph + self.p_white > 1.0 + 1e-12:
            raise ParameterError(f"p_deph + p_white must be <= 1, got {self.p_deph + self.p_white!r}")
        for name in ("rep_rate", "bin_separation", "pair_rate"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")


def bell_phi_plus() -> DensityMatrix:
    """|phi+> = (|e,e> + |l,l>)/sqrt(2)."""
    return DensityMatrix.from_ket([1, 0, 0, 1])


def source_state(params: SourceParams) -> DensityMatrix:
    w_bell = 1.0 - params.p_deph - params.p_white
    bell = bell_phi_plus().mat
    dephased = np.diag([0.5, 0, 0, 0.5]).astype(complex)
    white = np.eye(4, dtype=complex) / 4
    return DensityMatrix.from_matrix(w_bell * bell + params.p_deph * dephased + params.p_white * white)


# the standard 16-setting layout: 795 nm setting x 1532 nm setting
STANDARD_A = ("+x", "+y", "+z", "-z")
STANDARD_B = ("+x", "+y", "+z", "-z")
STANDARD_SETTINGS = tuple(
    (MeasurementSetting.parse(a), MeasurementSetting.parse(b)) for a, b in itertools.product(STANDARD_A, STANDARD_B)
)


def model_probabilities(p_deph: float, p_white: float, settings=STANDARD_SETTINGS) -> np.ndarray:
    """Normalized joint-detection probabilities of ``source_state`` in closed form.

    The state is Bell-diagonal with correlators E_xx = -E_yy = 1 - p_deph - p_white
    and E_zz = 1 - p_white; single-qubit marginals are maximally mixed, so the
    probability for settings (a, b) is (1 + s_a s_b E_ab) / 2.
    """
    e = {"x": 1.0 - p_deph - p_white, "y": -(1.0 - p_deph - p_white), "z": 1.0 - p_white}
    out = []
    for a, b in settings:
        corr = a.sign * b.sign * (e[a.axis] if a.axis == b.axis else 0.0)
        out.append(normalized_ratio(1.0 + corr, 1.0 - corr))
    return np.array(out)


def _as_probability_map(probabilities) -> dict:
    if hasattr(probabilities, "entries"):
        return {(e.setting_a, e.setting_b): e.value for e in probabilities.entries}
    return dict(probabilities)


def fit_source_params(probabilities, *, grid_step: float = 0.01, **source_kwargs) -> SourceParams:
    """Least-squares fit of (p_deph, p_white) to the 16 standard-setting probabilities.

    ``probabilities`` is a MeasurementDataset or a mapping from setting pairs
    to values. A grid scan over the admissible triangle seeds a bounded local
    refinement.
    """
    pmap = _as_probability_map(probabilities)
    missing = [f"({a},{b})" for a, b in STANDARD_SETTINGS if (a, b) not in pmap]
    if missing:
        raise DatasetError("dataset is missing settings: " + ", ".join(missing))
    data = np.array([pmap[s] for s in STANDARD_SETTINGS], dtype=float)

    def sse(x):
        return float(np.sum((model_probabilities(x[0], x[1]) - data) ** 2))

    n = int(round(1.0 / grid_step))
    best = None
    for i in range(n + 1):
        for j in range(n + 1 - i):
            x = (i * grid_step, j * grid_step)
            val = sse(x)
            if best is None or val < best[0]:
                best = (val, x)

    res = minimize(
        sse,
        np.array(best[1]),
        method="SLSQP",
        bounds=[(0.0, 1.0), (0.0, 1.0)],
        constraints=[{"type": "ineq", "fun": lambda x: 1.0 - x[0] - x[1]}],
        options={"ftol": 1e-16, "maxiter": 500},
    )
    x = res.x if res.fun <= best[0] else np.array(best[1])
    pd, pw = (float(min(max(v, 0.0), 1.0)) for v in x)
    if pd + pw > 1.0:
        pd = 1.0 - pw
    return SourceParams(p_deph=pd, p_white=pw, **source_kwargs)


def fit_residual_rms(params: SourceParams, probabilities) -> float:
    pmap = _as_probability_map(probabilities)
    data = np.array([pmap[s] for s in STANDARD_SETTINGS], dtype=float)
    return math.sqrt(float(np.mean((model_probabilities(params.p_deph, params.p_white) - data) ** 2)))
