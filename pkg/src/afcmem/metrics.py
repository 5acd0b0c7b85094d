"""Purity, concurrence, entanglement of formation, CHSH bound and Uhlmann fidelity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from afcmem.core import DensityMatrix, pauli, sqrt_psd, tensor
from afcmem.errors import ParameterError

_YY = tensor(pauli("y"), pauli("y"))


def _mat(rho) -> np.ndarray:
    return rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def purity(rho) -> float:
    m = _mat(rho)
    return float(np.real(np.trace(m @ m)))


def spin_flip(rho) -> np.ndarray:
    m = _mat(rho)
    return _YY @ m.conj() @ _YY


def concurrence_spectrum(rho) -> np.ndarray:
    """Square roots of the eigenvalues of rho * spin_flip(rho), descending.

    These are the singular values of sqrt(rho_tilde) sqrt(rho). Taking them
    from an SVD avoids squaring, so tiny values keep full absolute precision.
    """
    m = _mat(rho)
    r = sqrt_psd(m)
    r_tilde = _YY @ r.conj() @ _YY
    return np.linalg.svd(r_tilde @ r, compute_uv=False)


def concurrence(rho) -> float:
    lam = concurrence_spectrum(rho)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def binary_entropy(x: float) -> float:
    if not (0.0 <= x <= 1.0):
        raise ParameterError(f"binary entropy needs x in [0, 1], got {x!r}")
    h = 0.0
    for p in (x, 1.0 - x):
        if p > 0:
            h -= p * math.log2(p)
    return h


def eof_from_concurrence(c: float) -> float:
    c = min(max(c, 0.0), 1.0)
    return binary_entropy(0.5 + 0.5 * math.sqrt(1.0 - c * c))


def entanglement_of_formation(rho) -> float:
    # normalizing by E_F(|phi+>) = 1 is a no-op
    return eof_from_concurrence(concurrence(rho))


def s_max_from_concurrence(c: float) -> float:
    return 2.0 * math.sqrt(1.0 + c * c)


def s_max(rho) -> float:
    return s_max_from_concurrence(concurrence(rho))


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    r = sqrt_psd(_mat(rho))
    inner = r @ _mat(sigma) @ r
    inner = (inner + inner.conj().T) / 2
    f = float(np.real(np.trace(sqrt_psd(inner))) ** 2)
    return min(max(f, 0.0), 1.0)


METRIC_NAMES = ("purity", "concurrence", "eof_normalized", "s_max", "fidelity_phi_plus")


@dataclass
class MetricsReport:
    purity: float
    concurrence: float
    eof_normalized: float
    s_max: float
    fidelity_phi_plus: float
    sigmas: dict[str, float] = field(default_factory=dict)

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}

    def to_record(self) -> dict:
        rec = self.values()
        for k, s in self.sigmas.items():
            rec[f"{k}_sigma"] = s
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "MetricsReport":
        sig = {k[: -len("_sigma")]: float(v) for k, v in rec.items() if k.endswith("_sigma")}
        return cls(**{k: float(rec[k]) for k in METRIC_NAMES}, sigmas=sig)


def metric_values(rho, reference) -> dict[str, float]:
    c = concurrence(rho)
    return {
        "purity": purity(rho),
        "concurrence": c,
        "eof_normalized": eof_from_concurrence(c),
        "s_max": s_max_from_concurrence(c),
        "fidelity_phi_plus": fidelity(rho, reference),
    }


def metrics_report(rho, reference=None) -> MetricsReport:
    """All figures of merit for ``rho``; fidelity is taken against ``reference`` (|phi+> by default)."""
    if reference is None:
        from afcmem.source import bell_phi_plus

        reference = bell_phi_plus()
    return MetricsReport(**metric_values(rho, reference))


__all__ = [
    "MetricsReport",
    "binary_entropy",
    "concurrence",
    "concurrence_spectrum",
    "entanglement_of_formation",
    "eof_from_concurrence",
    "fidelity",
    "metric_values",
    "metrics_report",
    "purity",
    "s_max",
    "spin_flip",
]
