"""Two-qubit linear algebra: Pauli algebra, projectors, density matrices.

Basis convention: the early time bin |e> is computational 0 and the late
bin |l> is computational 1. Tensor order is (795 nm qubit) x (1532 nm qubit).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from afcmem import constants as tol
from afcmem.errors import InvalidStateError, ParameterError, ParseError

EARLY = 0
LATE = 1

_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)


def pauli(axis: str) -> np.ndarray:
    try:
        return _PAULI[axis].copy()
    except KeyError:
        raise ParameterError(f"unknown Pauli axis {axis!r}; expected one of x, y, z") from None


@dataclass(frozen=True, order=True)
class MeasurementSetting:
    """Analyzer setting: projection onto the +1 or -1 eigenstate of a Pauli axis."""

    axis: str
    sign: int = 1

    def __post_init__(self):
        if self.axis not in _PAULI:
            raise ParameterError(f"unknown axis {self.axis!r}")
        if self.sign not in (1, -1):
            raise ParameterError(f"sign must be +1 or -1, got {self.sign!r}")

    @classmethod
    def parse(cls, text: str) -> "MeasurementSetting":
        """Parse ``+x``, ``-z``, ``y`` (implicit +) and the like."""
        s = text.strip().lower()
        sign = 1
        if s[:1] in ("+", "-"):
            sign = -1 if s[0] == "-" else 1
            s = s[1:]
        if s.startswith("sigma"):
            s = s[5:].lstrip("_")
        if s not in _PAULI:
            raise ParameterError(f"cannot parse measurement setting {text!r}")
        return cls(s, sign)

    def opposite(self) -> "MeasurementSetting":
        return MeasurementSetting(self.axis, -self.sign)

    def __neg__(self) -> "MeasurementSetting":
        return self.opposite()

    def __str__(self) -> str:
        return ("+" if self.sign > 0 else "-") + self.axis


def projector(setting: MeasurementSetting) -> np.ndarray:
    return (I2 + setting.sign * _PAULI[setting.axis]) / 2


def bloch_projector(n: Iterable[float]) -> np.ndarray:
    """Projector onto the pure qubit state with unit Bloch vector ``n``."""
    nx, ny, nz = (float(v) for v in n)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    if norm == 0:
        raise ParameterError("Bloch vector must be non-zero")
    nx, ny, nz = nx / norm, ny / norm, nz / norm
    return (I2 + nx * _PAULI["x"] + ny * _PAULI["y"] + nz * _PAULI["z"]) / 2


def tensor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def joint_projector(a: MeasurementSetting, b: MeasurementSetting) -> np.ndarray:
    return tensor(projector(a), projector(b))


def normalized_ratio(p: float, q: float) -> float:
    """p / (p + q), rounded so that normalized_ratio(p, q) + normalized_ratio(q, p) == 1 exactly.

    The smaller share is divided out and the larger one is its complement;
    x + fl(1 - x) rounds to 1 for every x in [0, 1/2].
    """
    if p == q:
        return 0.5
    small = min(p, q) / (p + q)
    return small if p < q else 1.0 - small


def is_hermitian(m: np.ndarray, atol: float = tol.HERMITIAN_TOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and bool(np.all(np.abs(m - m.conj().T) <= atol))


def _check_hermitian(m: np.ndarray, atol: float) -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidStateError(f"expected a square matrix, got shape {m.shape}")
    if not is_hermitian(m, atol):
        dev = float(np.max(np.abs(m - m.conj().T)))
        raise InvalidStateError(f"matrix is not Hermitian (max |M - M^dagger| = {dev:.3g})")
    return m


def hermitian_eig(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.

    Returns ``(w, v)`` with eigenvalues ``w`` sorted in descending order and the
    corresponding orthonormal eigenvectors in the columns of ``v``.
    """
    a = _check_hermitian(h, tol.EIG_INPUT_TOL)
    a = (a + a.conj().T) / 2
    n = a.shape[0]
    v = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(a), np.finfo(float).tiny)

    for _ in range(tol.JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol.JACOBI_REL_TOL * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag < 1e-300:
                    continue
                phase = apq / mag
                app = a[p, p].real
                aqq = a[q, q].real
                theta = 0.5 * np.arctan2(2 * mag, aqq - app)
                c, s = np.cos(theta), np.sin(theta)
                # phase fix on column q makes the (p, q) element real, then a real rotation
                rot = np.eye(n, dtype=complex)
                rot[p, p] = c
                rot[p, q] = s
                rot[q, p] = -s * np.conj(phase)
                rot[q, q] = c * np.conj(phase)
                a = rot.conj().T @ a @ rot
                v = v @ rot
    else:
        raise ParameterError("Jacobi eigensolver did not converge")

    w = np.real(np.diag(a))
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def sqrt_psd(h: np.ndarray) -> np.ndarray:
    """Principal square root of a positive semidefinite Hermitian matrix."""
    w, v = hermitian_eig(h)
    if w.min() < tol.PSD_HARD_FLOOR:
        raise InvalidStateError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3g})")
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)) @ v.conj().T
    return (r + r.conj().T) / 2


def expectation(rho: "DensityMatrix | np.ndarray", m: np.ndarray) -> float:
    """tr(rho M) for Hermitian M."""
    mat = rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    m = _check_hermitian(m, tol.HERMITIAN_TOL)
    val = np.trace(mat @ m)
    return float(val.real)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Validated two-qubit density matrix (4x4, Hermitian, unit trace, PSD)."""

    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=complex)
        if m.shape != (4, 4):
            raise InvalidStateError(f"two-qubit density matrix must be 4x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise InvalidStateError("density matrix has non-finite entries")
        _check_hermitian(m, tol.HERMITIAN_TOL)
        tr = np.trace(m).real
        if abs(tr - 1) > tol.TRACE_TOL:
            raise InvalidStateError(f"trace is {tr!r}, expected 1")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w.min() < tol.PSD_FLOOR:
            raise InvalidStateError(f"density matrix has negative eigenvalue {w.min():.3g}")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @classmethod
    def from_matrix(cls, m: np.ndarray, *, renormalize: bool = False) -> "DensityMatrix":
        m = np.asarray(m, dtype=complex)
        m = (m + m.conj().T) / 2
        if renormalize:
            m = m / np.trace(m).real
        return cls(m)

    @classmethod
    def from_ket(cls, psi: Iterable[complex]) -> "DensityMatrix":
        psi = np.asarray(list(psi), dtype=complex)
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def maximally_mixed(cls) -> "DensityMatrix":
        return cls(I4 / 4)

    def __array__(self, dtype=None, copy=None):
        return self.mat.astype(dtype) if dtype is not None else self.mat.copy()

    def __eq__(self, other):
        if not isinstance(other, DensityMatrix):
            return NotImplemented
        return bool(np.array_equal(self.mat, other.mat))

    def allclose(self, other: "DensityMatrix", atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.mat, other.mat, atol=atol, rtol=0))

    def to_record(self) -> dict:
        return {"re": self.mat.real.tolist(), "im": self.mat.imag.tolist()}

    @classmethod
    def from_record(cls, rec: dict) -> "DensityMatrix":
        try:
            re = np.asarray(rec["re"], dtype=float)
            im = np.asarray(rec["im"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"density matrix record needs 4x4 're' and 'im' arrays ({exc})") from None
        if re.shape != (4, 4) or im.shape != (4, 4):
            raise ParseError(f"density matrix arrays must be 4x4, got {re.shape} and {im.shape}")
        return cls(re + 1j * im)


def trace_distance(a: DensityMatrix | np.ndarray, b: DensityMatrix | np.ndarray) -> float:
    d = np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex)
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2))))


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _matrix_json(m: np.ndarray, indent: str) -> str:
    rows = ["[" + ", ".join(_fmt(x) for x in row) + "]" for row in m]
    inner = (",\n" + indent + "  ").join(rows)
    return "[\n" + indent + "  " + inner + "\n" + indent + "]"


def dumps_density_matrix(rho: DensityMatrix, extra: dict | None = None) -> str:
    """Serialize as a JSON record with 17 significant digits per entry."""
    parts = [
        f'  "re": {_matrix_json(rho.mat.real, "  ")}',
        f'  "im": {_matrix_json(rho.mat.imag, "  ")}',
    ]
    for key, value in (extra or {}).items():
        parts.append(f"  {json.dumps(key)}: {json.dumps(value)}")
    return "{\n" + ",\n".join(parts) + "\n}\n"


def write_density_matrix(path: str | Path, rho: DensityMatrix, extra: dict | None = None) -> None:
    Path(path).write_text(dumps_density_matrix(rho, extra))


def read_density_matrix(path: str | Path) -> DensityMatrix:
    path = Path(path)
    try:
        rec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, source=str(path)) from None
    return DensityMatrix.from_record(rec)
