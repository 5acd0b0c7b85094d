"""Maximum-likelihood two-qubit state reconstruction and Monte Carlo error bars.

The state is parametrized as rho = T^dagger T / tr(T^dagger T) with T lower
triangular (16 real numbers), so every parameter vector maps to a physical
state.

Two data models are available for probability tables:

``relative`` (default)
    Each tabulated value is a relative coincidence rate, value ~ N tr(rho Pa x Pb),
    with one free scale N shared by all entries. On the 16 settings
    {+x, +y, +z, -z} x {+x, +y, +z, -z} the projectors are informationally complete.

``conditional``
    Each value is the normalized ratio tr(rho Pa x Pb) / tr(rho Pa x I). These
    ratios never see the marginal of the 795 nm qubit, so the fit leaves a
    three-dimensional family of states undetermined; the Hessian diagnostics
    report it.

Raw coincidence counts are fitted with a Poisson likelihood,
mean = R t tr(rho Pa x Pb), one free rate R.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from afcmem.analyzer import CoincidenceRecord, read_counts_table
from afcmem.core import DensityMatrix, MeasurementSetting, joint_projector, normalized_ratio, pauli, projector, tensor
from afcmem.errors import DatasetError, ParameterError, ParseError
from afcmem.metrics import METRIC_NAMES, metric_values

PROBABILITY_HEADER = ("setting_a", "setting_b", "probability", "sigma")
SIGMA_FLOOR = 1e-6

_TRIL = np.tril_indices(4, -1)
_DIAG = np.diag_indices(4)
_PAULI4 = np.array([tensor(p, q) for p in (np.eye(2), pauli("x"), pauli("y"), pauli("z"))
                    for q in (np.eye(2), pauli("x"), pauli("y"), pauli("z"))])


class UnderdeterminedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class DatasetEntry:
    setting_a: MeasurementSetting
    setting_b: MeasurementSetting
    value: float
    sigma: float | None = None


@dataclass
class MeasurementDataset:
    entries: list[DatasetEntry]
    counts: list[CoincidenceRecord] | None = None

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.setting_a, e.setting_b)
            if key in seen:
                raise DatasetError(f"duplicate setting pair ({e.setting_a},{e.setting_b})")
            seen.add(key)
            if not (0.0 <= e.value <= 1.0) or not math.isfinite(e.value):
                raise DatasetError(f"probability for ({e.setting_a},{e.setting_b}) must be in [0, 1], got {e.value!r}")
            if e.sigma is not None and (e.sigma < 0 or not math.isfinite(e.sigma)):
                raise DatasetError(f"sigma for ({e.setting_a},{e.setting_b}) must be >= 0, got {e.sigma!r}")

    @classmethod
    def from_table(cls, rows: Iterable[tuple[str, str, float, float | None]]) -> "MeasurementDataset":
        return cls([DatasetEntry(MeasurementSetting.parse(a), MeasurementSetting.parse(b), float(v),
                                 None if s is None else float(s)) for a, b, v, s in rows])

    @property
    def has_sigmas(self) -> bool:
        return all(e.sigma is not None for e in self.entries)

    def settings(self) -> list[tuple[MeasurementSetting, MeasurementSetting]]:
        return [(e.setting_a, e.setting_b) for e in self.entries]

    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.entries], dtype=float)

    def sigmas(self) -> np.ndarray:
        return np.array([np.nan if e.sigma is None else e.sigma for e in self.entries], dtype=float)

    def as_dict(self) -> dict:
        return {(e.setting_a, e.setting_b): e.value for e in self.entries}

    def restrict(self, settings: Sequence[tuple[MeasurementSetting, MeasurementSetting]]) -> "MeasurementDataset":
        """Sub-dataset on ``settings`` (probability entries only; raw counts are dropped)."""
        by_key = {(e.setting_a, e.setting_b): e for e in self.entries}
        missing = [f"({a},{b})" for a, b in settings if (a, b) not in by_key]
        if missing:
            raise DatasetError("dataset is missing settings: " + ", ".join(missing))
        return MeasurementDataset([by_key[s] for s in settings])

    def with_values(self, values: np.ndarray) -> "MeasurementDataset":
        return MeasurementDataset([DatasetEntry(e.setting_a, e.setting_b, float(v), e.sigma)
                                   for e, v in zip(self.entries, values)])

    def to_table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PROBABILITY_HEADER)
        for e in self.entries:
            w.writerow([str(e.setting_a), str(e.setting_b), repr(e.value), "" if e.sigma is None else repr(e.sigma)])
        return buf.getvalue()


def dataset_from_counts(records: Sequence[CoincidenceRecord]) -> MeasurementDataset:
    """Normalized probabilities C(a,b)/(C(a,b)+C(a,-b)) with binomial sigmas.

    An entry is produced for every record whose partner (a, -b) is also present.
    """
    by_key = {(r.setting_a, r.setting_b): r for r in records}
    if len(by_key) != len(records):
        raise DatasetError("duplicate setting pairs in counts")
    missing = [f"({r.setting_a},{-r.setting_b})" for r in records if (r.setting_a, -r.setting_b) not in by_key]
    if missing:
        raise DatasetError("missing partner settings: " + ", ".join(missing))
    entries = []
    for r in records:
        c = r.counts
        c_opp = by_key[(r.setting_a, -r.setting_b)].counts
        n = c + c_opp
        if n == 0:
            raise DatasetError(f"zero total counts for ({r.setting_a},{r.setting_b}) and its partner")
        p = normalized_ratio(c, c_opp)
        entries.append(DatasetEntry(r.setting_a, r.setting_b, p, math.sqrt(p * (1 - p) / n)))
    return MeasurementDataset(entries, counts=list(records))


def read_dataset(text: str, source: str | None = None) -> MeasurementDataset:
    """Parse a counts table or a probability table, chosen by its header."""
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    header = tuple(c.strip() for c in first.split(","))
    if header == ("setting_a", "setting_b", "counts", "integration_s"):
        return dataset_from_counts(read_counts_table(text, source=source))
    if header != PROBABILITY_HEADER:
        raise ParseError(
            "unrecognized header; expected setting_a,setting_b,probability,sigma "
            "or setting_a,setting_b,counts,integration_s", line=1, source=source)
    entries = []
    seen = set()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if lineno == 1 or not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", line=lineno, source=source)
        try:
            a = MeasurementSetting.parse(row[0])
            b = MeasurementSetting.parse(row[1])
        except ParameterError as exc:
            raise ParseError(str(exc), line=lineno, source=source) from None
        try:
            value = float(row[2])
            sigma = float(row[3]) if row[3].strip() else None
        except ValueError:
            raise ParseError("probability and sigma must be numbers", line=lineno, source=source) from None
        if (a, b) in seen:
            raise ParseError(f"duplicate setting pair ({a},{b})", line=lineno, source=source)
        seen.add((a, b))
        try:
            entries.append(DatasetEntry(a, b, value, sigma))
            MeasurementDataset(entries[-1:])
        except DatasetError as exc:
            raise ParseError(str(exc), line=lineno, source=source) from None
    return MeasurementDataset(entries)


def load_dataset(path: str | Path) -> MeasurementDataset:
    return read_dataset(Path(path).read_text(), source=str(path))


def _t_matrix(theta: np.ndarray) -> np.ndarray:
    t = np.zeros((4, 4), dtype=complex)
    t[_DIAG] = theta[:4]
    t[_TRIL] = theta[4:10] + 1j * theta[10:16]
    return t


def physical_parametrization(theta) -> DensityMatrix:
    """rho = T^dagger T / tr(T^dagger T) from 16 real numbers (4 diagonal, 6 real, 6 imaginary)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (16,):
        raise ParameterError(f"theta must have 16 entries, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ParameterError("theta must be finite")
    t = _t_matrix(theta)
    a = t.conj().T @ t
    s = np.trace(a).real
    if s <= 0:
        raise ParameterError("theta is all zero; the state is undefined")
    return DensityMatrix.from_matrix(a / s)


def theta_from_state(rho: DensityMatrix | np.ndarray, mix: float = 1e-3) -> np.ndarray:
    """A parameter vector for (1-mix) rho + mix I/4 (the mixing keeps T invertible)."""
    m = np.asarray(rho, dtype=complex)
    m = (1 - mix) * m + mix * np.eye(4) / 4
    j = np.eye(4)[::-1]
    upper = j @ np.linalg.cholesky(j @ m @ j) @ j
    t = upper.conj().T
    # make the diagonal real and positive
    ph = np.diag(t) / np.abs(np.diag(t))
    t = np.diag(ph.conj()) @ t
    theta = np.concatenate([np.diag(t).real, t[_TRIL].real, t[_TRIL].imag])
    return theta / np.linalg.norm(theta)


@dataclass
class TomographyOptions:
    mode: str = "auto"  # auto | probabilities | counts
    model: str = "relative"  # relative | conditional
    starts: int = 16
    seed: int = 0
    max_iterations: int = 2000
    linear_inversion_start: bool = True


@dataclass
class TomographyResult:
    rho_hat: DensityMatrix
    objective_value: float
    iterations: int
    converged: bool
    residuals: list[float]
    start_objectives: list[float] = field(default_factory=list)
    gradient_norm: float = float("nan")
    scale: float = float("nan")
    hessian_condition: float = float("nan")
    hessian_rank: int = 0
    n_parameters: int = 0
    mode: str = "probabilities"
    model: str = "relative"
    theta: np.ndarray | None = None
    warnings: list[str] = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "objective": self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm": self.gradient_norm,
            "scale": self.scale,
            "residuals": list(self.residuals),
            "start_objectives": list(self.start_objectives),
            "hessian_condition": self.hessian_condition,
            "hessian_rank": self.hessian_rank,
            "n_parameters": self.n_parameters,
            "mode": self.mode,
            "model": self.model,
            "warnings": list(self.warnings),
        }


class _Problem:
    """Objective and gradient for one dataset, with the overall scale profiled out."""

    def __init__(self, kind: str, ops: np.ndarray, data: np.ndarray, weights: np.ndarray,
                 marg: np.ndarray | None = None, exposure: np.ndarray | None = None):
        self.kind = kind  # relative | conditional | poisson
        self.ops = ops
        self.ops_t = np.ascontiguousarray(np.transpose(ops, (0, 2, 1)))
        self.data = data
        self.w = weights
        self.marg = marg
        self.exposure = exposure

    def probs(self, a: np.ndarray) -> np.ndarray:
        return np.einsum("kij,ij->k", self.ops_t, a).real

    def scale(self, p: np.ndarray) -> float:
        if self.kind == "relative":
            den = float(np.sum(self.w * p * p))
            return float(np.sum(self.w * p * self.data)) / den if den > 0 else 1.0
        if self.kind == "poisson":
            return float(self.data.sum()) / float(np.sum(self.exposure * p))
        return 1.0

    def model(self, rho: np.ndarray) -> tuple[np.ndarray, float]:
        p = self.probs(rho)
        if self.kind == "conditional":
            return p / np.einsum("kij,ij->k", np.transpose(self.marg, (0, 2, 1)), rho).real, 1.0
        s = self.scale(p)
        if self.kind == "poisson":
            return s * self.exposure * p, s
        return s * p, s

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        t = _t_matrix(theta)
        a = t.conj().T @ t
        tr = np.trace(a).real
        p = self.probs(a) / tr
        if self.kind == "relative":
            s = self.scale(p)
            r = s * p - self.data
            f = float(np.sum(self.w * r * r))
            gp = 2 * self.w * r * s  # d f / d p_k at fixed scale
            g_mat = np.einsum("k,kij->ij", gp, self.ops) - np.sum(gp * p) * np.eye(4)
            g_mat /= tr
        elif self.kind == "poisson":
            s = self.scale(p)
            mu = np.maximum(s * self.exposure * p, 1e-300)
            n = self.data
            f = float(2 * np.sum(mu - n + np.where(n > 0, n * np.log(np.where(n > 0, n, 1) / mu), 0.0)))
            gp = 2 * (s * self.exposure - n / np.maximum(p, 1e-300))
            g_mat = np.einsum("k,kij->ij", gp, self.ops) - np.sum(gp * p) * np.eye(4)
            g_mat /= tr
        else:
            pm = np.einsum("kij,ij->k", np.transpose(self.marg, (0, 2, 1)), a).real
            q = p * tr / pm
            r = q - self.data
            f = float(np.sum(self.w * r * r))
            gq = 2 * self.w * r
            coef = gq / pm
            g_mat = np.einsum("k,kij->ij", coef, self.ops) - np.einsum("k,kij->ij", coef * q, self.marg)
        tg = t @ g_mat
        grad = np.concatenate([2 * np.diag(tg).real, 2 * tg[_TRIL].real, 2 * tg[_TRIL].imag])
        return f, grad

    def _theta_jacobian(self, t: np.ndarray, ops: np.ndarray) -> np.ndarray:
        tg = np.matmul(t, ops)
        return 2 * np.concatenate([np.diagonal(tg, axis1=1, axis2=2).real,
                                   tg[:, _TRIL[0], _TRIL[1]].real, tg[:, _TRIL[0], _TRIL[1]].imag], axis=1)

    def residuals(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Weighted residuals and Jacobian for the unnormalized form N tr(rho P) = tr(T^dagger T P).

        The norm of theta carries the scale, so this has no flat direction in
        the relative and Poisson models. Poisson residuals are signed deviance
        residuals, whose squares sum to the deviance.
        """
        t = _t_matrix(theta)
        a = t.conj().T @ t
        p = self.probs(a)
        jp = self._theta_jacobian(t, self.ops)
        if self.kind == "poisson":
            return self._deviance_residuals(p, jp)
        sw = np.sqrt(self.w)
        if self.kind == "relative":
            return sw * (p - self.data), sw[:, None] * jp
        pm = np.einsum("kij,ij->k", np.transpose(self.marg, (0, 2, 1)), a).real
        jm = self._theta_jacobian(t, self.marg)
        q = p / pm
        return sw * (q - self.data), sw[:, None] * (jp - q[:, None] * jm) / pm[:, None]

    def _deviance_residuals(self, p: np.ndarray, jp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = self.data
        mu = np.maximum(self.exposure * p, 1e-300)
        dev = 2 * (mu - n + np.where(n > 0, n * np.log(np.where(n > 0, n, 1) / mu), 0.0))
        r = np.sign(mu - n) * np.sqrt(np.maximum(dev, 0.0))
        # dr/dmu = (1 - n/mu) / r, which tends to 1/sqrt(mu) as mu -> n
        small = np.abs(r) < 1e-6
        drdmu = np.where(small, 1.0 / np.sqrt(mu), (1 - n / mu) / np.where(small, 1.0, r))
        return r, (drdmu * self.exposure)[:, None] * jp

    def jacobian_physical(self, rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Jacobian of the model w.r.t. 15 Pauli coordinates (plus the scale) and the matching weights."""
        p = self.probs(rho)
        tp = np.einsum("kij,mji->km", self.ops, _PAULI4[1:]).real / 4
        if self.kind == "conditional":
            pm = np.einsum("kij,ji->k", self.marg, rho).real
            q = p / pm
            tm = np.einsum("kij,mji->km", self.marg, _PAULI4[1:]).real / 4
            jac = (tp - q[:, None] * tm) / pm[:, None]
            return jac, self.w
        s = self.scale(p)
        if self.kind == "poisson":
            jac = np.column_stack([s * self.exposure[:, None] * tp, self.exposure * p])
            return jac, 1.0 / np.maximum(s * self.exposure * p, 1e-300)
        return np.column_stack([s * tp, p]), self.w


def _weights(sigmas: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(sigmas)):
        return np.ones_like(sigmas)
    return 1.0 / np.maximum(sigmas, SIGMA_FLOOR) ** 2


def _build_problem(dataset: MeasurementDataset, options: TomographyOptions) -> _Problem:
    mode = options.mode
    if mode == "auto":
        mode = "counts" if dataset.counts else "probabilities"
    if mode == "counts":
        if not dataset.counts:
            raise DatasetError("counts mode needs raw coincidence counts")
        recs = dataset.counts
        ops = np.array([joint_projector(r.setting_a, r.setting_b) for r in recs])
        data = np.array([r.counts for r in recs], dtype=float)
        exposure = np.array([r.integration_time for r in recs], dtype=float)
        return _Problem("poisson", ops, data, np.ones_like(data), exposure=exposure)
    if mode != "probabilities":
        raise ParameterError(f"unknown tomography mode {options.mode!r}")
    ops = np.array([joint_projector(a, b) for a, b in dataset.settings()])
    w = _weights(dataset.sigmas())
    if options.model == "relative":
        return _Problem("relative", ops, dataset.values(), w)
    if options.model == "conditional":
        marg = np.array([tensor(projector(a), np.eye(2)) for a, _ in dataset.settings()])
        return _Problem("conditional", ops, dataset.values(), w, marg=marg)
    raise ParameterError(f"unknown tomography model {options.model!r}")


def linear_inversion(problem: _Problem) -> np.ndarray:
    """Unconstrained least-squares state (may be unphysical), as a Hermitian matrix."""
    design = np.einsum("kij,mji->km", problem.ops, _PAULI4).real / 4
    if problem.kind == "poisson":
        target = problem.data / problem.exposure
        w = problem.exposure / np.maximum(target, 1.0 / problem.exposure)
    else:
        target = problem.data
        w = problem.w
    sw = np.sqrt(w)
    u, *_ = np.linalg.lstsq(design * sw[:, None], target * sw, rcond=None)
    if not u[0] > 0:
        return np.eye(4, dtype=complex) / 4
    r = u / u[0]
    return np.einsum("m,mij->ij", r, _PAULI4) / 4


def project_to_physical(m: np.ndarray) -> DensityMatrix:
    """Closest-eigenvalue projection: clip negative eigenvalues and renormalize."""
    m = (m + m.conj().T) / 2
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return DensityMatrix.maximally_mixed()
    return DensityMatrix.from_matrix((v * (w / w.sum())) @ v.conj().T)


def _fd_hessian(problem: _Problem, theta: np.ndarray, h: float = 1e-6) -> np.ndarray:
    cols = [(problem.value_and_grad(theta + h * e)[1] - problem.value_and_grad(theta - h * e)[1]) / (2 * h)
            for e in np.eye(len(theta))]
    hess = np.array(cols)
    return (hess + hess.T) / 2


def _lsq(problem: _Problem, theta0: np.ndarray, max_iter: int):
    """Trust-region least squares on the unnormalized residual form, started at the profiled scale.

    MINPACK's ``lm`` is avoided on purpose: in the installed SciPy its result
    depends on leftover heap contents, which breaks bitwise reproducibility.
    """
    theta0 = np.asarray(theta0, dtype=float)
    theta0 = theta0 / np.linalg.norm(theta0)
    if problem.kind != "conditional":
        a = _t_matrix(theta0).conj().T @ _t_matrix(theta0)
        theta0 = theta0 * math.sqrt(max(problem.scale(problem.probs(a)), 1e-300))
    return least_squares(lambda x: problem.residuals(x)[0], theta0, jac=lambda x: problem.residuals(x)[1],
                         method="trf", xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=max_iter)


def _local_fit(problem: _Problem, theta0: np.ndarray, max_iter: int):
    res = _lsq(problem, theta0, max_iter)
    theta = res.x / np.linalg.norm(res.x)
    f, g = problem.value_and_grad(theta)
    # status 3: the relative step fell below xtol
    last_step = 1e-12 if res.status == 3 else float("inf")
    return theta, f, float(np.linalg.norm(g)), int(res.nfev), last_step


def _polish(problem: _Problem, theta: np.ndarray, f: float, gnorm: float, steps: int = 8):
    """Newton steps on a finite-difference Hessian, for when BFGS stalls on round-off in f."""
    last_step = float("inf")
    for _ in range(steps):
        if gnorm < 1e-10:
            break
        _, g = problem.value_and_grad(theta)
        hess = _fd_hessian(problem, theta)
        step, *_ = np.linalg.lstsq(hess, -g, rcond=1e-10)
        cand = theta + step
        cand /= np.linalg.norm(cand)
        f_new, g_new = problem.value_and_grad(cand)
        gn_new = float(np.linalg.norm(g_new))
        # f carries cancellation noise well above 1e-12 relative in counts mode
        if gn_new >= gnorm or f_new > f + 1e-9 * (1 + abs(f)):
            break
        last_step = float(np.linalg.norm(cand - theta))
        theta, f, gnorm = cand, f_new, gn_new
    return theta, f, gnorm, last_step


def _hessian_diagnostics(problem: _Problem, rho: np.ndarray) -> tuple[float, int, int]:
    jac, w = problem.jacobian_physical(rho)
    fisher = jac.T @ (w[:, None] * jac)
    ev = np.linalg.eigvalsh((fisher + fisher.T) / 2)
    top = float(ev.max())
    rank = int(np.sum(ev > 1e-10 * top)) if top > 0 else 0
    # flat directions show up as a huge (round-off limited) ratio
    cond = float(top / max(abs(ev.min()), np.finfo(float).tiny)) if top > 0 else float("inf")
    return cond, rank, jac.shape[1]


def _finish(problem: _Problem, theta: np.ndarray, f: float, gnorm: float, iters: int, last_step: float,
            starts: list[float], max_iter: int, options: TomographyOptions, mode: str) -> TomographyResult:
    rho = physical_parametrization(theta)
    m, s = problem.model(rho.mat)
    residuals = (m - problem.data).tolist()
    cond, rank, npar = _hessian_diagnostics(problem, rho.mat)
    notes = []
    if rank < npar:
        notes.append(
            f"under-determined reconstruction: data constrain {rank} of {npar} parameters "
            f"(Hessian condition number {cond:.3g})"
        )
    return TomographyResult(
        rho_hat=rho,
        objective_value=f,
        iterations=iters,
        converged=bool(gnorm < 1e-8 or last_step < 1e-10),
        residuals=residuals,
        start_objectives=starts,
        gradient_norm=gnorm,
        scale=s,
        hessian_condition=cond,
        hessian_rank=rank,
        n_parameters=npar,
        mode=mode,
        model="relative" if problem.kind == "poisson" else problem.kind,
        theta=theta,
        warnings=notes,
    )


def mle_reconstruct(dataset: MeasurementDataset, options: TomographyOptions | None = None,
                    *, initial_theta: np.ndarray | None = None) -> TomographyResult:
    """Multi-start maximum-likelihood reconstruction.

    Starts are tried in a fixed order: ``initial_theta`` if given, the
    linear-inversion estimate made physical, then ``options.starts`` random
    parameter vectors from ``numpy.random.default_rng(options.seed)``. The
    lowest objective wins; ties go to the earlier start.
    """
    options = options or TomographyOptions()
    problem = _build_problem(dataset, options)
    mode = "counts" if problem.kind == "poisson" else "probabilities"

    starts = []
    if initial_theta is not None:
        starts.append(np.asarray(initial_theta, dtype=float))
    if options.linear_inversion_start:
        starts.append(theta_from_state(project_to_physical(linear_inversion(problem)), mix=0.05))
    rng = np.random.default_rng(options.seed)
    starts += [rng.standard_normal(16) for _ in range(options.starts)]
    if not starts:
        raise ParameterError("no starting points requested")

    best = None
    objectives = []
    for theta0 in starts:
        fit = _local_fit(problem, theta0, options.max_iterations)
        f = fit[1]
        objectives.append(f)
        if best is None or f < best[1] - 1e-12 * (1 + abs(best[1])):
            best = fit
    theta, f, gnorm, iters, last_step = best
    theta, f, gnorm, polish_step = _polish(problem, theta, f, gnorm)
    best = (theta, f, gnorm, iters, min(last_step, polish_step))
    result = _finish(problem, *best, objectives, options.max_iterations, options, mode)
    for note in result.warnings:
        warnings.warn(note, UnderdeterminedWarning, stacklevel=2)
    return result


@dataclass
class MonteCarloReport:
    mean: dict[str, float]
    sigma: dict[str, float]
    n_resamples: int
    seed: int
    states: list[DensityMatrix] = field(default_factory=list, repr=False)
    samples: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def to_record(self) -> dict:
        return {"mean": self.mean, "sigma": self.sigma, "n_resamples": self.n_resamples, "seed": self.seed}


def monte_carlo_uncertainty(
    dataset: MeasurementDataset,
    n_resamples: int,
    seed: int,
    metrics: Sequence[str] = METRIC_NAMES,
    *,
    reference: DensityMatrix | None = None,
    options: TomographyOptions | None = None,
    nominal: TomographyResult | None = None,
) -> MonteCarloReport:
    """Resample the data, refit each resample and report mean and one-sigma of each metric.

    Probability entries are redrawn from gaussians of their sigma, clipped to
    [0, 1]; raw counts (counts mode) are redrawn from Poisson distributions.
    Each refit starts from the nominal optimum. Resample i uses
    ``SeedSequence(seed, spawn_key=(i,))`` so the result does not depend on
    evaluation order.
    """
    if n_resamples < 100:
        raise ParameterError("n_resamples must be >= 100")
    unknown = set(metrics) - set(METRIC_NAMES)
    if unknown:
        raise ParameterError(f"unknown metrics {sorted(unknown)}")
    options = options or TomographyOptions()
    if reference is None:
        from afcmem.source import bell_phi_plus

        reference = bell_phi_plus()
    problem = _build_problem(dataset, options)
    counts_mode = problem.kind == "poisson"
    if not counts_mode:
        sig = dataset.sigmas()
        if np.any(np.isnan(sig)) or np.any(sig < 0):
            raise DatasetError("Monte Carlo resampling needs a non-negative sigma on every entry")
    if nominal is None:
        nominal = mle_reconstruct(dataset, options)
    theta0 = nominal.theta
    base = problem.data.copy()

    samples = {k: [] for k in metrics}
    states = []
    for i in range(n_resamples):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(i,)))
        if counts_mode:
            problem.data = rng.poisson(base).astype(float)
        else:
            problem.data = np.clip(base + sig * rng.standard_normal(len(base)), 0.0, 1.0)
        res = _lsq(problem, theta0, options.max_iterations)
        theta = res.x / np.linalg.norm(res.x)
        rho = physical_parametrization(theta)
        states.append(rho)
        vals = metric_values(rho, reference)
        for k in metrics:
            samples[k].append(vals[k])
    problem.data = base
    mean = {k: float(np.mean(v)) for k, v in samples.items()}
    sigma = {k: float(np.std(v, ddof=1)) for k, v in samples.items()}
    return MonteCarloReport(mean, sigma, n_resamples, int(seed), states, samples)


def exact_probabilities(rho: DensityMatrix, settings) -> MeasurementDataset:
    """Born probabilities tr(rho Pa x Pb) as a noiseless ``relative`` dataset."""
    return MeasurementDataset([
        DatasetEntry(a, b, float(np.real(np.trace(rho.mat @ joint_projector(a, b)))), None) for a, b in settings
    ])
