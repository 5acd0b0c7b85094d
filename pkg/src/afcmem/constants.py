"""Numerical tolerances shared by every module."""

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
PSD_FLOOR = -1e-9
# eigenvalues below this are an error in sqrt_psd, between it and 0 they are clamped
PSD_HARD_FLOOR = -1e-6
EIG_INPUT_TOL = 1e-8
JACOBI_REL_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
