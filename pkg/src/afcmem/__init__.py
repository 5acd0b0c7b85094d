"""Simulation and analysis of entangled-photon storage in an atomic frequency comb memory."""

from afcmem.core import (
    DensityMatrix,
    MeasurementSetting,
    expectation,
    hermitian_eig,
    pauli,
    projector,
    sqrt_psd,
    tensor,
)
from afcmem.metrics import (
    concurrence,
    entanglement_of_formation,
    fidelity,
    metrics_report,
    purity,
    s_max,
)

__all__ = [
    "DensityMatrix",
    "MeasurementSetting",
    "concurrence",
    "entanglement_of_formation",
    "expectation",
    "fidelity",
    "hermitian_eig",
    "metrics_report",
    "pauli",
    "projector",
    "purity",
    "s_max",
    "sqrt_psd",
    "tensor",
]

__version__ = "0.1.0"
