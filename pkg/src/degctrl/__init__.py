"""Null controllability toolkit for coupled degenerate parabolic systems."""

__version__ = "0.1.0"

from .model import (DiffusionCoefficient, RunSettings, SystemSpec, load_config, make_system,
                    validate_diffusion)
from .operator import assemble, assemble_operator, hardy_poincare_constant
from .spectral import bessel_oracle, compute_spectrum
from .kalman import dichotomy_scan, kernel_witness, adjoint_mode_trajectory
from .control import (estimate_observability_constant, simulate_forward, synthesize_null_control,
                      verify_null_control)
from .carleman import empirical_carleman_ratio, select_parameters, weight_psi_phi

__all__ = [
    "DiffusionCoefficient", "RunSettings", "SystemSpec", "load_config", "make_system",
    "validate_diffusion", "assemble", "assemble_operator", "hardy_poincare_constant",
    "bessel_oracle", "compute_spectrum", "dichotomy_scan", "kernel_witness",
    "adjoint_mode_trajectory", "estimate_observability_constant", "simulate_forward",
    "synthesize_null_control", "verify_null_control", "empirical_carleman_ratio",
    "select_parameters", "weight_psi_phi",
]
