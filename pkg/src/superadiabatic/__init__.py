"""Superadiabatic frames, optimal truncation and exponentially small
transitions for a two-level Hamiltonian with a pair of complex poles."""

from .coeffs import CoefficientTable, FSeries, a0_limit, build_coefficients
from .frames import (
    FrameEvaluation,
    SuperadiabaticFrame,
    TruncationChoice,
    choose_truncation,
    coupling_asymptotic,
    coupling_exact,
    error_envelope,
    frame_at,
)
from .model import ModelParams, theta, theta_prime

__all__ = [
    "CoefficientTable",
    "FSeries",
    "FrameEvaluation",
    "ModelParams",
    "SuperadiabaticFrame",
    "TruncationChoice",
    "a0_limit",
    "build_coefficients",
    "choose_truncation",
    "coupling_asymptotic",
    "coupling_exact",
    "error_envelope",
    "frame_at",
    "theta",
    "theta_prime",
]
