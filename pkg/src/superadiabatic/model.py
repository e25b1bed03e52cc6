"""Two-level Hamiltonian with a pair-of-simple-poles coupling.

Time is measured in the natural scale where the eigenvalues of ``H(t)`` are
exactly +-1/2.  The mixing angle is ``theta(t) = 2 gamma arctan(t / t_c)``,
so the coupling ``theta'`` has simple poles at ``+-i t_c`` with residue
strength ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Projectors onto the adiabatic subspaces (in the adiabatic representation).
P_PLUS = np.array([[1.0, 0.0], [0.0, 0.0]])
P_MINUS = np.array([[0.0, 0.0], [0.0, 1.0]])
H0 = np.diag([0.5, -0.5])

X_MATRIX = np.array([[0.0, -1.0], [1.0, 0.0]])
W_MATRIX = np.eye(2)


class InvalidParameters(ValueError):
    """Raised when a parameter triple does not define a valid problem."""


@dataclass(frozen=True)
class ModelParams:
    """Residue strength ``gamma``, pole distance ``t_c`` and adiabatic
    parameter ``eps``."""

    gamma: float = 0.5
    t_c: float = 1.0
    eps: float = 0.1

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise InvalidParameters(f"gamma must be finite, got {self.gamma}")
        if not (self.t_c > 0 and math.isfinite(self.t_c)):
            raise InvalidParameters(f"t_c must be positive, got {self.t_c}")
        if not (self.eps > 0 and math.isfinite(self.eps)):
            raise InvalidParameters(f"eps must be positive, got {self.eps}")
        if self.t_c / self.eps < 3.0 - 1e-12:
            raise InvalidParameters(
                f"eps={self.eps} too large for t_c={self.t_c}: "
                "optimal truncation needs t_c/eps >= 3"
            )

    @property
    def ratio(self) -> float:
        """``t_c / eps``, the exponent of the leading exponential."""
        return self.t_c / self.eps

    @property
    def exp_small(self) -> float:
        """``exp(-t_c/eps)``."""
        return math.exp(-self.ratio)

    def with_eps(self, eps: float) -> "ModelParams":
        return ModelParams(self.gamma, self.t_c, eps)


def theta_prime(t, p: ModelParams):
    """Coupling ``theta'(t) = 2 gamma t_c / (t^2 + t_c^2)``."""
    t = np.asarray(t, dtype=float)
    out = 2.0 * p.gamma * p.t_c / (t * t + p.t_c * p.t_c)
    return out if out.ndim else float(out)


def theta(t, p: ModelParams):
    t = np.asarray(t, dtype=float)
    out = 2.0 * p.gamma * np.arctan(t / p.t_c)
    return out if out.ndim else float(out)


def delta(t, s) -> float:
    """Time-localisation weight ``arctan(t) - arctan(s)``."""
    return float(np.arctan(t) - np.arctan(s))


def hamiltonian(t: float, p: ModelParams) -> np.ndarray:
    th = theta(t, p)
    c, s = math.cos(th), math.sin(th)
    return 0.5 * np.array([[c, s], [s, -c]])


def adiabatic_frame(t: float, p: ModelParams) -> np.ndarray:
    """Orthogonal (and involutive) matrix ``U_0(t)`` diagonalising ``H(t)``.

    Its rows are the instantaneous eigenvectors ``v_0`` (eigenvalue +1/2)
    and ``w_0`` (eigenvalue -1/2).
    """
    half = 0.5 * theta(t, p)
    c, s = math.cos(half), math.sin(half)
    return np.array([[c, s], [s, -c]])


def adiabatic_projector(t: float, p: ModelParams) -> np.ndarray:
    """``pi_0 = U_0 P_+ U_0``, the spectral projector for eigenvalue +1/2."""
    return 0.5 * W_MATRIX + hamiltonian(t, p)


def basis_xyzw(t: float, p: ModelParams):
    """The real basis ``(X, Y, Z, W)`` adapted to the adiabatic frame.

    ``X`` and ``W`` are constant, ``Y = -2 H`` and ``Z = -Y'/theta'``.
    """
    th = theta(t, p)
    c, s = math.cos(th), math.sin(th)
    Y = -np.array([[c, s], [s, -c]])
    Z = np.array([[-s, c], [c, s]])
    return X_MATRIX.copy(), Y, Z, W_MATRIX.copy()


def f_power(t, m: int, p: ModelParams):
    """``f(t)^m`` with ``f(t) = i t_c / (t + i t_c)``, evaluated in log-polar form.

    ``f = 1 / (1 - i t/t_c)`` so ``|f|^m = (1 + t^2/t_c^2)^(-m/2)`` and
    ``arg f^m = m arctan(t/t_c)``.
    """
    if m < 1:
        raise ValueError("exponent must be >= 1")
    u = np.asarray(t, dtype=float) / p.t_c
    log_mod = -0.5 * m * np.log1p(u * u)
    phase = m * np.arctan(u)
    out = np.exp(log_mod) * (np.cos(phase) + 1j * np.sin(phase))
    return out if out.ndim else complex(out)


def f_powers(t, m_max: int, t_c: float):
    """``Re`` and ``Im`` of ``f^m`` for ``m = 0..m_max``.

    Returns two arrays of shape ``(m_max + 1,) + shape(t)``.
    """
    u = np.asarray(t, dtype=float) / t_c
    m = np.arange(m_max + 1).reshape((-1,) + (1,) * u.ndim)
    log_mod = -0.5 * m * np.log1p(u * u)
    phase = m * np.arctan(u)
    mod = np.exp(log_mod)
    return mod * np.cos(phase), mod * np.sin(phase)
