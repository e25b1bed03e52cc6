"""Coefficient recursion for the superadiabatic projections.

Every component ``x_n, y_n, z_n`` of ``pi_n = x_n X + y_n Y + z_n Z`` is a
finite combination of ``Re(f^m)`` and ``Im(f^m)`` with
``f(t) = i t_c / (t + i t_c)``.  This module builds the scalar coefficient
table ``a_j^(n), b_j^(n)``, turns it into closed-form series and provides two
independent oracles for those series:

* :func:`oracle_exact_step` runs the differential equations
  ``x_n' = i z_{n+1}``, ``y_n' = -theta' z_n``, ``z_n' = i x_{n+1} + theta' y_n``
  exactly inside the f-power algebra;
* :func:`oracle_matrix_step` runs the 2x2 matrix recursion for ``pi_n``
  numerically, without using the f-power representation at all.

Sign conventions: ``pi_1 = x_1 X`` with ``x_1 = -i theta'/2`` (forced by the
matrix recursion) and ``f' = i f^2 / t_c``.  With these, ``x_n`` for odd ``n``
is ``-i`` times a positive multiple of ``Re(f^n)`` at leading order and
``z_n`` carries a ``+`` sign in front of its ``Im`` expansion.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, basis_xyzw, theta, theta_prime

__all__ = [
    "CoefficientTable",
    "FSeries",
    "MalformedSeries",
    "a0_limit",
    "build_coefficients",
    "decompose_xyz",
    "oracle_exact_series",
    "oracle_exact_start",
    "oracle_exact_step",
    "oracle_matrix_step",
    "xn_series",
    "yn_series",
    "zn_series",
]


class MalformedSeries(ValueError):
    """An f-power series cannot be integrated inside the basis."""


# ---------------------------------------------------------------------------
# coefficient table


@dataclass(frozen=True)
class CoefficientTable:
    n_max: int
    gamma: float
    a: dict = field(repr=False)
    b: dict = field(repr=False)

    def rows(self):
        """``(n, j, a_j^(n), b_j^(n))`` in ascending ``n`` then ``j``."""
        for n in range(2, self.n_max + 1, 2):
            for j, (aj, bj) in enumerate(zip(self.a[n], self.b[n])):
                yield n, j, float(aj), float(bj)

    def to_csv(self, fh=None) -> str | None:
        """Write columns ``n, j, a, b`` with 17 significant digits."""
        own = fh is None
        fh = io.StringIO() if own else fh
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "j", "a", "b"])
        for n, j, aj, bj in self.rows():
            w.writerow([n, j, f"{aj:.17g}", f"{bj:.17g}"])
        return fh.getvalue() if own else None


def build_coefficients(n_max: int, gamma: float) -> CoefficientTable:
    """Run the two-step recursion for ``a_j^(n)`` up to even ``n_max``.

    Uses prefix sums so each new row costs O(n).
    """
    if n_max < 2 or n_max % 2:
        raise ValueError(f"n_max must be an even integer >= 2, got {n_max}")
    g2 = gamma * gamma
    a = {2: np.array([1.0, 0.0])}
    b = {}
    for n in range(2, n_max + 1, 2):
        an = a[n]
        j = np.arange(n)
        bn = np.cumsum(an) / (n - j)
        b[n] = bn
        if n + 2 > n_max:
            break
        nxt = np.empty(n + 2)
        nxt[:n] = (n + 1 - j) / ((n + 1) * n) * ((n - j) * an - g2 * np.cumsum(bn))
        nxt[n] = nxt[n - 1]
        nxt[n + 1] = 0.0
        a[n + 2] = nxt
    return CoefficientTable(n_max=n_max, gamma=float(gamma), a=a, b=b)


def a0_limit(gamma: float) -> float:
    """``sin(gamma pi/2) / (gamma pi/2)``, the large-n limit of ``a_0^(n)``."""
    x = 0.5 * math.pi * gamma
    if x == 0.0:
        return 1.0
    return math.sin(x) / x


# ---------------------------------------------------------------------------
# f-power series


@dataclass(frozen=True)
class FSeries:
    """``exp(scale_log) * sum_m [re[m] Re(f^m) + im[m] Im(f^m)]``.

    Index 0 of ``re``/``im`` is unused and always zero.  ``scale_log`` keeps
    factorial prefactors out of the coefficients.
    """

    re: np.ndarray
    im: np.ndarray
    t_c: float
    scale_log: float = 0.0

    def __post_init__(self):
        re = np.asarray(self.re, dtype=float)
        im = np.asarray(self.im, dtype=float)
        size = max(len(re), len(im), 2)
        object.__setattr__(self, "re", np.pad(re, (0, size - len(re))))
        object.__setattr__(self, "im", np.pad(im, (0, size - len(im))))
        if self.re[0] != 0.0 or self.im[0] != 0.0:
            raise MalformedSeries("m=0 coefficient must vanish")

    @classmethod
    def zero(cls, t_c: float) -> "FSeries":
        return cls(np.zeros(2), np.zeros(2), t_c)

    @property
    def max_power(self) -> int:
        return len(self.re) - 1

    @property
    def terms(self):
        """Nonzero ``(m, re_coeff, im_coeff)`` triples, scale folded in."""
        s = math.exp(self.scale_log)
        return [
            (m, s * r, s * i)
            for m, (r, i) in enumerate(zip(self.re, self.im))
            if m and (r or i)
        ]

    def normalized(self) -> "FSeries":
        s = math.exp(self.scale_log)
        return FSeries(self.re * s, self.im * s, self.t_c)

    def __call__(self, t, extra_log: float = 0.0):
        """Evaluate at ``t``; ``extra_log`` is added to ``scale_log`` first."""
        from .model import f_powers

        pre, pim = f_powers(t, self.max_power, self.t_c)
        val = np.tensordot(self.re, pre, axes=1) + np.tensordot(self.im, pim, axes=1)
        val = val * math.exp(self.scale_log + extra_log)
        return val if np.ndim(val) else float(val)

    def _like(self, re, im):
        return FSeries(re, im, self.t_c, self.scale_log)

    def _aligned(self, other: "FSeries"):
        if not math.isclose(self.t_c, other.t_c):
            raise ValueError("series built for different t_c")
        size = max(len(self.re), len(other.re))
        ds = math.exp(self.scale_log - other.scale_log) if other.scale_log else None
        a = self.normalized() if ds is None and self.scale_log else self
        b = other
        if ds is not None:
            # express both in other's scale
            a = FSeries(self.re * ds, self.im * ds, self.t_c, other.scale_log)
        pad = lambda v: np.pad(v, (0, size - len(v)))  # noqa: E731
        return a, b, pad

    def __add__(self, other: "FSeries") -> "FSeries":
        a, b, pad = self._aligned(other)
        return FSeries(pad(a.re) + pad(b.re), pad(a.im) + pad(b.im), self.t_c, b.scale_log)

    def __neg__(self) -> "FSeries":
        return self._like(-self.re, -self.im)

    def __sub__(self, other: "FSeries") -> "FSeries":
        return self + (-other)

    def scaled(self, factor: float) -> "FSeries":
        return self._like(self.re * factor, self.im * factor)

    def derivative(self) -> "FSeries":
        """Exact ``d/dt`` using ``Re(f^m)' = -(m/t_c) Im(f^{m+1})`` and
        ``Im(f^m)' = (m/t_c) Re(f^{m+1})``."""
        m = np.arange(len(self.re))
        re = np.zeros(len(self.re) + 1)
        im = np.zeros(len(self.re) + 1)
        re[1:] = m * self.im / self.t_c
        im[1:] = -m * self.re / self.t_c
        return self._like(re, im)

    def antiderivative(self) -> "FSeries":
        """Primitive vanishing at ``t = -inf`` (and ``+inf``).

        ``Re(f)`` has no primitive inside the basis, so an ``m=1`` term is an
        error.
        """
        if self.re[1] != 0.0 or self.im[1] != 0.0:
            raise MalformedSeries("cannot integrate an m=1 term within the f-basis")
        size = len(self.re) - 1
        re = np.zeros(size)
        im = np.zeros(size)
        k = np.arange(1, size)  # target power k from source power k+1
        im[1:] = self.t_c / k * self.re[2:]
        re[1:] = -self.t_c / k * self.im[2:]
        return self._like(re, im)

    def times_theta_prime(self, gamma: float) -> "FSeries":
        """Multiply by ``theta' = (2 gamma / t_c) Re(f)`` via ``f fbar = (f + fbar)/2``."""
        size = len(self.re) + 1
        re = np.zeros(size)
        im = np.zeros(size)
        for m in range(1, len(self.re)):
            cr, ci = self.re[m], self.im[m]
            if not (cr or ci):
                continue
            w = 2.0 ** -np.arange(m)
            powers = m + 1 - np.arange(m)
            re[powers] += cr * w
            im[powers] += ci * w
            re[1] += cr * 2.0 ** (1 - m)
        k = gamma / self.t_c
        return self._like(re * k, im * k)

    def allclose(self, other: "FSeries", rtol: float = 1e-12) -> bool:
        return self.max_rel_diff(other) <= rtol

    def max_rel_diff(self, other: "FSeries") -> float:
        """Largest coefficient difference relative to the largest coefficient."""
        a, b = self.normalized(), other.normalized()
        size = max(len(a.re), len(b.re))
        pad = lambda v: np.pad(v, (0, size - len(v)))  # noqa: E731
        diff = np.concatenate([pad(a.re) - pad(b.re), pad(a.im) - pad(b.im)])
        ref = np.concatenate([pad(a.re), pad(a.im), pad(b.re), pad(b.im)])
        scale = np.max(np.abs(ref))
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(diff)) / scale)


def _check_table(n: int, table: CoefficientTable):
    if n > table.n_max:
        raise ValueError(f"order {n} exceeds table cap {table.n_max}")


def _prefactor_log(n: int, t_c: float) -> float:
    return math.lgamma(n) - n * math.log(t_c)


def zn_series(n: int, table: CoefficientTable, p: ModelParams) -> FSeries:
    """``z_n = gamma (n-1)!/t_c^n sum_j 2^-j a_j^(n) Im(f^{n-j})`` (even ``n``)."""
    if n < 2 or n % 2:
        raise ValueError(f"z_n closed form needs even n >= 2, got {n}")
    _check_table(n, table)
    j = np.arange(n)
    im = np.zeros(n + 1)
    im[n - j] = p.gamma * 2.0**-j * table.a[n]
    return FSeries(np.zeros(n + 1), im, p.t_c, _prefactor_log(n, p.t_c))


def yn_series(n: int, table: CoefficientTable, p: ModelParams) -> FSeries:
    """``y_n = gamma^2 (n-1)!/t_c^n sum_j 2^-j b_j^(n) Re(f^{n-j})`` (even ``n``)."""
    if n < 2 or n % 2:
        raise ValueError(f"y_n closed form needs even n >= 2, got {n}")
    _check_table(n, table)
    j = np.arange(n)
    re = np.zeros(n + 1)
    re[n - j] = p.gamma**2 * 2.0**-j * table.b[n]
    return FSeries(re, np.zeros(n + 1), p.t_c, _prefactor_log(n, p.t_c))


def xn_series(n: int, table: CoefficientTable, p: ModelParams) -> FSeries:
    """Real series ``S`` with ``x_n = i S`` for odd ``n``.

    ``S = -gamma (n-1)!/t_c^n sum_j 2^-j n/(n-j) a_j^(n+1) Re(f^{n-j})``.
    """
    if n < 1 or n % 2 == 0:
        raise ValueError(f"x_n closed form needs odd n, got {n}")
    _check_table(n + 1, table)
    j = np.arange(n)
    re = np.zeros(n + 1)
    re[n - j] = -p.gamma * 2.0**-j * n / (n - j) * table.a[n + 1][:n]
    return FSeries(re, np.zeros(n + 1), p.t_c, _prefactor_log(n, p.t_c))


# ---------------------------------------------------------------------------
# oracle 1: the differential equations inside the f-power algebra


def oracle_exact_start(p: ModelParams):
    """``(X_1, y_2, z_2)`` with ``x_1 = i X_1 = -i theta'/2``."""
    x1 = FSeries([0.0, -p.gamma / p.t_c], [0.0, 0.0], p.t_c)
    zero = FSeries.zero(p.t_c)
    _, y2, z2 = oracle_exact_step(zero, zero, zero, p, x_next=x1)
    return x1, y2, z2


def oracle_exact_step(x_n: FSeries, y_n: FSeries, z_n: FSeries, p: ModelParams, x_next=None):
    """One step ``(y_n, z_n) -> (x_{n+1}, y_{n+2}, z_{n+2})`` for even ``n``.

    ``x`` series are the real parts ``X_k = x_k / i``.  The differential
    equations become ``X_{n+1} = theta' y_n - z_n'``, ``z_{n+2} = X_{n+1}'``
    and ``y_{n+2} = -int_{-inf}^t theta' z_{n+2}``.
    """
    if np.any(x_n.re) or np.any(x_n.im):
        raise ValueError("x_n vanishes for even n")
    if x_next is None:
        x_next = y_n.times_theta_prime(p.gamma) - z_n.derivative()
    z2 = x_next.derivative()
    y2 = -(z2.times_theta_prime(p.gamma).antiderivative())
    return x_next, y2, z2


def oracle_exact_series(n_max: int, p: ModelParams):
    """Dictionaries ``X, y, z`` of oracle series for orders ``<= n_max``."""
    X, y, z = {}, {}, {}
    X[1], y[2], z[2] = oracle_exact_start(p)
    n = 2
    while n + 1 <= n_max:
        X[n + 1], y2, z2 = oracle_exact_step(FSeries.zero(p.t_c), y[n], z[n], p)
        if n + 2 <= n_max:
            y[n + 2], z[n + 2] = y2, z2
        n += 2
    return X, y, z


# ---------------------------------------------------------------------------
# oracle 2: the matrix recursion for pi_n


def _theta_taylor(t: float, p: ModelParams, degree: int) -> np.ndarray:
    """Taylor coefficients of ``theta(t + tau)`` in ``tau``."""
    k = np.arange(degree)
    w = 1.0 / (t - 1j * p.t_c)
    dtheta = 2.0 * p.gamma * np.imag((-1.0) ** k * w ** (k + 1))
    out = np.empty(degree + 1)
    out[0] = theta(t, p)
    out[1:] = dtheta / (k + 1)
    return out


def _projector_taylor(t: float, p: ModelParams, degree: int) -> np.ndarray:
    th = _theta_taylor(t, p, degree)
    e = np.zeros(degree + 1, dtype=complex)
    e[0] = np.exp(1j * th[0])
    for k in range(1, degree + 1):
        j = np.arange(1, k + 1)
        e[k] = 1j * np.sum(j * th[j] * e[k - j]) / k
    c, s = e.real, e.imag
    out = np.zeros((degree + 1, 2, 2), dtype=complex)
    out[:, 0, 0] = 0.5 * c
    out[:, 0, 1] = out[:, 1, 0] = 0.5 * s
    out[:, 1, 1] = -0.5 * c
    out[0] += 0.5 * np.eye(2)
    return out


def _tmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    deg = min(len(a), len(b))
    out = np.zeros((deg, 2, 2), dtype=complex)
    for k in range(deg):
        for j in range(k + 1):
            out[k] += a[j] @ b[k - j]
    return out


def _tder(a: np.ndarray) -> np.ndarray:
    k = np.arange(1, len(a)).reshape(-1, 1, 1)
    return a[1:] * k


def _matrix_recursion(pi0, n: int, deriv):
    """Apply ``pi_{k+1} = G - pi0 G - G pi0 - i [pi_k', pi0]`` up to ``k = n``."""
    pis = [pi0]
    for k in range(n + 1):
        dk = deriv(pis[k])
        size = len(dk)
        p0 = pi0[:size]
        G = np.zeros_like(dk)
        for j in range(1, k + 1):
            G = G + _tmul(pis[j][:size], pis[k + 1 - j][:size])
        pis.append(G - _tmul(p0, G) - _tmul(G, p0) - 1j * (_tmul(dk, p0) - _tmul(p0, dk)))
    return pis


def _matrix_taylor(t: float, n: int, p: ModelParams):
    pi0 = _projector_taylor(t, p, n + 1)
    return [m[0] for m in _matrix_recursion(pi0, n, _tder)]


def _matrix_fd(t: float, n: int, p: ModelParams, h: float):
    """Same recursion with 5-point central differences on an offset grid."""
    from .model import adiabatic_projector

    half = 2 * (n + 1)
    offsets = np.arange(-half, half + 1)
    pi0 = np.array([adiabatic_projector(t + o * h, p) for o in offsets], dtype=complex)

    def deriv(a):
        return (a[:-4] - 8 * a[1:-3] + 8 * a[3:-1] - a[4:]) / (12 * h)

    # "degree" slicing in _matrix_recursion keeps the leading entries; centre
    # the projector on the shrinking window instead.
    pis = [pi0]
    for k in range(n + 1):
        dk = deriv(pis[k])
        m = len(dk)
        trim = lambda a: a[(len(a) - m) // 2 : (len(a) + m) // 2]  # noqa: E731
        p0 = trim(pi0)
        G = np.zeros_like(dk)
        for j in range(1, k + 1):
            G = G + trim(pis[j]) @ trim(pis[k + 1 - j])
        pis.append(G - p0 @ G - G @ p0 - 1j * (dk @ p0 - p0 @ dk))
    return [a[len(a) // 2] for a in pis]


def oracle_matrix_step(n: int, p: ModelParams, t_grid, method: str = "taylor", h: float | None = None):
    """Numerical ``pi_{n+1}(t)`` on ``t_grid`` from the matrix recursion.

    ``method="taylor"`` propagates truncated Taylor polynomials of every
    matrix (derivatives are exact coefficient shifts).  ``method="fd"`` uses
    nested 5-point central differences with step ``h`` (default
    ``1e-3 t_c``) and warns when the step-halving error estimate exceeds
    ``1e-6`` of the matrix norm.
    """
    out = []
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        if method == "taylor":
            out.append(_matrix_taylor(t, n, p)[n + 1])
        elif method == "fd":
            step = 1e-3 * p.t_c if h is None else h
            fine = _matrix_fd(t, n, p, step)[n + 1]
            coarse = _matrix_fd(t, n, p, 2 * step)[n + 1]
            norm = max(np.linalg.norm(fine), np.finfo(float).tiny)
            err = np.linalg.norm(fine - coarse) / 15.0
            if err > 1e-6 * norm:
                warnings.warn(
                    f"finite-difference error estimate {err:.2e} exceeds 1e-6 of |pi_{n + 1}| at t={t}",
                    RuntimeWarning,
                    stacklevel=2,
                )
            out.append(fine)
        else:
            raise ValueError(f"unknown method {method!r}")
    return out


def matrix_projectors(n: int, p: ModelParams, t: float):
    """``[pi_0(t), ..., pi_{n+1}(t)]`` from the Taylor-mode matrix recursion."""
    return _matrix_taylor(t, n, p)


def decompose_xyz(m: np.ndarray, t: float, p: ModelParams):
    """Coefficients ``(x, y, z, w)`` of ``m`` in the Frobenius-orthogonal basis."""
    X, Y, Z, W = basis_xyzw(t, p)
    return tuple(np.sum(B * m) / 2.0 for B in (X, Y, Z, W))


def theta_prime_series(p: ModelParams) -> FSeries:
    """``theta'`` itself as an f-series."""
    return FSeries([0.0, 2.0 * p.gamma / p.t_c], [0.0, 0.0], p.t_c)


def check_theta_prime(p: ModelParams, t) -> float:
    """Max deviation between the f-series and direct ``theta'`` (diagnostic)."""
    return float(np.max(np.abs(theta_prime_series(p)(t) - theta_prime(t, p))))
