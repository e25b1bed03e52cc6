"""Quantitative checks shared by ``superad verify`` and the acceptance tests.

Each check returns a :class:`Check` with the measured value, the threshold it
is held to and a verdict.  Expensive propagations are cached so that running
the whole suite integrates each configuration once.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
from contextlib import redirect_stdout
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .coeffs import (
    a0_limit,
    build_coefficients,
    matrix_projectors,
    oracle_exact_series,
    decompose_xyz,
    xn_series,
    yn_series,
    zn_series,
)
from .frames import SuperadiabaticFrame, choose_truncation, coupling_asymptotic, coupling_exact
from .model import ModelParams
from .propagate import (
    erf_reference,
    integrate_propagator,
    max_transition,
    scattering,
    transition_history,
)

__all__ = ["Check", "ACCEPTANCE", "run_acceptance"]

HORIZON = 50.0


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"[{verdict}] {self.name}: measured={self.measured:.6g} threshold={self.threshold:.6g} {self.detail}".rstrip()

    def as_dict(self) -> dict:
        return asdict(self)


def _params(gamma=0.5, eps=0.1, t_c=1.0) -> ModelParams:
    return ModelParams(gamma=gamma, t_c=t_c, eps=eps)


# ---------------------------------------------------------------------------
# cached runs


@lru_cache(maxsize=None)
def _history(gamma: float, eps: float, T: float):
    p = _params(gamma, eps)
    grid = np.linspace(-T, T, 4001)
    return transition_history(p, T=T, grid=grid)


@lru_cache(maxsize=None)
def _ladder_run(basis: str, n, eps: float, T: float):
    p = _params(0.5, eps)
    grid = np.linspace(-T, T, 4001)
    return integrate_propagator(basis, -T, T, p, n=n, grid=grid)


# ---------------------------------------------------------------------------
# acceptance criteria


def scattering_amplitude() -> Check:
    eps_list = (0.25, 0.2, 0.15, 0.1)
    errs = []
    for eps in eps_list:
        r = scattering(_params(0.5, eps), T=HORIZON, validate=True)
        errs.append(abs(r.relative_error))
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = errs[0] <= 0.15 and errs[-1] <= 0.05 and decreasing
    detail = "rel.err " + ", ".join(f"eps={e}:{x:.4f}" for e, x in zip(eps_list, errs))
    return Check("1 scattering amplitude", ok, errs[-1], 0.05, detail + f" decreasing={decreasing}")


def transition_history_check() -> Check:
    p = _params(0.5, 0.1)
    rec = _history(0.5, 0.1, HORIZON)
    scale = math.sqrt(p.eps) * p.exp_small
    dev = float(np.max(np.abs(rec.k_off - np.abs(rec.reference))))
    k = rec.k_off / rec.k_off[-1]
    t10 = float(rec.grid[np.argmax(k >= 0.1)])
    t90 = float(rec.grid[np.argmax(k >= 0.9)])
    window = 3.0 * math.sqrt(p.eps * p.t_c)
    rise_ok = abs(t10) <= window and abs(t90) <= window
    ok = dev <= 0.5 * scale and rise_ok
    return Check(
        "2 transition history", ok, dev / scale, 0.5,
        f"(units sqrt(eps)e^(-t_c/eps)) rise 10%->90% in [{t10:.3f}, {t90:.3f}] window +-{window:.3f}",
    )


def coupling_formula() -> Check:
    eps_list = (0.2, 0.1, 0.05)
    worst, exps, parts = 0.0, [], []
    for gamma in (0.5, 1.0):
        rels = []
        for eps in eps_list:
            p = _params(gamma, eps)
            ch = choose_truncation(p)
            ce, ca = coupling_exact(0.0, ch, p), coupling_asymptotic(0.0, ch, p)
            worst = max(worst, abs(ce - ca) / p.exp_small / (10.0 * eps**1.4))
            rels.append(abs(ce - ca) / abs(ca))
        slope = float(np.polyfit(np.log(eps_list), np.log(rels), 1)[0])
        exps.append(slope)
        parts.append(f"gamma={gamma}: exponent {slope:.3f}")
    ok = worst <= 1.0 and min(exps) >= 0.8
    return Check("3 coupling formula", ok, worst, 1.0, "(max |diff|/(10 eps^1.4 e^(-t_c/eps))) " + "; ".join(parts))


def coefficient_asymptotics() -> Check:
    ratios, parts = [], []
    for gamma in (0.5, 1.0, 1.5):
        a0 = build_coefficients(200, gamma).a[200][0]
        err = abs(a0 - a0_limit(gamma))
        bound = 2.0 * gamma**2 / 200**2
        ratios.append(err / bound)
        parts.append(f"gamma={gamma}: |diff|={err:.3e} bound={bound:.3e}")
    return Check("4 coefficient asymptotics", max(ratios) <= 1.0, max(ratios), 1.0, "; ".join(parts))


def oracle_equivalence() -> Check:
    p = _params(0.7, 0.1, t_c=1.3)
    table = build_coefficients(14, p.gamma)
    X, y, z = oracle_exact_series(13, p)
    exact = 0.0
    for n in range(2, 13, 2):
        exact = max(exact, zn_series(n, table, p).max_rel_diff(z[n]), yn_series(n, table, p).max_rel_diff(y[n]))
    for n in range(1, 14, 2):
        exact = max(exact, xn_series(n, table, p).max_rel_diff(X[n]))
    matrix = 0.0
    for t in np.linspace(-3.0, 3.0, 13):
        pis = matrix_projectors(5, p, t)
        for k in range(1, 7):
            x, yy, zz, w = decompose_xyz(pis[k], t, p)
            if k % 2:
                ref = np.array([1j * X[k](t), 0.0, 0.0, 0.0])
            else:
                ref = np.array([0.0, y[k](t), z[k](t), 0.0])
            got = np.array([x, yy, zz, w])
            matrix = max(matrix, float(np.max(np.abs(got - ref)) / max(np.max(np.abs(ref)), 1e-300)))
    ok = exact <= 1e-12 and matrix <= 1e-5
    return Check("5 oracle equivalence", ok, max(exact / 1e-12, matrix / 1e-5), 1.0,
                 f"f-basis max rel {exact:.2e} (tol 1e-12); matrix max rel {matrix:.2e} (tol 1e-5)")


def projector_defect(p: ModelParams, n: int, grid) -> float:
    """Largest ``|pi^2 - pi - g I| / max(|g|, eps^{n+1})`` over ``grid``.

    ``pi^(n) = pi_0 + R`` is squared as ``pi_0 R + R pi_0 - R + R^2`` so the
    exact identity ``pi_0^2 = pi_0`` does not inject O(1) roundoff.
    """
    frame = SuperadiabaticFrame(p, n)
    worst = 0.0
    for t in grid:
        pis = matrix_projectors(n, p, t)
        R = sum(p.eps**k * pis[k] for k in range(1, n + 1))
        P0 = pis[0]
        D = P0 @ R + R @ P0 - R + R @ R
        g = frame.evaluate(t).g
        worst = max(worst, float(np.max(np.abs(D - g * np.eye(2)))) / max(abs(g), p.eps ** (n + 1)))
    return worst


def projector_property() -> Check:
    p = _params(0.5, 0.1)
    grid = np.linspace(-5.0, 5.0, 101)
    vals = {n: projector_defect(p, n, grid) for n in (2, 4, 6)}
    worst = max(vals.values())
    return Check("6 near-projector", worst <= 1e-10, worst, 1e-10,
                 " ".join(f"n={n}:{v:.2e}" for n, v in vals.items()))


def superadiabatic_ladder() -> Check:
    parts, ok = [], True
    worst = 0.0
    for n in (2, 4):
        m1 = max_transition(_ladder_run("superadiabatic", n, 0.2, HORIZON))
        m2 = max_transition(_ladder_run("superadiabatic", n, 0.1, HORIZON))
        factor = (m1 / m2) / 2.0**n
        off = max(factor, 1.0 / factor)
        worst = max(worst, off)
        ok &= off <= 3.0
        parts.append(f"n={n}: max {m1:.3e}->{m2:.3e}, ratio/2^n={factor:.3f}")
    ad = max_transition(_ladder_run("adiabatic", None, 0.1, HORIZON))
    op = max_transition(_ladder_run("optimal", None, 0.1, HORIZON))
    contrast = ad / op
    ok &= contrast >= 100.0
    parts.append(f"adiabatic/optimal={contrast:.1f} (need >=100)")
    return Check("7 superadiabatic ladder", ok, worst, 3.0, "; ".join(parts))


def parity_robustness() -> Check:
    p = _params(0.5, 0.1)
    even = scattering(p, T=HORIZON, parity="even")
    odd = scattering(p, T=HORIZON, parity="odd")
    rel = abs(odd.amplitude_measured / even.amplitude_measured - 1.0)
    return Check("8 parity robustness", rel <= 2 * p.eps, rel, 2 * p.eps,
                 f"even n={even.n_eps} odd n={odd.n_eps}")


def _cli_bytes(args) -> bytes:
    from .cli import main

    fd, path = tempfile.mkstemp(suffix=".out")
    os.close(fd)
    try:
        with redirect_stdout(io.StringIO()):
            code = main(list(args) + ["--out", path])
        if code != 0:
            raise RuntimeError(f"CLI {' '.join(args)} exited with {code}")
        with open(path, "rb") as fh:
            return fh.read()
    finally:
        os.unlink(path)


def unitarity_and_determinism() -> Check:
    recs = [_history(0.5, 0.1, HORIZON)]
    recs += [_ladder_run(b, n, e, HORIZON) for b, n, e in
             (("superadiabatic", 2, 0.2), ("superadiabatic", 4, 0.1), ("adiabatic", None, 0.1), ("optimal", None, 0.1))]
    defect = max(r.unitarity_defect() for r in recs)
    for eps in (0.25, 0.2, 0.15, 0.1):
        S = scattering(_params(0.5, eps), T=HORIZON).S
        defect = max(defect, float(np.max(np.abs(S.conj().T @ S - np.eye(2)))))
    runs = (
        ["coeffs", "--nmax", "12", "--gamma", "1"],
        ["frame", "--eps", "0.1", "--points", "41"],
        ["scatter", "--eps", "0.25", "--format", "json"],
    )
    same = all(_cli_bytes(a) == _cli_bytes(a) for a in runs)
    ok = defect <= 1e-9 and same
    return Check("9 unitarity & determinism", ok, defect, 1e-9, f"byte-identical reruns={same}")


ACCEPTANCE = (
    scattering_amplitude,
    transition_history_check,
    coupling_formula,
    coefficient_asymptotics,
    oracle_equivalence,
    projector_property,
    superadiabatic_ladder,
    parity_robustness,
    unitarity_and_determinism,
)


# ---------------------------------------------------------------------------
# supplementary invariants reported by ``superad verify``


def a0_decay_exponent() -> Check:
    worst = math.inf
    for gamma in (0.5, 1.0, 1.5):
        table = build_coefficients(200, gamma)
        ns = np.arange(10, 201, 2)
        err = [abs(table.a[n][0] - a0_limit(gamma)) for n in ns]
        worst = min(worst, -float(np.polyfit(np.log(ns), np.log(err), 1)[0]))
    return Check("a_0 decay exponent", worst >= 1.9, worst, 1.9)


def leading_term_x() -> Check:
    p = _params(0.5, 0.1)
    table = build_coefficients(42, p.gamma)
    ts = np.linspace(-5.0, 5.0, 401)
    lead_amp = 2.0 * math.sin(0.5 * math.pi * p.gamma) / math.pi
    fmod = np.abs(p.t_c / (ts + 1j * p.t_c))
    consts = []
    for n in (11, 21, 41):
        S = xn_series(n, table, p)
        scaled = S(ts, extra_log=-S.scale_log)
        u = ts / p.t_c
        lead = -lead_amp * np.real((1.0 - 1j * u) ** (-n))
        R = np.maximum(fmod**n, 2.0 ** (-(n - 2) / 2) * fmod**2) / (n - 1) ** 0.9
        consts.append(float(np.max(np.abs(scaled - lead) / R)))
    ok = max(consts) <= 5.0 and consts[-1] <= 1.5 * consts[0]
    return Check("x_n leading term", ok, consts[-1] / consts[0], 1.5,
                 "fitted C for n=11,21,41: " + ", ".join(f"{c:.3f}" for c in consts))


def scattering_rate() -> Check:
    eps_list = (0.25, 0.2, 0.15, 0.1)
    errs = [abs(scattering(_params(0.5, e), T=HORIZON).relative_error) for e in eps_list]
    slope = float(np.polyfit(np.log(eps_list), np.log(errs), 1)[0])
    return Check("scattering convergence exponent", slope >= 0.8, slope, 0.8)


def erf_law_at_zero() -> Check:
    p = _params(0.5, 0.1)
    rec = _history(0.5, 0.1, HORIZON)
    i0 = int(np.argmin(np.abs(rec.grid)))
    ref = math.sin(0.5 * math.pi * p.gamma) * p.exp_small
    rel = abs(rec.k_off[i0] / ref - 1.0)
    return Check("half amplitude at t=0", rel <= 2 * math.sqrt(p.eps), rel, 2 * math.sqrt(p.eps))


def near_projector_optimal() -> Check:
    p = _params(0.5, 0.2)
    n = choose_truncation(p).n
    v = projector_defect(p, n, np.linspace(-5.0, 5.0, 41))
    return Check(f"near-projector at n_eps={n}", v <= 1e-10, v, 1e-10)


def diagonalization() -> Check:
    worst = 0.0
    for eps in (0.2, 0.1):
        p = _params(0.5, eps)
        frame = SuperadiabaticFrame(p, choose_truncation(p).n)
        for t in np.linspace(-4.0, 4.0, 33):
            U, P = frame.unitary(t), frame.projector(t)
            Q = U @ P @ U.conj().T
            worst = max(worst, abs(Q[0, 1]), abs(Q[1, 0]), float(np.max(np.abs(U.conj().T @ U - np.eye(2)))))
    return Check("frame diagonalises projector", worst <= 1e-10, worst, 1e-10)


def coupling_erf_consistency() -> Check:
    p = _params(0.5, 0.1)
    ch = choose_truncation(p)
    from .propagate import dyson_offdiagonal

    scale = math.sqrt(p.eps) * p.exp_small
    dev = max(abs(dyson_offdiagonal(p, ch, -HORIZON, t) - erf_reference(t, -HORIZON, p, ch))
              for t in np.linspace(-2.0, 3.0, 11))
    return Check("first-order vs erf law", dev / scale <= 1.0, dev / scale, 1.0, "(units sqrt(eps)e^(-t_c/eps))")


INVARIANTS = (
    a0_decay_exponent,
    leading_term_x,
    scattering_rate,
    erf_law_at_zero,
    near_projector_optimal,
    diagonalization,
    coupling_erf_consistency,
)


def run_acceptance(include_invariants: bool = True):
    checks = [fn() for fn in ACCEPTANCE]
    if include_invariants:
        checks += [fn() for fn in INVARIANTS]
    return checks
