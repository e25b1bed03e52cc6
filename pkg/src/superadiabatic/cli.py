"""Command-line entry point: ``superad <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coeffs import build_coefficients
from .frames import (
    FrameBreakdown,
    TruncationChoice,
    choose_truncation,
    coupling_asymptotic,
    coupling_exact,
    error_envelope,
    frame_scan_csv,
)
from .model import InvalidParameters, ModelParams
from .propagate import IntegrationError, PrecisionLoss, default_rtol, scattering, transition_history

COMMANDS = ("coeffs", "frame", "coupling", "history", "scatter", "sweep", "verify")
JSON_DEFAULT = {"scatter", "sweep", "verify"}

EPILOG = """\
In double precision keep eps >= 0.04 t_c: below that e^(-t_c/eps) drops under
the roundoff floor of the propagator (about 1e-11).

Config file: flat key=value lines (keys as the long flag names, '#' comments).
Flags given on the command line override the file.  SUPERAD_RTOL sets the
default ODE tolerance.

Exit status: 0 success, 1 invalid configuration, 2 numerical failure.
"""


class ConfigError(ValueError):
    """Invalid command line or configuration file."""


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: ModelParams
    parity: str = "even"
    nmax: int = 20
    tmin: float | None = None
    tmax: float | None = None
    points: int | None = None
    horizon: float = 50.0
    rtol: float = 1e-12
    out: str | None = None
    fmt: str = "csv"
    eps_list: tuple = field(default_factory=tuple)

    @property
    def choice(self) -> TruncationChoice:
        return choose_truncation(self.params, self.parity)


# ---------------------------------------------------------------------------
# parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _eps_list(text: str):
    try:
        vals = tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad eps list {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("eps list is empty")
    return vals


def _build_parser() -> _Parser:
    ap = _Parser(
        prog="superad",
        description="Superadiabatic frames and exponentially small transitions.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--gamma", type=float, default=0.5, help="residue strength (default 0.5)")
    ap.add_argument("--tc", type=float, default=1.0, help="pole distance t_c (default 1)")
    ap.add_argument("--eps", type=float, default=0.1, help="adiabatic parameter (default 0.1)")
    ap.add_argument("--eps-list", type=_eps_list, default=None, help="comma separated eps values for sweep")
    ap.add_argument("--nmax", type=int, default=20, help="coefficient table cap (even)")
    ap.add_argument("--parity", choices=("even", "odd"), default="even")
    ap.add_argument("--tmin", type=float, default=None)
    ap.add_argument("--tmax", type=float, default=None)
    ap.add_argument("--points", type=int, default=None)
    ap.add_argument("--horizon", type=float, default=50.0, help="integration horizon T (default 50)")
    ap.add_argument("--rtol", type=float, default=None, help="ODE relative tolerance (default 1e-12)")
    ap.add_argument("--out", default=None, help="output file (default stdout)")
    ap.add_argument("--format", choices=("csv", "json"), default=None)
    ap.add_argument("--config", default=None, help="key=value configuration file")
    return ap


def _read_config(path: str, parser: _Parser) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    known = {a.dest: a for a in parser._actions if a.dest not in ("help", "command", "config")}
    out = {}
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.lstrip("-").replace("-", "_")
        if dest == "t_c":
            dest = "tc"
        if dest not in known:
            raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        action = known[dest]
        try:
            conv = action.type(val) if action.type else val
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"{path}:{num}: bad value for {key}: {val!r}") from exc
        if action.choices and conv not in action.choices:
            raise ConfigError(f"{path}:{num}: {key} must be one of {list(action.choices)}")
        out[dest] = conv
    return out


def parse_flags(argv) -> RunConfig:
    argv = list(argv)
    parser = _build_parser()
    if not argv:
        raise ConfigError(parser.format_usage())
    ns = parser.parse_args(argv)
    if ns.config:
        parser.set_defaults(**_read_config(ns.config, parser))
        ns = parser.parse_args(argv)
    try:
        params = ModelParams(gamma=ns.gamma, t_c=ns.tc, eps=ns.eps)
        if ns.eps_list:
            for e in ns.eps_list:
                params.with_eps(e)
    except InvalidParameters as exc:
        raise ConfigError(str(exc)) from exc
    if ns.command == "sweep" and not ns.eps_list:
        raise ConfigError("sweep needs --eps-list")
    if ns.nmax < 2 or ns.nmax % 2:
        raise ConfigError("--nmax must be an even integer >= 2")
    if ns.points is not None and ns.points < 2:
        raise ConfigError("--points must be >= 2")
    if ns.tmin is not None and ns.tmax is not None and not ns.tmin < ns.tmax:
        raise ConfigError("--tmin must be smaller than --tmax")
    if not (ns.horizon > 0 and math.isfinite(ns.horizon)):
        raise ConfigError("--horizon must be positive")
    try:
        rtol = default_rtol() if ns.rtol is None else ns.rtol
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not rtol > 0:
        raise ConfigError("--rtol must be positive")
    if ns.out:
        target = os.path.dirname(os.path.abspath(ns.out))
        if not os.path.isdir(target) or not os.access(target, os.W_OK):
            raise ConfigError(f"output directory {target} is not writable")
    fmt = ns.format or ("json" if ns.command in JSON_DEFAULT else "csv")
    return RunConfig(
        command=ns.command, params=params, parity=ns.parity, nmax=ns.nmax,
        tmin=ns.tmin, tmax=ns.tmax, points=ns.points, horizon=ns.horizon, rtol=rtol,
        out=ns.out, fmt=fmt, eps_list=tuple(ns.eps_list or ()),
    )


# ---------------------------------------------------------------------------
# output helpers


def _f(x) -> str:
    return f"{float(x):.17g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return float(_f(v)) if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _dump_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False) + "\n"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_f(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(prefix=".superad-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _grid(cfg: RunConfig, lo: float, hi: float, points: int) -> np.ndarray:
    a = cfg.tmin if cfg.tmin is not None else lo
    b = cfg.tmax if cfg.tmax is not None else hi
    if not a < b:
        raise ConfigError("empty time window")
    return np.linspace(a, b, cfg.points or points)


# ---------------------------------------------------------------------------
# commands


def _cmd_coeffs(cfg: RunConfig) -> str:
    table = build_coefficients(cfg.nmax, cfg.params.gamma)
    if cfg.fmt == "csv":
        return table.to_csv()
    rows = [{"n": n, "j": j, "a": a, "b": b} for n, j, a, b in table.rows()]
    return _dump_json({"n_max": table.n_max, "gamma": table.gamma, "rows": rows})


def _cmd_frame(cfg: RunConfig) -> str:
    p = cfg.params
    grid = _grid(cfg, -3.0 * p.t_c, 3.0 * p.t_c, 201)
    text = frame_scan_csv(grid, cfg.choice, p)
    if cfg.fmt == "csv":
        return text
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    rows = [dict(zip(header, map(float, r))) for r in reader]
    return _dump_json({"n_eps": cfg.choice.n, "sigma_eps": cfg.choice.sigma, "rows": rows})


COUPLING_COLUMNS = ["t", "re_c", "im_c", "|c|", "re_c_asymptotic", "im_c_asymptotic",
                    "|c_asymptotic|", "phi_alpha", "abs_diff"]


def _cmd_coupling(cfg: RunConfig) -> str:
    p, ch = cfg.params, cfg.choice
    grid = _grid(cfg, -3.0 * math.sqrt(p.eps * p.t_c), 3.0 * math.sqrt(p.eps * p.t_c), 201)
    ce = np.atleast_1d(coupling_exact(grid, ch, p))
    ca = np.atleast_1d(coupling_asymptotic(grid, ch, p))
    phi = np.atleast_1d(error_envelope(grid, 1.4, p))
    rows = [
        (t, c.real, c.imag, abs(c), a.real, a.imag, abs(a), f, abs(c - a))
        for t, c, a, f in zip(grid, ce, ca, phi)
    ]
    if cfg.fmt == "csv":
        return _rows_csv(COUPLING_COLUMNS, rows)
    return _dump_json({"n_eps": ch.n, "sigma_eps": ch.sigma, "parity": ch.parity,
                       "rows": [dict(zip(COUPLING_COLUMNS, r)) for r in rows]})


HISTORY_COLUMNS = ["t", "re_k11", "im_k11", "re_k12", "im_k12", "re_k21", "im_k21",
                   "re_k22", "im_k22", "|k_off|", "|reference|", "deviation"]


def _cmd_history(cfg: RunConfig) -> str:
    p, T = cfg.params, cfg.horizon
    grid = _grid(cfg, -T, T, 2001)
    if grid[0] < -T or grid[-1] > T:
        raise ConfigError("history window must lie inside [-horizon, horizon]")
    rec = transition_history(p, cfg.choice, T=T, grid=grid, rtol=cfg.rtol)
    ref = np.abs(rec.reference) if rec.reference is not None else np.full(len(grid), np.nan)
    if cfg.fmt == "csv":
        rows = []
        for t, K, k, r in zip(rec.grid, rec.K, rec.k_off, ref):
            rows.append((t, K[0, 0].real, K[0, 0].imag, K[0, 1].real, K[0, 1].imag,
                         K[1, 0].real, K[1, 0].imag, K[1, 1].real, K[1, 1].imag, k, r, abs(k - r)))
        return _rows_csv(HISTORY_COLUMNS, rows)
    return _dump_json({
        "eps": p.eps, "gamma": p.gamma, "t_c": p.t_c, "n_eps": cfg.choice.n,
        "sigma_eps": cfg.choice.sigma, "T": T, "rtol": cfg.rtol,
        "final_k_off": rec.k_off[-1], "final_reference": ref[-1],
        "max_deviation": float(np.nanmax(np.abs(rec.k_off - ref))),
        "unitarity_defect": rec.meta.get("unitarity_defect"),
        "rescaled_discrepancy": rec.meta.get("rescaled_discrepancy"),
    })


SUMMARY_KEYS = ["eps", "gamma", "t_c", "n_eps", "sigma_eps", "amplitude_measured",
                "amplitude_theory", "relative_error", "T", "rtol"]


def _scatter_summary(p: ModelParams, T: float, parity: str, rtol: float) -> dict:
    res = scattering(p, T=T, parity=parity, rtol=rtol, validate=True)
    if not res.horizon_converged:
        print(
            f"warning: eps={p.eps}: doubling T changes the amplitude from "
            f"{res.amplitude_measured:.6e} to {res.amplitude_doubled:.6e}",
            file=sys.stderr,
        )
    return res.summary(p)


def _cmd_scatter(cfg: RunConfig) -> str:
    summary = _scatter_summary(cfg.params, cfg.horizon, cfg.parity, cfg.rtol)
    if cfg.fmt == "json":
        return _dump_json(summary)
    return _rows_csv(SUMMARY_KEYS, [[summary[k] for k in SUMMARY_KEYS]])


def _sweep_one(args):
    gamma, t_c, eps, T, parity, rtol = args
    return _scatter_summary(ModelParams(gamma, t_c, eps), T, parity, rtol)


def _cmd_sweep(cfg: RunConfig) -> str:
    p = cfg.params
    jobs = [(p.gamma, p.t_c, e, cfg.horizon, cfg.parity, cfg.rtol) for e in cfg.eps_list]
    workers = min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    if cfg.fmt == "json":
        return _dump_json(rows)
    return _rows_csv(SUMMARY_KEYS, [[r[k] for k in SUMMARY_KEYS] for r in rows])


def _cmd_verify(cfg: RunConfig) -> tuple[str, int]:
    from .verify import run_acceptance

    checks = run_acceptance()
    for c in checks:
        print(c.line(), file=sys.stderr)
    verdict = {"passed": all(c.passed for c in checks), "checks": [c.as_dict() for c in checks]}
    if cfg.fmt == "json":
        text = _dump_json(verdict)
    else:
        text = _rows_csv(["name", "passed", "measured", "threshold", "detail"],
                         [[c.name, c.passed, c.measured, c.threshold, c.detail] for c in checks])
    return text, 0 if verdict["passed"] else 2


HANDLERS = {
    "coeffs": _cmd_coeffs,
    "frame": _cmd_frame,
    "coupling": _cmd_coupling,
    "history": _cmd_history,
    "scatter": _cmd_scatter,
    "sweep": _cmd_sweep,
}


def run(cfg: RunConfig) -> int:
    try:
        if cfg.command == "verify":
            text, code = _cmd_verify(cfg)
        else:
            text, code = HANDLERS[cfg.command](cfg), 0
    except ConfigError as exc:
        print(f"superad: {exc}", file=sys.stderr)
        return 1
    except (IntegrationError, PrecisionLoss, FrameBreakdown, ArithmeticError) as exc:
        print(f"superad: numerical failure: {exc}", file=sys.stderr)
        return 2
    _emit(text, cfg.out)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_flags(argv)
    except ConfigError as exc:
        print(f"superad: {exc}".rstrip(), file=sys.stderr)
        return 1
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
