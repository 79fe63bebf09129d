"""Experiment campaigns: solves, convergence, stability, critical mesh size,
penalty scans, coercivity sampling and elliptic-projection rates.

Every campaign returns an :class:`ExperimentReport` whose rows share the
column layout in :data:`FIELDS` (plus command-specific trailing columns).
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (coercivity_sample, elliptic_projection, error_norms, observed_orders,
                       stability_ratio)
from .assembly import (PRESETS, ParameterError, ProblemParams, assemble_rhs, assemble_system,
                       export_matrix_market, impedance_data)
from .mesh import build_mesh
from .solver import ConvergenceError, ResourceError, SolverError, nested_dissection_order, solve_direct, solve_gmres
from .space import DGField, dof_count, plane_wave

log = logging.getLogger(__name__)

FIELDS = ("k", "m", "h", "dofs", "gamma0", "igamma1", "rel_l2", "rel_hcurl", "rel_dg",
          "stability_ratio", "residual", "wall_time", "flags")

WORKERS_ENV = "IPDG_WORKERS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# formatting

def _fmt_real(x: float) -> str:
    return format(float(x), ".12g")


def format_complex(z: complex) -> str:
    """``a+bi`` with 12 significant digits per part, e.g. ``0.08+0.01i``."""
    z = complex(z)
    sign = "-" if math.copysign(1.0, z.imag) < 0 else "+"
    return f"{_fmt_real(z.real)}{sign}{_fmt_real(abs(z.imag))}i"


def parse_complex(text: str) -> complex:
    """Inverse of :func:`format_complex`; also accepts ``0.1i``, ``0.1j`` and plain reals."""
    s = str(text).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(s)
    except ValueError:
        raise ConfigError(f"cannot parse complex value {text!r}") from None


def parse_list(text: str, kind=float) -> list:
    """``"1,2,5"`` or ``"1:40"`` (inclusive, optional ``:step``)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            bits = [kind(b) for b in part.split(":")]
            lo, hi = bits[0], bits[1]
            step = bits[2] if len(bits) > 2 else kind(1)
            n = int(round((hi - lo) / step)) + 1
            out.extend(kind(lo + i * step) for i in range(n))
        else:
            out.append(kind(part))
    return out


# ---------------------------------------------------------------------------
# configuration and report types

@dataclass
class ExperimentConfig:
    command: str = "solve"
    k_list: list = field(default_factory=lambda: [5.0])
    m_list: list = field(default_factory=lambda: [4])
    lam: Optional[float] = None       # None -> lambda = k
    preset: str = "7.4"
    gamma0: Optional[float] = None    # overrides the preset
    igamma1: Optional[complex] = None  # overrides the preset
    eps: float = 0.5
    h: Optional[float] = None
    m_start: int = 2
    m_max: int = 24
    scan: tuple = (0, 10, 0, 5, 0.02)  # p_min, p_max, q_min, q_max, step
    scan_points: Optional[list] = None
    samples: int = 100
    seed: int = 0
    out: Optional[str] = None
    solver: str = "direct"
    tol: float = 1e-10
    figures: bool = False
    export_matrix: Optional[str] = None

    def __post_init__(self):
        if not self.k_list:
            raise ConfigError("k-list is empty")
        if not self.m_list:
            raise ConfigError("m-list is empty")
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.solver not in ("direct", "gmres"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if any(m < 1 for m in self.m_list):
            raise ConfigError("mesh sizes must be positive")
        # validate the resolved parameters eagerly
        for k in self.k_list:
            self.params(k)

    @property
    def lambda_rule(self) -> str:
        return "equal-k" if self.lam is None else f"fixed {self.lam:g}"

    def params(self, k: float, igamma1: Optional[complex] = None) -> ProblemParams:
        base = dict(PRESETS[self.preset])
        if self.gamma0 is not None:
            base["gamma0"] = self.gamma0
        if self.igamma1 is not None:
            base["igamma1"] = self.igamma1
        if igamma1 is not None:
            base["igamma1"] = igamma1
        try:
            return ProblemParams(k=float(k), lam=float(k) if self.lam is None else float(self.lam), **base)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        p = self.params(self.k_list[0])
        return dict(preset=self.preset, gamma0=p.gamma0, igamma1=format_complex(p.igamma1),
                    lambda_rule=self.lambda_rule, epsilon=p.epsilon, seed=self.seed,
                    solver=self.solver, tol=self.tol)


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    extra_fields: tuple = ()

    @property
    def fields(self) -> tuple:
        return FIELDS + tuple(self.extra_fields)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def sort(self):
        self.rows.sort(key=lambda r: (r.get("k", 0), r.get("m", 0), r.get("scan_index", 0)))
        return self


# ---------------------------------------------------------------------------
# single cell

def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Sequence) -> list:
    n = _workers()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _solve(A, b, mesh, config: ExperimentConfig):
    if config.solver == "gmres":
        return solve_gmres(A, b, tol=config.tol, preconditioner="ilu0")
    return solve_direct(A, b, tol=config.tol, ordering=nested_dissection_order(mesh))


def _base_row(k, m, params: ProblemParams) -> dict:
    return dict(k=k, m=m, h=1.0 / m, dofs=12 * m ** 3, gamma0=params.gamma0,
                igamma1=params.igamma1, rel_l2=float("nan"), rel_hcurl=float("nan"),
                rel_dg=float("nan"), stability_ratio=float("nan"), residual=float("nan"),
                wall_time=0.0, flags=list(params.flags))


def solve_cell(k: float, m: int, params: ProblemParams, config: ExperimentConfig,
               A=None) -> tuple[dict, Optional[DGField]]:
    """Solve the plane-wave benchmark on one mesh and measure it."""
    t0 = time.perf_counter()
    mesh = build_mesh(m)
    exact = plane_wave(k)
    row = _base_row(k, m, params)
    assert row["dofs"] == dof_count(mesh)
    A = assemble_system(mesh, params) if A is None else A
    if config.export_matrix:
        export_matrix_market(A, config.export_matrix)
    load = assemble_rhs(mesh, params, None, impedance_data(exact, params.lam))
    row["flags"] += load.flags
    try:
        rep = _solve(A, load.values, mesh, config)
    except ConvergenceError as exc:
        row["flags"].append("solver_not_converged")
        row["residual"] = exc.report.relative_residual if exc.report else float("nan")
        row["wall_time"] = time.perf_counter() - t0
        return row, None
    except ResourceError as exc:
        log.error("solve exceeded the memory budget at k=%g m=%d: %s", k, m, exc)
        row["flags"].append("solver_resource_limit")
        row["wall_time"] = time.perf_counter() - t0
        return row, None
    except SolverError as exc:
        log.error("solve failed at k=%g m=%d: %s", k, m, exc)
        row["flags"].append("solver_failed")
        row["wall_time"] = time.perf_counter() - t0
        return row, None
    u = DGField(rep.solution, m)
    err = error_norms(u, exact, mesh, params)
    row.update(rel_l2=err.relative["l2"], rel_hcurl=err.relative["hcurl"], rel_dg=err.relative["dg"],
               stability_ratio=stability_ratio(u, exact, mesh, params),
               residual=rep.relative_residual)
    row["flags"] += err.flags
    if rep.relative_residual > config.tol:
        row["flags"].append("residual_above_tol")
    row["wall_time"] = time.perf_counter() - t0
    return row, u


def _cell(args):
    k, m, config = args
    return solve_cell(k, m, config.params(k), config)[0]


def _report(config: ExperimentConfig, rows, extra=(), **meta) -> ExperimentReport:
    md = dict(command=config.command, version=__version__, **config.resolved())
    md.update(meta)
    return ExperimentReport(rows, md, tuple(extra)).sort()


# ---------------------------------------------------------------------------
# campaigns

def run_solve(config: ExperimentConfig) -> ExperimentReport:
    k, m = config.k_list[0], config.m_list[0]
    row, _ = solve_cell(k, m, config.params(k), config)
    return _report(config, [row])


def run_convergence(config: ExperimentConfig) -> ExperimentReport:
    ms = sorted(config.m_list)
    rows = _map(_cell, [(k, m, config) for k in config.k_list for m in ms])
    report = _report(config, rows)
    if len(ms) > 1:
        report.extra_fields = ("order_l2", "order_hcurl")
        for k in config.k_list:
            sub = [r for r in report.rows if r["k"] == k]
            hs = [r["h"] for r in sub]
            o_l2 = observed_orders(hs, [r["rel_l2"] for r in sub])
            o_hc = observed_orders(hs, [r["rel_hcurl"] for r in sub])
            sub[0]["order_l2"] = sub[0]["order_hcurl"] = None
            for r, a, b in zip(sub[1:], o_l2, o_hc):
                r["order_l2"], r["order_hcurl"] = a, b
    return report


def _mesh_for_h(h: float) -> int:
    m = int(round(1.0 / h))
    if m < 1 or abs(m * h - 1.0) > 1e-9:
        raise ConfigError(f"h={h} is not the reciprocal of an integer")
    return m


def run_stability_sweep(config: ExperimentConfig) -> ExperimentReport:
    m = _mesh_for_h(config.h) if config.h is not None else config.m_list[0]
    rows = _map(_cell, [(k, m, config) for k in config.k_list])
    report = _report(config, rows, h=1.0 / m)
    ratios = [r["stability_ratio"] for r in report.rows]
    report.metadata["max_stability_ratio"] = float(np.nanmax(ratios))
    return report


def fit_loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def critical_mesh(k: float, config: ExperimentConfig) -> dict:
    """First ``m >= m_start`` whose relative H(curl) error is at most ``eps``."""
    params = config.params(k)
    history = []
    for m in range(config.m_start, config.m_max + 1):
        row, _ = solve_cell(k, m, params, config)
        history.append((m, row["rel_hcurl"]))
        log.info("critical-h k=%g m=%d rel_hcurl=%.4f", k, m, row["rel_hcurl"])
        if "solver_resource_limit" in row["flags"]:
            # finer meshes need even more memory
            break
        if row["rel_hcurl"] <= config.eps:
            row["h_crit"] = 1.0 / m
            row["flags"].append("first_passing_m")
            if m + 1 <= config.m_max:
                nxt, _ = solve_cell(k, m + 1, params, config)
                if "solver_resource_limit" in nxt["flags"]:
                    row["flags"].append("next_m_unchecked")
                elif not nxt["rel_hcurl"] <= config.eps:
                    row["flags"].append("reversal_at_next_m")
            if row["rel_hcurl"] > 1.0:
                row["flags"].append("error_above_one")
            row["scanned"] = len(history)
            return row
    row["h_crit"] = float("nan")
    row["flags"].append("unresolved")
    row["scanned"] = len(history)
    return row


def _crit_cell(args):
    k, config = args
    return critical_mesh(k, config)


def run_critical_h(config: ExperimentConfig) -> ExperimentReport:
    if not 0 < config.eps:
        raise ConfigError("tolerance eps must be positive")
    rows = _map(_crit_cell, [(k, config) for k in config.k_list])
    report = _report(config, rows, extra=("h_crit", "scanned"), eps=config.eps)
    ok = [(r["k"], r["h_crit"]) for r in report.rows if np.isfinite(r["h_crit"])]
    slope = fit_loglog_slope(*zip(*ok)) if len(ok) >= 2 else float("nan")
    report.metadata["loglog_slope"] = slope
    return report


def scan_grid(config: ExperimentConfig) -> list[complex]:
    if config.scan_points is not None:
        return [complex(z) for z in config.scan_points]
    p0, p1, q0, q1, step = config.scan
    return [step * complex(p, q) for p in range(int(p0), int(p1) + 1) for q in range(int(q0), int(q1) + 1)]


def run_penalty_scan(config: ExperimentConfig) -> ExperimentReport:
    k, m = config.k_list[0], config.m_list[0]
    rows = []
    for idx, z in enumerate(scan_grid(config)):
        try:
            params = config.params(k, igamma1=z)
        except ConfigError:
            row = _base_row(k, m, replace(config.params(k), flags=()))
            row["igamma1"] = z
            row["flags"] = ["infeasible_penalty"]
        else:
            row, _ = solve_cell(k, m, params, config)
        row["scan_index"] = idx
        rows.append(row)
    report = _report(config, rows, extra=("scan_index",))
    finite = [r for r in report.rows if np.isfinite(r["rel_hcurl"])]
    if finite:
        best = min(finite, key=lambda r: r["rel_hcurl"])
        report.metadata["argmin_igamma1"] = format_complex(best["igamma1"])
        report.metadata["argmin_rel_hcurl"] = best["rel_hcurl"]
        report.metadata["argmin_index"] = best["scan_index"]
    return report


def argmin_row(report: ExperimentReport) -> Optional[dict]:
    finite = [r for r in report.rows if np.isfinite(r["rel_hcurl"])]
    return min(finite, key=lambda r: r["rel_hcurl"]) if finite else None


def run_coercivity(config: ExperimentConfig) -> ExperimentReport:
    rows = []
    for k in config.k_list:
        params = config.params(k)
        for m in config.m_list:
            t0 = time.perf_counter()
            rep = coercivity_sample(build_mesh(m), params, config.samples, config.seed)
            row = _base_row(k, m, params)
            row.update(min_ratio=rep.min_ratio, median_ratio=rep.median_ratio, gamma_h=rep.gamma_h,
                       samples=rep.samples, wall_time=time.perf_counter() - t0)
            if not rep.min_ratio > 0:
                row["flags"].append("nonpositive_ratio")
            rows.append(row)
    return _report(config, rows, extra=("min_ratio", "median_ratio", "gamma_h", "samples"))


def run_projection(config: ExperimentConfig) -> ExperimentReport:
    rows = []
    ms = sorted(config.m_list)
    for k in config.k_list:
        params = config.params(k)
        exact = plane_wave(k)
        for m in ms:
            t0 = time.perf_counter()
            mesh = build_mesh(m)
            P = elliptic_projection(mesh, params, exact, tol=config.tol)
            err = error_norms(P, exact, mesh, params)
            row = _base_row(k, m, params)
            row.update(rel_l2=err.relative["l2"], rel_hcurl=err.relative["hcurl"],
                       rel_dg=err.relative["dg"],
                       stability_ratio=stability_ratio(P, exact, mesh, params),
                       err_l2=err.absolute.l2, err_energy=err.absolute.energy,
                       err_boundary=err.absolute.boundary_tangential,
                       wall_time=time.perf_counter() - t0)
            rows.append(row)
    report = _report(config, rows, extra=("err_l2", "err_energy", "err_boundary",
                                           "order_l2", "order_energy", "order_boundary"))
    for k in config.k_list:
        sub = [r for r in report.rows if r["k"] == k]
        hs = [r["h"] for r in sub]
        for key, col in (("err_l2", "order_l2"), ("err_energy", "order_energy"),
                         ("err_boundary", "order_boundary")):
            orders = observed_orders(hs, [r[key] for r in sub]) if len(sub) > 1 else []
            sub[0][col] = None
            for r, o in zip(sub[1:], orders):
                r[col] = o
    return report


COMMANDS = {
    "solve": run_solve,
    "convergence": run_convergence,
    "stability": run_stability_sweep,
    "critical-h": run_critical_h,
    "penalty-scan": run_penalty_scan,
    "coercivity": run_coercivity,
    "projection": run_projection,
}


def run(config: ExperimentConfig) -> ExperimentReport:
    try:
        fn = COMMANDS[config.command]
    except KeyError:
        raise ConfigError(f"unknown command {config.command!r}") from None
    return fn(config)


# ---------------------------------------------------------------------------
# CSV output

def _cell_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ";".join(str(v) for v in value)
    if isinstance(value, (complex, np.complexfloating)):
        return format_complex(value)
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return _fmt_real(value)
    return str(value)


def write_csv(report: ExperimentReport, path) -> Path:
    """Write ``report`` as UTF-8 CSV plus a ``<stem>.meta.json`` sidecar."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(report.fields)
            for row in report.rows:
                w.writerow([_cell_text(row.get(f)) for f in report.fields])
        meta = {key: (_cell_text(v) if isinstance(v, complex) else v) for key, v in report.metadata.items()}
        with path.with_suffix(".meta.json").open("w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=str)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


_INT_FIELDS = {"m", "dofs", "scan_index", "scanned", "samples"}


def read_csv(path) -> ExperimentReport:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for rec in reader:
            row = {}
            for name, text in zip(header, rec):
                if text == "":
                    row[name] = None
                elif name == "flags":
                    row[name] = text.split(";")
                elif name == "igamma1":
                    row[name] = parse_complex(text)
                elif name in _INT_FIELDS:
                    row[name] = int(text)
                else:
                    row[name] = float(text)
            rows.append(row)
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return ExperimentReport(rows, meta, tuple(h for h in header if h not in FIELDS))
