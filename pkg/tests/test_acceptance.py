"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import time

import numpy as np
import pytest

from ipdg_maxwell.analysis import (coercivity_sample, compute_norms, error_norms, minus_im_ah,
                                   observed_orders, random_field)
from ipdg_maxwell.assembly import (ProblemParams, assemble_projection_rhs, assemble_projection_system,
                                   assemble_rhs, assemble_system, consistency_residual, impedance_data,
                                   preset_params, quadratic_form, source_data)
from ipdg_maxwell.experiments import ExperimentConfig, run
from ipdg_maxwell.mesh import build_mesh
from ipdg_maxwell.solver import nested_dissection_order, relative_residual, solve_direct
from ipdg_maxwell.space import DGField, constant_field, dof_count, plane_wave, zxy_field

# residuals of every solve performed by the acceptance tests
RESIDUALS = []
# cells whose factorization was killed for lack of memory: no solve was returned
ABORTED = []


def _note_rows(rows):
    for r in rows:
        if "solver_resource_limit" in r["flags"]:
            ABORTED.append((r["k"], r["m"]))
        else:
            RESIDUALS.append(r["residual"])


def test_c01_dof_accounting(record_acceptance):
    t0 = time.perf_counter()
    counts = (dof_count(build_mesh(6)), dof_count(build_mesh(12)))
    dt = time.perf_counter() - t0
    ok = counts == (2592, 20736) and dt < 1.0
    record_acceptance(1, ok, f"dofs m=6 -> {counts[0]}, m=12 -> {counts[1]} ({dt:.3f} s)")
    assert ok


def test_c02_polynomial_reproduction(record_acceptance):
    k = 3.0
    params = preset_params("7.4", k, lam=3.0)
    mesh = build_mesh(4)
    A = assemble_system(mesh, params)
    worst = 0.0
    for E in (constant_field([1.0, -2.0, 0.5]), zxy_field()):
        load = assemble_rhs(mesh, params, source_data(E, k), impedance_data(E, params.lam))
        rep = solve_direct(A, load.values, ordering=nested_dissection_order(mesh))
        RESIDUALS.append(rep.relative_residual)
        err = error_norms(DGField(rep.solution, mesh.m), E, mesh, params)
        worst = max(worst, err.relative["dg"])
    ok = worst <= 1e-8
    record_acceptance(2, ok, f"max relative DG error {worst:.2e} (<= 1e-8)")
    assert ok


def test_c03_consistency(record_acceptance):
    r = consistency_residual(build_mesh(4), ProblemParams(k=2.0, lam=2.0), plane_wave(2.0))
    ok = r <= 1e-7
    record_acceptance(3, ok, f"consistency residual {r:.2e} (<= 1e-7)")
    assert ok


def test_c04_minus_im_identity(record_acceptance):
    worst = 0.0
    for k, m in ((5.0, 4), (10.0, 8)):
        mesh = build_mesh(m)
        params = preset_params("7.4", k)
        assert params.real_penalties
        A = assemble_system(mesh, params)
        rng = np.random.default_rng(1000 + m)
        for _ in range(50):
            u = random_field(mesh, rng)
            lhs = -quadratic_form(A, u, u).imag
            rhs = minus_im_ah(compute_norms(mesh, params, u), params)
            worst = max(worst, abs(lhs - rhs) / abs(rhs))
    ok = worst <= 1e-12
    record_acceptance(4, ok, f"max relative disagreement {worst:.2e} (<= 1e-12)")
    assert ok


def test_c05_coercivity(record_acceptance):
    mins = {}
    for k, m in ((10.0, 4), (10.0, 8), (20.0, 8)):
        rep = coercivity_sample(build_mesh(m), preset_params("7.4", k), n_samples=100, seed=0)
        mins[(k, m)] = rep.min_ratio
    change = max(mins[(10.0, 4)], mins[(10.0, 8)]) / min(mins[(10.0, 4)], mins[(10.0, 8)])
    ok = all(v > 0 for v in mins.values()) and change < 10
    text = ", ".join(f"(k={k:g},m={m}) {v:.3e}" for (k, m), v in mins.items())
    record_acceptance(5, ok, f"min ratios {text}; refinement factor {change:.2f} (< 10)")
    assert ok


def test_c06_labeling_invariance(record_acceptance):
    a, b = build_mesh(3), build_mesh(3, reverse_labels=True)
    params = preset_params("7.4", 7.0)
    A, B = assemble_system(a, params), assemble_system(b, params)
    n = a.n_elements
    perm = (12 * (n - 1 - np.arange(n))[:, None] + np.arange(12)).ravel()
    diff = abs(A - B[perm][:, perm]).max()
    ok = diff <= 1e-13
    record_acceptance(6, ok, f"max entry difference {diff:.2e} (<= 1e-13)")
    assert ok


@pytest.mark.slow
def test_c07_convergence_orders(record_acceptance):
    rep = run(ExperimentConfig(command="convergence", k_list=[5.0], m_list=[4, 8, 16], lam=5.0, preset="7.4"))
    _note_rows(rep.rows)
    o_l2, o_hc = rep.rows[-1]["order_l2"], rep.rows[-1]["order_hcurl"]
    ok = o_l2 >= 1.7 and o_hc >= 0.85
    record_acceptance(7, ok, f"last-pair orders L2 {o_l2:.3f} (>= 1.7), H(curl) {o_hc:.3f} (>= 0.85)")
    assert ok


@pytest.mark.slow
def test_c08_elliptic_projection(record_acceptance):
    k = 5.0
    params = preset_params("7.4", k)
    exact = plane_wave(k)
    hs, e_l2, e_en, e_bd = [], [], [], []
    for m in (4, 8, 16):
        mesh = build_mesh(m)
        B = assemble_projection_system(mesh, params)
        rhs = assemble_projection_rhs(mesh, exact).values
        rep = solve_direct(B, rhs, ordering=nested_dissection_order(mesh))
        RESIDUALS.append(relative_residual(B, rep.solution, rhs))
        err = error_norms(DGField(rep.solution, m), exact, mesh, params).absolute
        hs.append(1.0 / m)
        e_l2.append(err.l2)
        e_en.append(err.energy)
        e_bd.append(err.boundary_tangential)
    o = [observed_orders(hs, e)[-1] for e in (e_l2, e_en, e_bd)]
    ok = o[0] >= 1.7 and o[1] >= 0.85 and o[2] >= 1.3
    record_acceptance(8, ok, f"orders L2 {o[0]:.3f} (>= 1.7), energy {o[1]:.3f} (>= 0.85), "
                             f"boundary {o[2]:.3f} (>= 1.3)")
    assert ok


@pytest.mark.slow
def test_c09_stability_sweep(record_acceptance):
    rep = run(ExperimentConfig(command="stability", k_list=list(range(1, 41)), h=0.1, preset="7.4"))
    _note_rows(rep.rows)
    ratios = np.array(rep.column("stability_ratio"))
    failed = [r["k"] for r in rep.rows if any(f.startswith("solver") for f in r["flags"])]
    ok = len(rep.rows) == 40 and not failed and np.all(ratios <= 1.2)
    record_acceptance(9, ok, f"max stability ratio {ratios.max():.4f} (<= 1.2), solver failures {len(failed)}")
    assert ok


@pytest.mark.slow
def test_c10_penalty_comparison(record_acceptance):
    cfg = ExperimentConfig(command="penalty-scan", k_list=[20.0], m_list=[10], lam=20.0, gamma0=100.0,
                           scan_points=[0.08 + 0.01j, 0.1j])
    rep = run(cfg)
    _note_rows(rep.rows)
    err = {r["igamma1"]: r["rel_hcurl"] for r in rep.rows}
    ok = err[0.08 + 0.01j] < err[0.1j]
    record_acceptance(10, ok, f"rel H(curl) 0.08+0.01i -> {err[0.08 + 0.01j]:.4f}, "
                              f"0.1i -> {err[0.1j]:.4f}")
    assert ok


@pytest.mark.slow
def test_c11_pollution_slope(record_acceptance):
    cfg = ExperimentConfig(command="critical-h", k_list=[4.0, 8.0, 12.0, 16.0, 20.0, 24.0], eps=0.5,
                           preset="7.4", m_max=24)
    rep = run(cfg)
    _note_rows(rep.rows)
    slope = rep.metadata["loglog_slope"]
    resolved = all(np.isfinite(r["h_crit"]) for r in rep.rows)
    ok = resolved and slope <= -1.2
    ms = ", ".join(f"k={r['k']:g}: m={1 / r['h_crit']:.0f}" if np.isfinite(r["h_crit"]) else f"k={r['k']:g}: unresolved"
                   for r in rep.rows)
    record_acceptance(11, ok, f"log-log slope {slope:.3f} (<= -1.2); {ms}")
    assert ok


def test_c12_solver_contract(record_acceptance):
    # one direct solve of its own so the check is meaningful when run alone
    mesh = build_mesh(6)
    params = preset_params("7.8", 10.0)
    A = assemble_system(mesh, params)
    load = assemble_rhs(mesh, params, None, impedance_data(plane_wave(10.0), 10.0))
    RESIDUALS.append(solve_direct(A, load.values, ordering=nested_dissection_order(mesh)).relative_residual)
    worst = max(RESIDUALS)
    ok = all(np.isfinite(RESIDUALS)) and worst <= 1e-10
    aborted = f"; {len(ABORTED)} aborted by resource limit {ABORTED}" if ABORTED else ""
    record_acceptance(12, ok, f"{len(RESIDUALS)} solves, max relative residual {worst:.2e} (<= 1e-10){aborted}")
    assert ok
