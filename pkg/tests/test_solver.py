import numpy as np
import pytest
import scipy.sparse as sp

from ipdg_maxwell.assembly import (ProblemParams, assemble_mass, assemble_projection_system,
                                   assemble_system, preset_params)
from ipdg_maxwell.mesh import build_mesh
from ipdg_maxwell.solver import (ConvergenceError, SingularSystemError, nested_dissection_order,
                                 relative_residual, solve_direct, solve_gmres)


def test_mass_all_ones():
    M = assemble_mass(build_mesh(3))
    b = M @ np.ones(M.shape[0])
    rep = solve_direct(M, b)
    np.testing.assert_allclose(rep.solution, 1.0, atol=1e-13)
    assert rep.relative_residual <= 1e-14
    assert rep.method == "direct" and rep.iterations == 0


def test_zero_rhs():
    A = assemble_system(build_mesh(2), ProblemParams(k=3, lam=3))
    rep = solve_direct(A, np.zeros(A.shape[0]))
    assert np.all(rep.solution == 0)
    rep = solve_gmres(A, np.zeros(A.shape[0]))
    assert np.all(rep.solution == 0) and rep.iterations == 0


def test_residual_recomputed():
    A = sp.identity(4, format="csr") * 2.0
    b = np.array([1.0, 2, 3, 4])
    assert relative_residual(A, b / 2, b) == 0.0
    assert relative_residual(A, b, b) == pytest.approx(1.0)


@pytest.mark.parametrize("ordering", [False, True])
def test_recover_random_vectors(ordering):
    mesh = build_mesh(4)
    A = assemble_system(mesh, preset_params("7.4", 10.0))
    rng = np.random.default_rng(1)
    perm = nested_dissection_order(mesh) if ordering else None
    for _ in range(3):
        x = rng.normal(size=A.shape[0]) + 1j * rng.normal(size=A.shape[0])
        rep = solve_direct(A, A @ x, ordering=perm)
        assert np.linalg.norm(rep.solution - x) <= 1e-9 * np.linalg.norm(x)
        assert rep.relative_residual <= 1e-10


def test_nested_dissection_is_permutation():
    mesh = build_mesh(5)
    p = nested_dissection_order(mesh)
    assert np.array_equal(np.sort(p), np.arange(12 * 125))


def test_singular():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]], dtype=complex))
    with pytest.raises(SingularSystemError):
        solve_direct(A, np.array([1.0, 0.0]), split_components=False)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        solve_direct(sp.identity(3, format="csr"), np.ones(4))


def test_gmres_projection_system():
    mesh = build_mesh(4)
    B = assemble_projection_system(mesh, preset_params("7.4", 1.0))
    rng = np.random.default_rng(0)
    b = rng.normal(size=B.shape[0]) + 0j
    rep = solve_gmres(B, b, tol=1e-8, restart=200, maxit=1000, preconditioner="ilu0")
    assert rep.converged and rep.relative_residual <= 1e-8
    ref = solve_direct(B, b, ordering=nested_dissection_order(mesh))
    assert np.linalg.norm(rep.solution - ref.solution) <= 1e-6 * np.linalg.norm(ref.solution)


def test_gmres_block_jacobi():
    mesh = build_mesh(3)
    B = assemble_projection_system(mesh, preset_params("7.4", 1.0))
    b = np.ones(B.shape[0], dtype=complex)
    rep = solve_gmres(B, b, tol=1e-8, restart=200, preconditioner="blockjacobi12", maxit=5000)
    assert rep.relative_residual <= 1e-8


def test_gmres_indefinite_failure_reported():
    mesh = build_mesh(10)
    params = preset_params("7.4", 30.0)
    A = assemble_system(mesh, params)
    b = np.random.default_rng(0).normal(size=A.shape[0]) + 0j
    with pytest.raises(ConvergenceError) as info:
        solve_gmres(A, b, tol=1e-8, restart=50, maxit=200, preconditioner="none")
    rep = info.value.report
    assert rep is not None and not rep.converged
    assert np.isfinite(rep.relative_residual) and rep.relative_residual <= 1.0


def test_gmres_argument_checks():
    A = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        solve_gmres(A, np.ones(3), restart=0)
    with pytest.raises(ValueError):
        solve_gmres(A, np.ones(3), preconditioner="amg")


def test_gmres_iteration_budget():
    mesh = build_mesh(4)
    A = assemble_system(mesh, preset_params("7.4", 20.0))
    b = np.ones(A.shape[0], dtype=complex)
    with pytest.raises(ConvergenceError) as info:
        solve_gmres(A, b, tol=1e-12, restart=10, maxit=25)
    assert info.value.report.iterations <= 30


def test_block_ilu0_exact_on_pattern():
    from ipdg_maxwell.solver import _block_ilu0
    B = assemble_projection_system(build_mesh(2), preset_params("7.4", 1.0))
    n = B.shape[0]
    M = _block_ilu0(B)
    Minv = np.column_stack([M.matvec(np.eye(n)[:, j]) for j in range(n)])
    LU = np.linalg.inv(Minv)
    dense = B.toarray()
    on = dense != 0
    assert np.abs(LU - dense)[on].max() <= 1e-9 * np.abs(dense).max()


@pytest.mark.parametrize("k,m", [(10.0, 4), (20.0, 8)])
def test_recover_twenty_vectors(k, m):
    mesh = build_mesh(m)
    A = assemble_system(mesh, preset_params("7.4", k))
    rng = np.random.default_rng(int(k) * 100 + m)
    X = rng.normal(size=(20, A.shape[0])) + 1j * rng.normal(size=(20, A.shape[0]))
    for x in X:
        rep = solve_direct(A, A @ x, ordering=nested_dissection_order(mesh))
        assert np.linalg.norm(rep.solution - x) <= 1e-9 * np.linalg.norm(x)


def test_memory_cap_raises_resource_error():
    from ipdg_maxwell.solver import ResourceError
    mesh = build_mesh(8)
    A = assemble_system(mesh, preset_params("7.4", 10.0))
    b = np.ones(A.shape[0], dtype=complex)
    with pytest.raises(ResourceError):
        solve_direct(A, b, ordering=nested_dissection_order(mesh), memory_limit=2 * 10 ** 6)
    # this process is unaffected
    assert solve_direct(A, b, ordering=nested_dissection_order(mesh)).relative_residual <= 1e-10


def test_memory_cap_ignores_parent_heap():
    # freed blocks stay mapped in this process; a capped solve must not reuse them
    from ipdg_maxwell.solver import ResourceError
    junk = [np.ones(2000) for _ in range(20000)]
    del junk
    mesh = build_mesh(8)
    A = assemble_system(mesh, preset_params("7.4", 10.0))
    b = np.ones(A.shape[0], dtype=complex)
    with pytest.raises(ResourceError):
        solve_direct(A, b, ordering=nested_dissection_order(mesh), memory_limit=2 * 10 ** 6)
    rep = solve_direct(A, b, ordering=nested_dissection_order(mesh), memory_limit=2 * 10 ** 9)
    assert rep.relative_residual <= 1e-10


def test_isolated_solve_matches_inline():
    mesh = build_mesh(4)
    A = assemble_system(mesh, preset_params("7.8", 6.0))
    b = np.arange(A.shape[0]) + 1j
    order = nested_dissection_order(mesh)
    inline = solve_direct(A, b, ordering=order, isolate=False)
    child = solve_direct(A, b, ordering=order, isolate=True)
    assert child.stats["isolated"] and not inline.stats["isolated"]
    assert np.array_equal(inline.solution, child.solution)


def test_isolated_errors_propagate():
    A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]], dtype=complex))
    with pytest.raises(SingularSystemError):
        solve_direct(A, np.array([1.0, 0.0]), split_components=False, isolate=True)


def test_killed_worker_is_resource_error(monkeypatch):
    import os
    import signal
    from ipdg_maxwell import solver
    from ipdg_maxwell.solver import ResourceError

    def die(*args):
        os.kill(os.getpid(), signal.SIGKILL)

    monkeypatch.setattr(solver, "_factor_solve", die)
    with pytest.raises(ResourceError):
        solve_direct(sp.identity(3, format="csr"), np.ones(3), isolate=True)
