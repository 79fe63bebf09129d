"""Direct and restarted-GMRES solvers with externally certified residuals."""
from __future__ import annotations

import multiprocessing
import os
import signal
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as sla
from scipy.sparse.csgraph import connected_components

from .mesh import CartesianMesh


class SolverError(RuntimeError):
    pass


class SingularSystemError(SolverError):
    pass


class ResourceError(SolverError):
    """The factorization does not fit in the memory budget."""


ISOLATE_ENV = "IPDG_ISOLATE_ROWS"
MEMORY_ENV = "IPDG_MEMORY_LIMIT"
ISOLATE_MIN_ROWS = 50_000


def _set_memory_cap(limit: Optional[int]) -> None:
    """In a worker process: prefer it as OOM victim and optionally cap its address space."""
    try:
        with open("/proc/self/oom_score_adj", "w") as fh:
            fh.write("1000")
    except OSError:
        pass
    if limit:
        import resource
        resource.setrlimit(resource.RLIMIT_AS, (int(limit), int(limit)))


class ConvergenceError(SolverError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


@dataclass
class SolveReport:
    solution: np.ndarray
    relative_residual: float
    method: str
    iterations: int = 0
    stats: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return bool(self.stats.get("converged", True))


def relative_residual(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def nested_dissection_order(mesh: CartesianMesh, leaf: int = 2) -> np.ndarray:
    """Geometric nested-dissection permutation of the DOFs of a Cartesian mesh.

    Element boxes are split across their longest axis; the middle layer of
    elements is the separator and is numbered last.  The 12 DOFs of an
    element stay contiguous.
    """
    m = mesh.m
    lab = np.empty((m, m, m), dtype=int)
    gi = mesh.grid_index
    lab[gi[:, 0], gi[:, 1], gi[:, 2]] = np.arange(mesh.n_elements)
    pieces = []
    stack = [((0, m), (0, m), (0, m), False)]
    # iterative post-order: (box, expanded)
    while stack:
        *box, expanded = stack.pop()
        sizes = [hi - lo for lo, hi in box]
        if min(sizes) <= 0:
            continue
        if expanded or max(sizes) <= leaf:
            (i0, i1), (j0, j1), (l0, l1) = box
            pieces.append(lab[i0:i1, j0:j1, l0:l1].ravel(order="F"))
            continue
        d = int(np.argmax(sizes))
        lo, hi = box[d]
        mid = (lo + hi) // 2
        left, right, sep = list(box), list(box), list(box)
        left[d], right[d], sep[d] = (lo, mid), (mid + 1, hi), (mid, mid + 1)
        # pushed in reverse: left, right, then separator
        stack.append((*sep, True))
        stack.append((*right, False))
        stack.append((*left, False))
    elems = np.concatenate(pieces)
    return (12 * elems[:, None] + np.arange(12)[None, :]).ravel()


def _components(A: sp.csr_matrix) -> list[np.ndarray]:
    pattern = sp.csr_matrix((np.ones(A.nnz, dtype=np.int8), A.indices, A.indptr), shape=A.shape)
    n, labels = connected_components(pattern, directed=False)
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(labels, minlength=n))])
    return [order[bounds[c]:bounds[c + 1]] for c in range(n)]


def _factor_solve(A: sp.csr_matrix, b: np.ndarray, tol: float, ordering: Optional[np.ndarray],
                  split_components: bool) -> tuple[np.ndarray, dict]:
    n = A.shape[0]
    if ordering is not None:
        rank = np.empty(n, dtype=int)
        rank[np.asarray(ordering)] = np.arange(n)
    comps = _components(A) if split_components else [np.arange(n)]
    factors = []
    factor_nnz = 0
    for idx in comps:
        if ordering is not None:
            idx = idx[np.argsort(rank[idx], kind="stable")]
        sub = A[idx][:, idx].tocsc()
        try:
            if ordering is not None:
                lu = sla.splu(sub, permc_spec="NATURAL", diag_pivot_thresh=0.01,
                              options=dict(SymmetricMode=True))
            else:
                lu = sla.splu(sub)
        except RuntimeError as exc:
            if "singular" in str(exc).lower():
                raise SingularSystemError(f"singular matrix block of size {len(idx)}: {exc}") from exc
            raise
        except MemoryError as exc:
            raise ResourceError(f"out of memory factoring a block of size {len(idx)}") from exc
        factor_nnz += lu.nnz  # stored entries; lu.L / lu.U would copy the factors
        factors.append((idx, lu))

    def apply_inverse(rhs):
        x = np.empty(n, dtype=complex)
        for idx, lu in factors:
            x[idx] = lu.solve(rhs[idx])
        return x

    x = apply_inverse(b)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("factorization produced non-finite values")
    refined = 0
    if relative_residual(A, x, b) > tol:
        x = x + apply_inverse(b - A @ x)
        refined = 1
    return x, dict(factor_nnz=int(factor_nnz), components=len(comps), refinement_steps=refined)


def _worker(conn, memory_limit, args):
    try:
        _set_memory_cap(memory_limit)
        conn.send(("ok", _factor_solve(*args)))
    except BaseException as exc:  # report everything, the parent decides
        conn.send(("error", (type(exc).__name__, str(exc))))
    finally:
        conn.close()


_ERRORS = {"SingularSystemError": SingularSystemError, "ResourceError": ResourceError,
           "MemoryError": ResourceError, "SolverError": SolverError}


def _factor_solve_isolated(args, memory_limit: Optional[int]) -> tuple[np.ndarray, dict]:
    """Run :func:`_factor_solve` in a child process so that running out of memory
    kills the child (reported as :class:`ResourceError`) rather than this process."""
    # a capped child starts fresh: a forked one would inherit the parent's heap,
    # letting allocations bypass the address-space limit
    ctx = multiprocessing.get_context("spawn" if memory_limit else "fork")
    parent, child = ctx.Pipe(duplex=False)
    proc = ctx.Process(target=_worker, args=(child, memory_limit, args), daemon=True)
    proc.start()
    child.close()
    try:
        status, payload = parent.recv()
    except EOFError:
        proc.join()
        code = proc.exitcode
        if code is not None and code < 0 and -code == signal.SIGKILL:
            raise ResourceError(f"factorization of {args[0].shape[0]} unknowns was killed "
                                "(out of memory)") from None
        raise SolverError(f"factorization process exited with code {code}") from None
    finally:
        parent.close()
    proc.join()
    if status == "ok":
        return payload
    name, msg = payload
    if memory_limit and name == "SystemError":
        # SuperLU reports some failed allocations as invalid arguments
        name = "MemoryError"
    raise _ERRORS.get(name, SolverError)(msg if name in _ERRORS else f"{name}: {msg}")


def solve_direct(A, b, tol: float = 1e-10, ordering: Optional[np.ndarray] = None,
                 split_components: bool = True, isolate: Optional[bool] = None,
                 memory_limit: Optional[int] = None) -> SolveReport:
    """Sparse LU solve with a residual check and one refinement step.

    Independent diagonal blocks (connected components of the sparsity graph)
    are factored separately.  ``ordering`` is an optional symmetric
    fill-reducing permutation (for example :func:`nested_dissection_order`);
    without it SuperLU's COLAMD column ordering is used.

    With ``isolate`` (default: systems with at least ``IPDG_ISOLATE_ROWS`` =
    50,000 rows, where ``fork`` exists) the factorization runs in a child
    process; if it runs out of memory, :class:`ResourceError` is raised
    here.  ``memory_limit`` (default: env ``IPDG_MEMORY_LIMIT``) caps the
    child's total address space in bytes and implies isolation; that child is
    spawned, so scripts calling it need an ``if __name__ == "__main__"`` guard.
    """
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(getattr(b, "values", b), dtype=complex)
    n = A.shape[0]
    if A.shape != (n, n) or b.shape != (n,):
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    if not np.any(b):
        return SolveReport(np.zeros(n, dtype=complex), 0.0, "direct",
                           stats=dict(factor_nnz=0, components=0),
                           wall_time=time.perf_counter() - t0)
    if memory_limit is None and os.environ.get(MEMORY_ENV):
        memory_limit = int(float(os.environ[MEMORY_ENV]))
    if isolate is None:
        isolate = n >= int(os.environ.get(ISOLATE_ENV, ISOLATE_MIN_ROWS)) or memory_limit is not None
    isolate = isolate and "fork" in multiprocessing.get_all_start_methods()
    args = (A, b, tol, ordering, split_components)
    x, stats = _factor_solve_isolated(args, memory_limit) if isolate else _factor_solve(*args)
    stats["isolated"] = bool(isolate)
    res = relative_residual(A, x, b)
    report = SolveReport(x, res, "direct", 0, stats, time.perf_counter() - t0)
    if res > tol:
        raise SolverError(f"direct solve residual {res:.3e} exceeds tolerance {tol:.1e}")
    return report


def _block_jacobi(A: sp.csr_matrix, bs: int = 12) -> sla.LinearOperator:
    n = A.shape[0]
    nb = n // bs
    dense = np.zeros((nb, bs, bs), dtype=complex)
    coo = A.tocoo()
    same = (coo.row // bs) == (coo.col // bs)
    dense[coo.row[same] // bs, coo.row[same] % bs, coo.col[same] % bs] = coo.data[same]
    inv = np.linalg.inv(dense)
    return sla.LinearOperator(A.shape, matvec=lambda v: np.einsum("nij,nj->ni", inv, v.reshape(nb, bs)).ravel(),
                              dtype=complex)


def _block_ilu0(A: sp.csr_matrix, bs: int = 12) -> sla.LinearOperator:
    """ILU(0) on the element block pattern: L U with the sparsity of A's block graph."""
    n = A.shape[0]
    nb = n // bs
    Ab = sp.bsr_matrix(A, blocksize=(bs, bs))
    Ab.sort_indices()
    ptr, cols = Ab.indptr, Ab.indices
    blocks = Ab.data.astype(complex)
    where = [dict(zip(cols[ptr[i]:ptr[i + 1]], range(ptr[i], ptr[i + 1]))) for i in range(nb)]
    diag = np.array([where[i][i] for i in range(nb)])
    for i in range(nb):
        row = where[i]
        for p in range(ptr[i], ptr[i + 1]):
            k = cols[p]
            if k >= i:
                break
            blocks[p] = np.linalg.solve(blocks[diag[k]].T, blocks[p].T).T
            for q in range(diag[k] + 1, ptr[k + 1]):
                t = row.get(cols[q])
                if t is not None:
                    blocks[t] -= blocks[p] @ blocks[q]
    lower = cols < np.repeat(np.arange(nb), np.diff(ptr))
    upper = cols > np.repeat(np.arange(nb), np.diff(ptr))
    Dinv = np.linalg.inv(blocks[diag])
    rows_of = np.repeat(np.arange(nb), np.diff(ptr))

    def pick(mask, data):
        return sp.bsr_matrix((data, cols[mask], np.concatenate([[0], np.cumsum(np.bincount(rows_of[mask], minlength=nb))])),
                             shape=A.shape).tocsr()

    eye = sp.identity(n, dtype=complex, format="csr")
    L = (pick(lower, blocks[lower]) + eye).tocsr()
    S = (pick(upper, np.einsum("pij,pjk->pik", Dinv[rows_of[upper]], blocks[upper])) + eye).tocsr()

    def apply(v):
        y = sla.spsolve_triangular(L, v, lower=True, unit_diagonal=True)
        y = np.einsum("nij,nj->ni", Dinv, y.reshape(nb, bs)).ravel()
        return sla.spsolve_triangular(S, y, lower=False, unit_diagonal=True)

    return sla.LinearOperator(A.shape, matvec=apply, dtype=complex)


def solve_gmres(A, b, tol: float = 1e-8, restart: int = 50, maxit: int = 200,
                preconditioner: str = "none") -> SolveReport:
    """Restarted GMRES; raises :class:`ConvergenceError` carrying the best iterate."""
    if restart < 1 or maxit < 1:
        raise ValueError("restart and maxit must be >= 1")
    t0 = time.perf_counter()
    A = sp.csr_matrix(A)
    b = np.asarray(getattr(b, "values", b), dtype=complex)
    n = A.shape[0]
    if not np.any(b):
        return SolveReport(np.zeros(n, dtype=complex), 0.0, "iterative", 0,
                           dict(converged=True, preconditioner=preconditioner), time.perf_counter() - t0)
    if preconditioner == "none":
        M = None
    elif preconditioner == "ilu0":
        M = _block_ilu0(A)
    elif preconditioner == "blockjacobi12":
        M = _block_jacobi(A)
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")

    # maxit bounds the total number of inner iterations; the GMRES residual
    # never increases across restarts, so the final iterate is the best one
    restart = min(restart, maxit)
    count = {"it": 0}

    def tick(_):
        count["it"] += 1

    x, info = sla.gmres(A, b, rtol=tol, atol=0.0, restart=restart, maxiter=-(-maxit // restart), M=M,
                        callback=tick, callback_type="pr_norm")
    res = relative_residual(A, x, b)
    stats = dict(converged=res <= tol, restart=restart, preconditioner=preconditioner, info=int(info))
    report = SolveReport(x, res, "iterative", count["it"], stats, time.perf_counter() - t0)
    if res > tol:
        raise ConvergenceError(f"GMRES did not reach {tol:.1e} in {maxit} iterations (residual {res:.3e})",
                               report)
    return report
