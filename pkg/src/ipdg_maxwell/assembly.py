"""Sparse assembly of the IPDG Maxwell system and its right-hand sides.

All forms are sesquilinear, linear in the trial function and conjugate
linear in the test function; the matrix entry ``A[i, j]`` holds
``a_h(phi_j, phi_i)`` so that ``a_h(u, v) = v^H A u``.

Because the mesh is uniform every element and every face of a given
(axis, orientation) class carries the same local block.  The blocks are
computed once by 2-point Gauss quadrature (exact for the degree-2
integrands) and scattered into a block-sparse matrix.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .mesh import CartesianMesh, FaceArrays
from .quadrature import face_points, gauss_rule, oscillatory_order
from .space import (DOFS_PER_ELEMENT, ExactSolution, dof_count, local_curl_matrix,
                    local_value_matrix, monomials)

log = logging.getLogger(__name__)

SourceMap = Callable[[np.ndarray], np.ndarray]
BoundaryMap = Callable[[np.ndarray, np.ndarray], np.ndarray]

TANGENTIAL_TOL = 1e-10


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemParams:
    """Wave number, impedance and penalty parameters.

    ``igamma1`` is the value of ``i*gamma1``; the assembled J1 coefficient
    is ``-igamma1 * h_F``.  The penalty ``-igamma1`` must have a
    non-positive imaginary part, i.e. ``Im(igamma1) >= 0``.
    """

    k: float
    lam: float
    gamma0: float = 100.0
    igamma1: complex = 0.1j
    epsilon: int = 1
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "igamma1", complex(self.igamma1))
        if not self.k > 0:
            raise ParameterError(f"wave number must be positive, got {self.k}")
        if not self.lam > 0:
            raise ParameterError(f"impedance constant must be positive, got {self.lam}")
        if not self.gamma0 > 0:
            raise ParameterError(f"gamma0 must be positive, got {self.gamma0}")
        if self.epsilon not in (-1, 0, 1):
            raise ParameterError(f"epsilon must be -1, 0 or 1, got {self.epsilon}")
        if self.igamma1.imag < 0:
            raise ParameterError(
                f"penalty -igamma1 = {-self.igamma1} has positive imaginary part")
        if self.igamma1 != 0 and self.igamma1.imag == 0 and "penalty_boundary_case" not in self.flags:
            object.__setattr__(self, "flags", self.flags + ("penalty_boundary_case",))

    @property
    def gamma1(self) -> float:
        """Real weight used for J1 inside norms (``|igamma1|``)."""
        return abs(self.igamma1)

    @property
    def real_penalties(self) -> bool:
        return self.igamma1.real == 0

    def with_(self, **kw) -> "ProblemParams":
        return replace(self, **kw)


PRESETS = {
    "7.4": dict(gamma0=100.0, igamma1=0.1j),
    "7.8": dict(gamma0=100.0, igamma1=0.08 + 0.01j),
}


def preset_params(name: str, k: float, lam: Optional[float] = None) -> ProblemParams:
    try:
        p = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ProblemParams(k=k, lam=k if lam is None else lam, **p)


# ---------------------------------------------------------------------------
# reference blocks

def _cross_matrix(nu: np.ndarray) -> np.ndarray:
    """Matrix N with N @ c = nu x c."""
    return np.array([[0.0, -nu[2], nu[1]],
                     [nu[2], 0.0, -nu[0]],
                     [-nu[1], nu[0], 0.0]])


def _snap(B: np.ndarray) -> np.ndarray:
    scale = np.abs(B).max()
    if scale > 0:
        B = np.where(np.abs(B) < 1e-14 * scale, 0.0, B)
    return B


@dataclass(frozen=True)
class FaceBlocks:
    """Real 24x24 pieces of an interior face block, dofs ordered [owner, neighbor]."""

    consistency: np.ndarray   # -<{curl u x nu}, [v_T]>
    symmetrization: np.ndarray  # -<[u_T], {curl v x nu}>
    jump_mass: np.ndarray     # <[u_T], [v_T]>
    curl_jump: np.ndarray     # <[curl u x nu], [curl v x nu]>


def element_mass_block(h: float) -> np.ndarray:
    rule = gauss_rule(2, 3)
    V = local_value_matrix(rule.points)
    return _snap(h ** 3 * np.einsum("q,qci,qcj->ij", rule.weights, V, V))


def element_curl_block(h: float) -> np.ndarray:
    C = local_curl_matrix(h)
    return _snap(h ** 3 * C.T @ C)


def boundary_tangential_block(h: float, axis: int, side: int) -> np.ndarray:
    """<u_T, v_T> over one boundary face of an element."""
    rule = gauss_rule(2, 2)
    nu = np.zeros(3)
    nu[axis] = side
    P = np.eye(3) - np.outer(nu, nu)
    V = local_value_matrix(face_points(rule, axis, 0.5 * side))
    PV = np.einsum("cd,qdi->qci", P, V)
    return _snap(h ** 2 * np.einsum("q,qci,qcj->ij", rule.weights, PV, PV))


def interior_face_blocks(h: float, axis: int, sign: int) -> FaceBlocks:
    """Blocks for an interior face whose normal (outward from the owner) is ``sign * e_axis``."""
    rule = gauss_rule(2, 2)
    nu = np.zeros(3)
    nu[axis] = sign
    P = np.eye(3) - np.outer(nu, nu)
    Vo = local_value_matrix(face_points(rule, axis, 0.5 * sign))
    Vn = local_value_matrix(face_points(rule, axis, -0.5 * sign))
    jump = np.concatenate([np.einsum("cd,qdi->qci", P, Vo),
                           -np.einsum("cd,qdi->qci", P, Vn)], axis=2)  # (q, 3, 24)
    # curl u x nu = -nu x curl u
    X = -_cross_matrix(nu) @ local_curl_matrix(h)  # (3, 12)
    avg_cx = 0.5 * np.concatenate([X, X], axis=1)
    jump_cx = np.concatenate([X, -X], axis=1)
    w = h ** 2 * rule.weights
    # entry (i, j) = form(phi_j, phi_i) = sum_q w (test_i . trial_j)
    consistency = -np.einsum("q,qci,cj->ij", w, jump, avg_cx)
    symmetrization = -np.einsum("q,ci,qcj->ij", w, avg_cx, jump)
    jump_mass = np.einsum("q,qci,qcj->ij", w, jump, jump)
    curl_jump = h ** 2 * jump_cx.T @ jump_cx
    return FaceBlocks(*(_snap(b) for b in (consistency, symmetrization, jump_mass, curl_jump)))


# ---------------------------------------------------------------------------
# global assembly

def _face_class(faces: FaceArrays) -> np.ndarray:
    return 2 * faces.axis + (faces.sign > 0)


def _assemble(mesh: CartesianMesh, elem_block: np.ndarray, boundary_blocks: Optional[dict],
              face_block: Callable[[int, int], np.ndarray]) -> sp.csr_matrix:
    nE = mesh.n_elements
    b = DOFS_PER_ELEMENT
    diag = np.broadcast_to(elem_block, (nE, b, b)).astype(complex)

    if boundary_blocks:
        B = mesh.boundary
        cls = _face_class(B)
        table = np.stack([boundary_blocks[(a, s)] for a in range(3) for s in (-1, 1)])
        np.add.at(diag, B.owner, table[cls])

    I = mesh.interior
    if len(I):
        cls = _face_class(I)
        table = np.stack([face_block(a, s) for a in range(3) for s in (-1, 1)])
        blocks = table[cls]
        np.add.at(diag, I.owner, blocks[:, :b, :b])
        np.add.at(diag, I.neighbor, blocks[:, b:, b:])
        brow = np.concatenate([np.arange(nE), I.owner, I.neighbor])
        bcol = np.concatenate([np.arange(nE), I.neighbor, I.owner])
        data = np.concatenate([diag, blocks[:, :b, b:], blocks[:, b:, :b]])
    else:
        brow = bcol = np.arange(nE)
        data = diag
    order = np.lexsort((bcol, brow))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(brow, minlength=nE))])
    A = sp.bsr_matrix((data[order], bcol[order], indptr), shape=(nE * b, nE * b)).tocsr()
    A.eliminate_zeros()
    return _symmetrize_pattern(A)


def _symmetrize_pattern(A: sp.csr_matrix) -> sp.csr_matrix:
    """Add explicit zeros so that (i, j) is stored iff (j, i) is."""
    P = A.copy()
    P.data = np.ones_like(P.data, dtype=np.int8)
    Ps = (P + P.T).tocsr()
    if Ps.nnz != A.nnz:
        coo = A.tocoo()
        pz = Ps.tocoo()
        rows = np.concatenate([coo.row, pz.row])
        cols = np.concatenate([coo.col, pz.col])
        vals = np.concatenate([coo.data, np.zeros(pz.nnz, dtype=A.dtype)])
        A = sp.csr_matrix((vals, (rows, cols)), shape=A.shape)
    A.sort_indices()
    return A


def _boundary_table(h: float) -> dict:
    return {(a, s): boundary_tangential_block(h, a, s) for a in range(3) for s in (-1, 1)}


def assemble_bh_pieces(mesh: CartesianMesh, params: ProblemParams):
    """Element block and face-block callback for ``b_h``."""
    h = mesh.h
    eps = params.epsilon
    cache = {}

    def face_block(axis, sign):
        if (axis, sign) not in cache:
            fb = interior_face_blocks(h, axis, sign)
            cache[(axis, sign)] = (fb.consistency + eps * fb.symmetrization
                                   - 1j * params.gamma0 / h * fb.jump_mass
                                   - params.igamma1 * h * fb.curl_jump)
        return cache[(axis, sign)]

    return element_curl_block(h), face_block


def assemble_system(mesh: CartesianMesh, params: ProblemParams) -> sp.csr_matrix:
    """Matrix of ``a_h = b_h - k^2 (.,.) - i*lam <._T, ._T>_Gamma``."""
    curl_block, face_block = assemble_bh_pieces(mesh, params)
    elem = curl_block - params.k ** 2 * element_mass_block(mesh.h)
    bnd = {key: -1j * params.lam * blk for key, blk in _boundary_table(mesh.h).items()}
    return _assemble(mesh, elem, bnd, face_block)


def assemble_projection_system(mesh: CartesianMesh, params: ProblemParams) -> sp.csr_matrix:
    """Matrix of ``b_h + (.,.)`` (no k^2 term, no impedance term)."""
    curl_block, face_block = assemble_bh_pieces(mesh, params)
    return _assemble(mesh, curl_block + element_mass_block(mesh.h), None, face_block)


def assemble_mass(mesh: CartesianMesh) -> sp.csr_matrix:
    return _assemble(mesh, element_mass_block(mesh.h), None, lambda a, s: np.zeros((24, 24)))


def assemble_boundary_mass(mesh: CartesianMesh) -> sp.csr_matrix:
    return _assemble(mesh, np.zeros((12, 12)), _boundary_table(mesh.h),
                     lambda a, s: np.zeros((24, 24)))


# ---------------------------------------------------------------------------
# load vectors

def impedance_data(exact: ExactSolution, lam: float) -> BoundaryMap:
    """``g = curl E x nu - i*lam*E_T`` for a given smooth ``E``."""

    def g(points, normals):
        E = exact.value(points)
        cE = exact.curl(points)
        ET = E - np.sum(E * normals, axis=1, keepdims=True) * normals
        return np.cross(cE, normals) - 1j * lam * ET

    return g


def source_data(exact: ExactSolution, k: float) -> SourceMap:
    """``f = curl curl E - k^2 E``."""
    if exact.curl_curl is None:
        raise ValueError("exact solution has no curl_curl map")

    def f(points):
        return exact.curl_curl(points) - k * k * exact.value(points)

    return f


def volume_moments(mesh: CartesianMesh, fn: SourceMap, n: int) -> np.ndarray:
    """``(fn, phi_i)_Omega`` for every basis function, shape (n_dofs,)."""
    rule = gauss_rule(n, 3)
    phi = monomials(rule.points)
    pts = mesh.centers[:, None, :] + mesh.h * rule.points[None]
    vals = np.asarray(fn(pts.reshape(-1, 3)), dtype=complex).reshape(mesh.n_elements, len(rule), 3)
    return (mesh.h ** 3 * np.einsum("q,qa,nqc->nca", rule.weights, phi, vals)).reshape(-1)


def curl_moments(mesh: CartesianMesh, curl_fn: SourceMap, n: int) -> np.ndarray:
    """``sum_K (curl_fn, curl phi_i)_K``; the basis curls are constant."""
    rule = gauss_rule(n, 3)
    pts = mesh.centers[:, None, :] + mesh.h * rule.points[None]
    vals = np.asarray(curl_fn(pts.reshape(-1, 3)), dtype=complex).reshape(mesh.n_elements, len(rule), 3)
    mean = mesh.h ** 3 * np.einsum("q,nqc->nc", rule.weights, vals)
    C = local_curl_matrix(mesh.h)
    return (mean @ C).reshape(-1)


def _face_moments(mesh: CartesianMesh, faces: FaceArrays, which: np.ndarray, side_sign: float,
                  fn: Callable[[np.ndarray, np.ndarray], np.ndarray], n: int, out: np.ndarray):
    """Accumulate ``int_F fn . phi`` over faces into ``out`` (shape (nE, 3, 4)).

    ``which`` selects the element whose basis is tested; ``side_sign`` is +1
    when that element's face lies in the direction of the stored normal.
    """
    rule = gauss_rule(n, 2)
    phi_cache = {}
    cls = _face_class(faces)
    for c in np.unique(cls):
        sel = np.flatnonzero(cls == c)
        axis, sign = int(c) // 2, (1 if c % 2 else -1)
        xi = face_points(rule, axis, 0.5 * sign * side_sign)
        if (axis, sign * side_sign) not in phi_cache:
            phi_cache[(axis, sign * side_sign)] = monomials(xi)
        phi = phi_cache[(axis, sign * side_sign)]
        elems = which[sel]
        pts = mesh.centers[elems][:, None, :] + mesh.h * xi[None]
        nrm = np.repeat(faces.normal[sel], len(rule), axis=0)
        vals = np.asarray(fn(pts.reshape(-1, 3), nrm), dtype=complex).reshape(len(sel), len(rule), 3)
        contrib = mesh.h ** 2 * np.einsum("q,qa,fqc->fca", rule.weights, phi, vals)
        np.add.at(out, elems, contrib)


@dataclass
class LoadVector:
    values: np.ndarray
    flags: list = field(default_factory=list)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


def assemble_rhs(mesh: CartesianMesh, params: ProblemParams, f: Optional[SourceMap],
                 g: Optional[BoundaryMap], quad_order: Optional[int] = None) -> LoadVector:
    """``(f, phi_i)_Omega + <g, (phi_i)_T>_Gamma``."""
    n = quad_order or oscillatory_order(params.k, mesh.h)
    N = dof_count(mesh)
    rhs = np.zeros(N, dtype=complex)
    flags = []
    if f is not None:
        rhs += volume_moments(mesh, f, n)
    if g is not None:
        worst = [0.0, 0.0]

        def g_tangential(points, normals):
            vals = np.asarray(g(points, normals), dtype=complex)
            gn = np.sum(vals * normals, axis=1, keepdims=True)
            worst[0] = max(worst[0], float(np.abs(gn).max(initial=0.0)))
            worst[1] = max(worst[1], float(np.abs(vals).max(initial=0.0)))
            return vals - gn * normals

        out = np.zeros((mesh.n_elements, 3, 4), dtype=complex)
        _face_moments(mesh, mesh.boundary, mesh.boundary.owner, 1.0, g_tangential, n, out)
        rhs += out.reshape(-1)
        if worst[0] > TANGENTIAL_TOL * max(1.0, worst[1]):
            flags.append("g_not_tangential")
            warnings.warn(f"boundary data has normal component up to {worst[0]:.3e}; projected out")
    return LoadVector(rhs, flags)


def assemble_projection_rhs(mesh: CartesianMesh, exact: ExactSolution,
                            quad_order: Optional[int] = None) -> LoadVector:
    """``b_h(E, phi_i) + (E, phi_i)`` for a smooth ``E`` (no jumps)."""
    n = quad_order or oscillatory_order(exact.k or 0.0, mesh.h)
    rhs = curl_moments(mesh, exact.curl, n) + volume_moments(mesh, exact.value, n)
    rhs += _interior_curl_trace_moments(mesh, exact, n)
    return LoadVector(rhs)


def _interior_curl_trace_moments(mesh: CartesianMesh, exact: ExactSolution, n: int) -> np.ndarray:
    """``-sum_F <curl E x nu_F, [phi_T]>_F`` over interior faces."""
    out = np.zeros((mesh.n_elements, 3, 4), dtype=complex)
    I = mesh.interior
    if len(I):
        def cxn(points, normals):
            return np.cross(exact.curl(points), normals)

        def neg_cxn(points, normals):
            return -cxn(points, normals)

        # [phi_T] = +phi_T on the owner side, -phi_T on the neighbor side
        _face_moments(mesh, I, I.owner, 1.0, neg_cxn, n, out)
        _face_moments(mesh, I, I.neighbor, -1.0, cxn, n, out)
    return out.reshape(-1)


def apply_to_smooth(mesh: CartesianMesh, params: ProblemParams, exact: ExactSolution,
                    quad_order: Optional[int] = None) -> np.ndarray:
    """``a_h(E, phi_i)`` for every basis function, for smooth ``E``."""
    n = quad_order or oscillatory_order(params.k, mesh.h)
    bh = (curl_moments(mesh, exact.curl, n) + _interior_curl_trace_moments(mesh, exact, n))
    mass = volume_moments(mesh, exact.value, n)

    def ET(points, normals):
        E = exact.value(points)
        return E - np.sum(E * normals, axis=1, keepdims=True) * normals

    out = np.zeros((mesh.n_elements, 3, 4), dtype=complex)
    _face_moments(mesh, mesh.boundary, mesh.boundary.owner, 1.0, ET, n, out)
    return bh - params.k ** 2 * mass - 1j * params.lam * out.reshape(-1)


def consistency_residual(mesh: CartesianMesh, params: ProblemParams, exact: ExactSolution,
                         quad_order: Optional[int] = None) -> float:
    """``max_i |a_h(E, phi_i) - (f, phi_i) - <g, phi_i,T>| / ||load||_inf``."""
    n = quad_order or oscillatory_order(params.k, mesh.h)
    load = assemble_rhs(mesh, params, source_data(exact, params.k),
                        impedance_data(exact, params.lam), n).values
    r = apply_to_smooth(mesh, params, exact, n) - load
    scale = np.abs(load).max()
    if scale == 0:
        return float(np.abs(r).max())
    return float(np.abs(r).max() / scale)


def quadratic_form(A, u, v) -> complex:
    """``sum_ij conj(v_i) A_ij u_j``."""
    u = np.asarray(getattr(u, "coefficients", u))
    v = np.asarray(getattr(v, "coefficients", v))
    if A.shape[1] != u.shape[0] or A.shape[0] != v.shape[0]:
        raise ValueError(f"dimension mismatch: A {A.shape}, u {u.shape}, v {v.shape}")
    return complex(np.vdot(v, A @ u))


def export_matrix_market(A, path) -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), field="complex", precision=17,
                     symmetry="general")


def import_matrix_market(path) -> sp.csr_matrix:
    A = sp.csr_matrix(scipy.io.mmread(str(path)))
    A.sort_indices()
    return A
