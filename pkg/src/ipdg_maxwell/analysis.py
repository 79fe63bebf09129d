"""Norms, errors and empirical stability measurements.

Everything here evaluates fields directly at quadrature points (volume and
face traces) rather than going through the assembled matrices, so the
results double as an independent check of the assembly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import (ProblemParams, ParameterError, assemble_projection_rhs,
                       assemble_projection_system, assemble_system, quadratic_form, _face_class)
from .mesh import CartesianMesh
from .quadrature import face_points, gauss_rule, oscillatory_order
from .solver import nested_dissection_order, solve_direct
from .space import DGField, ExactSolution, element_curls, element_values

log = logging.getLogger(__name__)


@dataclass
class NormSet:
    """Norms of one (possibly broken) vector field.

    ``j0`` and ``j1`` hold the penalty quadratic forms J0(v, v), J1(v, v)
    (not their square roots); ``curl_jump_sq`` is
    ``sum_F h_F ||[curl v x nu_F]||^2`` without the penalty weight.
    """

    l2: float
    curl_broken: float
    hcurl: float
    j0: float
    j1: float
    boundary_tangential: float
    dg: float
    eh: float
    energy: float
    curl_jump_sq: float = 0.0
    gamma_h: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def gamma_h(params: ProblemParams, h_min: float) -> float:
    """``1/(lam h) + 1/(gamma1 k^2 h^2) + 1/gamma0 + 1`` with ``gamma1 = |igamma1|``."""
    g1 = params.gamma1
    if params.k == 0 or params.lam == 0 or params.gamma0 == 0 or g1 == 0:
        raise ParameterError("gamma_h needs nonzero k, lambda, gamma0 and gamma1")
    return 1.0 / (params.lam * h_min) + 1.0 / (g1 * params.k ** 2 * h_min ** 2) + 1.0 / params.gamma0 + 1.0


def _gamma_h_or_nan(params, h):
    try:
        return gamma_h(params, h)
    except ParameterError:
        return float("nan")


def _tangential(v: np.ndarray, nu: np.ndarray) -> np.ndarray:
    return v - np.sum(v * nu, axis=-1, keepdims=True) * nu


def compute_norms(mesh: CartesianMesh, params: ProblemParams, field: Optional[DGField] = None,
                  exact: Optional[ExactSolution] = None, quad_order: Optional[int] = None) -> NormSet:
    """Norms of ``exact - field`` (either may be omitted)."""
    if field is None and exact is None:
        raise ValueError("need a field, an exact solution, or both")
    h = mesh.h
    if quad_order is None:
        quad_order = 2 if exact is None else oscillatory_order(exact.k or params.k, h)
    n = quad_order
    blocks = None if field is None else field.blocks
    fcurl = None if field is None else element_curls(blocks, h)

    # volume terms
    rule = gauss_rule(n, 3)
    w = np.zeros((mesh.n_elements, len(rule), 3), dtype=complex)
    cw = np.zeros_like(w)
    if exact is not None:
        pts = (mesh.centers[:, None, :] + h * rule.points[None]).reshape(-1, 3)
        w += exact.value(pts).reshape(w.shape)
        cw += exact.curl(pts).reshape(w.shape)
    if field is not None:
        w -= element_values(blocks, rule.points)
        cw -= fcurl[:, None, :]
    vol_w = h ** 3 * rule.weights
    l2_sq = float(np.einsum("q,nqc->", vol_w, np.abs(w) ** 2))
    curl_sq = float(np.einsum("q,nqc->", vol_w, np.abs(cw) ** 2))

    # faces
    frule = gauss_rule(n, 2)
    fw = h ** 2 * frule.weights
    jump_sq = 0.0     # sum ||[w_T]||^2
    cjump_sq = 0.0    # sum ||[curl w x nu]||^2
    cavg_sq = 0.0     # sum ||{curl w x nu}||^2
    I = mesh.interior
    if len(I):
        cls = _face_class(I)
        for c in np.unique(cls):
            sel = np.flatnonzero(cls == c)
            axis, sign = int(c) // 2, (1 if c % 2 else -1)
            nu = I.normal[sel][:, None, :]
            xo = face_points(frule, axis, 0.5 * sign)
            xn = face_points(frule, axis, -0.5 * sign)
            avg_cxn = np.zeros((len(sel), len(frule), 3), dtype=complex)
            if exact is not None:
                pts = (mesh.centers[I.owner[sel]][:, None, :] + h * xo[None]).reshape(-1, 3)
                avg_cxn += np.cross(exact.curl(pts).reshape(avg_cxn.shape), nu)
            if field is not None:
                vo = element_values(blocks[I.owner[sel]], xo)
                vn = element_values(blocks[I.neighbor[sel]], xn)
                # jumps of exact - field come from the field alone
                jT = -_tangential(vo - vn, nu)
                jump_sq += float(np.einsum("q,fqc->", fw, np.abs(jT) ** 2))
                co = fcurl[I.owner[sel]][:, None, :]
                cn = fcurl[I.neighbor[sel]][:, None, :]
                jc = -np.cross(co - cn, nu)
                cjump_sq += float(np.sum(np.abs(jc[:, 0, :]) ** 2) * h ** 2)
                avg_cxn -= 0.5 * np.cross(co + cn, nu)
            cavg_sq += float(np.einsum("q,fqc->", fw, np.abs(avg_cxn) ** 2))

    B = mesh.boundary
    bt_sq = 0.0
    cls = _face_class(B)
    for c in np.unique(cls):
        sel = np.flatnonzero(cls == c)
        axis, sign = int(c) // 2, (1 if c % 2 else -1)
        xo = face_points(frule, axis, 0.5 * sign)
        nu = B.normal[sel][:, None, :]
        vals = np.zeros((len(sel), len(frule), 3), dtype=complex)
        if exact is not None:
            pts = (mesh.centers[B.owner[sel]][:, None, :] + h * xo[None]).reshape(-1, 3)
            vals += exact.value(pts).reshape(vals.shape)
        if field is not None:
            vals -= element_values(blocks[B.owner[sel]], xo)
        bt_sq += float(np.einsum("q,fqc->", fw, np.abs(_tangential(vals, nu)) ** 2))

    j0 = params.gamma0 / h * jump_sq
    curl_jump_sq = h * cjump_sq
    j1 = params.gamma1 * curl_jump_sq
    dg_sq = curl_sq + l2_sq + j0 + j1
    energy_sq = dg_sq + h / params.gamma0 * cavg_sq
    gh = _gamma_h_or_nan(params, h)
    eh_sq = curl_sq + params.k ** 2 * l2_sq + (gh if np.isfinite(gh) else 0.0) * (j0 + j1 + params.lam * bt_sq)
    return NormSet(
        l2=np.sqrt(l2_sq), curl_broken=np.sqrt(curl_sq), hcurl=np.sqrt(l2_sq + curl_sq),
        j0=j0, j1=j1, boundary_tangential=np.sqrt(bt_sq), dg=np.sqrt(dg_sq),
        eh=np.sqrt(eh_sq), energy=np.sqrt(energy_sq), curl_jump_sq=curl_jump_sq, gamma_h=gh,
    )


def minus_im_ah(norms: NormSet, params: ProblemParams) -> float:
    """``-Im a_h(u, u)`` rebuilt from face and boundary pieces.

    Equals ``lam ||u_T||^2_Gamma + J0(u, u) + Im(igamma1) sum_F h_F ||[curl u x nu]||^2``;
    for real penalties the last term is J1(u, u).
    """
    return (params.lam * norms.boundary_tangential ** 2 + norms.j0
            + params.igamma1.imag * norms.curl_jump_sq)


@dataclass
class ErrorNorms:
    absolute: NormSet
    reference: NormSet
    relative: dict
    flags: list = field(default_factory=list)


_RELATIVE_KEYS = ("l2", "curl_broken", "hcurl", "boundary_tangential", "dg", "energy")


def error_norms(field: DGField, exact: ExactSolution, mesh: CartesianMesh, params: ProblemParams,
                quad_order: Optional[int] = None) -> ErrorNorms:
    """Norms of ``exact - field`` and their ratios to the norms of ``exact``."""
    err = compute_norms(mesh, params, field, exact, quad_order)
    ref = compute_norms(mesh, params, None, exact, quad_order)
    rel, flags = {}, []
    for key in _RELATIVE_KEYS:
        den = getattr(ref, key)
        if den == 0:
            flags.append(f"zero_reference_{key}")
            rel[key] = getattr(err, key)
        else:
            rel[key] = getattr(err, key) / den
    return ErrorNorms(err, ref, rel, flags)


@dataclass
class CoercivityReport:
    samples: int
    min_ratio: float
    median_ratio: float
    gamma_h: float
    seed: int
    ratios: np.ndarray = field(repr=False, default=None)


def random_field(mesh: CartesianMesh, rng: np.random.Generator, real: bool = False) -> DGField:
    n = 12 * mesh.m ** 3
    while True:
        c = rng.uniform(-1.0, 1.0, n)
        if not real:
            c = c + 1j * rng.uniform(-1.0, 1.0, n)
        if np.any(c):
            return DGField(c, mesh.m)


def coercivity_sample(mesh: CartesianMesh, params: ProblemParams, n_samples: int = 100,
                      seed: int = 0, A=None) -> CoercivityReport:
    """Sample ``gamma_h |a_h(u, u)| / ||u||_{E,h}^2`` over random fields."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    A = assemble_system(mesh, params) if A is None else A
    gh = gamma_h(params, mesh.h)
    rng = np.random.default_rng(seed)
    ratios = np.empty(n_samples)
    for s in range(n_samples):
        u = random_field(mesh, rng)
        a = quadratic_form(A, u.coefficients, u.coefficients)
        ratios[s] = gh * abs(a) / compute_norms(mesh, params, u).eh ** 2
    rep = CoercivityReport(n_samples, float(ratios.min()), float(np.median(ratios)), gh, seed, ratios)
    log.info("coercivity m=%d k=%g: min=%.4e median=%.4e", mesh.m, params.k, rep.min_ratio, rep.median_ratio)
    return rep


def projection_coercivity(mesh: CartesianMesh, params: ProblemParams, u: DGField, B=None) -> tuple[float, float]:
    """``(Re b_h - Im b_h + ||u||^2,  1/2 |||u|||^2)`` for the check of the elliptic projection form."""
    B = assemble_projection_system(mesh, params) if B is None else B
    q = quadratic_form(B, u.coefficients, u.coefficients)  # b_h(u,u) + ||u||^2, mass is real
    return q.real - q.imag, 0.5 * compute_norms(mesh, params, u).energy ** 2


def elliptic_projection(mesh: CartesianMesh, params: ProblemParams, exact: ExactSolution,
                        tol: float = 1e-10, quad_order: Optional[int] = None) -> DGField:
    """Discrete field ``P`` with ``b_h(E - P, v) + (E - P, v) = 0`` for all discrete ``v``."""
    B = assemble_projection_system(mesh, params)
    rhs = assemble_projection_rhs(mesh, exact, quad_order)
    rep = solve_direct(B, rhs.values, tol=tol, ordering=nested_dissection_order(mesh))
    return DGField(rep.solution, mesh.m)


def stability_ratio(solution: DGField, exact: ExactSolution, mesh: CartesianMesh, params: ProblemParams,
                    quad_order: Optional[int] = None) -> float:
    """``||E_h||_{H(curl,T_h)} / ||E||_{H(curl,T_h)}``."""
    num = compute_norms(mesh, params, solution, None, 2).hcurl
    den = compute_norms(mesh, params, None, exact, quad_order).hcurl
    if den == 0:
        log.warning("stability ratio: exact solution has zero H(curl) norm")
        return float("nan")
    return num / den


def observed_orders(hs: Sequence[float], errors: Sequence[float]) -> list[float]:
    """``log(e_i/e_{i+1}) / log(h_i/h_{i+1})`` for successive pairs."""
    hs = np.asarray(hs, float)
    errors = np.asarray(errors, float)
    return list(np.log(errors[:-1] / errors[1:]) / np.log(hs[:-1] / hs[1:]))
