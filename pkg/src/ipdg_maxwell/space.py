"""Broken piecewise-linear vector fields on a Cartesian mesh.

Each element carries the centered, h-scaled monomials ``{1, xi, eta, zeta}``
with ``xi = (x - x_c)/h`` in ``[-1/2, 1/2]``, for each of the three vector
components.  The global DOF index is ``12*e + 4*c + a`` (element ``e``,
component ``c``, monomial ``a``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import CartesianMesh
from .quadrature import gauss_rule

DOFS_PER_ELEMENT = 12
LOCAL_TOL = 1e-12

VectorMap = Callable[[np.ndarray], np.ndarray]


def dof_count(mesh: CartesianMesh) -> int:
    return DOFS_PER_ELEMENT * mesh.m ** 3


def dof_index(e, c, a):
    return DOFS_PER_ELEMENT * e + 4 * c + a


def element_dofs(elements: np.ndarray) -> np.ndarray:
    """(n, 12) global DOF indices of the given elements."""
    elements = np.asarray(elements)
    return DOFS_PER_ELEMENT * elements[:, None] + np.arange(DOFS_PER_ELEMENT)[None, :]


@dataclass
class DGField:
    coefficients: np.ndarray
    m: int

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (DOFS_PER_ELEMENT * self.m ** 3,):
            raise ValueError(
                f"expected {DOFS_PER_ELEMENT * self.m ** 3} coefficients, got {self.coefficients.shape}")

    @classmethod
    def zeros(cls, mesh: CartesianMesh) -> "DGField":
        return cls(np.zeros(dof_count(mesh), dtype=complex), mesh.m)

    @property
    def blocks(self) -> np.ndarray:
        """Coefficient view of shape (n_elements, 3, 4)."""
        return self.coefficients.reshape(-1, 3, 4)

    def __add__(self, other: "DGField") -> "DGField":
        return DGField(self.coefficients + other.coefficients, self.m)

    def __sub__(self, other: "DGField") -> "DGField":
        return DGField(self.coefficients - other.coefficients, self.m)

    def __mul__(self, s) -> "DGField":
        return DGField(s * self.coefficients, self.m)

    __rmul__ = __mul__


@dataclass(frozen=True)
class ExactSolution:
    """A smooth vector field with its curl (and optionally curl curl).

    All maps take points of shape ``(n, 3)`` and return complex ``(n, 3)``.
    """

    value: VectorMap
    curl: VectorMap
    curl_curl: Optional[VectorMap] = None
    k: Optional[float] = None
    name: str = "exact"


def plane_wave(k: float) -> ExactSolution:
    """``E = (exp(ikz), exp(ikx), exp(iky))``, a solution of curl curl E = k^2 E."""

    def value(p):
        p = np.atleast_2d(p)
        return np.exp(1j * k * p[:, [2, 0, 1]])

    def curl(p):
        p = np.atleast_2d(p)
        return 1j * k * np.exp(1j * k * p[:, [1, 2, 0]])

    def curl_curl(p):
        return k * k * value(p)

    return ExactSolution(value, curl, curl_curl, k=k, name=f"plane_wave(k={k:g})")


def constant_field(vec) -> ExactSolution:
    vec = np.asarray(vec, dtype=complex)

    def value(p):
        return np.broadcast_to(vec, (np.atleast_2d(p).shape[0], 3)).copy()

    def zero(p):
        return np.zeros((np.atleast_2d(p).shape[0], 3), dtype=complex)

    return ExactSolution(value, zero, zero, name="constant")


def linear_field(matrix, offset=(0, 0, 0)) -> ExactSolution:
    """``E(x) = matrix @ x + offset``; its curl is constant."""
    A = np.asarray(matrix, dtype=complex)
    b = np.asarray(offset, dtype=complex)
    c = np.array([A[2, 1] - A[1, 2], A[0, 2] - A[2, 0], A[1, 0] - A[0, 1]])

    def value(p):
        return np.atleast_2d(p) @ A.T + b

    def curl(p):
        return np.broadcast_to(c, (np.atleast_2d(p).shape[0], 3)).copy()

    def zero(p):
        return np.zeros((np.atleast_2d(p).shape[0], 3), dtype=complex)

    return ExactSolution(value, curl, zero, name="linear")


def zxy_field() -> ExactSolution:
    """``E(x, y, z) = (z, x, y)`` with curl (1, 1, 1)."""
    return linear_field([[0, 0, 1], [1, 0, 0], [0, 1, 0]])


# ---------------------------------------------------------------------------
# local basis

def monomials(xi: np.ndarray) -> np.ndarray:
    """Values of {1, xi, eta, zeta} at local points, shape (npts, 4)."""
    xi = np.atleast_2d(xi)
    return np.hstack([np.ones((xi.shape[0], 1)), xi])


def local_value_matrix(xi: np.ndarray) -> np.ndarray:
    """Map from the 12 local coefficients to vector values, shape (npts, 3, 12)."""
    phi = monomials(xi)
    out = np.zeros((phi.shape[0], 3, DOFS_PER_ELEMENT))
    for c in range(3):
        out[:, c, 4 * c:4 * c + 4] = phi
    return out


def local_curl_matrix(h: float) -> np.ndarray:
    """Map from the 12 local coefficients to the (constant) curl, shape (3, 12)."""
    # d u_c / d x_d = coeff[c, 1 + d] / h
    C = np.zeros((3, DOFS_PER_ELEMENT))
    for out, (c1, d1), (c2, d2) in (
        (0, (2, 1), (1, 2)),  # dy uz - dz uy
        (1, (0, 2), (2, 0)),  # dz ux - dx uz
        (2, (1, 0), (0, 1)),  # dx uy - dy ux
    ):
        C[out, 4 * c1 + 1 + d1] += 1.0 / h
        C[out, 4 * c2 + 1 + d2] -= 1.0 / h
    return C


def element_values(blocks: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Values of many element polynomials at shared local points.

    ``blocks`` has shape (n, 3, 4); returns (n, npts, 3).
    """
    phi = monomials(xi)
    return np.einsum("pa,nca->npc", phi, blocks)


def element_curls(blocks: np.ndarray, h: float) -> np.ndarray:
    """Element-wise curls, shape (n, 3)."""
    g = blocks[:, :, 1:] / h  # g[n, c, d] = d u_c / d x_d
    return np.stack([g[:, 2, 1] - g[:, 1, 2],
                     g[:, 0, 2] - g[:, 2, 0],
                     g[:, 1, 0] - g[:, 0, 1]], axis=1)


def to_local(mesh: CartesianMesh, element: int, point) -> np.ndarray:
    return (np.asarray(point, dtype=float) - mesh.centers[element]) / mesh.h


def eval_field(field: DGField, mesh: CartesianMesh, element: int, point) -> np.ndarray:
    """Value of ``field`` at a point of the closed element ``element``."""
    xi = to_local(mesh, element, point)
    if np.any(np.abs(xi) > 0.5 + LOCAL_TOL):
        raise ValueError(f"point {point} lies outside element {element}")
    return element_values(field.blocks[element:element + 1], xi[None, :])[0, 0]


def eval_curl(field: DGField, mesh: CartesianMesh, element: int) -> np.ndarray:
    return element_curls(field.blocks[element:element + 1], mesh.h)[0]


# local mass per component: h^3 diag(1, 1/12, 1/12, 1/12)
REFERENCE_MASS_DIAG = np.array([1.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 12.0])


def project_local(exact: ExactSolution | VectorMap, mesh: CartesianMesh, quad_order: int = 3) -> DGField:
    """Element-wise L2 projection of a smooth vector field onto the broken P1 space."""
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    fn = exact.value if isinstance(exact, ExactSolution) else exact
    rule = gauss_rule(quad_order, 3)
    phi = monomials(rule.points)  # (q, 4)
    pts = mesh.centers[:, None, :] + mesh.h * rule.points[None, :, :]
    vals = fn(pts.reshape(-1, 3)).reshape(mesh.n_elements, len(rule), 3)
    # (n, 3, 4) moments divided by the diagonal reference mass
    moments = np.einsum("q,qa,nqc->nca", rule.weights, phi, vals)
    blocks = moments / REFERENCE_MASS_DIAG[None, None, :]
    return DGField(blocks.reshape(-1), mesh.m)


def interpolate_linear(exact: ExactSolution, mesh: CartesianMesh) -> DGField:
    """Exact coefficients of a field that is linear on every element."""
    return project_local(exact, mesh, quad_order=2)
