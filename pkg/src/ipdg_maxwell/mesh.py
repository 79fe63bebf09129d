"""Uniform Cartesian partitions of the unit cube.

Elements carry a global label; for an interior face the element with the
bigger label is the *owner*.  The face normal is the outward normal of the
owner and jumps are ``owner - neighbor``.  Boundary faces use the outward
normal of the cube.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class Face:
    axis: int
    owner: int
    neighbor: Optional[int]
    normal: np.ndarray
    center: np.ndarray
    h_F: float
    kind: str  # "interior" | "boundary"


@dataclass(frozen=True)
class FaceArrays:
    """Columnar storage for a set of faces (assembly iterates in this order)."""

    axis: np.ndarray      # (n,) int
    owner: np.ndarray     # (n,) int
    neighbor: np.ndarray  # (n,) int, -1 on boundary faces
    normal: np.ndarray    # (n, 3) float
    center: np.ndarray    # (n, 3) float

    def __len__(self) -> int:
        return len(self.axis)

    @property
    def sign(self) -> np.ndarray:
        """Sign of the nonzero normal component, +1 or -1."""
        return self.normal[np.arange(len(self)), self.axis].astype(int)


@dataclass(frozen=True)
class CartesianMesh:
    m: int
    h: float
    grid_index: np.ndarray   # (m^3, 3) grid triple of each label
    centers: np.ndarray      # (m^3, 3)
    interior: FaceArrays
    boundary: FaceArrays
    reversed_labels: bool = False
    _label_grid: np.ndarray = field(repr=False, default=None)

    @property
    def n_elements(self) -> int:
        return self.m ** 3

    @property
    def h_F(self) -> float:
        return self.h

    def label(self, i: int, j: int, l: int) -> int:
        return int(self._label_grid[i, j, l])

    def _faces(self, arr: FaceArrays, kind: str) -> list[Face]:
        return [
            Face(
                axis=int(arr.axis[f]),
                owner=int(arr.owner[f]),
                neighbor=None if arr.neighbor[f] < 0 else int(arr.neighbor[f]),
                normal=arr.normal[f].copy(),
                center=arr.center[f].copy(),
                h_F=self.h,
                kind=kind,
            )
            for f in range(len(arr))
        ]

    @property
    def interior_faces(self) -> list[Face]:
        return self._faces(self.interior, "interior")

    @property
    def boundary_faces(self) -> list[Face]:
        return self._faces(self.boundary, "boundary")

    @property
    def elements(self) -> list[tuple[tuple[int, int, int], np.ndarray]]:
        return [(tuple(int(v) for v in self.grid_index[e]), self.centers[e].copy())
                for e in range(self.n_elements)]


def _lex_labels(m: int, reverse: bool) -> np.ndarray:
    i, j, l = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    lab = i + j * m + l * m * m
    if reverse:
        lab = m ** 3 - 1 - lab
    return lab


def build_mesh(m: int, reverse_labels: bool = False) -> CartesianMesh:
    """Partition (0,1)^3 into ``m**3`` cubes of edge ``1/m``.

    The global label of grid cell (i, j, l) is ``i + j*m + l*m**2``; with
    ``reverse_labels`` it is ``m**3 - 1`` minus that, which flips every
    interior face orientation.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    h = 1.0 / m
    lab = _lex_labels(m, reverse_labels)

    n = m ** 3
    grid_index = np.empty((n, 3), dtype=int)
    ii, jj, ll = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    grid_index[lab.ravel()] = np.stack([ii.ravel(), jj.ravel(), ll.ravel()], axis=1)
    centers = (grid_index + 0.5) * h

    # interior faces: axis-major, then lexicographic on the lower cell
    ia, io, ine, inr, ic = [], [], [], [], []
    for d in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[d] = slice(0, m - 1)
        hi[d] = slice(1, m)
        a = lab[tuple(lo)].transpose(2, 1, 0).ravel()
        b = lab[tuple(hi)].transpose(2, 1, 0).ravel()
        owner = np.maximum(a, b)
        nbr = np.minimum(a, b)
        unit = np.zeros(3)
        unit[d] = 1.0
        # owner is the upper cell -> its outward normal points to -e_d
        sgn = np.where(owner == b, -1.0, 1.0)
        normal = sgn[:, None] * unit[None, :]
        lower_c = centers[a]
        center = lower_c.copy()
        center[:, d] += 0.5 * h
        ia.append(np.full(len(a), d))
        io.append(owner)
        ine.append(nbr)
        inr.append(normal)
        ic.append(center)
    interior = FaceArrays(
        axis=np.concatenate(ia).astype(int),
        owner=np.concatenate(io).astype(int),
        neighbor=np.concatenate(ine).astype(int),
        normal=np.concatenate(inr) if ia else np.zeros((0, 3)),
        center=np.concatenate(ic) if ia else np.zeros((0, 3)),
    )

    ba, bo, bn, bc = [], [], [], []
    for d in range(3):
        for side in (-1, 1):
            sl = [slice(None)] * 3
            sl[d] = 0 if side < 0 else m - 1
            cells = lab[tuple(sl)].T.ravel()
            unit = np.zeros(3)
            unit[d] = float(side)
            center = centers[cells].copy()
            center[:, d] = 0.0 if side < 0 else 1.0
            ba.append(np.full(len(cells), d))
            bo.append(cells)
            bn.append(np.tile(unit, (len(cells), 1)))
            bc.append(center)
    boundary = FaceArrays(
        axis=np.concatenate(ba).astype(int),
        owner=np.concatenate(bo).astype(int),
        neighbor=np.full(6 * m * m, -1, dtype=int),
        normal=np.concatenate(bn),
        center=np.concatenate(bc),
    )
    return CartesianMesh(m=m, h=h, grid_index=grid_index, centers=centers,
                         interior=interior, boundary=boundary,
                         reversed_labels=reverse_labels, _label_grid=lab)


@dataclass
class MeshDiagnostics:
    checks: dict[str, bool]
    max_normal_sum: float

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def validate_mesh(mesh: CartesianMesh) -> MeshDiagnostics:
    """Check the structural invariants of ``mesh``; never raises."""
    m, h = mesh.m, mesh.h
    I, B = mesh.interior, mesh.boundary
    checks: dict[str, bool] = {}
    checks["element_count"] = mesh.centers.shape[0] == m ** 3
    checks["interior_face_count"] = len(I) == 3 * m * m * (m - 1)
    checks["boundary_face_count"] = len(B) == 6 * m * m
    checks["h_times_m"] = h * m == 1.0
    checks["interior_distinct"] = bool(np.all(I.owner != I.neighbor)) and bool(np.all(I.neighbor >= 0))
    checks["boundary_single"] = bool(np.all(B.neighbor < 0))
    checks["owner_label_bigger"] = bool(np.all(I.owner > I.neighbor))
    checks["unit_normals"] = bool(np.allclose(np.linalg.norm(np.vstack([I.normal, B.normal]), axis=1), 1.0)) \
        if len(I) + len(B) else True

    # owner orientation: normal points from the owner center to the face
    if len(I):
        d_own = np.einsum("ij,ij->i", I.center - mesh.centers[I.owner], I.normal)
        d_nbr = np.einsum("ij,ij->i", I.center - mesh.centers[I.neighbor], I.normal)
        checks["owner_orientation"] = bool(np.all(np.isclose(d_own, 0.5 * h)) and np.all(np.isclose(d_nbr, -0.5 * h)))
        # both incident elements agree on the face plane
        ax = I.axis
        rows = np.arange(len(I))
        plane_o = mesh.centers[I.owner, ax] + 0.5 * h * I.normal[rows, ax]
        plane_n = mesh.centers[I.neighbor, ax] - 0.5 * h * I.normal[rows, ax]
        checks["shared_plane"] = bool(np.allclose(plane_o, plane_n, atol=1e-14)
                                      and np.allclose(plane_o, I.center[rows, ax], atol=1e-14))
    else:
        checks["owner_orientation"] = True
        checks["shared_plane"] = True
    if len(B):
        d_b = np.einsum("ij,ij->i", B.center - mesh.centers[B.owner], B.normal)
        checks["boundary_outward"] = bool(np.all(np.isclose(d_b, 0.5 * h)))
    else:
        checks["boundary_outward"] = True

    # closed-surface identity: sum over the element's faces of its outward normal * area
    acc = np.zeros((m ** 3, 3))
    area = h * h
    if len(I):
        np.add.at(acc, I.owner, I.normal * area)
        np.add.at(acc, I.neighbor, -I.normal * area)
    np.add.at(acc, B.owner, B.normal * area)
    max_sum = float(np.abs(acc).max()) if acc.size else 0.0
    checks["closed_surface"] = max_sum <= 1e-15

    return MeshDiagnostics(checks=checks, max_normal_sum=max_sum)
