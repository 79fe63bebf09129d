import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipdg_maxwell.mesh import build_mesh, validate_mesh


@pytest.mark.parametrize("m,n_el,n_int,n_bnd", [(1, 1, 0, 6), (2, 8, 12, 24), (3, 27, 54, 54)])
def test_counts(m, n_el, n_int, n_bnd):
    mesh = build_mesh(m)
    assert mesh.n_elements == n_el
    assert len(mesh.interior_faces) == n_int
    assert len(mesh.boundary_faces) == n_bnd


def test_face_size():
    mesh = build_mesh(10)
    assert all(f.h_F == 0.1 for f in mesh.interior_faces + mesh.boundary_faces)
    assert mesh.h * mesh.m == 1.0


@pytest.mark.parametrize("m", [0, -1, 2.5])
def test_invalid_m(m):
    with pytest.raises(ValueError):
        build_mesh(m)


def test_lexicographic_labels():
    mesh = build_mesh(3)
    assert mesh.label(1, 2, 0) == 1 + 2 * 3
    np.testing.assert_allclose(mesh.centers[mesh.label(2, 0, 1)], [2.5 / 3, 0.5 / 3, 1.5 / 3])


def test_validate_passes():
    diag = validate_mesh(build_mesh(4))
    assert diag.ok, diag.checks


def test_flipped_normal_detected():
    mesh = build_mesh(4)
    normal = mesh.interior.normal.copy()
    normal[5] *= -1
    bad = dataclasses.replace(mesh, interior=dataclasses.replace(mesh.interior, normal=normal))
    diag = validate_mesh(bad)
    assert not diag.checks["owner_orientation"]
    assert not diag.ok


def test_closed_surface():
    diag = validate_mesh(build_mesh(3))
    assert diag.max_normal_sum <= 1e-15


def test_reversed_labels_flip_orientation():
    a = build_mesh(3)
    b = build_mesh(3, reverse_labels=True)
    assert validate_mesh(b).ok
    n = a.n_elements
    # same geometric faces in the same order; owner/neighbor swap under relabeling
    np.testing.assert_array_equal(n - 1 - a.interior.owner, b.interior.neighbor)
    np.testing.assert_array_equal(n - 1 - a.interior.neighbor, b.interior.owner)
    np.testing.assert_array_equal(a.interior.normal, -b.interior.normal)
    np.testing.assert_array_equal(a.boundary.normal, b.boundary.normal)


@settings(max_examples=8, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.booleans())
def test_invariants_property(m, rev):
    mesh = build_mesh(m, reverse_labels=rev)
    diag = validate_mesh(mesh)
    assert diag.ok, diag.checks
    # every interior face has two distinct elements, every boundary face one
    assert np.all(mesh.interior.owner != mesh.interior.neighbor)
    assert np.all(mesh.boundary.neighbor == -1)
    # boundary normals are outward normals of the cube
    c = mesh.boundary.center
    nu = mesh.boundary.normal
    on_face = np.isclose(np.abs(c - 0.5).max(axis=1), 0.5)
    assert np.all(on_face)
    assert np.all(np.einsum("ij,ij->i", c - 0.5, nu) > 0)
