from __future__ import annotations

import numpy as np
import pytest

from ncfem.bubbles import (
    MORLEY_BUBBLE_DEGREE,
    build_bubble_catalog,
    build_face_bubble_space,
    build_normal_bubble_space,
    face_bubble_integral,
    normal_bubble_integral,
)
from ncfem.spaces import SpaceConstructionError, face_moment_matrix, sample_point_set


def test_face_bubble_integral_closed_forms(square2, tetrahedra):
    for face in square2.interior_faces:
        assert face_bubble_integral(square2, face) == pytest.approx(square2.face_measures[face] / 6.0)
    # (d-1)!/(2d-1)! = 2/120 on a triangle face
    face = int(tetrahedra.interior_faces[0])
    assert face_bubble_integral(tetrahedra, face) == pytest.approx(tetrahedra.face_measures[face] / 60.0)


def test_normal_bubble_integral(square2):
    for face in square2.interior_faces:
        assert normal_bubble_integral(square2, face) == pytest.approx(square2.face_measures[face] / 630.0)


@pytest.mark.parametrize("mesh_name", ["square2", "tetrahedra"])
def test_face_bubbles_have_unit_face_means(request, mesh_name):
    mesh = request.getfixturevalue(mesh_name)
    bubbles = build_face_bubble_space(mesh)
    moments = face_moment_matrix(bubbles, mesh.interior_faces).toarray()
    np.testing.assert_allclose(moments, np.eye(bubbles.ndofs), atol=1e-12)


def test_face_bubbles_vanish_on_the_boundary(square2):
    bubbles = build_face_bubble_space(square2)
    moments = face_moment_matrix(bubbles, square2.boundary_faces).toarray()
    np.testing.assert_allclose(moments, 0.0, atol=1e-14)


def test_normal_bubbles_have_unit_normal_moments(square2):
    bubbles = build_normal_bubble_space(square2)
    assert bubbles.degree == MORLEY_BUBBLE_DEGREE
    moments = face_moment_matrix(bubbles, square2.interior_faces, normal=True).toarray()
    np.testing.assert_allclose(moments, np.eye(bubbles.ndofs), atol=1e-9)
    # zeta_F vanishes on F, so the plain face means are zero
    means = face_moment_matrix(bubbles, square2.interior_faces).toarray()
    np.testing.assert_allclose(means, 0.0, atol=1e-9)


def test_normal_bubbles_are_continuous_across_their_face(square2):
    bubbles = build_normal_bubble_space(square2)
    faces = square2.interior_faces
    for order in (0, 1):
        first = face_moment_matrix(bubbles, faces, normal=bool(order), side=0).toarray()
        second = face_moment_matrix(bubbles, faces, normal=bool(order), side=1).toarray()
        np.testing.assert_allclose(first, second, atol=1e-9)


def test_normal_bubbles_need_triangles(tetrahedra):
    with pytest.raises(SpaceConstructionError):
        build_normal_bubble_space(tetrahedra)


def test_bubble_catalog(square2, tetrahedra):
    catalog = build_bubble_catalog(square2)
    assert catalog.normal_bubbles is not None
    assert catalog.element_weight == (1, 1, 1)
    np.testing.assert_allclose(catalog.face_normalizations, 6.0 / square2.face_measures[square2.interior_faces])
    assert build_bubble_catalog(tetrahedra).normal_bubbles is None
    points = sample_point_set(square2)
    values = catalog.face_bubbles.evaluate(points).toarray()
    assert np.all(values >= -1e-14)
