from __future__ import annotations

import numpy as np
import pytest

from ncfem import bernstein
from ncfem.quadrature import MAX_DEGREE, QuadratureError, element_point_set, face_point_set, map_rule, simplex_rule


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("degree", [0, 1, 4, 7, 12])
def test_rule_integrates_barycentric_monomials(n, degree):
    rule = simplex_rule(n, degree)
    assert rule.degree >= degree
    assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
    for alpha in bernstein.multi_indices(n + 1, degree):
        integrand = np.prod(rule.bary ** alpha[None, :], axis=1)
        assert rule.weights @ integrand == pytest.approx(bernstein.barycentric_moment(alpha), rel=1e-12, abs=1e-15)


def test_points_are_inside_the_simplex():
    rule = simplex_rule(2, 9)
    assert np.all(rule.bary >= 0.0)
    np.testing.assert_allclose(rule.bary.sum(axis=1), 1.0, atol=1e-14)


@pytest.mark.parametrize("degree", [-1, MAX_DEGREE + 1])
def test_out_of_range_exactness_rejected(degree):
    with pytest.raises(QuadratureError):
        simplex_rule(2, degree)


def test_require_guards_exactness():
    rule = simplex_rule(2, 3)
    rule.require(rule.degree)
    with pytest.raises(QuadratureError):
        rule.require(rule.degree + 1)


def test_map_rule_scales_by_measure():
    vertices = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]])
    points, weights = map_rule(simplex_rule(2, 2), vertices)
    assert weights.sum() == pytest.approx(3.0)
    # int x over the triangle = |K| * mean of x over the vertices
    assert weights @ points[:, 0] == pytest.approx(3.0 * 2.0 / 3.0)


@pytest.mark.parametrize("split", ["none", "ct"])
def test_element_point_set_covers_the_domain(square2, split):
    point_set = element_point_set(square2, 4, split=split)
    assert point_set.weights.sum() == pytest.approx(1.0, abs=1e-13)
    # int_(0,1)^2 x y = 1/4
    assert point_set.weights @ (point_set.points[:, 0] * point_set.points[:, 1]) == pytest.approx(0.25, abs=1e-13)
    assert set(point_set.elements.tolist()) == set(range(square2.n_elements))


def test_face_point_set_uses_face_measure(square2):
    for face in range(square2.n_faces):
        rule = face_point_set(square2, face, 3)
        assert rule.weights.sum() == pytest.approx(square2.face_measures[face])
        assert np.all(rule.elements == square2.face_elements[face, 0])


def test_face_point_set_sides(square2):
    face = int(square2.interior_faces[0])
    other = face_point_set(square2, face, 2, side=1)
    assert np.all(other.elements == square2.face_elements[face, 1])
    with pytest.raises(QuadratureError):
        face_point_set(square2, int(square2.boundary_faces[0]), 2, side=1)
