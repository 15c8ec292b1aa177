from __future__ import annotations

import numpy as np
import pytest

from ncfem.manufactured import (
    CHECKERBOARD_VECTOR,
    UnknownLoadError,
    checkerboard_load,
    manufactured_solution,
    parse_load,
)
from ncfem.models import PointSet

POINTS = np.array([[0.2, 0.3], [0.55, 0.8], [0.9, 0.1]])
STEP = 1e-5


def central_difference(fn, points: np.ndarray) -> np.ndarray:
    columns = []
    for axis in range(2):
        shift = np.eye(2)[axis] * STEP
        columns.append((fn(points + shift) - fn(points - shift)) / (2 * STEP))
    return np.stack(columns, axis=1)


@pytest.mark.parametrize("name", ["sinsin", "biquartic"])
def test_derivatives_are_consistent(name):
    solution = manufactured_solution(name)
    np.testing.assert_allclose(central_difference(solution.value, POINTS), solution.gradient(POINTS), atol=1e-8)
    hessian = solution.hessian(POINTS)
    np.testing.assert_allclose(hessian, np.swapaxes(hessian, 1, 2))
    np.testing.assert_allclose(central_difference(solution.gradient, POINTS), np.swapaxes(hessian, 1, 2), atol=1e-7)


@pytest.mark.parametrize("name", ["sinsin", "biquartic"])
def test_solutions_vanish_on_the_boundary(name):
    solution = manufactured_solution(name)
    t = np.linspace(0.0, 1.0, 7)
    boundary = np.vstack([np.column_stack([t, 0 * t]), np.column_stack([t, 0 * t + 1]), np.column_stack([0 * t, t])])
    np.testing.assert_allclose(solution.value(boundary), 0.0, atol=1e-15)


def test_sinsin_load_is_minus_laplacian():
    solution = manufactured_solution("sinsin")
    laplacian = np.trace(solution.hessian(POINTS), axis1=1, axis2=2)
    load = solution.load.f0(PointSet(POINTS, np.zeros(3)))
    np.testing.assert_allclose(load, -laplacian, rtol=1e-13)
    assert solution.order == 1


def test_biquartic_load_is_bilaplacian():
    solution = manufactured_solution("biquartic")
    step = 1e-3

    def laplacian(points: np.ndarray) -> np.ndarray:
        return np.trace(solution.hessian(points), axis1=1, axis2=2)

    second = 0.0
    for axis in range(2):
        shift = np.eye(2)[axis] * step
        second = second + (laplacian(POINTS + shift) - 2 * laplacian(POINTS) + laplacian(POINTS - shift)) / step**2
    load = solution.load.f0(PointSet(POINTS, np.zeros(3)))
    np.testing.assert_allclose(load, second, atol=1e-4)
    assert solution.order == 2


def test_checkerboard_signs():
    points = PointSet(np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]]), np.zeros(4))
    values = checkerboard_load().g(points)
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    np.testing.assert_allclose(values, signs[:, None] * np.asarray(CHECKERBOARD_VECTOR)[None, :])
    assert checkerboard_load().f0 is None


@pytest.mark.parametrize(
    "source, label, manufactured",
    [
        ("manufactured:sinsin", "manufactured:sinsin", True),
        ("manufactured:biquartic", "manufactured:biquartic", True),
        ("checkerboard", "checkerboard", False),
        ("constant", "constant", False),
    ],
)
def test_parse_load(source, label, manufactured):
    load, solution = parse_load(source)
    assert load.label == label
    assert (solution is not None) == manufactured


@pytest.mark.parametrize("source", ["manufactured:cosh", "manufactured:", "gaussian", ""])
def test_unknown_loads(source):
    with pytest.raises(UnknownLoadError):
        parse_load(source)
