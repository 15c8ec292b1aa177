"""Geometry of single simplices: measures, barycentric frames, shape data."""
from __future__ import annotations

import math

import numpy as np


def simplex_measure(vertices: np.ndarray) -> float:
    """n-dimensional measure of the simplex spanned by ``n+1`` points in R^d."""
    vertices = np.asarray(vertices, dtype=float)
    n = vertices.shape[0] - 1
    if n == 0:
        return 1.0
    edges = (vertices[1:] - vertices[0]).T
    gram = edges.T @ edges
    return float(math.sqrt(max(np.linalg.det(gram), 0.0)) / math.factorial(n))


def barycentric_gradients(vertices: np.ndarray) -> np.ndarray:
    """Gradients of the barycentric coordinates of a full-dimensional simplex, shape ``(d+1, d)``."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    matrix = np.vstack([vertices.T, np.ones(d + 1)])
    inverse = np.linalg.inv(matrix)
    return inverse[:, :d]


def barycentric_coordinates(vertices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of *points* with respect to a full-dimensional simplex.

    Points outside the simplex get coordinates outside ``[0, 1]``; the
    coordinates are the affine extensions used by the Morley face bubbles.
    """
    vertices = np.asarray(vertices, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = vertices.shape[1]
    matrix = np.vstack([vertices.T, np.ones(d + 1)])
    rhs = np.vstack([points.T, np.ones(points.shape[0])])
    return np.linalg.solve(matrix, rhs).T


def face_barycentric_coordinates(vertices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of points lying on a lower-dimensional simplex (least squares)."""
    vertices = np.asarray(vertices, dtype=float)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    edges = (vertices[1:] - vertices[0]).T
    local, *_ = np.linalg.lstsq(edges, (points - vertices[0]).T, rcond=None)
    local = np.atleast_2d(local.T)
    return np.hstack([1.0 - local.sum(axis=1, keepdims=True), local])


def diameter(vertices: np.ndarray) -> float:
    vertices = np.asarray(vertices, dtype=float)
    diffs = vertices[:, None, :] - vertices[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).max())


def inball_diameter(vertices: np.ndarray) -> float:
    """Diameter of the inscribed ball, ``2 d |K| / |boundary K|``."""
    vertices = np.asarray(vertices, dtype=float)
    d = vertices.shape[1]
    surface = sum(
        simplex_measure(np.delete(vertices, i, axis=0)) for i in range(vertices.shape[0])
    )
    return 2.0 * d * simplex_measure(vertices) / surface


def clough_tocher_cells(vertices: np.ndarray) -> np.ndarray:
    """Split a triangle through its barycenter.

    Cell ``i`` is ``(v_{i+1}, v_{i+2}, m_K)`` and therefore contains the outer
    edge opposite vertex ``i``.
    """
    vertices = np.asarray(vertices, dtype=float)
    centre = vertices.mean(axis=0)
    return np.array(
        [[vertices[(i + 1) % 3], vertices[(i + 2) % 3], centre] for i in range(3)]
    )
