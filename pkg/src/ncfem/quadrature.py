"""Collapsed Gauss-Jacobi quadrature on simplices and mesh point sets."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import roots_jacobi

from .models import NcfemError, PointSet
from .simplex import clough_tocher_cells, simplex_measure

if TYPE_CHECKING:
    from .mesh import Mesh

_LOGGER = logging.getLogger(__name__)

#: Highest exactness the collapsed rules are built for.
MAX_DEGREE = 40


class QuadratureError(NcfemError):
    """Raised when a rule cannot deliver the requested exactness."""


@dataclass(frozen=True)
class QuadratureRule:
    """Reference rule in barycentric coordinates with weights summing to one.

    Multiplying the weights by the simplex measure integrates over that simplex.
    """

    bary: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n_vars(self) -> int:
        return int(self.bary.shape[1])

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def require(self, degree: int) -> None:
        if degree > self.degree:
            raise QuadratureError(
                f"rule of exactness {self.degree} cannot integrate degree {degree} exactly"
            )


@lru_cache(maxsize=None)
def simplex_rule(n: int, degree: int) -> QuadratureRule:
    """Conical product rule on the reference ``n``-simplex, exact to *degree*.

    Direction ``k`` uses Gauss-Jacobi points with weight ``(1-x)^(n-1-k)`` so
    that the collapse of the cube onto the simplex is absorbed exactly.
    """
    if n < 0:
        raise QuadratureError(f"invalid simplex dimension {n}")
    if degree < 0 or degree > MAX_DEGREE:
        raise QuadratureError(f"requested exactness {degree} outside [0, {MAX_DEGREE}]")
    if n == 0:
        bary = np.ones((1, 1))
        weights = np.ones(1)
        bary.setflags(write=False)
        weights.setflags(write=False)
        return QuadratureRule(bary=bary, weights=weights, degree=MAX_DEGREE)

    m = max(1, math.ceil((degree + 1) / 2))
    nodes_1d: list[np.ndarray] = []
    weights_1d: list[np.ndarray] = []
    for k in range(n):
        alpha = float(n - 1 - k)
        x, w = roots_jacobi(m, alpha, 0.0)
        nodes_1d.append((1.0 + x) / 2.0)
        weights_1d.append(w / 2.0 ** (alpha + 1.0))

    grids = np.meshgrid(*nodes_1d, indexing="ij")
    weight_grids = np.meshgrid(*weights_1d, indexing="ij")
    t = np.stack([g.reshape(-1) for g in grids], axis=1)
    weights = np.prod(np.stack([g.reshape(-1) for g in weight_grids], axis=1), axis=1)

    cart = np.empty_like(t)
    remaining = np.ones(t.shape[0])
    for k in range(n):
        cart[:, k] = t[:, k] * remaining
        remaining = remaining * (1.0 - t[:, k])
    bary = np.hstack([1.0 - cart.sum(axis=1, keepdims=True), cart])
    weights = weights / weights.sum()

    bary.setflags(write=False)
    weights.setflags(write=False)
    _LOGGER.debug("Built %d-point rule on %d-simplex with exactness %d", weights.size, n, 2 * m - 1)
    return QuadratureRule(bary=bary, weights=weights, degree=2 * m - 1)


def map_rule(rule: QuadratureRule, vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Physical points and weights of *rule* on the simplex spanned by *vertices*."""
    vertices = np.asarray(vertices, dtype=float)
    points = rule.bary @ vertices
    return points, rule.weights * simplex_measure(vertices)


def element_point_set(mesh: "Mesh", degree: int, split: str = "none") -> PointSet:
    """Quadrature points over every element, tagged with the owning element.

    ``split="ct"`` integrates over the three Clough-Tocher cells of each
    triangle so that piecewise polynomials on the split are integrated exactly.
    """
    rule = simplex_rule(mesh.dim, degree)
    all_points: list[np.ndarray] = []
    all_weights: list[np.ndarray] = []
    owners: list[np.ndarray] = []
    for element in range(mesh.n_elements):
        vertices = mesh.element_vertices(element)
        if split == "ct":
            cells = clough_tocher_cells(vertices)
        elif split == "none":
            cells = vertices[None]
        else:
            raise QuadratureError(f"unknown split '{split}'")
        for cell in cells:
            points, weights = map_rule(rule, cell)
            all_points.append(points)
            all_weights.append(weights)
            owners.append(np.full(weights.size, element, dtype=np.int64))
    return PointSet(
        points=np.vstack(all_points),
        elements=np.concatenate(owners),
        weights=np.concatenate(all_weights),
    )


def face_point_set(mesh: "Mesh", face: int, degree: int, side: int = 0) -> PointSet:
    """Quadrature points on *face*, owned by the element on *side* (0 for K1, 1 for K2)."""
    element = int(mesh.face_elements[face, side])
    if element < 0:
        raise QuadratureError(f"face {tuple(mesh.faces[face])} has no element on side {side}")
    rule = simplex_rule(mesh.dim - 1, degree)
    points, weights = map_rule(rule, mesh.vertices[mesh.faces[face]])
    return PointSet(points=points, elements=np.full(weights.size, element), weights=weights)
