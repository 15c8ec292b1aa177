"""Face, element and normal-derivative bubbles with unit face moments."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import bernstein
from .mesh import Mesh
from .models import DofDescriptor, SpaceKind
from .simplex import barycentric_coordinates
from .spaces import BrokenSpace, DofSpace, SpaceConstructionError, column_matrix

_LOGGER = logging.getLogger(__name__)

MORLEY_BUBBLE_DEGREE = 9


def face_bubble_integral(mesh: Mesh, face: int) -> float:
    """``int_F prod_{z in F} lambda_z = |F| (d-1)! / (2d-1)!``."""
    d = mesh.dim
    return float(mesh.face_measures[face] * math.factorial(d - 1) / math.factorial(2 * d - 1))


def normal_bubble_integral(mesh: Mesh, face: int) -> float:
    """``int_F prod_{z in F} lambda_z**4``; equals ``|F| / 630`` on an edge."""
    d = mesh.dim
    return float(mesh.face_measures[face] * bernstein.barycentric_moment((4,) * d))


def build_face_bubble_space(mesh: Mesh) -> DofSpace:
    """Normalized face bubbles: ``prod_{z in F} lambda_z`` on ``K1`` and ``K2`` divided by its face integral.

    The dof of each bubble is its own face integral, so the basis is dual to
    the face-mean functionals.
    """
    d = mesh.dim
    broken = BrokenSpace(mesh, d)
    rows, cols, vals = [], [], []
    for dof, face in enumerate(mesh.interior_faces):
        scale = 1.0 / face_bubble_integral(mesh, face)
        for element in mesh.face_elements[face]:
            alpha = np.isin(mesh.elements[element], mesh.faces[face]).astype(np.int64)
            index, factor = bernstein.monomial_coefficients(d + 1, alpha)
            rows.append(np.array([broken.offset(element) + index]))
            cols.append(np.array([dof]))
            vals.append(np.array([factor * scale]))
    basis = column_matrix(rows, cols, vals, (broken.size, mesh.interior_faces.size))
    return DofSpace(
        kind=SpaceKind.FACE_BUBBLES,
        broken=broken,
        basis=basis,
        descriptors=[DofDescriptor("face-mean", int(f)) for f in mesh.interior_faces],
        smoothness="C0",
        label="face bubbles",
    )


def element_bubble_weight(mesh: Mesh) -> tuple[int, ...]:
    """Exponents of ``Phi_K = prod_z lambda_z`` for weighted Gram matrices."""
    return (1,) * (mesh.dim + 1)


def _normal_bubble(mesh: Mesh, face: int) -> Callable[[np.ndarray, int], np.ndarray]:
    k1, k2 = (int(k) for k in mesh.face_elements[face])
    verts1 = mesh.element_vertices(k1)
    verts2 = mesh.element_vertices(k2)
    local1 = [mesh.local_vertex(k1, z) for z in mesh.faces[face]]
    local2 = [mesh.local_vertex(k2, z) for z in mesh.faces[face]]
    normal = mesh.face_normals[face]
    midpoint = mesh.face_midpoints[face]
    scale = 1.0 / normal_bubble_integral(mesh, face)

    def bubble(points: np.ndarray, element: int) -> np.ndarray:
        lam1 = barycentric_coordinates(verts1, points)[:, local1]
        lam2 = barycentric_coordinates(verts2, points)[:, local2]
        zeta = (points - midpoint) @ normal
        return scale * zeta * np.prod((lam1 * lam2) ** 2, axis=1)

    return bubble


def build_normal_bubble_space(mesh: Mesh) -> DofSpace:
    """Degree-9 bubbles ``zeta_F phi_F / int_F phi_F`` on ``K1`` and ``K2``.

    ``phi_F`` multiplies the squared products of the affinely extended
    barycentric coordinates of both neighbours, so it is one polynomial on the
    patch and vanishes to first order on the patch boundary.
    """
    if mesh.dim != 2:
        raise SpaceConstructionError("normal-derivative bubbles are implemented for triangles")
    broken = BrokenSpace(mesh, MORLEY_BUBBLE_DEGREE)
    rows, cols, vals = [], [], []
    for dof, face in enumerate(mesh.interior_faces):
        bubble = _normal_bubble(mesh, int(face))
        for element in mesh.face_elements[face]:
            local = broken.interpolate_local(int(element), bubble)
            rows.append(broken.offset(int(element)) + np.arange(broken.local_dim))
            cols.append(np.full(broken.local_dim, dof))
            vals.append(local)
    basis = column_matrix(rows, cols, vals, (broken.size, mesh.interior_faces.size))
    return DofSpace(
        kind=SpaceKind.MORLEY_NORMAL_BUBBLES,
        broken=broken,
        basis=basis,
        descriptors=[DofDescriptor("face-normal-moment", int(f)) for f in mesh.interior_faces],
        smoothness="C1",
        label="normal-derivative bubbles",
    )


@dataclass
class BubbleCatalog:
    """All bubbles a smoother draws from on one mesh."""

    face_bubbles: DofSpace
    normal_bubbles: DofSpace | None
    element_weight: tuple[int, ...]

    @property
    def face_normalizations(self) -> np.ndarray:
        mesh = self.face_bubbles.mesh
        return np.array([1.0 / face_bubble_integral(mesh, f) for f in mesh.interior_faces])

    @property
    def normal_normalizations(self) -> np.ndarray:
        mesh = self.face_bubbles.mesh
        return np.array([1.0 / normal_bubble_integral(mesh, f) for f in mesh.interior_faces])


def build_bubble_catalog(mesh: Mesh, include_normal: bool = True) -> BubbleCatalog:
    normal = build_normal_bubble_space(mesh) if include_normal and mesh.dim == 2 else None
    return BubbleCatalog(
        face_bubbles=build_face_bubble_space(mesh),
        normal_bubbles=normal,
        element_weight=element_bubble_weight(mesh),
    )
