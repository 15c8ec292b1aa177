"""Clough-Tocher macro element: C1 cubics on the barycentric split of each triangle."""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg
from scipy import sparse

from . import bernstein
from .mesh import Mesh
from .models import DofDescriptor, PointSet, SpaceKind
from .spaces import BrokenSpace, DofSpace, SpaceConstructionError, column_matrix, face_moment_matrix
from .simplex import barycentric_coordinates
from .workers import ordered_map

_LOGGER = logging.getLogger(__name__)

HCT_LOCAL_DIM = 12
DEFAULT_CONDITION_LIMIT = 1e8

# cells (c, c') sharing the internal edge from outer vertex k to the barycenter
_INTERNAL_EDGES = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
_EDGE_SAMPLES = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0])


def cell_tabulation(broken: BrokenSpace, element: int, cell: int, points: np.ndarray, order: int) -> np.ndarray:
    """Tabulate the cubic basis of one cell, even at points on the cell boundary."""
    bary = barycentric_coordinates(broken.cell_vertices(element, cell), points)
    values = bernstein.tabulate(broken.degree, bary, broken.cell_gradients(element, cell), order)
    return values.reshape(points.shape[0], -1, broken.cell_dim)


def _internal_edge_points(mesh: Mesh, element: int, vertex: int, samples: np.ndarray) -> np.ndarray:
    corners = mesh.element_vertices(element)
    centre = corners.mean(axis=0)
    return (1.0 - samples)[:, None] * corners[vertex] + samples[:, None] * centre


def c1_constraints(broken: BrokenSpace, element: int) -> np.ndarray:
    """Rows forcing equal value and gradient across the three internal edges."""
    mesh = broken.mesh
    blocks = []
    for first, second, vertex in _INTERNAL_EDGES:
        points = _internal_edge_points(mesh, element, vertex, _EDGE_SAMPLES)
        for order in (0, 1):
            rows = np.zeros((points.shape[0] * mesh.dim**order, broken.local_dim))
            for cell, sign in ((first, 1.0), (second, -1.0)):
                table = cell_tabulation(broken, element, cell, points, order).reshape(-1, broken.cell_dim)
                start = cell * broken.cell_dim
                rows[:, start : start + broken.cell_dim] += sign * table
            blocks.append(rows)
    return np.vstack(blocks)


def local_dof_matrix(broken: BrokenSpace, element: int) -> np.ndarray:
    """The twelve local functionals on the thirty split coefficients.

    Order: ``s, ds/dx, ds/dy`` at vertices 0, 1, 2, then ``grad s(m_F) . n_F``
    for local faces 0, 1, 2 with the global face normal.
    """
    mesh = broken.mesh
    functionals = np.zeros((HCT_LOCAL_DIM, broken.local_dim))
    for i in range(3):
        cell = (i + 1) % 3
        point = mesh.element_vertices(element)[i][None, :]
        start = cell * broken.cell_dim
        functionals[3 * i, start : start + broken.cell_dim] = cell_tabulation(broken, element, cell, point, 0)[0, 0]
        functionals[3 * i + 1 : 3 * i + 3, start : start + broken.cell_dim] = cell_tabulation(
            broken, element, cell, point, 1
        )[0]
    for j, face in enumerate(mesh.element_faces[element]):
        point = mesh.face_midpoints[face][None, :]
        start = j * broken.cell_dim
        gradient = cell_tabulation(broken, element, j, point, 1)[0]
        functionals[9 + j, start : start + broken.cell_dim] = mesh.face_normals[face] @ gradient
    return functionals


def hct_local_basis(broken: BrokenSpace, element: int, condition_limit: float = DEFAULT_CONDITION_LIMIT) -> np.ndarray:
    """Split coefficients ``(30, 12)`` of the local nodal basis on *element*."""
    constraints = c1_constraints(broken, element)
    scale = np.abs(constraints).max()
    kernel = scipy.linalg.null_space(constraints / scale, rcond=1e-10)
    if kernel.shape[1] != HCT_LOCAL_DIM:
        raise SpaceConstructionError(
            f"C1 cubic space on the split of element {element} has dimension {kernel.shape[1]}, expected 12"
        )
    dual = local_dof_matrix(broken, element) @ kernel
    condition = np.linalg.cond(dual)
    if not np.isfinite(condition) or condition > condition_limit:
        raise SpaceConstructionError(
            f"HCT local system on element {element} is ill-conditioned (cond {condition:.3e} > {condition_limit:g})"
        )
    return kernel @ np.linalg.inv(dual)


def build_hct_space(mesh: Mesh, *, condition_limit: float = DEFAULT_CONDITION_LIMIT, workers: int = 1) -> DofSpace:
    """Clamped HCT space: value and gradient at interior vertices, midpoint normal slopes on interior faces."""
    if mesh.dim != 2:
        raise SpaceConstructionError("the HCT element is implemented for triangles")
    broken = BrokenSpace(mesh, 3, split="ct")
    descriptors: list[DofDescriptor] = []
    for z in mesh.interior_vertices:
        descriptors.append(DofDescriptor("vertex-value", int(z)))
        descriptors.append(DofDescriptor("vertex-gradient", int(z), 0))
        descriptors.append(DofDescriptor("vertex-gradient", int(z), 1))
    descriptors += [DofDescriptor("face-normal-midpoint", int(f)) for f in mesh.interior_faces]
    lookup = {(d.kind, d.entity, d.component): i for i, d in enumerate(descriptors)}

    local_bases = ordered_map(
        lambda k: hct_local_basis(broken, k, condition_limit), range(mesh.n_elements), workers
    )
    rows, cols, vals = [], [], []
    for element, local in enumerate(local_bases):
        keys = []
        for v in mesh.elements[element]:
            keys += [("vertex-value", int(v), 0), ("vertex-gradient", int(v), 0), ("vertex-gradient", int(v), 1)]
        keys += [("face-normal-midpoint", int(f), 0) for f in mesh.element_faces[element]]
        for i, key in enumerate(keys):
            dof = lookup.get(key)
            if dof is None:
                continue
            rows.append(broken.offset(element) + np.arange(broken.local_dim))
            cols.append(np.full(broken.local_dim, dof))
            vals.append(local[:, i])
    basis = column_matrix(rows, cols, vals, (broken.size, len(descriptors)))
    return DofSpace(
        kind=SpaceKind.HCT,
        broken=broken,
        basis=basis,
        descriptors=descriptors,
        smoothness="C1",
        label="HCT",
    )


def c1_defect(space: DofSpace, samples_per_edge: int = 5) -> dict[str, float]:
    """Largest value and gradient mismatches of the basis across all edges.

    ``internal`` covers the split edges inside elements, ``interface`` the
    interior mesh faces and ``boundary`` the clamped trace on the boundary.
    """
    broken = space.broken
    mesh = space.mesh
    samples = np.linspace(0.0, 1.0, samples_per_edge + 2)[1:-1]
    basis = space.basis.toarray()
    internal = 0.0
    for element in range(mesh.n_elements):
        for first, second, vertex in _INTERNAL_EDGES:
            points = _internal_edge_points(mesh, element, vertex, samples)
            for order in (0, 1):
                a = cell_tabulation(broken, element, first, points, order).reshape(-1, broken.cell_dim)
                b = cell_tabulation(broken, element, second, points, order).reshape(-1, broken.cell_dim)
                start_a = broken.offset(element, first)
                start_b = broken.offset(element, second)
                jump = a @ basis[start_a : start_a + broken.cell_dim] - b @ basis[start_b : start_b + broken.cell_dim]
                internal = max(internal, float(np.abs(jump).max(initial=0.0)))

    interface = 0.0
    boundary = 0.0
    for face in range(mesh.n_faces):
        corners = mesh.vertices[mesh.faces[face]]
        points = (1.0 - samples)[:, None] * corners[0] + samples[:, None] * corners[1]
        k1, k2 = mesh.face_elements[face]
        for order in (0, 1):
            first = space.evaluate(PointSet(points, np.full(points.shape[0], k1)), order).toarray()
            if k2 >= 0:
                second = space.evaluate(PointSet(points, np.full(points.shape[0], k2)), order).toarray()
                interface = max(interface, float(np.abs(first - second).max(initial=0.0)))
            else:
                boundary = max(boundary, float(np.abs(first).max(initial=0.0)))
    return {"internal": internal, "interface": interface, "boundary": boundary}


def edge_normal_moments(space: DofSpace) -> sparse.csr_matrix:
    """``int_F grad s . n_F`` for every face (rows) and basis function (columns), traced from ``K1``."""
    return face_moment_matrix(space, np.arange(space.mesh.n_faces), normal=True)
