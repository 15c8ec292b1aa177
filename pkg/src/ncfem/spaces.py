"""Discrete spaces as sparse basis matrices over broken polynomial spaces.

Every space stores its basis as a matrix whose columns hold the
Bernstein-Bezier coefficients of one basis function, element by element
(and cell by cell on a Clough-Tocher split). Evaluating a space at a
:class:`~ncfem.models.PointSet` therefore always returns a sparse matrix with
one row per point (and derivative component) and one column per dof.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
import scipy.linalg
from scipy import sparse

from . import bernstein
from .mesh import Mesh
from .models import DofDescriptor, NcfemError, PointSet, SpaceKind
from .quadrature import QuadratureRule, face_point_set, map_rule, simplex_rule
from .simplex import barycentric_coordinates, barycentric_gradients, clough_tocher_cells
from .workers import ordered_map

_LOGGER = logging.getLogger(__name__)

SPLIT_CELLS = {"none": 1, "ct": 3}

#: Relative singular values below this count as exact zeros, above the upper
#: value as nonzero; anything in between is refused.
DEFAULT_DEAD_ZONE = (1e-12, 1e-8)

#: Descriptor kinds of the local jump-moment kernel basis.
LOCAL_KERNEL_DOFS = ("element-kernel", "face-moment", "vertex-potential")


class SpaceConstructionError(NcfemError):
    """Raised when a local dual system or a kernel computation is unreliable."""


ElementFunction = Callable[[np.ndarray, int], np.ndarray]


class BrokenSpace:
    """Discontinuous piecewise polynomials of fixed degree, optionally on a split."""

    def __init__(self, mesh: Mesh, degree: int, split: str = "none") -> None:
        if split not in SPLIT_CELLS:
            raise SpaceConstructionError(f"unknown split '{split}'")
        if split == "ct" and mesh.dim != 2:
            raise SpaceConstructionError("the Clough-Tocher split needs a triangle mesh")
        self.mesh = mesh
        self.degree = int(degree)
        self.split = split
        self.n_cells = SPLIT_CELLS[split]
        self.n_vars = mesh.dim + 1
        self.cell_dim = bernstein.dimension(self.n_vars, self.degree)
        self.local_dim = self.n_cells * self.cell_dim
        self.size = mesh.n_elements * self.local_dim
        if split == "ct":
            self._cells = np.array([clough_tocher_cells(mesh.element_vertices(k)) for k in range(mesh.n_elements)])
            self._cell_grads = np.array(
                [[barycentric_gradients(cell) for cell in cells] for cells in self._cells]
            )

    def offset(self, element: int, cell: int = 0) -> int:
        return (element * self.n_cells + cell) * self.cell_dim

    def cell_vertices(self, element: int, cell: int = 0) -> np.ndarray:
        if self.split == "none":
            return self.mesh.element_vertices(element)
        return self._cells[element, cell]

    def cell_gradients(self, element: int, cell: int = 0) -> np.ndarray:
        if self.split == "none":
            return self.mesh.bary_grads[element]
        return self._cell_grads[element, cell]

    def locate(self, element: int, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cell index and cell barycentric coordinates of *points* inside *element*."""
        points = np.atleast_2d(points)
        if self.split == "none":
            return np.zeros(points.shape[0], dtype=np.int64), barycentric_coordinates(
                self.mesh.element_vertices(element), points
            )
        outer = barycentric_coordinates(self.mesh.element_vertices(element), points)
        cells = np.argmin(outer, axis=1)
        bary = np.empty_like(outer)
        for cell in np.unique(cells):
            mask = cells == cell
            bary[mask] = barycentric_coordinates(self._cells[element, cell], points[mask])
        return cells, bary

    def local_tabulation(self, element: int, points: np.ndarray, order: int = 0) -> np.ndarray:
        """Dense ``(npts, d**order, local_dim)`` table of the element's local basis."""
        points = np.atleast_2d(points)
        d = self.mesh.dim
        ncomp = d**order
        table = np.zeros((points.shape[0], ncomp, self.local_dim))
        cells, bary = self.locate(element, points)
        for cell in np.unique(cells):
            mask = cells == cell
            values = bernstein.tabulate(self.degree, bary[mask], self.cell_gradients(element, cell), order)
            start = cell * self.cell_dim
            table[mask, :, start : start + self.cell_dim] = values.reshape(int(mask.sum()), ncomp, self.cell_dim)
        return table

    def evaluate(self, point_set: PointSet, order: int = 0) -> sparse.csr_matrix:
        """Sparse ``(N * d**order, size)`` evaluation matrix, rows point-major."""
        ncomp = self.mesh.dim**order
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
        for element, indices in point_set.element_groups():
            table = self.local_tabulation(element, point_set.points[indices], order)
            row_ids = indices[:, None, None] * ncomp + np.arange(ncomp)[None, :, None]
            col_ids = self.offset(element) + np.arange(self.local_dim)[None, None, :]
            row_ids, col_ids = np.broadcast_arrays(row_ids, col_ids)
            keep = table != 0.0
            rows.append(row_ids[keep])
            cols.append(col_ids[keep])
            vals.append(table[keep])
        shape = (point_set.size * ncomp, self.size)
        if not rows:
            return sparse.csr_matrix(shape)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )

    def interpolate_local(self, element: int, fn: ElementFunction) -> np.ndarray:
        """Bernstein coefficients of the degree-``degree`` interpolant of *fn* on *element*."""
        nodes = bernstein.domain_points(self.n_vars, self.degree)
        inverse = bernstein.interpolation_matrix(self.n_vars, self.degree)
        coefficients = np.empty(self.local_dim)
        for cell in range(self.n_cells):
            physical = nodes @ self.cell_vertices(element, cell)
            values = np.asarray(fn(physical, element), dtype=float).reshape(-1)
            coefficients[cell * self.cell_dim : (cell + 1) * self.cell_dim] = inverse @ values
        return coefficients

    def interpolate(self, fn: ElementFunction) -> np.ndarray:
        """Nodal interpolant of ``fn(points, element)`` on every element."""
        return np.concatenate([self.interpolate_local(k, fn) for k in range(self.mesh.n_elements)])

    def elevation(self, target_degree: int) -> sparse.csr_matrix:
        """Block-diagonal degree elevation into the broken space of *target_degree*."""
        if self.split != "none":
            raise SpaceConstructionError("degree elevation is only available without a split")
        local = bernstein.elevation_matrix(self.n_vars, self.degree, target_degree)
        return sparse.block_diag([sparse.csr_matrix(local)] * self.mesh.n_elements, format="csr")


class Evaluable(Protocol):
    """Common surface of :class:`DofSpace` and :class:`DirectSumSpace`."""

    mesh: Mesh

    @property
    def ndofs(self) -> int:
        ...

    @property
    def degree(self) -> int:
        ...

    @property
    def split(self) -> str:
        ...

    def evaluate(self, point_set: PointSet, order: int = 0) -> sparse.csr_matrix:
        ...


@dataclass
class LagrangeNodeTable:
    """Lagrange nodes of one order, deduplicated over the mesh.

    A node is keyed by the sorted ``(vertex id, exponent)`` pairs of its
    nonzero barycentric exponents, which makes the key independent of the
    element it was reached from. ``owner[g]`` is the smallest element
    containing node ``g``.
    """

    degree: int
    keys: list[tuple[tuple[int, int], ...]]
    points: np.ndarray
    owner: np.ndarray
    element_nodes: np.ndarray
    is_boundary: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.keys)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    def face_nodes(self, mesh: Mesh, face: int) -> set[tuple[tuple[int, int], ...]]:
        """Keys of the order-``degree`` nodes of *face* computed on the face itself."""
        face_vertices = mesh.faces[face]
        keys = set()
        for alpha in bernstein.multi_indices(face_vertices.size, self.degree):
            keys.add(tuple(sorted((int(v), int(a)) for v, a in zip(face_vertices, alpha) if a > 0)))
        return keys


def build_node_table(mesh: Mesh, degree: int) -> LagrangeNodeTable:
    if degree < 1:
        raise SpaceConstructionError("Lagrange nodes need order >= 1")
    n_vars = mesh.dim + 1
    alphas = bernstein.multi_indices(n_vars, degree)
    local_bary = bernstein.domain_points(n_vars, degree)
    boundary_simplices: set[frozenset[int]] = set()
    for face in mesh.boundary_faces:
        vertices = [int(v) for v in mesh.faces[face]]
        boundary_simplices.update(_subsets(vertices))

    index: dict[tuple[tuple[int, int], ...], int] = {}
    keys: list[tuple[tuple[int, int], ...]] = []
    points: list[np.ndarray] = []
    owner: list[int] = []
    boundary: list[bool] = []
    element_nodes = np.empty((mesh.n_elements, alphas.shape[0]), dtype=np.int64)
    for element in range(mesh.n_elements):
        vertex_ids = mesh.elements[element]
        coords = local_bary @ mesh.element_vertices(element)
        for j, alpha in enumerate(alphas):
            key = tuple(sorted((int(v), int(a)) for v, a in zip(vertex_ids, alpha) if a > 0))
            node = index.get(key)
            if node is None:
                node = len(keys)
                index[key] = node
                keys.append(key)
                points.append(coords[j])
                owner.append(element)
                boundary.append(frozenset(v for v, _ in key) in boundary_simplices)
            element_nodes[element, j] = node
    return LagrangeNodeTable(
        degree=degree,
        keys=keys,
        points=np.array(points),
        owner=np.array(owner, dtype=np.int64),
        element_nodes=element_nodes,
        is_boundary=np.array(boundary, dtype=bool),
    )


def _subsets(vertices: Sequence[int]) -> Iterable[frozenset[int]]:
    n = len(vertices)
    for mask in range(1, 2**n):
        yield frozenset(vertices[i] for i in range(n) if mask >> i & 1)


@dataclass(eq=False)
class DofSpace:
    """A discrete space: descriptors for its dofs and a basis over a broken space."""

    kind: SpaceKind
    broken: BrokenSpace
    basis: sparse.csr_matrix
    descriptors: list[DofDescriptor]
    smoothness: str = "broken"
    label: str = ""
    nodes: LagrangeNodeTable | None = None
    dual: sparse.csr_matrix | None = None
    _index: dict[tuple[str, int, int], int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.basis = sparse.csr_matrix(self.basis)
        if self.basis.shape != (self.broken.size, len(self.descriptors)):
            raise SpaceConstructionError(
                f"basis shape {self.basis.shape} does not match {self.broken.size} x {len(self.descriptors)}"
            )
        self._index = {(d.kind, d.entity, d.component): i for i, d in enumerate(self.descriptors)}
        _LOGGER.debug("Built %s space with %d dofs", self.label or self.kind.value, self.ndofs)

    @property
    def mesh(self) -> Mesh:
        return self.broken.mesh

    @property
    def ndofs(self) -> int:
        return len(self.descriptors)

    @property
    def degree(self) -> int:
        return self.broken.degree

    @property
    def split(self) -> str:
        return self.broken.split

    def dof(self, kind: str, entity: int, component: int = 0) -> int:
        return self._index[(kind, int(entity), int(component))]

    def has_dof(self, kind: str, entity: int, component: int = 0) -> bool:
        return (kind, int(entity), int(component)) in self._index

    def evaluate(self, point_set: PointSet, order: int = 0) -> sparse.csr_matrix:
        return (self.broken.evaluate(point_set, order) @ self.basis).tocsr()

    def field(self, coefficients: np.ndarray) -> "Field":
        return Field(self, coefficients)

    def supports(self) -> list[np.ndarray]:
        """Elements carrying each basis function."""
        csc = self.basis.tocsc()
        csc.eliminate_zeros()
        return [
            np.unique(csc.indices[csc.indptr[j] : csc.indptr[j + 1]] // self.broken.local_dim)
            for j in range(self.ndofs)
        ]

    def dof_report(self) -> dict[str, object]:
        return {
            "kind": self.kind.value,
            "label": self.label,
            "count": self.ndofs,
            "degree": self.degree,
            "split": self.split,
            "dofs": [d.to_dict() for d in self.descriptors],
        }


class DirectSumSpace:
    """Concatenation of spaces; coefficient vectors are stacked blocks."""

    kind = SpaceKind.DIRECT_SUM

    def __init__(self, components: Sequence[DofSpace], label: str = "") -> None:
        if not components:
            raise SpaceConstructionError("a direct sum needs at least one component")
        self.components = list(components)
        self.mesh = components[0].mesh
        self.label = label
        self.offsets = np.concatenate([[0], np.cumsum([c.ndofs for c in components])])

    @property
    def ndofs(self) -> int:
        return int(self.offsets[-1])

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    @property
    def split(self) -> str:
        return "ct" if any(c.split == "ct" for c in self.components) else "none"

    def block(self, index: int) -> slice:
        return slice(int(self.offsets[index]), int(self.offsets[index + 1]))

    def evaluate(self, point_set: PointSet, order: int = 0) -> sparse.csr_matrix:
        return sparse.hstack([c.evaluate(point_set, order) for c in self.components], format="csr")

    def field(self, coefficients: np.ndarray) -> "Field":
        return Field(self, coefficients)


class Field:
    """Evaluable piecewise polynomial: a space plus a coefficient vector."""

    def __init__(self, space: Evaluable, coefficients: np.ndarray) -> None:
        coefficients = np.asarray(coefficients, dtype=float).reshape(-1)
        if coefficients.size != space.ndofs:
            raise ValueError(f"expected {space.ndofs} coefficients, got {coefficients.size}")
        self.space = space
        self.coefficients = coefficients

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    @property
    def degree(self) -> int:
        return self.space.degree

    def evaluate(self, point_set: PointSet, order: int = 0) -> np.ndarray:
        """Values ``(N,)``, gradients ``(N, d)`` or Hessians ``(N, d, d)``."""
        d = self.mesh.dim
        flat = self.space.evaluate(point_set, order) @ self.coefficients
        return flat.reshape((point_set.size,) + (d,) * order)

    def trace(self, element: int, points: np.ndarray, order: int = 0) -> np.ndarray:
        points = np.atleast_2d(points)
        return self.evaluate(PointSet(points, np.full(points.shape[0], element)), order)

    def __mul__(self, factor: float) -> "Field":
        return Field(self.space, self.coefficients * factor)

    __rmul__ = __mul__


# dof functionals --------------------------------------------------------------


def dof_functionals(space: DofSpace, on: BrokenSpace | None = None) -> sparse.csr_matrix:
    """Matrix of the dof functionals of *space* acting on coefficients of *on*.

    ``dof_functionals(space) @ space.basis`` is the identity for every space;
    applied to another broken space it realizes nodal interpolation or
    averaging into *space*.
    """
    on = space.broken if on is None else on
    mesh = space.mesh
    d = mesh.dim
    if space.dual is not None:
        if on is not space.broken:
            raise SpaceConstructionError(f"{space.label} functionals are only defined on their own broken space")
        return space.dual

    value_rows: list[int] = []
    value_points: list[np.ndarray] = []
    value_elements: list[int] = []
    value_weights: list[float] = []
    grad_rows: list[int] = []
    grad_points: list[np.ndarray] = []
    grad_elements: list[int] = []
    grad_dirs: list[np.ndarray] = []

    for row, descriptor in enumerate(space.descriptors):
        kind, entity = descriptor.kind, descriptor.entity
        if kind == "node":
            assert space.nodes is not None
            value_rows.append(row)
            value_points.append(space.nodes.points[entity])
            value_elements.append(int(space.nodes.owner[entity]))
            value_weights.append(1.0)
        elif kind == "vertex-value":
            value_rows.append(row)
            value_points.append(mesh.vertices[entity])
            value_elements.append(int(mesh.vertex_star(entity)[0]))
            value_weights.append(1.0)
        elif kind == "vertex-gradient":
            grad_rows.append(row)
            grad_points.append(mesh.vertices[entity])
            grad_elements.append(int(mesh.vertex_star(entity)[0]))
            grad_dirs.append(np.eye(d)[descriptor.component])
        elif kind == "face-mean":
            rule = face_point_set(mesh, entity, on.degree)
            for point, weight in zip(rule.points, rule.weights):
                value_rows.append(row)
                value_points.append(point)
                value_elements.append(int(rule.elements[0]))
                value_weights.append(float(weight))
        elif kind == "face-normal-moment":
            rule = face_point_set(mesh, entity, on.degree)
            for point, weight in zip(rule.points, rule.weights):
                grad_rows.append(row)
                grad_points.append(point)
                grad_elements.append(int(rule.elements[0]))
                grad_dirs.append(weight * mesh.face_normals[entity])
        elif kind == "face-normal-midpoint":
            grad_rows.append(row)
            grad_points.append(mesh.face_midpoints[entity])
            grad_elements.append(int(mesh.face_elements[entity, 0]))
            grad_dirs.append(mesh.face_normals[entity])
        else:
            raise SpaceConstructionError(f"no functional for dof kind '{kind}'")

    result = sparse.csr_matrix((space.ndofs, on.size))
    if value_rows:
        evaluation = on.evaluate(PointSet(np.array(value_points), np.array(value_elements)), 0)
        selector = sparse.csr_matrix(
            (value_weights, (value_rows, np.arange(len(value_rows)))), shape=(space.ndofs, len(value_rows))
        )
        result = result + selector @ evaluation
    if grad_rows:
        evaluation = on.evaluate(PointSet(np.array(grad_points), np.array(grad_elements)), 1)
        directions = np.array(grad_dirs)
        rows = np.repeat(grad_rows, d)
        cols = np.arange(len(grad_rows) * d)
        selector = sparse.csr_matrix(
            (directions.reshape(-1), (rows, cols)), shape=(space.ndofs, len(grad_rows) * d)
        )
        result = result + selector @ evaluation
    return sparse.csr_matrix(result)


def duality_defect(space: DofSpace) -> float:
    """``max |dof_i(phi_j) - delta_ij|`` over all dofs."""
    product = (dof_functionals(space) @ space.basis).toarray()
    return float(np.abs(product - np.eye(space.ndofs)).max()) if space.ndofs else 0.0


def face_moment_matrix(
    space: Evaluable,
    faces: Sequence[int],
    *,
    normal: bool = False,
    side: int = 0,
    degree: int | None = None,
) -> sparse.csr_matrix:
    """Rows ``int_F s`` (or ``int_F grad s . n_F``) traced from *side*, one per face."""
    mesh = space.mesh
    degree = space.degree if degree is None else degree
    rows = []
    for face in faces:
        rule = face_point_set(mesh, int(face), degree, side=side)
        if normal:
            evaluation = space.evaluate(rule, 1)
            weights = (rule.weights[:, None] * mesh.face_normals[int(face)][None, :]).reshape(1, -1)
        else:
            evaluation = space.evaluate(rule, 0)
            weights = rule.weights.reshape(1, -1)
        rows.append(sparse.csr_matrix(weights) @ evaluation)
    if not rows:
        return sparse.csr_matrix((0, space.ndofs))
    return sparse.vstack(rows, format="csr")


# builders -------------------------------------------------------------------


def build_broken_space(mesh: Mesh, degree: int, split: str = "none") -> DofSpace:
    """The broken space itself, with the identity as basis."""
    broken = BrokenSpace(mesh, degree, split)
    descriptors = [DofDescriptor("coefficient", i) for i in range(broken.size)]
    return DofSpace(
        kind=SpaceKind.BROKEN,
        broken=broken,
        basis=sparse.identity(broken.size, format="csr"),
        descriptors=descriptors,
        label=f"broken P{degree}",
    )


def build_lagrange_space(mesh: Mesh, p: int) -> DofSpace:
    """Continuous piecewise ``P_p`` with zero trace; dofs are the interior Lagrange nodes."""
    table = build_node_table(mesh, p)
    broken = BrokenSpace(mesh, p)
    node_dof = -np.ones(table.n_nodes, dtype=np.int64)
    interior = table.interior
    node_dof[interior] = np.arange(interior.size)
    inverse = bernstein.interpolation_matrix(mesh.dim + 1, p)

    rows, cols, vals = [], [], []
    for element in range(mesh.n_elements):
        for j, node in enumerate(table.element_nodes[element]):
            dof = node_dof[node]
            if dof < 0:
                continue
            rows.append(broken.offset(element) + np.arange(broken.cell_dim))
            cols.append(np.full(broken.cell_dim, dof))
            vals.append(inverse[:, j])
    basis = column_matrix(rows, cols, vals, (broken.size, interior.size))
    return DofSpace(
        kind=SpaceKind.LAGRANGE,
        broken=broken,
        basis=basis,
        descriptors=[DofDescriptor("node", int(g)) for g in interior],
        smoothness="C0",
        label=f"Lagrange P{p}",
        nodes=table,
    )


def build_cr_space(mesh: Mesh, clamped: bool = True) -> DofSpace:
    """Crouzeix-Raviart space with face integrals ``int_F s`` as dofs.

    With ``clamped=False`` boundary faces keep their dofs, which gives the
    unconstrained space used for interpolating functions without zero trace.
    """
    if mesh.n_elements < 2:
        raise SpaceConstructionError("the Crouzeix-Raviart space needs at least two elements")
    faces = mesh.interior_faces if clamped else np.arange(mesh.n_faces)
    face_dof = -np.ones(mesh.n_faces, dtype=np.int64)
    face_dof[faces] = np.arange(faces.size)
    broken = BrokenSpace(mesh, 1)
    d = mesh.dim

    rows, cols, vals = [], [], []
    for element in range(mesh.n_elements):
        local_faces = mesh.element_faces[element]
        measures = mesh.face_measures[local_faces]
        # int_{F_i} lambda_j = |F_i| / d for j != i, the vertex opposite F_i gives 0
        dual = (measures[:, None] / d) * (1.0 - np.eye(d + 1))
        try:
            local = np.linalg.inv(dual)
        except np.linalg.LinAlgError as exc:
            raise SpaceConstructionError(f"singular Crouzeix-Raviart dual system on element {element}") from exc
        for i, face in enumerate(local_faces):
            dof = face_dof[face]
            if dof < 0:
                continue
            rows.append(broken.offset(element) + np.arange(d + 1))
            cols.append(np.full(d + 1, dof))
            vals.append(local[:, i])
    basis = column_matrix(rows, cols, vals, (broken.size, faces.size))
    return DofSpace(
        kind=SpaceKind.CR,
        broken=broken,
        basis=basis,
        descriptors=[DofDescriptor("face-mean", int(f)) for f in faces],
        label="Crouzeix-Raviart" if clamped else "Crouzeix-Raviart (unclamped)",
    )


def _face_moment_rule(mesh: Mesh, p: int) -> tuple[QuadratureRule, np.ndarray]:
    """Face rule exact for ``P_p * P_{p-1}`` and the degree ``p-1`` face basis tabulated on it."""
    face_rule = simplex_rule(mesh.dim - 1, 2 * p - 1)
    return face_rule, bernstein.tabulate(p - 1, face_rule.bary)


def _face_moment_block(
    mesh: Mesh, p: int, element: int, face: int, face_rule: QuadratureRule, face_basis: np.ndarray
) -> np.ndarray:
    """``int_F phi_b q_j`` for the cell basis of *element*; ``q_j`` follows the face's own vertex order."""
    points, weights = map_rule(face_rule, mesh.vertices[mesh.faces[face]])
    bary = barycentric_coordinates(mesh.element_vertices(element), points)
    return (face_basis * weights[:, None]).T @ bernstein.tabulate(p, bary)


def jump_constraint_matrix(mesh: Mesh, p: int) -> sparse.csr_matrix:
    """Rows ``int_F [[s]] q`` for every face and every ``q`` in the degree ``p-1`` face basis."""
    broken = BrokenSpace(mesh, p)
    face_rule, face_basis = _face_moment_rule(mesh, p)
    n_q = face_basis.shape[1]
    rows, cols, vals = [], [], []
    for face in range(mesh.n_faces):
        for side, sign in ((0, 1.0), (1, -1.0)):
            element = int(mesh.face_elements[face, side])
            if element < 0:
                continue
            block = sign * _face_moment_block(mesh, p, element, face, face_rule, face_basis)
            row_ids, col_ids = np.meshgrid(
                face * n_q + np.arange(n_q), broken.offset(element) + np.arange(broken.cell_dim), indexing="ij"
            )
            rows.append(row_ids.ravel())
            cols.append(col_ids.ravel())
            vals.append(block.ravel())
    return column_matrix(rows, cols, vals, (mesh.n_faces * n_q, broken.size))


def _numerical_rank(singular: np.ndarray, dead_zone: tuple[float, float], where: str) -> int:
    relative = singular / singular[0] if singular.size and singular[0] > 0 else singular
    low, high = dead_zone
    ambiguous = (relative >= low) & (relative <= high)
    if np.any(ambiguous):
        raise SpaceConstructionError(
            f"{where}: singular value {relative[ambiguous][0]:.3e} lies in the rank dead zone [{low:g}, {high:g}]; "
            "review the mesh"
        )
    return int(np.count_nonzero(relative > high))


@dataclass
class _ElementMoments:
    """Face moments of ``P_p`` on one element and the pieces derived from them."""

    matrix: np.ndarray
    lift: np.ndarray
    kernel: np.ndarray
    relations: np.ndarray


def _element_moments(
    mesh: Mesh, p: int, element: int, face_rule: QuadratureRule, face_basis: np.ndarray, dead_zone: tuple[float, float]
) -> _ElementMoments:
    matrix = np.vstack(
        [_face_moment_block(mesh, p, element, int(face), face_rule, face_basis) for face in mesh.element_faces[element]]
    )
    u, singular, vh = scipy.linalg.svd(matrix, full_matrices=True)
    rank = _numerical_rank(singular, dead_zone, f"face moments on element {element}")
    lift = vh[:rank].T @ (u[:, :rank].T / singular[:rank, None])
    return _ElementMoments(matrix=matrix, lift=lift, kernel=vh[rank:].T, relations=u[:, rank:])


def _face_rows(mesh: Mesh, element: int, face: int, n_q: int) -> slice:
    slot = int(np.flatnonzero(mesh.element_faces[element] == face)[0])
    return slice(slot * n_q, (slot + 1) * n_q)


def _relation_couplings(
    mesh: Mesh, local: list[_ElementMoments], n_q: int, tol: float = 1e-8
) -> tuple[np.ndarray, dict[tuple[int, int], float]] | None:
    """Shared moment direction ``u_F`` of the element relations on each interior face.

    Returns ``None`` when the two relations touching a face do not see the
    same direction, in which case no vertex-based basis exists.
    """
    directions = np.zeros((mesh.n_faces, n_q))
    coupling: dict[tuple[int, int], float] = {}
    for face in mesh.interior_faces:
        face = int(face)
        first_element, second_element = (int(k) for k in mesh.face_elements[face])
        first = local[first_element].relations[_face_rows(mesh, first_element, face, n_q), 0]
        second = local[second_element].relations[_face_rows(mesh, second_element, face, n_q), 0]
        norm = float(np.linalg.norm(first))
        if norm < tol:
            return None
        direction = first / norm
        along = float(second @ direction)
        if abs(along) < tol or np.linalg.norm(second - along * direction) > tol:
            return None
        directions[face] = direction
        coupling[(first_element, face)] = norm
        coupling[(second_element, face)] = along
    return directions, coupling


def _relation_left_null_dimension(mesh: Mesh, coupling: dict[tuple[int, int], float], tol: float = 1e-8) -> int:
    """Dimension of the combinations of element relations that cancel on every interior face."""
    weights = np.full(mesh.n_elements, np.nan)
    dimension = 0
    for start in range(mesh.n_elements):
        if not np.isnan(weights[start]):
            continue
        weights[start] = 1.0
        queue = [start]
        consistent = True
        while queue:
            element = queue.pop()
            for face in mesh.element_faces[element]:
                face = int(face)
                if not mesh.is_interior_face(face):
                    continue
                pair = mesh.face_elements[face]
                other = int(pair[1] if pair[0] == element else pair[0])
                value = -weights[element] * coupling[(element, face)] / coupling[(other, face)]
                if np.isnan(weights[other]):
                    weights[other] = value
                    queue.append(other)
                elif abs(weights[other] - value) > tol * max(abs(value), abs(weights[other])):
                    consistent = False
        dimension += int(consistent)
    return dimension


def _vertex_potentials(
    mesh: Mesh, coupling: dict[tuple[int, int], float], dead_zone: tuple[float, float]
) -> dict[int, dict[int, float]] | None:
    """For each interior vertex, the relation-free weights on the faces through it."""
    potentials: dict[int, dict[int, float]] = {}
    for vertex in mesh.interior_vertices:
        vertex = int(vertex)
        star = mesh.vertex_star(vertex)
        edges = sorted({int(f) for k in star for f in mesh.element_faces[k] if vertex in mesh.faces[f]})
        column = {face: i for i, face in enumerate(edges)}
        system = np.zeros((star.size, len(edges)))
        for row, element in enumerate(star):
            for face in mesh.element_faces[element]:
                if int(face) in column:
                    system[row, column[int(face)]] = coupling[(int(element), int(face))]
        _, singular, vh = scipy.linalg.svd(system)
        rank = _numerical_rank(singular, dead_zone, f"relations around vertex {vertex}")
        if len(edges) - rank != 1:
            return None
        weights = vh[-1]
        weights = weights * np.sign(weights[np.argmax(np.abs(weights))])
        potentials[vertex] = dict(zip(edges, weights.tolist()))
    return potentials


def _other_vertex(mesh: Mesh, face: int, vertex: int) -> int:
    a, b = (int(v) for v in mesh.faces[face])
    return b if a == vertex else a


def _vertex_functionals(
    mesh: Mesh,
    potentials: dict[int, dict[int, float]],
    face_functional: Callable[[int], tuple[np.ndarray, np.ndarray]],
    tol: float = 1e-8,
) -> dict[int, tuple[np.ndarray, np.ndarray]] | None:
    """Functionals recovering each vertex weight, built outwards from the boundary.

    Along a face ``(y, z)`` the relation moment of a kernel function is
    ``c_y w^y_F + c_z w^z_F``; boundary vertices carry ``c = 0``.
    """
    known: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    pending = set(potentials)
    while pending:
        layer: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for vertex in sorted(pending):
            weights = potentials[vertex]
            scale = max(abs(w) for w in weights.values())
            best: tuple[float, int, int] | None = None
            for face, weight in weights.items():
                neighbour = _other_vertex(mesh, face, vertex)
                if neighbour in pending:
                    continue
                if best is None or abs(weight) > best[0]:
                    best = (abs(weight), face, neighbour)
            if best is None or best[0] < tol * scale:
                continue
            _, face, neighbour = best
            cols, vals = face_functional(face)
            if neighbour in known:
                parent_cols, parent_vals = known[neighbour]
                cols = np.concatenate([cols, parent_cols])
                vals = np.concatenate([vals, -potentials[neighbour][face] * parent_vals])
            layer[vertex] = (cols, vals / weights[face])
        if not layer:
            return None
        known.update(layer)
        pending.difference_update(layer)
    return known


def _local_gl_space(mesh: Mesh, p: int, broken: BrokenSpace, dead_zone: tuple[float, float]) -> DofSpace | None:
    """Jump-moment kernel with a basis of element, face and vertex supported functions.

    Element functions span the local kernels of the face moments. Face
    functions lift one shared moment vector into both neighbours. When each
    element carries one relation among its face moments (even ``p`` on
    triangles), the relation component of the moments is spanned by one
    function per interior vertex. ``None`` means no such basis was found.
    """
    face_rule, face_basis = _face_moment_rule(mesh, p)
    n_q = face_basis.shape[1]
    local = [_element_moments(mesh, p, k, face_rule, face_basis, dead_zone) for k in range(mesh.n_elements)]
    relation_counts = {item.relations.shape[1] for item in local}
    directions: np.ndarray | None = None
    potentials: dict[int, dict[int, float]] = {}
    if relation_counts == {1} and mesh.dim == 2:
        couplings = _relation_couplings(mesh, local, n_q)
        if couplings is None:
            return None
        directions, coupling = couplings
        found = _vertex_potentials(mesh, coupling, dead_zone)
        if found is None:
            return None
        rank = mesh.n_elements - _relation_left_null_dimension(mesh, coupling)
        if mesh.interior_faces.size - rank != len(found):
            _LOGGER.debug("Vertex potentials miss %d relation directions", mesh.interior_faces.size - rank - len(found))
            return None
        potentials = found
    elif relation_counts != {0}:
        return None

    def face_functional(face: int) -> tuple[np.ndarray, np.ndarray]:
        element = int(mesh.face_elements[face, 0])
        assert directions is not None
        block = local[element].matrix[_face_rows(mesh, element, face, n_q)]
        return broken.offset(element) + np.arange(broken.cell_dim), directions[face] @ block

    def lifted(moments: dict[int, np.ndarray]) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Coefficients of the lift of per-face moment vectors, element by element."""
        touched = sorted({int(k) for face in moments for k in mesh.face_elements[face] if k >= 0})
        rows, vals = [], []
        for element in touched:
            vector = np.zeros(local[element].matrix.shape[0])
            for face in mesh.element_faces[element]:
                if int(face) in moments:
                    vector[_face_rows(mesh, element, int(face), n_q)] = moments[int(face)]
            rows.append(broken.offset(element) + np.arange(broken.cell_dim))
            vals.append(local[element].lift @ vector)
        return rows, vals

    descriptors: list[DofDescriptor] = []
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    dual_rows: list[np.ndarray] = []
    dual_cols: list[np.ndarray] = []
    dual_vals: list[np.ndarray] = []

    def add(descriptor: DofDescriptor, pieces: tuple[list[np.ndarray], list[np.ndarray]], functional: tuple[np.ndarray, np.ndarray]) -> None:
        dof = len(descriptors)
        descriptors.append(descriptor)
        for piece_rows, piece_vals in zip(*pieces):
            rows.append(piece_rows)
            cols.append(np.full(piece_rows.size, dof))
            vals.append(piece_vals)
        dual_rows.append(np.full(functional[0].size, dof))
        dual_cols.append(functional[0])
        dual_vals.append(functional[1])

    for element, item in enumerate(local):
        span = broken.offset(element) + np.arange(broken.cell_dim)
        for i in range(item.kernel.shape[1]):
            add(DofDescriptor("element-kernel", element, i), ([span], [item.kernel[:, i]]), (span, item.kernel[:, i]))

    for face in mesh.interior_faces:
        face = int(face)
        if directions is None:
            free = np.eye(n_q)
        else:
            free = scipy.linalg.null_space(directions[face][None, :])
        element = int(mesh.face_elements[face, 0])
        span = broken.offset(element) + np.arange(broken.cell_dim)
        block = local[element].matrix[_face_rows(mesh, element, face, n_q)]
        for k in range(free.shape[1]):
            add(DofDescriptor("face-moment", face, k), lifted({face: free[:, k]}), (span, free[:, k] @ block))

    if potentials:
        assert directions is not None
        functionals = _vertex_functionals(mesh, potentials, face_functional)
        if functionals is None:
            return None
        for vertex in sorted(potentials):
            moments = {face: weight * directions[face] for face, weight in potentials[vertex].items()}
            add(DofDescriptor("vertex-potential", vertex), lifted(moments), functionals[vertex])

    ndofs = len(descriptors)
    _LOGGER.debug(
        "Jump-moment kernel P%d: %d element, %d face and %d vertex functions",
        p,
        sum(d.kind == "element-kernel" for d in descriptors),
        sum(d.kind == "face-moment" for d in descriptors),
        len(potentials),
    )
    return DofSpace(
        kind=SpaceKind.GL,
        broken=broken,
        basis=column_matrix(rows, cols, vals, (broken.size, ndofs)),
        descriptors=descriptors,
        label=f"jump-moment kernel P{p}",
        dual=column_matrix(dual_rows, dual_cols, dual_vals, (ndofs, broken.size)),
    )


def _canonical_kernel(kernel: np.ndarray) -> np.ndarray:
    """Orthonormal basis of ``span(kernel)`` that does not depend on the input rotation."""
    k = kernel.shape[1]
    if k == 0:
        return kernel
    _, _, pivots = scipy.linalg.qr(kernel.T, pivoting=True, mode="economic")
    anchor = kernel[np.sort(pivots[:k]), :]
    spread = kernel @ np.linalg.inv(anchor)
    q, r = np.linalg.qr(spread)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs[None, :]
    q[np.abs(q) < 1e-15] = 0.0
    return q


def _global_gl_space(mesh: Mesh, p: int, broken: BrokenSpace, dead_zone: tuple[float, float]) -> DofSpace:
    """Orthonormal kernel of the full constraint matrix; dense, for small meshes only."""
    constraints = jump_constraint_matrix(mesh, p).toarray()
    _, singular, vh = scipy.linalg.svd(constraints, full_matrices=True)
    rank = _numerical_rank(singular, dead_zone, "jump constraints")
    kernel = _canonical_kernel(vh[rank:].T)
    _LOGGER.debug("Jump-moment kernel for p=%d: %d constraints, rank %d, dimension %d", p, constraints.shape[0], rank, kernel.shape[1])
    basis = sparse.csr_matrix(kernel)
    return DofSpace(
        kind=SpaceKind.GL,
        broken=broken,
        basis=basis,
        descriptors=[DofDescriptor("kernel", j) for j in range(kernel.shape[1])],
        label=f"jump-moment kernel P{p}",
        dual=sparse.csr_matrix(basis.T),
    )


def build_gl_space(
    mesh: Mesh,
    p: int,
    *,
    dead_zone: tuple[float, float] = DEFAULT_DEAD_ZONE,
    containment_tol: float = 1e-10,
) -> DofSpace:
    """Broken ``P_p`` functions whose jump moments against ``P_{p-1}`` vanish on every face.

    The basis is local whenever the face moments allow it (triangles, any
    ``p``); otherwise the kernel of the assembled constraints is used.
    """
    if p < 2:
        raise SpaceConstructionError("the jump-moment kernel space needs p >= 2")
    broken = BrokenSpace(mesh, p)
    space = _local_gl_space(mesh, p, broken, dead_zone)
    if space is None:
        _LOGGER.info("No local basis for the jump-moment kernel P%d on this mesh; using the assembled constraints", p)
        space = _global_gl_space(mesh, p, broken, dead_zone)

    lagrange = build_lagrange_space(mesh, p)
    if lagrange.ndofs:
        conforming = lagrange.basis
        residual = conforming - space.basis @ (space.dual @ conforming)
        defect = float(abs(residual).max()) / max(float(abs(conforming).max()), 1.0)
        if defect > containment_tol:
            raise SpaceConstructionError(f"continuous P{p} functions leave the kernel (defect {defect:.3e})")
    return space


def _morley_local_basis(mesh: Mesh, element: int) -> np.ndarray:
    n_vars = mesh.dim + 1
    grads = mesh.bary_grads[element]
    dual = np.empty((6, 6))
    dual[:3] = bernstein.tabulate(2, np.eye(n_vars))
    face_rule = simplex_rule(1, 2)
    for j, face in enumerate(mesh.element_faces[element]):
        points, weights = map_rule(face_rule, mesh.vertices[mesh.faces[face]])
        bary = barycentric_coordinates(mesh.element_vertices(element), points)
        gradients = bernstein.tabulate(2, bary, grads, order=1)
        dual[3 + j] = np.einsum("q,x,qxb->b", weights, mesh.face_normals[face], gradients)
    condition = np.linalg.cond(dual)
    if not np.isfinite(condition) or condition > 1e12:
        raise SpaceConstructionError(f"singular Morley dual system on element {element} (cond {condition:.3e})")
    return np.linalg.inv(dual)


def build_morley_space(mesh: Mesh, *, workers: int = 1) -> DofSpace:
    """Morley space: interior vertex values then interior ``int_F grad s . n_F``."""
    if mesh.dim != 2:
        raise SpaceConstructionError("the Morley space is implemented for triangles")
    if mesh.n_elements < 2:
        raise SpaceConstructionError("the Morley space needs at least two elements")
    broken = BrokenSpace(mesh, 2)
    descriptors = [DofDescriptor("vertex-value", int(z)) for z in mesh.interior_vertices]
    descriptors += [DofDescriptor("face-normal-moment", int(f)) for f in mesh.interior_faces]
    lookup = {(d.kind, d.entity): i for i, d in enumerate(descriptors)}

    local_bases = ordered_map(lambda k: _morley_local_basis(mesh, k), range(mesh.n_elements), workers)
    rows, cols, vals = [], [], []
    for element, local in enumerate(local_bases):
        entities = [("vertex-value", int(v)) for v in mesh.elements[element]]
        entities += [("face-normal-moment", int(f)) for f in mesh.element_faces[element]]
        for i, entity in enumerate(entities):
            dof = lookup.get(entity)
            if dof is None:
                continue
            rows.append(broken.offset(element) + np.arange(6))
            cols.append(np.full(6, dof))
            vals.append(local[:, i])
    basis = column_matrix(rows, cols, vals, (broken.size, len(descriptors)))
    return DofSpace(kind=SpaceKind.MORLEY, broken=broken, basis=basis, descriptors=descriptors, label="Morley")


def cr_interpolate(space: DofSpace, u: Field | Callable[[np.ndarray], np.ndarray], degree: int = 8) -> np.ndarray:
    """Coefficients with ``int_F I u = int_F u`` for every face carrying a dof.

    Fields are traced from the ``K1`` side; callables are integrated with a
    face rule of the given exactness.
    """
    if space.kind is not SpaceKind.CR:
        raise SpaceConstructionError("face-mean interpolation targets a Crouzeix-Raviart space")
    mesh = space.mesh
    coefficients = np.empty(space.ndofs)
    for i, descriptor in enumerate(space.descriptors):
        if isinstance(u, Field):
            rule = face_point_set(mesh, descriptor.entity, max(u.degree, 1))
            values = u.evaluate(rule, 0)
        else:
            rule = face_point_set(mesh, descriptor.entity, degree)
            values = np.asarray(u(rule.points), dtype=float).reshape(-1)
        coefficients[i] = float(rule.weights @ values)
    return coefficients


def sample_point_set(mesh: Mesh, per_edge: int = 2) -> PointSet:
    """Interior sample points: the degree-``per_edge + 3`` lattice points strictly inside each element."""
    n_vars = mesh.dim + 1
    lattice = bernstein.domain_points(n_vars, per_edge + n_vars)
    lattice = lattice[np.all(lattice > 0, axis=1)]
    points = [lattice @ mesh.element_vertices(k) for k in range(mesh.n_elements)]
    owners = [np.full(lattice.shape[0], k) for k in range(mesh.n_elements)]
    return PointSet(np.vstack(points), np.concatenate(owners))


def column_matrix(rows: list[np.ndarray], cols: list[np.ndarray], vals: list[np.ndarray], shape: tuple[int, int]) -> sparse.csr_matrix:
    if not rows:
        return sparse.csr_matrix(shape)
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    ).tocsr()
    matrix.eliminate_zeros()
    return matrix
