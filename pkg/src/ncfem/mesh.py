"""Simplicial meshes: faces, adjacency, geometry, refinement and generators."""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence, TextIO

import numpy as np
from scipy import sparse

from .bernstein import barycentric_moment
from .models import NcfemError
from .quadrature import QuadratureError, face_point_set
from .simplex import (
    barycentric_gradients,
    diameter,
    face_barycentric_coordinates,
    inball_diameter,
    simplex_measure,
)

_LOGGER = logging.getLogger(__name__)

_GEOMETRY_TOL = 1e-12


class MeshError(NcfemError):
    """Raised for degenerate, non-conforming or malformed meshes."""


@dataclass(frozen=True)
class MultiIndex:
    """Exponents of a barycentric monomial, one entry per simplex vertex."""

    exponents: tuple[int, ...]

    def __post_init__(self) -> None:
        values = tuple(int(a) for a in self.exponents)
        if any(a < 0 for a in values):
            raise ValueError(f"multi-index entries must be non-negative, got {values}")
        object.__setattr__(self, "exponents", values)

    @property
    def order(self) -> int:
        return sum(self.exponents)

    def __len__(self) -> int:
        return len(self.exponents)


class Mesh:
    """Face-to-face simplicial mesh.

    Local face ``i`` of an element is the face opposite its local vertex ``i``.
    Faces are stored as ascending vertex tuples in ascending lexicographic
    order; ``face_elements[f] = (K1, K2)`` with ``K1 < K2`` for interior faces
    and ``K2 = -1`` on the boundary. The face normal points from ``K1`` to
    ``K2`` (outward on the boundary).
    """

    def __init__(
        self,
        vertices: np.ndarray,
        elements: np.ndarray,
        parents: np.ndarray | None = None,
    ) -> None:
        self.vertices = np.atleast_2d(np.asarray(vertices, dtype=float))
        self.elements = np.atleast_2d(np.asarray(elements, dtype=np.int64))
        self.dim = int(self.vertices.shape[1])
        self.parents = None if parents is None else np.asarray(parents, dtype=np.int64)
        if self.dim not in (2, 3):
            raise MeshError(f"unsupported dimension {self.dim}")
        if self.elements.shape[1] != self.dim + 1:
            raise MeshError(
                f"elements need {self.dim + 1} vertices in dimension {self.dim}, got {self.elements.shape[1]}"
            )
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= self.n_vertices):
            raise MeshError("element references an unknown vertex id")

        self._build_geometry()
        self._build_faces()
        self._check_hanging_vertices()
        self._build_face_geometry()
        self._build_stars()
        for array in (self.vertices, self.elements):
            array.setflags(write=False)
        _LOGGER.debug(
            "Mesh with %d vertices, %d elements, %d faces (%d interior)",
            self.n_vertices,
            self.n_elements,
            self.n_faces,
            self.interior_faces.size,
        )

    # construction -----------------------------------------------------------

    def _build_geometry(self) -> None:
        n = self.n_elements
        self.volumes = np.empty(n)
        self.diameters = np.empty(n)
        self.inball = np.empty(n)
        self.bary_grads = np.empty((n, self.dim + 1, self.dim))
        for k in range(n):
            vertices = self.element_vertices(k)
            self.diameters[k] = diameter(vertices)
            self.volumes[k] = simplex_measure(vertices)
            if self.volumes[k] <= _GEOMETRY_TOL * self.diameters[k] ** self.dim:
                raise MeshError(f"element {k} with vertices {tuple(self.elements[k])} is degenerate")
            self.inball[k] = inball_diameter(vertices)
            self.bary_grads[k] = barycentric_gradients(vertices)

    def _build_faces(self) -> None:
        d = self.dim
        local = [np.delete(np.arange(d + 1), i) for i in range(d + 1)]
        all_faces = np.sort(
            np.concatenate([self.elements[:, idx] for idx in local], axis=0), axis=1
        )
        owner = np.tile(np.arange(self.n_elements), d + 1)
        local_index = np.repeat(np.arange(d + 1), self.n_elements)

        faces, inverse, counts = np.unique(all_faces, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            bad = int(np.flatnonzero(counts > 2)[0])
            raise MeshError(f"face {tuple(faces[bad])} is shared by more than two elements")

        self.faces = faces
        self.face_elements = -np.ones((faces.shape[0], 2), dtype=np.int64)
        self.face_local = -np.ones((faces.shape[0], 2), dtype=np.int64)
        self.element_faces = np.empty((self.n_elements, d + 1), dtype=np.int64)
        order = np.lexsort((owner, inverse))
        for position in order:
            face = inverse[position]
            element = owner[position]
            slot = 0 if self.face_elements[face, 0] < 0 else 1
            self.face_elements[face, slot] = element
            self.face_local[face, slot] = local_index[position]
            self.element_faces[element, local_index[position]] = face

        self.interior_faces = np.flatnonzero(self.face_elements[:, 1] >= 0)
        self.boundary_faces = np.flatnonzero(self.face_elements[:, 1] < 0)
        boundary_vertices = np.zeros(self.n_vertices, dtype=bool)
        boundary_vertices[np.unique(self.faces[self.boundary_faces])] = True
        self.is_boundary_vertex = boundary_vertices
        used = np.zeros(self.n_vertices, dtype=bool)
        used[np.unique(self.elements)] = True
        self.interior_vertices = np.flatnonzero(used & ~boundary_vertices)

    def _check_hanging_vertices(self) -> None:
        for face in self.boundary_faces:
            corners = self.vertices[self.faces[face]]
            scale = diameter(corners)
            others = np.setdiff1d(np.arange(self.n_vertices), self.faces[face])
            if others.size == 0:
                continue
            lower, upper = corners.min(axis=0) - 1e-9 * scale, corners.max(axis=0) + 1e-9 * scale
            candidates = others[
                np.all((self.vertices[others] >= lower) & (self.vertices[others] <= upper), axis=1)
            ]
            if candidates.size == 0:
                continue
            bary = face_barycentric_coordinates(corners, self.vertices[candidates])
            projected = bary @ corners
            distance = np.linalg.norm(projected - self.vertices[candidates], axis=1)
            inside = (distance <= 1e-9 * scale) & np.all(bary >= -1e-9, axis=1)
            if np.any(inside):
                vertex = int(candidates[np.flatnonzero(inside)[0]])
                raise MeshError(
                    f"mesh is not face-to-face: vertex {vertex} hangs on face {tuple(self.faces[face])}"
                )

    def _build_face_geometry(self) -> None:
        nf = self.n_faces
        self.face_measures = np.empty(nf)
        self.face_normals = np.empty((nf, self.dim))
        self.face_midpoints = np.empty((nf, self.dim))
        for face in range(nf):
            corners = self.vertices[self.faces[face]]
            self.face_measures[face] = simplex_measure(corners)
            self.face_midpoints[face] = corners.mean(axis=0)
            k1, local = self.face_elements[face, 0], self.face_local[face, 0]
            gradient = self.bary_grads[k1, local]
            self.face_normals[face] = -gradient / np.linalg.norm(gradient)
        if self.dim == 2:
            self.face_tangents = np.column_stack([-self.face_normals[:, 1], self.face_normals[:, 0]])

    def _build_stars(self) -> None:
        rows = self.elements.reshape(-1)
        cols = np.repeat(np.arange(self.n_elements), self.dim + 1)
        self.vertex_element_incidence = sparse.csr_matrix(
            (np.ones(rows.size), (rows, cols)), shape=(self.n_vertices, self.n_elements)
        )

    # sizes ------------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def shape_coefficients(self) -> np.ndarray:
        """``gamma_K = h_K / rho_K`` per element."""
        return self.diameters / self.inball

    @property
    def gamma(self) -> float:
        return float(self.shape_coefficients.max())

    # topology ---------------------------------------------------------------

    def element_vertices(self, element: int) -> np.ndarray:
        return self.vertices[self.elements[element]]

    def is_interior_face(self, face: int) -> bool:
        return bool(self.face_elements[face, 1] >= 0)

    def vertex_star(self, vertex: int) -> np.ndarray:
        """Elements containing *vertex*, ascending."""
        row = self.vertex_element_incidence.getrow(vertex)
        return np.sort(row.indices)

    def element_patch(self, element: int) -> np.ndarray:
        """Elements sharing at least one vertex with *element*."""
        return np.unique(np.concatenate([self.vertex_star(v) for v in self.elements[element]]))

    def face_patch(self, face: int) -> np.ndarray:
        """Union of the element patches of the elements adjacent to *face*."""
        elements = [k for k in self.face_elements[face] if k >= 0]
        return np.unique(np.concatenate([self.element_patch(k) for k in elements]))

    def local_vertex(self, element: int, vertex: int) -> int:
        matches = np.flatnonzero(self.elements[element] == vertex)
        if matches.size == 0:
            raise MeshError(f"vertex {vertex} is not a vertex of element {element}")
        return int(matches[0])


def build_mesh(vertices: Sequence[Sequence[float]] | np.ndarray, elements: Sequence[Sequence[int]] | np.ndarray) -> Mesh:
    """Build a :class:`Mesh`, enumerating faces and computing geometry."""
    return Mesh(np.asarray(vertices, dtype=float), np.asarray(elements, dtype=np.int64))


def integrate_barycentric_monomial(simplex: np.ndarray, alpha: MultiIndex | Sequence[int]) -> float:
    """Exact integral of ``prod_i lambda_i ** alpha_i`` over an ``n``-simplex in ``R^d``."""
    exponents = alpha.exponents if isinstance(alpha, MultiIndex) else MultiIndex(tuple(alpha)).exponents
    simplex = np.asarray(simplex, dtype=float)
    if len(exponents) != simplex.shape[0]:
        raise ValueError(
            f"multi-index of length {len(exponents)} does not match a simplex with {simplex.shape[0]} vertices"
        )
    return barycentric_moment(exponents) * simplex_measure(simplex)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle splits into four similar children.

    ``parents[c]`` on the result is the element of *mesh* containing child ``c``.
    """
    if mesh.dim != 2:
        raise MeshError(f"uniform refinement supports triangles only, got dimension {mesh.dim}")
    midpoints = mesh.vertices[mesh.faces].mean(axis=1)
    vertices = np.vstack([mesh.vertices, midpoints])
    offset = mesh.n_vertices
    children: list[list[int]] = []
    parents: list[int] = []
    for element in range(mesh.n_elements):
        a, b, c = (int(v) for v in mesh.elements[element])
        # local face i is opposite vertex i
        m_bc, m_ca, m_ab = (offset + int(f) for f in mesh.element_faces[element])
        children.extend([[a, m_ab, m_ca], [m_ab, b, m_bc], [m_ca, m_bc, c], [m_bc, m_ca, m_ab]])
        parents.extend([element] * 4)
    return Mesh(vertices, np.array(children, dtype=np.int64), parents=np.array(parents))


def refine_times(mesh: Mesh, levels: int) -> Mesh:
    for _ in range(levels):
        mesh = refine_uniform(mesh)
    return mesh


# jumps ----------------------------------------------------------------------


class TraceSource(Protocol):
    """Anything that can evaluate element-wise traces of a piecewise polynomial."""

    @property
    def degree(self) -> int:
        ...

    def trace(self, element: int, points: np.ndarray, order: int = 0) -> np.ndarray:
        """Values (``order=0``) or gradients (``order=1``) of the restriction to *element* at *points*."""


def jump_moment(
    mesh: Mesh,
    field: TraceSource,
    face: int,
    q: Callable[[np.ndarray], np.ndarray] | None = None,
    *,
    q_degree: int = 0,
    order: int = 0,
    normal: bool = False,
    quadrature_degree: int | None = None,
) -> float | np.ndarray:
    """``int_F [[v]] q`` with ``[[v]] = v|K1 - v|K2`` on interior faces and ``v|K1`` on the boundary.

    With ``order=1`` the gradient is traced; ``normal=True`` contracts it with
    ``n_F`` which gives the ordering-independent normal jump. An explicit
    *quadrature_degree* below ``field.degree + q_degree`` is rejected.
    """
    trace_degree = max(field.degree - order, 0)
    needed = trace_degree + q_degree
    degree = needed if quadrature_degree is None else quadrature_degree
    if degree < needed:
        raise QuadratureError(
            f"quadrature exactness {degree} below the {needed} needed on face {tuple(mesh.faces[face])}"
        )
    first = face_point_set(mesh, face, degree, side=0)
    points, weights = first.points, first.weights
    weight_q = weights if q is None else weights * np.asarray(q(points), dtype=float).reshape(-1)

    values = np.asarray(field.trace(int(mesh.face_elements[face, 0]), points, order), dtype=float)
    if mesh.is_interior_face(face):
        values = values - np.asarray(field.trace(int(mesh.face_elements[face, 1]), points, order), dtype=float)
    if normal:
        if values.ndim != 2:
            raise ValueError("normal jumps need a vector-valued trace")
        values = values @ mesh.face_normals[face]
    return np.tensordot(weight_q, values, axes=(0, 0))


# shape data -----------------------------------------------------------------


def neighbor_shape_constants(mesh: Mesh) -> dict[str, float]:
    """Largest ``|K|/|K'|`` and ``h_K/rho_K'`` over element pairs sharing a vertex."""
    incidence = mesh.vertex_element_incidence
    adjacency = (incidence.T @ incidence).tocoo()
    first, second = adjacency.row, adjacency.col
    return {
        "volume_ratio": float(np.max(mesh.volumes[first] / mesh.volumes[second])),
        "diameter_inball_ratio": float(np.max(mesh.diameters[first] / mesh.inball[second])),
        "gamma": mesh.gamma,
    }


# generators -----------------------------------------------------------------


def _grid_vertices(n: int, lower: float, upper: float) -> np.ndarray:
    ticks = np.linspace(lower, upper, n + 1)
    xs, ys = np.meshgrid(ticks, ticks, indexing="xy")
    return np.column_stack([xs.reshape(-1), ys.reshape(-1)])


def square_mesh(n: int) -> Mesh:
    """Unit square, ``n x n`` squares each cut by the diagonal parallel to ``x = y``."""
    if n < 1:
        raise MeshError("square generator needs n >= 1")
    vertices = _grid_vertices(n, 0.0, 1.0)
    elements = []
    for j in range(n):
        for i in range(n):
            v00 = i + j * (n + 1)
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            elements.extend([[v00, v10, v11], [v00, v11, v01]])
    return build_mesh(vertices, elements)


def crisscross_mesh(n: int) -> Mesh:
    """Unit square, ``n x n`` squares each cut by both diagonals (centre vertex added)."""
    if n < 1:
        raise MeshError("crisscross generator needs n >= 1")
    grid = _grid_vertices(n, 0.0, 1.0)
    centres = []
    elements = []
    for j in range(n):
        for i in range(n):
            v00 = i + j * (n + 1)
            v10, v01, v11 = v00 + 1, v00 + n + 1, v00 + n + 2
            c = grid.shape[0] + len(centres)
            centres.append([(i + 0.5) / n, (j + 0.5) / n])
            elements.extend([[v00, v10, c], [v10, v11, c], [v11, v01, c], [v01, v00, c]])
    return build_mesh(np.vstack([grid, np.array(centres)]), elements)


def lshape_mesh(n: int) -> Mesh:
    """``(-1,1)^2`` without the quadrant ``x > 0, y < 0``; ``2n x 2n`` diagonal pattern."""
    if n < 1:
        raise MeshError("lshape generator needs n >= 1")
    m = 2 * n
    vertices = _grid_vertices(m, -1.0, 1.0)
    elements = []
    for j in range(m):
        for i in range(m):
            if i >= n and j < n:
                continue
            v00 = i + j * (m + 1)
            v10, v01, v11 = v00 + 1, v00 + m + 1, v00 + m + 2
            elements.extend([[v00, v10, v11], [v00, v11, v01]])
    elements_array = np.array(elements, dtype=np.int64)
    used, relabel = np.unique(elements_array, return_inverse=True)
    return build_mesh(vertices[used], relabel.reshape(elements_array.shape))


GENERATORS: dict[str, Callable[[int], Mesh]] = {
    "square": square_mesh,
    "crisscross": crisscross_mesh,
    "lshape": lshape_mesh,
}


def generate_mesh(name: str, n: int) -> Mesh:
    try:
        generator = GENERATORS[name]
    except KeyError:
        raise MeshError(f"unknown mesh generator '{name}'; choose from {sorted(GENERATORS)}") from None
    return generator(n)


# text format ----------------------------------------------------------------


def format_mesh(mesh: Mesh) -> str:
    """Canonical text: ``dim nv ne``, then coordinates, then zero-based vertex ids."""
    buffer = io.StringIO()
    buffer.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_elements}\n")
    for point in mesh.vertices:
        buffer.write(" ".join(repr(float(x)) for x in point) + "\n")
    for element in mesh.elements:
        buffer.write(" ".join(str(int(v)) for v in element) + "\n")
    return buffer.getvalue()


def write_mesh(mesh: Mesh, target: Path | TextIO) -> None:
    text = format_mesh(mesh)
    if isinstance(target, Path):
        target.write_text(text, encoding="utf-8")
    else:
        target.write(text)


def parse_mesh(text: str) -> Mesh:
    """Parse the canonical text format, rejecting malformed or trailing content."""
    lines = [line.strip() for line in text.splitlines()]
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise MeshError("empty mesh file")
    try:
        dim, nv, ne = (int(token) for token in lines[0].split())
    except ValueError as exc:
        raise MeshError(f"bad mesh header '{lines[0]}'") from exc
    expected = 1 + nv + ne
    if len(lines) != expected:
        raise MeshError(f"mesh file has {len(lines)} lines, header announces {expected}")
    try:
        vertices = np.array([[float(t) for t in line.split()] for line in lines[1 : 1 + nv]], dtype=float)
        elements = np.array([[int(t) for t in line.split()] for line in lines[1 + nv :]], dtype=np.int64)
    except ValueError as exc:
        raise MeshError(f"bad mesh entry: {exc}") from exc
    if vertices.shape != (nv, dim) or elements.shape != (ne, dim + 1):
        raise MeshError(f"mesh rows do not match dimension {dim}")
    return build_mesh(vertices, elements)


def read_mesh(path: Path) -> Mesh:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    return parse_mesh(text)


def load_mesh_source(source: str) -> Mesh:
    """Resolve ``gen:<name>:<n>`` (or ``<name>:<n>``) generators, otherwise a file path."""
    parts = source.split(":")
    if parts[0] == "gen":
        parts = parts[1:]
    if len(parts) == 2 and parts[0] in GENERATORS:
        try:
            n = int(parts[1])
        except ValueError:
            raise MeshError(f"bad generator size in '{source}'") from None
        return generate_mesh(parts[0], n)
    return read_mesh(Path(source))
