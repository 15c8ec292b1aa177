"""Smoothing operators mapping nonconforming functions into conforming targets.

Each operator is materialized as a sparse matrix from source dofs to target
coefficients: a Lagrange space ``S_0^{p+d-1}`` for the second-order methods,
and the stacked HCT and normal-bubble coefficients for the Morley method.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import bernstein
from .bubbles import build_normal_bubble_space
from .macro import DEFAULT_CONDITION_LIMIT, build_hct_space
from .mesh import Mesh
from .models import NcfemError, SpaceKind
from .quadrature import map_rule, simplex_rule
from .simplex import barycentric_coordinates
from .spaces import (
    BrokenSpace,
    DirectSumSpace,
    DofSpace,
    Evaluable,
    Field,
    build_lagrange_space,
    column_matrix,
    dof_functionals,
    face_moment_matrix,
)

_LOGGER = logging.getLogger(__name__)

FAULTS = ("skip-bubble",)

#: Broken coefficients below this fraction of the largest one do not count as support.
FOOTPRINT_TOL = 1e-10


class SmoothingError(NcfemError):
    """Raised when a smoother is requested for an incompatible source space."""


@dataclass(eq=False)
class SmoothingMap:
    """Sparse linear map from source dofs to target coefficients."""

    source: DofSpace
    target: Evaluable
    matrix: sparse.csr_matrix
    label: str = ""

    def __post_init__(self) -> None:
        self.matrix = sparse.csr_matrix(self.matrix)
        expected = (self.target.ndofs, self.source.ndofs)
        if self.matrix.shape != expected:
            raise SmoothingError(f"smoother matrix has shape {self.matrix.shape}, expected {expected}")
        _LOGGER.debug("Smoother %s: %d x %d, nnz %d", self.label, *self.matrix.shape, self.matrix.nnz)

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(sigma, dtype=float)

    def field(self, sigma: np.ndarray) -> Field:
        return Field(self.target, self.apply(sigma))

    def footprints(self) -> list[np.ndarray]:
        """Elements in the support of the image of every source basis function."""
        if isinstance(self.target, DirectSumSpace):
            parts = [
                (component.basis @ self.matrix[self.target.block(i)], component.broken.local_dim)
                for i, component in enumerate(self.target.components)
            ]
        else:
            parts = [(self.target.basis @ self.matrix, self.target.broken.local_dim)]
        supports: list[set[int]] = [set() for _ in range(self.source.ndofs)]
        for broken_matrix, local_dim in parts:
            csc = sparse.csc_matrix(broken_matrix)
            for j in range(self.source.ndofs):
                window = slice(csc.indptr[j], csc.indptr[j + 1])
                values = np.abs(csc.data[window])
                if values.size == 0:
                    continue
                keep = values > FOOTPRINT_TOL * values.max()
                supports[j].update((csc.indices[window][keep] // local_dim).tolist())
        return [np.array(sorted(s), dtype=np.int64) for s in supports]

    def max_footprint(self) -> int:
        return max((f.size for f in self.footprints()), default=0)


# local weighted projections ----------------------------------------------------


@dataclass
class WeightedProjection:
    """Local map from broken coefficients to the Bernstein coefficients of a weighted projection."""

    gram: np.ndarray
    moments: np.ndarray
    matrix: np.ndarray


def weighted_projection_QF(mesh: Mesh, face: int, p: int, source_degree: int) -> WeightedProjection:
    """``Q_F w`` in ``P_{p-1}(F)`` with ``int_F (Q_F w) q Phi_F = int_F w|K1 q`` for all ``q``.

    ``moments`` act on the local degree-*source_degree* coefficients of ``K1``.
    """
    d = mesh.dim
    element = int(mesh.face_elements[face, 0])
    gram = mesh.face_measures[face] * bernstein.weighted_gram(d, p - 1, (1,) * d)
    rule = simplex_rule(d - 1, p - 1 + source_degree)
    points, weights = map_rule(rule, mesh.vertices[mesh.faces[face]])
    face_values = bernstein.tabulate(p - 1, rule.bary)
    element_values = bernstein.tabulate(source_degree, barycentric_coordinates(mesh.element_vertices(element), points))
    moments = (face_values * weights[:, None]).T @ element_values
    return WeightedProjection(gram=gram, moments=moments, matrix=_weighted_solve(gram, moments, f"face {face}"))


def weighted_projection_QK(mesh: Mesh, element: int, p: int, source_degree: int) -> WeightedProjection:
    """``Q_K w`` in ``P_{p-2}(K)`` with ``int_K (Q_K w) r Phi_K = int_K w r`` for all ``r``."""
    n_vars = mesh.dim + 1
    volume = mesh.volumes[element]
    gram = volume * bernstein.weighted_gram(n_vars, p - 2, (1,) * n_vars)
    moments = volume * bernstein.mixed_gram(n_vars, p - 2, source_degree)
    return WeightedProjection(gram=gram, moments=moments, matrix=_weighted_solve(gram, moments, f"element {element}"))


def _weighted_solve(gram: np.ndarray, moments: np.ndarray, where: str) -> np.ndarray:
    try:
        return np.linalg.solve(gram, moments)
    except np.linalg.LinAlgError as exc:
        raise SmoothingError(f"weighted Gram matrix on {where} is singular") from exc


# bubble operators -----------------------------------------------------------------


def _node_dofs(target: DofSpace) -> np.ndarray:
    assert target.nodes is not None
    lookup = -np.ones(target.nodes.n_nodes, dtype=np.int64)
    for dof, descriptor in enumerate(target.descriptors):
        lookup[descriptor.entity] = dof
    return lookup


def face_bubble_operator(source: BrokenSpace, target: DofSpace, p: int) -> sparse.csr_matrix:
    """``w -> sum_F (Q_F w) Phi_F``, extending ``Q_F w`` by Lagrange functions of order ``p-1``.

    Rows are target dofs (Lagrange nodes of order ``p+d-1``), columns are
    coefficients of *source*; only ``K1`` traces enter.
    """
    mesh = source.mesh
    d = mesh.dim
    n_vars = d + 1
    q = target.degree
    node_dof = _node_dofs(target)
    low_alphas = bernstein.multi_indices(n_vars, p - 1)
    nodes_q = bernstein.domain_points(n_vars, q)
    rows, cols, vals = [], [], []
    for face in mesh.interior_faces:
        projection = weighted_projection_QF(mesh, int(face), p, source.degree)
        k1 = int(mesh.face_elements[face, 0])
        source_cols = source.offset(k1) + np.arange(source.cell_dim)
        seen: set[int] = set()
        for side in (0, 1):
            element = int(mesh.face_elements[face, side])
            opposite = int(mesh.face_local[face, side])
            face_local = [mesh.local_vertex(element, v) for v in mesh.faces[face]]
            on_face = np.flatnonzero(low_alphas[:, opposite] == 0)
            face_bary = low_alphas[on_face][:, face_local] / float(max(p - 1, 1))
            extension = bernstein.tabulate(p - 1, face_bary) @ projection.matrix
            for j, node in enumerate(target.nodes.element_nodes[element]):
                dof = node_dof[node]
                if dof < 0 or node in seen:
                    continue
                bary = nodes_q[j]
                weight = float(np.prod(bary[face_local]))
                if weight == 0.0:
                    continue
                seen.add(int(node))
                lagrange = bernstein.lagrange_values(n_vars, p - 1, bary[None, :])[0, on_face]
                rows.append(np.full(source.cell_dim, dof))
                cols.append(source_cols)
                vals.append(weight * lagrange @ extension)
    return column_matrix(rows, cols, vals, (target.ndofs, source.size))


def element_bubble_operator(source: BrokenSpace, target: DofSpace, p: int) -> sparse.csr_matrix:
    """``w -> sum_K (Q_K w) Phi_K`` on the interior Lagrange nodes of every element."""
    mesh = source.mesh
    n_vars = mesh.dim + 1
    node_dof = _node_dofs(target)
    nodes_q = bernstein.domain_points(n_vars, target.degree)
    interior = np.flatnonzero(np.all(nodes_q > 0, axis=1))
    rows, cols, vals = [], [], []
    for element in range(mesh.n_elements):
        projection = weighted_projection_QK(mesh, element, p, source.degree)
        bary = nodes_q[interior]
        values = np.prod(bary, axis=1)[:, None] * bernstein.tabulate(p - 2, bary) @ projection.matrix
        source_cols = source.offset(element) + np.arange(source.cell_dim)
        for local, j in enumerate(interior):
            rows.append(np.full(source.cell_dim, node_dof[target.nodes.element_nodes[element, j]]))
            cols.append(source_cols)
            vals.append(values[local])
    return column_matrix(rows, cols, vals, (target.ndofs, source.size))


# second-order smoothers -------------------------------------------------------------


def averaging_A_p(source: DofSpace, p: int, target: DofSpace | None = None) -> SmoothingMap:
    """Simplified nodal averaging: ``(A_p s)(z) = s|_{K_z}(z)`` at every interior node of order *p*."""
    target = build_lagrange_space(source.mesh, p) if target is None else target
    if target.kind is not SpaceKind.LAGRANGE or target.degree != p:
        raise SmoothingError("simplified averaging targets the Lagrange space of the same order")
    matrix = dof_functionals(target, on=source.broken) @ source.basis
    return SmoothingMap(source=source, target=target, matrix=matrix, label=f"A_{p}")


def embedding(source: DofSpace, target: DofSpace) -> sparse.csr_matrix:
    """Nodal interpolation of a continuous *source* into a Lagrange *target* (exact when nested)."""
    return sparse.csr_matrix(dof_functionals(target, on=source.broken) @ source.basis)


def _source_order(source: DofSpace) -> int:
    if source.kind is SpaceKind.CR:
        return 1
    if source.kind is SpaceKind.GL:
        return source.degree
    raise SmoothingError(f"no second-order smoother for a {source.kind.value} space")


def cr_bubble_B(cr_space: DofSpace, target: DofSpace | None = None) -> SmoothingMap:
    """``B s = sum_F (int_F s) Phi_F / int_F Phi_F`` into ``S_0^d``."""
    if cr_space.kind is not SpaceKind.CR:
        raise SmoothingError("the face-bubble smoother acts on Crouzeix-Raviart functions")
    mesh = cr_space.mesh
    d = mesh.dim
    target = build_lagrange_space(mesh, d) if target is None else target
    matrix = face_bubble_operator(target.broken, target, 1) @ cr_space.broken.elevation(d) @ cr_space.basis
    return SmoothingMap(source=cr_space, target=target, matrix=matrix, label="B")


def build_Ep(source: DofSpace, p: int | None = None, *, fault: str | None = None) -> SmoothingMap:
    """``E_p = A_p + B_p (id - A_p)`` with ``B_p = B_F + B_M (id - B_F)``, into ``S_0^{p+d-1}``.

    For ``p = 1`` the element part vanishes and this is ``E_1`` on the
    Crouzeix-Raviart space. ``fault="skip-bubble"`` drops the bubble part.
    """
    order = _source_order(source)
    p = order if p is None else p
    if p != order:
        raise SmoothingError(f"source space has order {order}, smoother requested for {p}")
    if fault is not None and fault not in FAULTS:
        raise SmoothingError(f"unknown fault '{fault}'")
    mesh = source.mesh
    q = p + mesh.dim - 1
    lagrange_p = build_lagrange_space(mesh, p)
    lagrange_q = lagrange_p if q == p else build_lagrange_space(mesh, q)

    averaging = dof_functionals(lagrange_p, on=source.broken) @ source.basis
    embed = embedding(lagrange_p, lagrange_q)
    matrix = embed @ averaging
    if fault != "skip-bubble":
        remainder = source.broken.elevation(q) @ (source.basis - lagrange_p.basis @ averaging)
        face_part = face_bubble_operator(lagrange_q.broken, lagrange_q, p)
        bubbled = face_part @ remainder
        if p >= 2:
            element_part = element_bubble_operator(lagrange_q.broken, lagrange_q, p)
            bubbled = bubbled + element_part @ (remainder - lagrange_q.basis @ bubbled)
        matrix = matrix + bubbled
    label = "E_1" if p == 1 else f"E_{p}"
    return SmoothingMap(source=source, target=lagrange_q, matrix=matrix, label=label if fault is None else f"{label} [{fault}]")


def build_E1(cr_space: DofSpace, *, fault: str | None = None) -> SmoothingMap:
    if cr_space.kind is not SpaceKind.CR:
        raise SmoothingError("E_1 acts on Crouzeix-Raviart functions")
    return build_Ep(cr_space, 1, fault=fault)


# Morley smoothers ------------------------------------------------------------------


def build_A_HCT(
    morley: DofSpace,
    hct: DofSpace | None = None,
    *,
    workers: int = 1,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> SmoothingMap:
    """Copy vertex values, gradients from ``K_z`` and midpoint normal slopes from ``K1`` into HCT."""
    if morley.kind is not SpaceKind.MORLEY:
        raise SmoothingError("HCT averaging acts on Morley functions")
    if hct is None:
        hct = build_hct_space(morley.mesh, condition_limit=condition_limit, workers=workers)
    matrix = dof_functionals(hct, on=morley.broken) @ morley.basis
    return SmoothingMap(source=morley, target=hct, matrix=matrix, label="A_HCT")


def build_E_MR(
    morley: DofSpace,
    hct: DofSpace | None = None,
    bubbles: DofSpace | None = None,
    *,
    fault: str | None = None,
    workers: int = 1,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> SmoothingMap:
    """``E_MR = A_HCT + B_n (id - A_HCT)`` into HCT plus normal-derivative bubbles."""
    if fault is not None and fault not in FAULTS:
        raise SmoothingError(f"unknown fault '{fault}'")
    averaging = build_A_HCT(morley, hct, workers=workers, condition_limit=condition_limit)
    hct = averaging.target
    mesh = morley.mesh
    bubbles = build_normal_bubble_space(mesh) if bubbles is None else bubbles
    faces = mesh.interior_faces
    morley_moments = face_moment_matrix(morley, faces, normal=True)
    hct_moments = face_moment_matrix(hct, faces, normal=True)
    correction = morley_moments - hct_moments @ averaging.matrix
    if fault == "skip-bubble":
        correction = sparse.csr_matrix(correction.shape)
    matrix = sparse.vstack([averaging.matrix, correction], format="csr")
    target = DirectSumSpace([hct, bubbles], label="HCT + normal bubbles")
    return SmoothingMap(source=morley, target=target, matrix=matrix, label="E_MR" if fault is None else f"E_MR [{fault}]")


def build_smoother(
    source: DofSpace,
    *,
    fault: str | None = None,
    workers: int = 1,
    condition_limit: float = DEFAULT_CONDITION_LIMIT,
) -> SmoothingMap:
    """The right-inverse smoother belonging to *source*."""
    if source.kind is SpaceKind.MORLEY:
        return build_E_MR(source, fault=fault, workers=workers, condition_limit=condition_limit)
    return build_Ep(source, fault=fault)
