"""Numerical certification of smoothers and discrete methods.

Everything here works on dense Gram matrices of the discrete space ``S`` and
of the smoothed basis images ``E phi_i``; the meshes are desk-sized, so the
generalized eigenproblems are solved with :mod:`scipy.linalg` directly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy import sparse

from . import bernstein
from .assembly import (
    LoadFunctional,
    SolverSettings,
    SymmetricSystem,
    assemble_energy_matrix,
    assemble_mixed_matrix,
    build_method_space,
    elementwise_norms,
    energy_error,
    energy_order,
    pipeline_degree,
    solve,
    solve_method,
)
from .config import ToleranceConfig
from .macro import c1_defect, edge_normal_moments
from .manufactured import ManufacturedSolution
from .mesh import Mesh
from .models import CheckResult, Method, NcfemError, PointSet, SpaceKind, Variant
from .quadrature import element_point_set, face_point_set, map_rule, simplex_rule
from .simplex import barycentric_coordinates
from .smoothing import SmoothingMap, averaging_A_p, build_A_HCT, build_smoother
from .spaces import (
    LOCAL_KERNEL_DOFS,
    DirectSumSpace,
    DofSpace,
    Evaluable,
    Field,
    build_lagrange_space,
    dof_functionals,
    duality_defect,
    face_moment_matrix,
    sample_point_set,
)

_LOGGER = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], np.ndarray]


class VerificationError(NcfemError):
    """Raised when two equivalent diagnostics disagree, which signals a bug."""


# Gram matrices --------------------------------------------------------------------


@dataclass
class GramPair:
    """``G_S`` of the source basis, ``G_T`` of its images and ``M_mix[i, j] = a(s_i, E s_j)``."""

    G_S: np.ndarray
    G_T: np.ndarray
    M_mix: np.ndarray
    order: int

    @property
    def size(self) -> int:
        return int(self.G_S.shape[0])

    @property
    def projection(self) -> np.ndarray:
        """Coefficients of ``Pi E s_j`` in the source basis, column by column."""
        return scipy.linalg.cho_solve(_cholesky(self.G_S, "G_S"), self.M_mix)


def _dense(matrix: sparse.spmatrix | np.ndarray) -> np.ndarray:
    return matrix.toarray() if sparse.issparse(matrix) else np.asarray(matrix)


def _cholesky(gram: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    try:
        return scipy.linalg.cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise VerificationError(f"{name} is not positive definite") from exc


def gram_pair(smoother: SmoothingMap, *, degree: int | None = None) -> GramPair:
    source, target = smoother.source, smoother.target
    order = energy_order(source)
    degree = 2 * max(target.degree - order, source.degree - order, 0) if degree is None else degree
    G_S = _dense(assemble_energy_matrix(source, order, degree=degree))
    G_T = _dense(smoother.matrix.T @ assemble_energy_matrix(target, order, degree=degree) @ smoother.matrix)
    M_mix = _dense(assemble_mixed_matrix(source, target, order, degree=degree, col_matrix=smoother.matrix))
    _LOGGER.debug("Gram pair for %s: %d dofs, exactness %d", smoother.label, G_S.shape[0], degree)
    return GramPair(G_S=G_S, G_T=0.5 * (G_T + G_T.T), M_mix=M_mix, order=order)


# spectral constants -------------------------------------------------------------------


@dataclass
class SpectralReport:
    c_stab: float
    c_qopt: float
    cond: float
    continuity: float
    inf_sup: float
    smoother_norm: float
    right_inverse_residual: float
    overconsistency_residual: float

    @property
    def norm_bound(self) -> float:
        """``||E|| / beta_E``, an upper bound for ``C_stab``."""
        return self.smoother_norm / self.inf_sup if self.inf_sup > 0 else float("inf")

    def to_dict(self) -> dict[str, float]:
        payload = asdict(self)
        payload["norm_bound"] = self.norm_bound
        return payload


def _largest_generalized(a: np.ndarray, b: np.ndarray) -> float:
    values = scipy.linalg.eigh(a, b, eigvals_only=True)
    return float(values[-1])


def right_inverse_residual(pair: GramPair) -> float:
    """``max_j ||Pi E s_j - s_j|| / ||s_j||`` in the energy norm."""
    if pair.size == 0:
        return 0.0
    defect = pair.projection - np.eye(pair.size)
    numerators = np.einsum("ij,ik,kj->j", defect, pair.G_S, defect)
    return float(np.sqrt(np.maximum(numerators, 0.0) / np.diag(pair.G_S)).max())


def overconsistency_residual(pair: GramPair) -> float:
    """``max |a(s_i, E s_j) - a(s_i, s_j)| / max |a(s_i, s_j)|``."""
    if pair.size == 0:
        return 0.0
    return float(np.abs(pair.M_mix - pair.G_S).max() / np.abs(pair.G_S).max())


def spectral_report(pair: GramPair, *, consistency_tol: float = 1e-8) -> SpectralReport:
    """Stability, quasi-optimality and condition constants of ``b_E(s, sigma) = a(s, E sigma)``.

    The condition number is computed twice, from ``b_E`` directly and from
    ``Pi E`` in energy-orthonormal coordinates; disagreement raises.
    """
    n = pair.size
    if n == 0:
        return SpectralReport(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    lower, _ = _cholesky(pair.G_S, "G_S")
    lower = np.tril(lower)
    scaled = scipy.linalg.solve_triangular(lower, pair.M_mix, lower=True)
    form = scipy.linalg.solve_triangular(lower, scaled.T, lower=True).T
    singular = scipy.linalg.svd(form, compute_uv=False)
    continuity, inf_sup = float(singular[0]), float(singular[-1])
    cond = continuity / inf_sup if inf_sup > 0 else float("inf")

    projection = scipy.linalg.cho_solve((lower, True), pair.M_mix)
    orthonormal = scipy.linalg.solve_triangular(lower, (lower.T @ projection).T, lower=True).T
    singular_p = scipy.linalg.svd(orthonormal, compute_uv=False)
    cond_p = singular_p[0] / singular_p[-1] if singular_p[-1] > 0 else float("inf")
    if max(cond, cond_p) < 1.0 / consistency_tol and abs(cond - cond_p) > consistency_tol * cond:
        raise VerificationError(f"condition numbers disagree: {cond:.12g} from b_E, {cond_p:.12g} from Pi E")

    smoother_norm = float(np.sqrt(max(_largest_generalized(pair.G_T, pair.G_S), 0.0)))
    try:
        G_PE = projection.T @ pair.G_S @ projection
        c_stab = float(np.sqrt(_largest_generalized(pair.G_T, 0.5 * (G_PE + G_PE.T))))
    except np.linalg.LinAlgError:
        c_stab = float("inf")
    try:
        upper_t = scipy.linalg.cholesky(pair.G_T, lower=False)
        restricted = scipy.linalg.solve_triangular(upper_t, (lower.T @ projection).T, trans="T", lower=False).T
        smallest = scipy.linalg.svd(restricted, compute_uv=False)[-1]
        c_qopt = float(1.0 / smallest) if smallest > 0 else float("inf")
    except np.linalg.LinAlgError:
        c_qopt = float("inf")

    return SpectralReport(
        c_stab=c_stab,
        c_qopt=c_qopt,
        cond=float(cond),
        continuity=continuity,
        inf_sup=inf_sup,
        smoother_norm=smoother_norm,
        right_inverse_residual=right_inverse_residual(pair),
        overconsistency_residual=overconsistency_residual(pair),
    )


def rayleigh_quotients(pair: GramPair, samples: int = 100, seed: int = 0) -> np.ndarray:
    """``||E s|| / ||Pi E s||`` for random coefficient vectors."""
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((pair.size, samples))
    images = pair.projection @ vectors
    numerators = np.einsum("ij,ik,kj->j", vectors, pair.G_T, vectors)
    denominators = np.einsum("ij,ik,kj->j", images, pair.G_S, images)
    return np.sqrt(numerators / denominators)


# nondegeneracy ----------------------------------------------------------------------


@dataclass
class NondegeneracyReport:
    injective: bool
    form_nondegenerate: bool
    projection_invertible: bool
    intersection_dimension: int
    range_dimension: int
    cond: float

    @property
    def nondegenerate(self) -> bool:
        return self.form_nondegenerate

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def orthonormal_coordinates(gram: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Columns ``C`` with ``C^T G C = I`` spanning the range of a semidefinite Gram matrix."""
    values, vectors = scipy.linalg.eigh(gram)
    top = values[-1] if values.size else 0.0
    keep = values > rank_tol * max(top, 0.0)
    return vectors[:, keep] / np.sqrt(values[keep])[None, :]


def nondegeneracy_diagnosis(pair: GramPair, *, rank_tol: float = 1e-10) -> NondegeneracyReport:
    """Three equivalent tests: ``b_E`` nondegenerate, ``Pi|_T`` invertible, ``S cap T^perp = {0}``."""
    n = pair.size
    range_basis = orthonormal_coordinates(pair.G_T, rank_tol)
    range_dimension = range_basis.shape[1]
    injective = range_dimension == n

    singular = scipy.linalg.svd(pair.M_mix, compute_uv=False) if n else np.zeros(0)
    form_nondegenerate = bool(n == 0 or singular[-1] > rank_tol * singular[0])

    lower = np.tril(_cholesky(pair.G_S, "G_S")[0]) if n else np.zeros((0, 0))
    restricted = lower.T @ pair.projection @ range_basis if n else np.zeros((0, 0))
    rank = int(np.linalg.matrix_rank(restricted, tol=rank_tol * max(np.abs(restricted).max(initial=0.0), 1.0))) if n else 0
    projection_invertible = injective and rank == n

    coupling = (pair.M_mix @ range_basis).T
    intersection = scipy.linalg.null_space(coupling, rcond=rank_tol).shape[1] if n else 0

    if not (form_nondegenerate == projection_invertible == (intersection == 0)):
        raise VerificationError(
            "nondegeneracy tests disagree: "
            f"form={form_nondegenerate}, projection={projection_invertible}, intersection={intersection}"
        )
    cond = float(singular[0] / singular[-1]) if form_nondegenerate and n else float("inf")
    if form_nondegenerate and n:
        cond = spectral_report(pair).cond
    return NondegeneracyReport(
        injective=injective,
        form_nondegenerate=form_nondegenerate,
        projection_invertible=projection_invertible,
        intersection_dimension=int(intersection),
        range_dimension=int(range_dimension),
        cond=cond,
    )


def conformity_correlations(smoother: SmoothingMap, *, rank_tol: float = 1e-10) -> np.ndarray:
    """Canonical correlations between ``S`` and the smoother's target space, descending."""
    source, target = smoother.source, smoother.target
    order = energy_order(source)
    degree = 2 * max(target.degree - order, 0)
    G_S = _dense(assemble_energy_matrix(source, order, degree=degree))
    G_V = _dense(assemble_energy_matrix(target, order, degree=degree))
    mixed = _dense(assemble_mixed_matrix(source, target, order, degree=degree))
    lower = np.tril(_cholesky(G_S, "G_S")[0])
    coupling = scipy.linalg.solve_triangular(lower, mixed @ orthonormal_coordinates(G_V, rank_tol), lower=True)
    values = scipy.linalg.svd(coupling, compute_uv=False)
    if values.size < source.ndofs:
        values = np.concatenate([values, np.zeros(source.ndofs - values.size)])
    return np.clip(values, 0.0, 1.0)


# projections and best approximation --------------------------------------------------


def project_onto_S(
    source: Field | PointFunction,
    space: DofSpace,
    order: int,
    *,
    degree: int,
    gram: sparse.spmatrix | None = None,
) -> np.ndarray:
    """Energy projection onto *space* of a discrete field or of exact derivatives ``D^order u``."""
    split = "ct" if space.split == "ct" or (isinstance(source, Field) and source.space.split == "ct") else "none"
    point_set = element_point_set(space.mesh, degree, split=split)
    if isinstance(source, Field):
        values = source.evaluate(point_set, order).reshape(-1)
    else:
        values = np.asarray(source(point_set.points), dtype=float).reshape(-1)
    weights = np.repeat(point_set.weights, space.mesh.dim**order)
    rhs = space.evaluate(point_set, order).T @ (weights * values)
    gram = assemble_energy_matrix(space, order) if gram is None else gram
    return solve(SymmetricSystem(matrix=sparse.csr_matrix(gram), rhs=rhs, descriptors=list(space.descriptors)))


def best_error(
    derivative: PointFunction,
    space: DofSpace,
    order: int,
    *,
    degree: int,
) -> tuple[float, np.ndarray]:
    """``inf_s ||u - s||`` in the broken energy norm and the minimizing coefficients."""
    coefficients = project_onto_S(derivative, space, order, degree=degree)
    point_set = element_point_set(space.mesh, degree, split=space.split)
    difference = np.asarray(derivative(point_set.points), dtype=float).reshape(point_set.size, -1)
    difference = difference - Field(space, coefficients).evaluate(point_set, order).reshape(point_set.size, -1)
    return float(np.sqrt(elementwise_norms(space.mesh, point_set, difference).sum())), coefficients


def cr_localized_error(gradient: PointFunction, mesh: Mesh, *, degree: int) -> float:
    """``(sum_K ||grad u - mean_K grad u||_K^2)^(1/2)``."""
    point_set = element_point_set(mesh, degree)
    values = np.asarray(gradient(point_set.points), dtype=float)
    means = np.empty((mesh.n_elements, mesh.dim))
    for axis in range(mesh.dim):
        means[:, axis] = np.bincount(point_set.elements, weights=point_set.weights * values[:, axis], minlength=mesh.n_elements)
    means /= mesh.volumes[:, None]
    return float(np.sqrt(elementwise_norms(mesh, point_set, values - means[point_set.elements]).sum()))


def smooth_degree(space: Evaluable, margin: int = 4) -> int:
    """Exactness for integrals of smooth manufactured data against *space*."""
    return max(2 * space.degree, 8) + margin


# quasi-optimality study ----------------------------------------------------------------


@dataclass
class LevelRow:
    level: int
    h_max: float
    dofs: int
    energy_error: float
    best_error: float
    ratio: float | None
    rate: float | None
    c_stab: float | None
    exact_reproduction: bool = False

    def to_dict(self) -> dict[str, object]:
        return asdict(self)


def energy_error_of(solution: ManufacturedSolution, result_field: Field, order: int, margin: int = 4) -> float:
    return energy_error(solution.derivative(order), result_field, order, degree=smooth_degree(result_field.space, margin))


def quasi_optimality_study(
    method: Method,
    variant: Variant,
    meshes: list[Mesh],
    solution: ManufacturedSolution,
    *,
    p: int | None = None,
    settings: SolverSettings | None = None,
    margin: int = 4,
    exact_floor: float = 1e-13,
) -> list[LevelRow]:
    """Energy error, best error and their ratio on every mesh, with observed rates."""
    rows: list[LevelRow] = []
    for level, mesh in enumerate(meshes):
        result = solve_method(method, variant, mesh, solution.load, p=p, settings=settings)
        order = result.order
        degree = smooth_degree(result.space, margin)
        error = energy_error_of(solution, result.field, order, margin)
        best, _ = best_error(solution.derivative(order), result.space, order, degree=degree)
        c_stab = spectral_report(gram_pair(result.smoother)).c_stab if result.smoother is not None else None
        exact = best < exact_floor
        ratio = None if exact else error / best
        rate = None
        if rows and not exact and rows[-1].energy_error > 0 and error > 0:
            rate = float(np.log(rows[-1].energy_error / error) / np.log(rows[-1].h_max / mesh.h_max))
        row = LevelRow(level, mesh.h_max, result.space.ndofs, error, best, ratio, rate, c_stab, exact)
        _LOGGER.info(
            "level %d: h=%.4f dofs=%d error=%.6e best=%.6e ratio=%s rate=%s",
            level,
            row.h_max,
            row.dofs,
            error,
            best,
            "n/a" if ratio is None else f"{ratio:.6f}",
            "n/a" if rate is None else f"{rate:.3f}",
        )
        rows.append(row)
    return rows


# smoother properties ----------------------------------------------------------------------


def conforming_coefficients(space: DofSpace, *, rank_tol: float = 1e-10) -> np.ndarray:
    """Source coefficients (columns) of a basis of the conforming part of *space*."""
    mesh = space.mesh
    if space.kind is SpaceKind.CR:
        lagrange = build_lagrange_space(mesh, 1)
        return _dense(dof_functionals(space, on=lagrange.broken) @ lagrange.basis)
    if space.kind is SpaceKind.GL:
        lagrange = build_lagrange_space(mesh, space.degree)
        return _dense(dof_functionals(space) @ lagrange.basis)
    if space.kind is SpaceKind.MORLEY:
        return morley_conforming_kernel(space, rank_tol=rank_tol)
    raise NcfemError(f"no conforming part for a {space.kind.value} space")


def conforming_invariance_residual(smoother: SmoothingMap, coefficients: np.ndarray | None = None) -> float:
    """``max |D^k (E s - s)| / max |D^k s|`` over sample points for conforming ``s``, ``k`` up to the energy order."""
    source, target = smoother.source, smoother.target
    coefficients = conforming_coefficients(source) if coefficients is None else coefficients
    if coefficients.shape[1] == 0:
        return 0.0
    points = sample_point_set(source.mesh, 3)
    worst = 0.0
    for order in range(energy_order(source) + 1):
        original = source.evaluate(points, order) @ coefficients
        smoothed = (target.evaluate(points, order) @ smoother.matrix) @ coefficients
        scale = max(float(np.abs(original).max()), 1e-300)
        worst = max(worst, float(np.abs(smoothed - original).max() / scale))
    return worst


def _face_moment_defects(smoother: SmoothingMap, p: int) -> tuple[np.ndarray, np.ndarray]:
    source, target = smoother.source, smoother.target
    mesh = source.mesh
    rule = simplex_rule(mesh.dim - 1, p - 1 + target.degree)
    weights_q = bernstein.tabulate(p - 1, rule.bary)
    defects, references = [], []
    for face in mesh.interior_faces:
        points, weights = map_rule(rule, mesh.vertices[mesh.faces[face]])
        owner = PointSet(points, np.full(points.shape[0], mesh.face_elements[face, 0]))
        original = source.evaluate(owner, 0).toarray()
        smoothed = (target.evaluate(owner, 0) @ smoother.matrix).toarray()
        tested = (weights_q * weights[:, None]).T
        defects.append(tested @ (smoothed - original))
        references.append(tested @ original)
    return np.vstack(defects), np.vstack(references)


def _element_moment_defects(smoother: SmoothingMap, p: int) -> tuple[np.ndarray, np.ndarray]:
    source, target = smoother.source, smoother.target
    mesh = source.mesh
    point_set = element_point_set(mesh, p - 2 + target.degree)
    original = source.evaluate(point_set, 0).toarray()
    smoothed = (target.evaluate(point_set, 0) @ smoother.matrix).toarray()
    defects, references = [], []
    for element, indices in point_set.element_groups():
        bary = barycentric_coordinates(mesh.element_vertices(element), point_set.points[indices])
        tested = (bernstein.tabulate(p - 2, bary) * point_set.weights[indices][:, None]).T
        defects.append(tested @ (smoothed[indices] - original[indices]))
        references.append(tested @ original[indices])
    return np.vstack(defects), np.vstack(references)


def moment_residual(smoother: SmoothingMap) -> float:
    """Relative defect of the moments that characterize right inverses.

    Face moments against ``P_{p-1}`` and element moments against ``P_{p-2}``
    for second-order sources; vertex values and face normal-derivative means
    for the Morley source.
    """
    source, target = smoother.source, smoother.target
    mesh = source.mesh
    if source.kind is SpaceKind.MORLEY:
        vertices = mesh.interior_vertices
        owners = np.array([mesh.vertex_star(z)[0] for z in vertices], dtype=np.int64)
        points = PointSet(mesh.vertices[vertices], owners)
        original = source.evaluate(points, 0).toarray()
        smoothed = (target.evaluate(points, 0) @ smoother.matrix).toarray()
        faces = mesh.interior_faces
        degree = pipeline_degree(target, 2)
        normal_original = face_moment_matrix(source, faces, normal=True).toarray()
        normal_smoothed = (face_moment_matrix(target, faces, normal=True, degree=degree) @ smoother.matrix).toarray()
        defects = [smoothed - original, normal_smoothed - normal_original]
        references = [original, normal_original]
    else:
        p = 1 if source.kind is SpaceKind.CR else source.degree
        face_defect, face_reference = _face_moment_defects(smoother, p)
        defects, references = [face_defect], [face_reference]
        if p >= 2:
            element_defect, element_reference = _element_moment_defects(smoother, p)
            defects.append(element_defect)
            references.append(element_reference)
    scale = max(float(max(np.abs(r).max(initial=0.0) for r in references)), 1e-300)
    return float(max(np.abs(d).max(initial=0.0) for d in defects) / scale)


def _extended_patch(mesh: Mesh, elements: np.ndarray) -> set[int]:
    return set(np.unique(np.concatenate([mesh.element_patch(int(k)) for k in elements])).tolist())


def locality_violations(smoother: SmoothingMap) -> int:
    """Source dofs whose image leaves the admissible patch.

    Face dofs must stay inside ``omega_K1 cup omega_K2``; for the Morley
    smoother, whose bubble correction reaches the faces of that patch, one
    more layer of elements is admitted. Vertex dofs stay inside the stars of
    the elements around the vertex. Local jump-moment kernel functions stay
    inside the element patches of their own support.
    """
    source = smoother.source
    mesh = source.mesh
    supports = source.supports() if source.kind is SpaceKind.GL else []
    violations = 0
    for index, (descriptor, footprint) in enumerate(zip(source.descriptors, smoother.footprints())):
        if descriptor.kind in ("face-mean", "face-normal-moment"):
            patch = mesh.face_patch(descriptor.entity)
            allowed = _extended_patch(mesh, patch) if source.kind is SpaceKind.MORLEY else set(patch.tolist())
        elif descriptor.kind == "vertex-value":
            allowed = _extended_patch(mesh, _extended_patch_array(mesh, mesh.vertex_star(descriptor.entity)))
        elif descriptor.kind in LOCAL_KERNEL_DOFS:
            allowed = _extended_patch(mesh, supports[index])
        else:
            continue
        if not set(footprint.tolist()) <= allowed:
            violations += 1
    return violations


def _extended_patch_array(mesh: Mesh, elements: np.ndarray) -> np.ndarray:
    return np.array(sorted(_extended_patch(mesh, elements)), dtype=np.int64)


def smoother_report(smoother: SmoothingMap, pair: GramPair | None = None) -> dict[str, float]:
    pair = gram_pair(smoother) if pair is None else pair
    return {
        "right_inverse_residual": right_inverse_residual(pair),
        "conforming_invariance_residual": conforming_invariance_residual(smoother),
        "operator_norm": float(np.sqrt(max(_largest_generalized(pair.G_T, pair.G_S), 0.0))),
        "locality_max_footprint": smoother.max_footprint(),
    }


# averaging bounds ----------------------------------------------------------------------------


def _sample_vectors(n: int, samples: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.hstack([np.eye(n), rng.standard_normal((n, samples))])


def _element_energy(space: DofSpace, vectors: np.ndarray, order: int) -> np.ndarray:
    """``||D^order_M v||_K`` per element (rows) and vector (columns)."""
    mesh = space.mesh
    point_set = element_point_set(mesh, 2 * max(space.degree - order, 0), split=space.split)
    values = (space.evaluate(point_set, order) @ vectors).reshape(point_set.size, -1, vectors.shape[1])
    squared = point_set.weights[:, None] * np.sum(values**2, axis=1)
    result = np.zeros((mesh.n_elements, vectors.shape[1]))
    np.add.at(result, point_set.elements, squared)
    return np.sqrt(result)


def averaging_constant(source: DofSpace, p: int, *, samples: int = 20, seed: int = 0) -> float:
    """Smallest ``C`` in the pointwise bound for simplified nodal averaging, over sampled functions.

    ``|s|_K(z) - A_p s(z)| <= sum_F |F|^-1 |int_F [[s]]| + C sum_K' h_K' |K'|^-1/2 ||grad s||_K'``.
    """
    mesh = source.mesh
    averaging = averaging_A_p(source, p)
    lagrange = averaging.target
    table = lagrange.nodes
    vectors = _sample_vectors(source.ndofs, samples, seed)
    averaged = np.zeros((table.n_nodes, vectors.shape[1]))
    node_of_dof = np.array([d.entity for d in lagrange.descriptors], dtype=np.int64)
    averaged[node_of_dof] = averaging.matrix @ vectors

    faces = np.arange(mesh.n_faces)
    jumps = face_moment_matrix(source, faces).toarray()
    interior = mesh.interior_faces
    jumps[interior] -= face_moment_matrix(source, interior, side=1).toarray()
    jump_terms = np.abs(jumps @ vectors) / mesh.face_measures[:, None]
    gradient_terms = _element_energy(source, vectors, 1) * (mesh.diameters / np.sqrt(mesh.volumes))[:, None]

    local_points = bernstein.domain_points(mesh.dim + 1, p)
    stars: dict[int, list[int]] = {}
    for element, nodes in enumerate(table.element_nodes):
        for node in nodes:
            stars.setdefault(int(node), []).append(element)

    worst = 0.0
    for element in range(mesh.n_elements):
        nodes = table.element_nodes[element]
        physical = local_points @ mesh.element_vertices(element)
        values = source.evaluate(PointSet(physical, np.full(nodes.size, element)), 0) @ vectors
        for j, node in enumerate(nodes):
            star = stars[int(node)]
            support = {v for v, _ in table.keys[node]}
            touching = sorted(
                {int(f) for k in star for f in mesh.element_faces[k] if support <= set(mesh.faces[f].tolist())}
            )
            lhs = np.abs(values[j] - averaged[node]) - jump_terms[touching].sum(axis=0)
            gradient = gradient_terms[star].sum(axis=0)
            mask = gradient > 1e-12 * max(gradient.max(initial=0.0), 1e-300)
            if np.any(mask):
                worst = max(worst, float(np.max(np.maximum(lhs, 0.0)[mask] / gradient[mask])))
    return worst


def hct_averaging_constant(morley: DofSpace, *, samples: int = 20, seed: int = 0) -> float:
    """Smallest ``C`` with ``|grad s|_K(z) - grad A_HCT s(z)| <= C sum_K' h_K' |K'|^-1/2 ||D^2 s||_K'``."""
    mesh = morley.mesh
    averaging = build_A_HCT(morley)
    hct = averaging.target
    vectors = _sample_vectors(morley.ndofs, samples, seed)
    coefficients = averaging.matrix @ vectors
    hessian_terms = _element_energy(morley, vectors, 2) * (mesh.diameters / np.sqrt(mesh.volumes))[:, None]
    worst = 0.0
    for z in mesh.interior_vertices:
        rows = [hct.dof("vertex-gradient", int(z), c) for c in range(mesh.dim)]
        averaged = coefficients[rows]
        star = mesh.vertex_star(int(z))
        bound = hessian_terms[star].sum(axis=0)
        for element in star:
            gradient = morley.evaluate(PointSet(mesh.vertices[z][None, :], [element]), 1) @ vectors
            lhs = np.linalg.norm(np.asarray(gradient) - averaged, axis=0)
            mask = bound > 1e-12 * max(bound.max(initial=0.0), 1e-300)
            if np.any(mask):
                worst = max(worst, float(np.max(lhs[mask] / bound[mask])))
    return worst


# Morley specifics --------------------------------------------------------------------------------


def morley_conforming_kernel(morley: DofSpace, *, rank_tol: float = 1e-10) -> np.ndarray:
    """Morley coefficients of a basis of ``MR cap H^2_0``: continuous gradients and clamped boundary."""
    mesh = morley.mesh
    blocks = []
    for face in range(mesh.n_faces):
        first = face_point_set(mesh, face, 3, side=0)
        gradient = morley.evaluate(first, 1).toarray()
        if mesh.is_interior_face(face):
            gradient = gradient - morley.evaluate(face_point_set(mesh, face, 3, side=1), 1).toarray()
        blocks.append(gradient)
    constraints = np.vstack(blocks) if blocks else np.zeros((0, morley.ndofs))
    scale = max(float(np.abs(constraints).max(initial=0.0)), 1.0)
    return scipy.linalg.null_space(constraints / scale, rcond=rank_tol)


def morley_h2_conforming_dimension(morley: DofSpace, *, rank_tol: float = 1e-10) -> int:
    return int(morley_conforming_kernel(morley, rank_tol=rank_tol).shape[1])


def hct_edge_identity_residual(hct: DofSpace) -> float:
    """``max |int_F grad Y . n_F - |F| (n_F)_j / 6 [z in F]| / |F|`` over gradient basis functions ``Y`` at ``z``."""
    mesh = hct.mesh
    moments = edge_normal_moments(hct).toarray()
    worst = 0.0
    for dof, descriptor in enumerate(hct.descriptors):
        if descriptor.kind != "vertex-gradient":
            continue
        contains = np.array([descriptor.entity in mesh.faces[f] for f in range(mesh.n_faces)])
        expected = np.where(contains, mesh.face_measures * mesh.face_normals[:, descriptor.component] / 6.0, 0.0)
        worst = max(worst, float(np.max(np.abs(moments[:, dof] - expected) / mesh.face_measures)))
    return worst


def normal_bubble_scaling(bubbles: DofSpace) -> np.ndarray:
    """``||D^2 bubble_F||_K rho_K |F| / |K|^(1/2)`` per interior face, largest over its two elements."""
    mesh = bubbles.mesh
    norms = _element_energy(bubbles, np.eye(bubbles.ndofs), 2)
    result = np.empty(bubbles.ndofs)
    for dof, descriptor in enumerate(bubbles.descriptors):
        face = descriptor.entity
        elements = mesh.face_elements[face]
        scaled = norms[elements, dof] * mesh.inball[elements] * mesh.face_measures[face] / np.sqrt(mesh.volumes[elements])
        result[dof] = float(scaled.max())
    return result


def riesz_isometry_residual(space: DofSpace, coefficients: np.ndarray) -> float:
    """``| ||u|| - sup <l, v>/||v|| | / ||u||`` for ``l = a(u, .)`` on a conforming space."""
    gram = _dense(assemble_energy_matrix(space))
    functional = gram @ coefficients
    norm = float(np.sqrt(coefficients @ functional))
    dual = float(np.sqrt(functional @ scipy.linalg.cho_solve(_cholesky(gram, "G"), functional)))
    return abs(norm - dual) / norm if norm > 0 else abs(dual)


def linearity_residual(
    method: Method,
    mesh: Mesh,
    load: LoadFunctional,
    *,
    p: int | None = None,
    factor: float = 2.5,
    settings: SolverSettings | None = None,
    space: DofSpace | None = None,
    smoother: SmoothingMap | None = None,
) -> float:
    base = solve_method(method, Variant.SMOOTHED, mesh, load, p=p, settings=settings, space=space, smoother=smoother)
    scaled = solve_method(
        method, Variant.SMOOTHED, mesh, load.scaled(factor), p=p, settings=settings, space=base.space, smoother=base.smoother
    )
    scale = max(float(np.abs(base.coefficients).max(initial=0.0)), 1e-300)
    return float(np.abs(scaled.coefficients - factor * base.coefficients).max() / (factor * scale))


def galerkin_orthogonality_residual(
    solution: ManufacturedSolution,
    result_coefficients: np.ndarray,
    smoother: SmoothingMap,
    *,
    margin: int = 4,
) -> float:
    """``max_i |a(u - U, E s_i)| / (||u - U|| ||E s_i||)``."""
    source, target = smoother.source, smoother.target
    order = energy_order(source)
    degree = smooth_degree(target, margin)
    point_set = element_point_set(source.mesh, degree, split=target.split)
    exact = np.asarray(solution.derivative(order)(point_set.points), dtype=float).reshape(-1)
    discrete = source.evaluate(point_set, order) @ result_coefficients
    difference = exact - discrete
    weights = np.repeat(point_set.weights, source.mesh.dim**order)
    images = target.evaluate(point_set, order) @ smoother.matrix
    pairing = images.T @ (weights * difference)
    image_norms = np.sqrt(np.asarray(images.multiply(images).T @ weights).reshape(-1))
    error_norm = float(np.sqrt(weights @ difference**2))
    if error_norm == 0.0:
        return 0.0
    mask = image_norms > 0
    return float(np.max(np.abs(pairing[mask]) / (error_norm * image_norms[mask]), initial=0.0))


# suite ----------------------------------------------------------------------------------------------


@dataclass
class VerificationSuite:
    method: Method
    checks: list[CheckResult] = field(default_factory=list)
    spectral: SpectralReport | None = None

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def failures(self) -> list[str]:
        return [check.name for check in self.checks if not check.passed]

    def add(self, name: str, measured: float, threshold: float, statement: str, *, upper: bool = True, **details: object) -> CheckResult:
        passed = bool(np.isfinite(measured) and (measured <= threshold if upper else measured >= threshold))
        check = CheckResult(name, passed, float(measured), float(threshold), statement, dict(details))
        _LOGGER.info("check %-28s %s (measured %.3e, threshold %.3e)", name, check.status, measured, threshold)
        self.checks.append(check)
        return check

    def to_dict(self) -> dict[str, object]:
        return {
            "method": self.method.value,
            "status": "pass" if self.passed else "fail",
            "checks": [check.to_dict() for check in self.checks],
            "spectral": None if self.spectral is None else self.spectral.to_dict(),
        }


def run_verify_suite(
    method: Method,
    mesh: Mesh,
    *,
    p: int | None = None,
    tolerances: ToleranceConfig | None = None,
    settings: SolverSettings | None = None,
    solution: ManufacturedSolution | None = None,
    fault: str | None = None,
    seed: int = 0,
) -> VerificationSuite:
    """All computable consequences of the right-inverse theory for one method on one mesh.

    *seed* drives the random coefficient vectors of the Rayleigh-quotient check.
    """
    tolerances = tolerances or ToleranceConfig()
    settings = settings or SolverSettings()
    space = build_method_space(method, mesh, p, settings)
    smoother = build_smoother(space, fault=fault, workers=settings.workers, condition_limit=settings.hct_condition)
    suite = VerificationSuite(method=method)

    suite.add("dof-duality", duality_defect(space), tolerances.projection, "nodal duality of the discrete basis")
    pair = gram_pair(smoother)
    report = spectral_report(pair)
    suite.spectral = report
    suite.add(
        "right-inverse",
        report.right_inverse_residual,
        tolerances.right_inverse,
        "right inverse of the energy projection",
    )
    suite.add(
        "overconsistency",
        report.overconsistency_residual,
        tolerances.projection,
        "a(s, E sigma) = a(s, sigma) on the discrete space",
    )
    suite.add(
        "condition-number",
        abs(report.cond - 1.0),
        tolerances.right_inverse,
        "condition number of b_E equals one",
        cond=report.cond,
    )
    suite.add(
        "qopt-equals-stab",
        abs(report.c_qopt - report.c_stab) / report.c_stab if np.isfinite(report.c_stab) else float("inf"),
        tolerances.right_inverse,
        "quasi-optimality constant equals the stability constant",
        c_stab=report.c_stab,
        c_qopt=report.c_qopt,
    )
    diagnosis = nondegeneracy_diagnosis(pair, rank_tol=tolerances.rank)
    suite.add(
        "nondegeneracy",
        float(diagnosis.intersection_dimension),
        0.0,
        "b_E nondegenerate, Pi|_T invertible and S cap T^perp trivial",
        **diagnosis.to_dict(),
    )
    suite.add(
        "moment-preservation",
        moment_residual(smoother),
        tolerances.identity if method is Method.CR else tolerances.projection,
        "moments characterizing right inverses",
    )
    suite.add(
        "conforming-invariance",
        conforming_invariance_residual(smoother, conforming_coefficients(space, rank_tol=tolerances.rank)),
        tolerances.projection,
        "smoother is the identity on the conforming part",
    )
    if any(d.kind == "kernel" for d in space.descriptors):
        _LOGGER.info("No locality check for the global %s basis (largest image footprint %d)", space.label, smoother.max_footprint())
    else:
        suite.add(
            "locality",
            float(locality_violations(smoother)),
            0.0,
            "smoothed dual basis functions stay in their patch",
            max_footprint=smoother.max_footprint(),
        )

    correlations = conformity_correlations(smoother, rank_tol=tolerances.rank)
    smallest = float(correlations[-1]) if correlations.size else 1.0
    suite.add(
        "angle-bound",
        report.c_stab * smallest,
        1.0 - tolerances.right_inverse,
        "stability constant at least the inverse cosine of the worst nonconforming direction",
        upper=False,
        smallest_correlation=smallest,
        largest_correlation=float(correlations[0]) if correlations.size else 1.0,
    )
    suite.add(
        "smoother-bound",
        report.norm_bound / report.c_stab if np.isfinite(report.c_stab) else 0.0,
        1.0 - tolerances.right_inverse,
        "||E|| / beta_E bounds the stability constant from above",
        upper=False,
        bound=report.norm_bound,
    )
    quotients = rayleigh_quotients(pair, seed=seed)
    suite.add(
        "rayleigh-quotients",
        float(quotients.max() / report.c_stab) if np.isfinite(report.c_stab) else float("inf"),
        1.0 + 1e-6,
        "random Rayleigh quotients stay below the stability constant",
        seed=seed,
        largest_quotient=float(quotients.max()),
    )

    load = solution.load if solution is not None else LoadFunctional(f0=lambda ps: np.ones(ps.size), label="constant")
    suite.add(
        "linearity",
        linearity_residual(method, mesh, load, p=p, settings=settings, space=space, smoother=smoother),
        tolerances.projection,
        "scaling the load scales the discrete solution",
    )
    if solution is not None and solution.order == energy_order(space):
        result = solve_method(method, Variant.SMOOTHED, mesh, load, p=p, settings=settings, space=space, smoother=smoother)
        suite.add(
            "galerkin-orthogonality",
            galerkin_orthogonality_residual(solution, result.coefficients, smoother),
            1e-8,
            "error of the smoothed method is orthogonal to the range of E",
        )

    if method is Method.MORLEY:
        hct = smoother.target.components[0] if isinstance(smoother.target, DirectSumSpace) else None
        if hct is not None:
            defects = c1_defect(hct)
            suite.add("hct-c1", max(defects.values()), tolerances.c1_sampling, "HCT basis is C1 with clamped trace", **defects)
            suite.add("hct-edge-identity", hct_edge_identity_residual(hct), tolerances.projection, "normal-derivative means of HCT gradient basis")
            bubbles = smoother.target.components[1]
            duality = face_moment_matrix(bubbles, mesh.interior_faces, normal=True, degree=pipeline_degree(bubbles, 2)).toarray()
            suite.add(
                "bubble-duality",
                float(np.abs(duality - np.eye(duality.shape[0])).max(initial=0.0)),
                tolerances.projection,
                "normal-derivative bubbles are dual to face normal means",
            )
        dimension = conforming_coefficients(space, rank_tol=tolerances.rank).shape[1]
        suite.add(
            "conforming-part-dimension",
            0.0,
            0.0,
            "dimension of the H2-conforming Morley functions (informational)",
            dimension=int(dimension),
        )
    if fault is not None:
        _LOGGER.warning("Suite ran with injected fault '%s'", fault)
    return suite
