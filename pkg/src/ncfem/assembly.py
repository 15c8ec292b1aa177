"""Energy matrices, load vectors through smoothers, and symmetric solves."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .bubbles import MORLEY_BUBBLE_DEGREE
from .mesh import Mesh
from .models import DofDescriptor, Method, NcfemError, PointSet, SpaceKind, Variant
from .quadrature import QuadratureError, element_point_set
from .smoothing import SmoothingMap, build_smoother
from .spaces import DofSpace, Evaluable, Field, build_cr_space, build_gl_space, build_morley_space

_LOGGER = logging.getLogger(__name__)

Density = Callable[[PointSet], np.ndarray]

DEFAULT_RESIDUAL = 1e-12
DEFAULT_DIRECT_MAX_DOFS = 50_000


class SolverError(NcfemError):
    """Raised when a system is not positive definite or the residual contract fails."""


class LoadCompatibilityError(NcfemError):
    """Raised when a load part cannot be paired with nonconforming test functions."""


@dataclass(frozen=True)
class LoadFunctional:
    """``<l, v> = int f0 v - int g . grad v + int H : D^2 v``.

    Densities take a :class:`PointSet`, so piecewise data such as discrete
    gradients can be evaluated on the element that owns each point.
    """

    f0: Density | None = None
    g: Density | None = None
    H: Density | None = None
    label: str = ""
    scale: float = 1.0

    @property
    def is_l2(self) -> bool:
        return self.g is None and self.H is None

    @property
    def order(self) -> int:
        """Highest derivative of the test function the load touches."""
        if self.H is not None:
            return 2
        return 1 if self.g is not None else 0

    def scaled(self, factor: float) -> "LoadFunctional":
        return replace(self, scale=self.scale * factor)

    def pair(self, space: Evaluable, point_set: PointSet, matrix: sparse.spmatrix | None = None) -> np.ndarray:
        """``<l, phi_j>`` for every column of ``space`` (or of ``space`` composed with *matrix*)."""
        if point_set.weights is None:
            raise QuadratureError("load pairing needs a weighted point set")
        weights = point_set.weights
        d = space.mesh.dim
        n = space.ndofs if matrix is None else matrix.shape[1]
        result = np.zeros(n)
        for order, density, sign in ((0, self.f0, 1.0), (1, self.g, -1.0), (2, self.H, 1.0)):
            if density is None:
                continue
            values = np.asarray(density(point_set), dtype=float).reshape(point_set.size, d**order)
            weighted = (values * weights[:, None]).reshape(-1)
            evaluation = space.evaluate(point_set, order)
            if matrix is not None:
                evaluation = evaluation @ matrix
            result += sign * (evaluation.T @ weighted)
        return self.scale * result


@dataclass
class SymmetricSystem:
    matrix: sparse.csr_matrix
    rhs: np.ndarray
    descriptors: list[DofDescriptor]

    @property
    def size(self) -> int:
        return int(self.rhs.size)

    def symmetry_residual(self) -> float:
        scale = abs(self.matrix).max() if self.matrix.nnz else 1.0
        difference = self.matrix - self.matrix.T
        return float(abs(difference).max() / scale) if difference.nnz else 0.0

    def relative_residual(self, solution: np.ndarray) -> float:
        norm = np.linalg.norm(self.rhs)
        residual = np.linalg.norm(self.matrix @ solution - self.rhs)
        return float(residual / norm) if norm > 0 else float(residual)


@dataclass
class SolveResult:
    method: Method
    variant: Variant
    space: DofSpace
    system: SymmetricSystem
    coefficients: np.ndarray
    smoother: SmoothingMap | None = None

    @property
    def order(self) -> int:
        return energy_order(self.space)

    @property
    def field(self) -> Field:
        return Field(self.space, self.coefficients)


# quadrature degrees -------------------------------------------------------------


def energy_order(space: Evaluable) -> int:
    """1 for second-order (gradient) energies, 2 for the broken Hessian energy."""
    kind = getattr(space, "kind", None)
    return 2 if kind in (SpaceKind.MORLEY, SpaceKind.HCT, SpaceKind.MORLEY_NORMAL_BUBBLES) else 1


def energy_degree(space: Evaluable, order: int) -> int:
    return 2 * max(space.degree - order, 0)


def pipeline_degree(target: Evaluable, order: int, extra: int = 0, morley_degree: int = 18) -> int:
    """Exactness used for every integral involving smoothed test functions."""
    if order == 2:
        return max(morley_degree, 2 * (MORLEY_BUBBLE_DEGREE - 2))
    return 2 * target.degree + extra


def _point_set(space: Evaluable, degree: int) -> PointSet:
    return element_point_set(space.mesh, degree, split=space.split)


# matrices ---------------------------------------------------------------------------


def _weighted_rows(point_set: PointSet, order: int, dim: int) -> sparse.dia_matrix:
    weights = np.repeat(point_set.weights, dim**order)
    return sparse.diags(weights)


def assemble_mixed_matrix(
    row_space: Evaluable,
    col_space: Evaluable,
    order: int,
    *,
    degree: int | None = None,
    col_matrix: sparse.spmatrix | None = None,
) -> sparse.csr_matrix:
    """``int D^order phi_i : D^order psi_j`` with optional column composition ``psi = col_space @ col_matrix``."""
    needed = max(row_space.degree + col_space.degree - 2 * order, 0)
    degree = needed if degree is None else degree
    if degree < needed:
        raise QuadratureError(f"mixed matrix needs exactness {needed}, got {degree}")
    split = "ct" if "ct" in (row_space.split, col_space.split) else "none"
    point_set = element_point_set(row_space.mesh, degree, split=split)
    rows = row_space.evaluate(point_set, order)
    cols = col_space.evaluate(point_set, order)
    if col_matrix is not None:
        cols = cols @ col_matrix
    weights = _weighted_rows(point_set, order, row_space.mesh.dim)
    return sparse.csr_matrix(rows.T @ weights @ cols)


def assemble_energy_matrix(space: Evaluable, order: int | None = None, *, degree: int | None = None) -> sparse.csr_matrix:
    """Broken energy Gram matrix ``int D^order_M phi_i : D^order_M phi_j``."""
    order = energy_order(space) if order is None else order
    needed = energy_degree(space, order)
    degree = needed if degree is None else degree
    if degree < needed:
        raise QuadratureError(f"energy matrix of order {order} needs exactness {needed}, got {degree}")
    point_set = _point_set(space, degree)
    evaluation = space.evaluate(point_set, order)
    weights = _weighted_rows(point_set, order, space.mesh.dim)
    matrix = sparse.csr_matrix(evaluation.T @ weights @ evaluation)
    matrix = sparse.csr_matrix(0.5 * (matrix + matrix.T))
    _LOGGER.debug("Energy matrix of order %d: %d dofs, nnz %d, exactness %d", order, matrix.shape[0], matrix.nnz, degree)
    return matrix


def elementwise_norms(
    mesh: Mesh,
    point_set: PointSet,
    values: np.ndarray,
) -> np.ndarray:
    """Squared ``L2(K)`` norms of point values (scalars, vectors or matrices) per element."""
    flat = np.asarray(values, dtype=float).reshape(point_set.size, -1)
    contributions = point_set.weights * np.sum(flat**2, axis=1)
    return np.bincount(point_set.elements, weights=contributions, minlength=mesh.n_elements)


def energy_error(
    exact: Callable[[np.ndarray], np.ndarray],
    field: Field,
    order: int,
    *,
    degree: int,
) -> float:
    """``||D^order u - D^order_M u_h||`` with *exact* returning ``D^order u`` at physical points."""
    point_set = element_point_set(field.mesh, degree, split=field.space.split)
    difference = np.asarray(exact(point_set.points), dtype=float).reshape(point_set.size, -1)
    difference = difference - field.evaluate(point_set, order).reshape(point_set.size, -1)
    return float(np.sqrt(elementwise_norms(field.mesh, point_set, difference).sum()))


# loads -------------------------------------------------------------------------------


def assemble_load(
    load: LoadFunctional,
    space: DofSpace,
    smoother: SmoothingMap | None = None,
    *,
    degree: int,
) -> np.ndarray:
    """``<l, E phi_i>`` for every basis function, or ``int f0 phi_i`` without a smoother."""
    if smoother is None:
        if not load.is_l2:
            raise LoadCompatibilityError(
                f"load '{load.label}' has a divergence or Hessian part and needs a smoother"
            )
        return load.pair(space, _point_set(space, degree))
    if smoother.source is not space:
        raise LoadCompatibilityError("smoother does not act on the discrete space")
    point_set = _point_set(smoother.target, degree)
    rhs = load.pair(smoother.target, point_set, smoother.matrix)
    _LOGGER.debug("Assembled smoothed load on %d points with exactness %d", point_set.size, degree)
    return rhs


# solvers -------------------------------------------------------------------------------


def solve(
    system: SymmetricSystem,
    *,
    method: str = "direct",
    residual: float = DEFAULT_RESIDUAL,
    direct_max_dofs: int = DEFAULT_DIRECT_MAX_DOFS,
) -> np.ndarray:
    """Solve an SPD system with the relative residual contract *residual*."""
    n = system.size
    if n == 0:
        return np.zeros(0)
    if method not in ("direct", "cg"):
        raise SolverError(f"unknown solver '{method}'")
    diagonal = system.matrix.diagonal()
    if np.any(diagonal <= 0.0):
        bad = int(np.flatnonzero(diagonal <= 0.0)[0])
        raise SolverError(f"system matrix has non-positive diagonal entry {diagonal[bad]:.3e} at dof {bad}")
    if method == "direct" and n > direct_max_dofs:
        _LOGGER.info("Switching to CG for %d dofs (direct limit %d)", n, direct_max_dofs)
        method = "cg"
    solution = _solve_direct(system) if method == "direct" else _solve_cg(system, residual)
    achieved = system.relative_residual(solution)
    if not np.isfinite(achieved) or achieved > residual:
        raise SolverError(f"relative residual {achieved:.3e} exceeds {residual:g} ({method})")
    _LOGGER.debug("Solved %d dofs with %s, relative residual %.3e", n, method, achieved)
    return solution


def _solve_direct(system: SymmetricSystem) -> np.ndarray:
    matrix = sparse.csc_matrix(system.matrix)
    try:
        factor = spla.splu(
            matrix,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as exc:
        raise SolverError(f"factorization failed: {exc}") from exc
    pivots = factor.U.diagonal()
    if np.any(pivots <= 0.0):
        raise SolverError(f"system is not positive definite (pivot {pivots.min():.3e})")
    solution = factor.solve(system.rhs)
    # one step of iterative refinement
    correction = factor.solve(system.rhs - system.matrix @ solution)
    return solution + correction


def _solve_cg(system: SymmetricSystem, residual: float) -> np.ndarray:
    inverse_diagonal = 1.0 / system.matrix.diagonal()
    preconditioner = spla.LinearOperator(system.matrix.shape, matvec=lambda x: inverse_diagonal * x)
    solution, info = spla.cg(
        system.matrix,
        system.rhs,
        rtol=0.1 * residual,
        atol=0.0,
        maxiter=20 * system.size,
        M=preconditioner,
    )
    if info < 0:
        raise SolverError(f"CG breakdown (info {info})")
    if info > 0:
        _LOGGER.warning("CG stopped after %d iterations without reaching the tolerance", info)
    return solution


# method drivers ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverSettings:
    method: str = "direct"
    residual: float = DEFAULT_RESIDUAL
    direct_max_dofs: int = DEFAULT_DIRECT_MAX_DOFS
    poisson_extra: int = 8
    morley_degree: int = 18
    dead_zone: tuple[float, float] = (1e-12, 1e-8)
    hct_condition: float = 1e8
    workers: int = 1


def build_method_space(method: Method, mesh: Mesh, p: int | None = None, settings: SolverSettings | None = None) -> DofSpace:
    settings = settings or SolverSettings()
    if method is Method.CR:
        return build_cr_space(mesh)
    if method is Method.GL:
        if p is None:
            raise ValueError("the jump-moment kernel method needs an order p")
        return build_gl_space(mesh, p, dead_zone=settings.dead_zone)
    return build_morley_space(mesh, workers=settings.workers)


def solve_method(
    method: Method,
    variant: Variant,
    mesh: Mesh,
    load: LoadFunctional,
    *,
    p: int | None = None,
    settings: SolverSettings | None = None,
    fault: str | None = None,
    space: DofSpace | None = None,
    smoother: SmoothingMap | None = None,
) -> SolveResult:
    """Classical (``int f sigma``) or smoothed (``<l, E sigma>``) discrete solution."""
    settings = settings or SolverSettings()
    if variant is Variant.CLASSICAL and not load.is_l2:
        raise LoadCompatibilityError(f"the classical {method.value} method cannot take the load '{load.label}'")
    space = build_method_space(method, mesh, p, settings) if space is None else space
    order = energy_order(space)
    matrix = assemble_energy_matrix(space, order)

    if variant is Variant.SMOOTHED:
        if smoother is None:
            smoother = build_smoother(space, fault=fault, workers=settings.workers, condition_limit=settings.hct_condition)
        degree = pipeline_degree(smoother.target, order, settings.poisson_extra, settings.morley_degree)
        rhs = assemble_load(load, space, smoother, degree=degree)
    else:
        smoother = None
        degree = pipeline_degree(space, order, settings.poisson_extra, settings.morley_degree) + 2
        rhs = assemble_load(load, space, None, degree=degree)

    system = SymmetricSystem(matrix=matrix, rhs=rhs, descriptors=list(space.descriptors))
    coefficients = solve(
        system,
        method=settings.method,
        residual=settings.residual,
        direct_max_dofs=settings.direct_max_dofs,
    )
    _LOGGER.info(
        "Solved %s (%s) with %d dofs on %d elements", method.value, variant.value, space.ndofs, mesh.n_elements
    )
    return SolveResult(
        method=method,
        variant=variant,
        space=space,
        system=system,
        coefficients=coefficients,
        smoother=smoother,
    )


def load_nonzeros(smoother: SmoothingMap) -> int:
    """Nonzeros of the smoothing matrix; the load pipeline cost is proportional to it."""
    return int(smoother.matrix.nnz)


def fitted_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(xs, dtype=float))
    y = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
