"""Bernstein-Bezier polynomials in barycentric coordinates.

Every local polynomial in ncfem is stored by its Bernstein-Bezier coefficients
on a simplex. For degree ``q`` on an ``n``-simplex the basis is

    B_alpha = q! / alpha! * prod_i lambda_i ** alpha_i,   |alpha| = q,

so values, gradients and Hessians follow from the barycentric coordinates and
their (constant) gradients alone, and products integrate exactly through the
closed-form barycentric moment.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def multi_indices(n_vars: int, degree: int) -> np.ndarray:
    """Return all multi-indices of length *n_vars* and order *degree*.

    Rows are sorted in descending lexicographic order, which fixes the local
    coefficient layout everywhere in the package.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    rows = [
        combo
        for combo in itertools.product(range(degree, -1, -1), repeat=n_vars)
        if sum(combo) == degree
    ]
    table = np.array(rows, dtype=np.int64).reshape(-1, n_vars)
    table.setflags(write=False)
    return table


def dimension(n_vars: int, degree: int) -> int:
    """Dimension of polynomials of total degree *degree* on an ``(n_vars-1)``-simplex."""
    return math.comb(degree + n_vars - 1, n_vars - 1)


@lru_cache(maxsize=None)
def _multinomials(n_vars: int, degree: int) -> np.ndarray:
    exps = multi_indices(n_vars, degree)
    values = np.array(
        [math.factorial(degree) / math.prod(math.factorial(int(a)) for a in row) for row in exps]
    )
    values.setflags(write=False)
    return values


def barycentric_moment(alpha: np.ndarray | tuple[int, ...]) -> float:
    """Return ``n! alpha! / (n + |alpha|)!`` for an ``n``-simplex, ``n = len(alpha) - 1``.

    Multiplied by the simplex measure this is the exact integral of
    ``prod_i lambda_i ** alpha_i``.
    """
    exps = [int(a) for a in alpha]
    if any(a < 0 for a in exps):
        raise ValueError(f"multi-index entries must be non-negative, got {exps}")
    n = len(exps) - 1
    numerator = math.factorial(n) * math.prod(math.factorial(a) for a in exps)
    return numerator / math.factorial(n + sum(exps))


def _powers(bary: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Evaluate ``prod lambda**exps`` for every point and row; rows with a negative exponent give 0."""
    valid = np.all(exps >= 0, axis=1)
    safe = np.where(exps < 0, 0, exps)
    values = np.prod(bary[:, None, :] ** safe[None, :, :], axis=2)
    return values * valid[None, :]


def tabulate(
    degree: int,
    bary: np.ndarray,
    bary_grads: np.ndarray | None = None,
    order: int = 0,
) -> np.ndarray:
    """Tabulate the Bernstein basis of *degree* at barycentric points.

    Returns an array of shape ``(npts, nb)`` for ``order=0``, ``(npts, d, nb)``
    for ``order=1`` and ``(npts, d, d, nb)`` for ``order=2``; ``bary_grads``
    (shape ``(n_vars, d)``) is required for derivatives.
    """
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    n_vars = bary.shape[1]
    exps = multi_indices(n_vars, degree)
    coeffs = _multinomials(n_vars, degree)
    if order == 0:
        return _powers(bary, exps) * coeffs[None, :]
    if bary_grads is None:
        raise ValueError("bary_grads is required for derivatives")
    eye = np.eye(n_vars, dtype=np.int64)
    npts, nb = bary.shape[0], exps.shape[0]
    if order == 1:
        d_lambda = np.empty((npts, nb, n_vars))
        for i in range(n_vars):
            d_lambda[:, :, i] = exps[None, :, i] * _powers(bary, exps - eye[i])
        d_lambda *= coeffs[None, :, None]
        return np.einsum("pbi,ix->pxb", d_lambda, bary_grads)
    if order == 2:
        d2_lambda = np.empty((npts, nb, n_vars, n_vars))
        for i in range(n_vars):
            for j in range(n_vars):
                factor = exps[:, i] * (exps[:, j] - (1 if i == j else 0))
                d2_lambda[:, :, i, j] = factor[None, :] * _powers(bary, exps - eye[i] - eye[j])
        d2_lambda *= coeffs[None, :, None, None]
        return np.einsum("pbij,ix,jy->pxyb", d2_lambda, bary_grads, bary_grads)
    raise ValueError(f"unsupported derivative order {order}")


@lru_cache(maxsize=None)
def domain_points(n_vars: int, degree: int) -> np.ndarray:
    """Barycentric coordinates of the Lagrange nodes ``alpha / degree``; the centroid for degree 0."""
    if degree == 0:
        points = np.full((1, n_vars), 1.0 / n_vars)
    else:
        points = multi_indices(n_vars, degree) / float(degree)
    points.setflags(write=False)
    return points


@lru_cache(maxsize=None)
def interpolation_matrix(n_vars: int, degree: int) -> np.ndarray:
    """Map values at the domain points to Bernstein coefficients.

    The matrix is independent of the simplex geometry, so a single inverse
    serves every element.
    """
    vandermonde = tabulate(degree, domain_points(n_vars, degree))
    inverse = np.linalg.inv(vandermonde)
    inverse.setflags(write=False)
    return inverse


def lagrange_values(n_vars: int, degree: int, bary: np.ndarray) -> np.ndarray:
    """Values of the local Lagrange basis (nodes in :func:`domain_points` order) at *bary*."""
    return tabulate(degree, bary) @ interpolation_matrix(n_vars, degree)


def weighted_gram(n_vars: int, degree: int, weight: np.ndarray | tuple[int, ...]) -> np.ndarray:
    """Exact ``int B_a B_b prod lambda**weight`` over a simplex of unit measure."""
    exps = multi_indices(n_vars, degree)
    coeffs = _multinomials(n_vars, degree)
    weight = np.asarray(weight, dtype=np.int64)
    nb = exps.shape[0]
    gram = np.empty((nb, nb))
    for a in range(nb):
        for b in range(a, nb):
            value = coeffs[a] * coeffs[b] * barycentric_moment(exps[a] + exps[b] + weight)
            gram[a, b] = gram[b, a] = value
    return gram


def elevation_matrix(n_vars: int, degree: int, target: int) -> np.ndarray:
    """Coefficients of degree-*degree* Bernstein polynomials in the degree-*target* basis."""
    if target < degree:
        raise ValueError("cannot lower the degree")
    nodes = domain_points(n_vars, target)
    return interpolation_matrix(n_vars, target) @ tabulate(degree, nodes)


def mixed_gram(
    n_vars: int,
    row_degree: int,
    col_degree: int,
    weight: np.ndarray | tuple[int, ...] | None = None,
) -> np.ndarray:
    """Exact ``int B_a B_b prod lambda**weight`` for bases of two different degrees, unit measure."""
    rows = multi_indices(n_vars, row_degree)
    cols = multi_indices(n_vars, col_degree)
    row_coeffs = _multinomials(n_vars, row_degree)
    col_coeffs = _multinomials(n_vars, col_degree)
    shift = np.zeros(n_vars, dtype=np.int64) if weight is None else np.asarray(weight, dtype=np.int64)
    gram = np.empty((rows.shape[0], cols.shape[0]))
    for a in range(rows.shape[0]):
        for b in range(cols.shape[0]):
            gram[a, b] = row_coeffs[a] * col_coeffs[b] * barycentric_moment(rows[a] + cols[b] + shift)
    return gram


def monomial_coefficients(n_vars: int, alpha: np.ndarray | tuple[int, ...]) -> tuple[int, float]:
    """Locate ``prod lambda**alpha`` in the Bernstein basis of degree ``|alpha|``.

    Returns the basis index and the factor ``c`` with ``prod lambda**alpha = c * B_alpha``.
    """
    exps = np.asarray(alpha, dtype=np.int64)
    degree = int(exps.sum())
    table = multi_indices(n_vars, degree)
    index = int(np.flatnonzero(np.all(table == exps[None, :], axis=1))[0])
    return index, 1.0 / float(_multinomials(n_vars, degree)[index])
