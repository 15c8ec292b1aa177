"""Manufactured solutions and load catalog for the Poisson and biharmonic problems."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import LoadFunctional
from .models import PointSet
from .spaces import Field

_LOGGER = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], np.ndarray]

CHECKERBOARD_VECTOR = (1.0, 0.5)


class UnknownLoadError(ValueError):
    """Raised for load specifications outside the catalog."""


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution ``u`` with derivatives and the load it was manufactured from.

    ``order`` is 1 for ``-Delta u = f`` and 2 for ``Delta^2 u = f``.
    """

    name: str
    order: int
    value: PointFunction
    gradient: PointFunction
    hessian: PointFunction
    load: LoadFunctional

    def derivative(self, order: int) -> PointFunction:
        return (self.value, self.gradient, self.hessian)[order]


def _points(fn: PointFunction) -> Callable[[PointSet], np.ndarray]:
    return lambda point_set: fn(point_set.points)


def _sinsin() -> ManufacturedSolution:
    pi = np.pi

    def value(x: np.ndarray) -> np.ndarray:
        return np.sin(pi * x[:, 0]) * np.sin(pi * x[:, 1])

    def gradient(x: np.ndarray) -> np.ndarray:
        sx, sy = np.sin(pi * x[:, 0]), np.sin(pi * x[:, 1])
        cx, cy = np.cos(pi * x[:, 0]), np.cos(pi * x[:, 1])
        return pi * np.column_stack([cx * sy, sx * cy])

    def hessian(x: np.ndarray) -> np.ndarray:
        sx, sy = np.sin(pi * x[:, 0]), np.sin(pi * x[:, 1])
        cx, cy = np.cos(pi * x[:, 0]), np.cos(pi * x[:, 1])
        out = np.empty((x.shape[0], 2, 2))
        out[:, 0, 0] = -(pi**2) * sx * sy
        out[:, 1, 1] = -(pi**2) * sx * sy
        out[:, 0, 1] = out[:, 1, 0] = pi**2 * cx * cy
        return out

    load = LoadFunctional(f0=_points(lambda x: 2.0 * pi**2 * value(x)), label="manufactured:sinsin")
    return ManufacturedSolution("sinsin", 1, value, gradient, hessian, load)


def _quartic(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``t^2 (1-t)^2`` and its first two derivatives."""
    return (
        t**2 - 2.0 * t**3 + t**4,
        2.0 * t - 6.0 * t**2 + 4.0 * t**3,
        2.0 - 12.0 * t + 12.0 * t**2,
    )


def _biquartic() -> ManufacturedSolution:
    def value(x: np.ndarray) -> np.ndarray:
        return _quartic(x[:, 0])[0] * _quartic(x[:, 1])[0]

    def gradient(x: np.ndarray) -> np.ndarray:
        a, da, _ = _quartic(x[:, 0])
        b, db, _ = _quartic(x[:, 1])
        return np.column_stack([da * b, a * db])

    def hessian(x: np.ndarray) -> np.ndarray:
        a, da, dda = _quartic(x[:, 0])
        b, db, ddb = _quartic(x[:, 1])
        out = np.empty((x.shape[0], 2, 2))
        out[:, 0, 0] = dda * b
        out[:, 1, 1] = a * ddb
        out[:, 0, 1] = out[:, 1, 0] = da * db
        return out

    def bilaplacian(x: np.ndarray) -> np.ndarray:
        a, _, dda = _quartic(x[:, 0])
        b, _, ddb = _quartic(x[:, 1])
        return 24.0 * b + 2.0 * dda * ddb + 24.0 * a

    load = LoadFunctional(f0=_points(bilaplacian), label="manufactured:biquartic")
    return ManufacturedSolution("biquartic", 2, value, gradient, hessian, load)


MANUFACTURED: dict[str, Callable[[], ManufacturedSolution]] = {
    "sinsin": _sinsin,
    "biquartic": _biquartic,
}


def manufactured_solution(name: str) -> ManufacturedSolution:
    try:
        return MANUFACTURED[name]()
    except KeyError as exc:
        raise UnknownLoadError(f"unknown manufactured solution '{name}'") from exc


def checkerboard_load(vector: tuple[float, float] = CHECKERBOARD_VECTOR) -> LoadFunctional:
    """``<l, v> = -int g . grad v`` with ``g = (-1)^(floor 2x + floor 2y) * vector``, ``f0 = 0``.

    ``g`` is piecewise constant on the four quarter squares, so ``l`` is not an
    ``L2`` function.
    """
    direction = np.asarray(vector, dtype=float)

    def g(point_set: PointSet) -> np.ndarray:
        cells = np.floor(2.0 * point_set.points[:, 0]) + np.floor(2.0 * point_set.points[:, 1])
        signs = np.where(cells.astype(np.int64) % 2 == 0, 1.0, -1.0)
        return signs[:, None] * direction[None, :]

    return LoadFunctional(g=g, label="checkerboard")


def constant_load(value: float = 1.0) -> LoadFunctional:
    return LoadFunctional(f0=lambda point_set: np.full(point_set.size, value), label="constant")


def reproduction_load(field: Field, order: int) -> LoadFunctional:
    """``v -> int D^order u_h : D^order v`` for a discrete ``u_h``.

    For ``order=1`` this is the divergence-form part ``g = -grad u_h``; for
    ``order=2`` the Hessian part ``H = D^2 u_h``.
    """
    if order == 1:
        return LoadFunctional(g=lambda point_set: -field.evaluate(point_set, 1), label="reproduction")
    if order == 2:
        return LoadFunctional(H=lambda point_set: field.evaluate(point_set, 2), label="reproduction")
    raise ValueError(f"unsupported energy order {order}")


def parse_load(source: str) -> tuple[LoadFunctional, ManufacturedSolution | None]:
    """Resolve ``manufactured:<name>``, ``checkerboard`` or ``constant``."""
    kind, _, name = source.partition(":")
    if kind == "manufactured" and name:
        solution = manufactured_solution(name)
        return solution.load, solution
    if source == "checkerboard":
        return checkerboard_load(), None
    if source == "constant":
        return constant_load(), None
    raise UnknownLoadError(f"unknown load '{source}' (use manufactured:<name>, checkerboard or constant)")
