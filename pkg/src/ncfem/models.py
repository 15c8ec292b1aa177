"""Domain models shared across meshes, spaces, smoothers and reports."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class NcfemError(RuntimeError):
    """Base class for all numerical and structural failures raised by ncfem."""


class SpaceKind(str, Enum):
    """Discrete spaces that can be built over a mesh."""

    BROKEN = "broken"
    LAGRANGE = "lagrange"
    CR = "cr"
    GL = "gl"
    MORLEY = "morley"
    HCT = "hct"
    FACE_BUBBLES = "face-bubbles"
    MORLEY_NORMAL_BUBBLES = "morley-normal-bubbles"
    DIRECT_SUM = "direct-sum"


class Method(str, Enum):
    """Nonconforming discretizations offered by the solver."""

    CR = "cr"
    GL = "gl"
    MORLEY = "morley"


class Variant(str, Enum):
    """How discrete test functions meet the load functional."""

    CLASSICAL = "classical"
    SMOOTHED = "smoothed"


@dataclass(frozen=True)
class DofDescriptor:
    """Describes one degree of freedom by the mesh entity it lives on."""

    kind: str
    entity: int
    component: int = 0

    def to_dict(self) -> dict[str, object]:
        return {"kind": self.kind, "entity": self.entity, "component": self.component}


@dataclass
class PointSet:
    """Physical points tagged with the element that owns them.

    ``weights`` is present for quadrature point sets and ``None`` for plain
    evaluation points such as Lagrange nodes or sample grids.
    """

    points: np.ndarray
    elements: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.points.shape[0] != self.elements.shape[0]:
            raise ValueError("points and elements must have the same length")

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    def element_groups(self) -> list[tuple[int, np.ndarray]]:
        """Return ``(element, point indices)`` pairs in ascending element order."""
        order = np.argsort(self.elements, kind="stable")
        sorted_elements = self.elements[order]
        boundaries = np.flatnonzero(np.diff(sorted_elements)) + 1
        groups = np.split(order, boundaries)
        return [(int(self.elements[group[0]]), group) for group in groups if group.size]


@dataclass
class CheckResult:
    """Outcome of a single verification check."""

    name: str
    passed: bool
    measured: float
    threshold: float
    statement: str
    details: dict[str, object] = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict[str, object]:
        payload: dict[str, object] = {
            "name": self.name,
            "status": self.status,
            "measured": float(self.measured),
            "threshold": float(self.threshold),
            "paper_ref": self.statement,
        }
        if self.details:
            payload["details"] = self.details
        return payload
