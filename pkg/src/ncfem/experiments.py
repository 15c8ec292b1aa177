"""Named counterexperiments: smoothers that look reasonable and are not."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .assembly import SolverSettings, assemble_energy_matrix, fitted_slope
from .config import ToleranceConfig
from .manufactured import manufactured_solution
from .mesh import generate_mesh
from .models import CheckResult, NcfemError
from .smoothing import averaging_A_p, cr_bubble_B
from .spaces import DofSpace, build_cr_space, build_morley_space, cr_interpolate
from .verify import conforming_coefficients, morley_h2_conforming_dimension, orthonormal_coordinates
from .workers import ordered_map

_LOGGER = logging.getLogger(__name__)

BUBBLE_LEVELS = (4, 8, 16)
#: The first family carries the check, the others are reported alongside.
BUBBLE_MESHES = ("crisscross", "square")
BUBBLE_SLOPE_LIMIT = -0.9
WITNESS_FLOOR = 1e-6
MORLEY_LEVELS = (1, 2, 4)


class ExperimentError(NcfemError):
    """Raised for experiment names outside the catalog."""


@dataclass
class ExperimentReport:
    name: str
    rows: list[dict[str, object]] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def check(self, name: str, measured: float, threshold: float, statement: str, *, upper: bool = True) -> None:
        passed = bool(np.isfinite(measured) and (measured <= threshold if upper else measured >= threshold))
        self.checks.append(CheckResult(name, passed, float(measured), float(threshold), statement))
        _LOGGER.info("%s: %s %s (measured %.3e, threshold %.3e)", self.name, name, "pass" if passed else "fail", measured, threshold)

    def to_dict(self) -> dict[str, object]:
        return {
            "experiment": self.name,
            "status": "pass" if self.passed else "fail",
            "rows": self.rows,
            "checks": [check.to_dict() for check in self.checks],
        }


def _energy_norm(space: DofSpace, coefficients: np.ndarray) -> float:
    gram = assemble_energy_matrix(space)
    return float(np.sqrt(max(coefficients @ (gram @ coefficients), 0.0)))


def bubble_instability(settings: SolverSettings, tolerances: ToleranceConfig) -> ExperimentReport:
    """Face-bubble smoothing of Crouzeix-Raviart interpolants blows up like ``1/h``."""
    report = ExperimentReport("bubble-instability")
    slopes = {name: _bubble_slopes(name, report) for name in BUBBLE_MESHES}
    checked = BUBBLE_MESHES[0]
    report.check(
        "ratio-slope",
        slopes[checked],
        BUBBLE_SLOPE_LIMIT,
        f"||grad B sigma|| / ||grad_h sigma|| grows like 1/h on {checked} meshes",
    )
    return report


def _bubble_slopes(family: str, report: ExperimentReport) -> float:
    bump = manufactured_solution("sinsin").value
    h_values, ratios, constant_ratios = [], [], []
    for n in BUBBLE_LEVELS:
        mesh = generate_mesh(family, n)
        cr = build_cr_space(mesh)
        bubble = cr_bubble_B(cr)
        sigma = cr_interpolate(cr, bump)
        ratio = _energy_norm(bubble.target, bubble.apply(sigma)) / _energy_norm(cr, sigma)
        # coefficients |F| give the function that is one on interior elements
        ones = np.array([mesh.face_measures[d.entity] for d in cr.descriptors])
        constant_ratio = _energy_norm(bubble.target, bubble.apply(ones)) / _energy_norm(cr, ones)
        h_values.append(mesh.h_max)
        ratios.append(ratio)
        constant_ratios.append(constant_ratio)
        report.rows.append(
            {"mesh": family, "n": n, "h_max": mesh.h_max, "ratio": ratio, "constant_ratio": constant_ratio}
        )
    slope = fitted_slope(h_values, ratios)
    report.rows.append(
        {"mesh": family, "fitted_slope": slope, "constant_fitted_slope": fitted_slope(h_values, constant_ratios)}
    )
    _LOGGER.info("Bubble smoothing on %s meshes: fitted slope %.3f", family, slope)
    return slope


def averaging_inconsistency(settings: SolverSettings, tolerances: ToleranceConfig) -> ExperimentReport:
    """A Crouzeix-Raviart function orthogonal to ``S_0^1`` whose simplified average is not.

    The witness maximizes ``||A_1 sigma||`` over the energy-orthogonal
    complement of the conforming part, normalized to ``||grad_h sigma|| = 1``.
    """
    report = ExperimentReport("averaging-inconsistency")
    mesh = generate_mesh("crisscross", 1)
    cr = build_cr_space(mesh)
    averaging = averaging_A_p(cr, 1)
    gram = assemble_energy_matrix(cr).toarray()
    conforming = conforming_coefficients(cr, rank_tol=tolerances.rank)
    complement = scipy.linalg.null_space((gram @ conforming).T, rcond=tolerances.rank)
    complement = complement @ orthonormal_coordinates(complement.T @ gram @ complement, tolerances.rank)
    lagrange_gram = assemble_energy_matrix(averaging.target).toarray()
    averaged = averaging.matrix.toarray() @ complement
    values, vectors = scipy.linalg.eigh(averaged.T @ lagrange_gram @ averaged)
    sigma = complement @ vectors[:, -1]
    smoothed = averaging.apply(sigma)

    lagrange_norm = float(np.sqrt(max(values[-1], 0.0)))
    smoothed_pairing = classical_pairing = 0.0
    if lagrange_norm > 0:
        # s = A_1 sigma / ||A_1 sigma|| is conforming; conforming @ s are its face means
        s = smoothed / lagrange_norm
        smoothed_pairing = float(s @ lagrange_gram @ smoothed)
        classical_pairing = float((conforming @ s) @ gram @ sigma)
    report.rows.append(
        {
            "dofs": cr.ndofs,
            "complement_dimension": int(complement.shape[1]),
            "smoothed_pairing": smoothed_pairing,
            "classical_pairing": classical_pairing,
        }
    )
    report.check("smoothed-pairing", abs(smoothed_pairing), WITNESS_FLOOR, "a(s, A_1 sigma) does not vanish", upper=False)
    report.check("classical-pairing", abs(classical_pairing), tolerances.projection, "b(s, sigma) = a(s, sigma) vanishes")
    return report


def morley_conforming_part(settings: SolverSettings, tolerances: ToleranceConfig) -> ExperimentReport:
    """``MR cap H^2_0`` is trivial on the one-diagonal meshes, so Morley has no conforming part to keep."""
    report = ExperimentReport("morley-conforming-part")
    worst = 0
    for n in MORLEY_LEVELS:
        morley = build_morley_space(generate_mesh("square", n), workers=settings.workers)
        dimension = morley_h2_conforming_dimension(morley, rank_tol=tolerances.rank)
        worst = max(worst, dimension)
        report.rows.append({"mesh": f"square:{n}", "dofs": morley.ndofs, "dimension": dimension})
    report.check("conforming-dimension", float(worst), 0.0, "MR cap H2_0 = {0}")
    return report


EXPERIMENTS: dict[str, Callable[[SolverSettings, ToleranceConfig], ExperimentReport]] = {
    "bubble-instability": bubble_instability,
    "averaging-inconsistency": averaging_inconsistency,
    "morley-conforming-part": morley_conforming_part,
}


def run_named_experiment(
    name: str,
    *,
    settings: SolverSettings | None = None,
    tolerances: ToleranceConfig | None = None,
) -> ExperimentReport:
    try:
        experiment = EXPERIMENTS[name]
    except KeyError:
        raise ExperimentError(f"unknown experiment '{name}'; choose from {sorted(EXPERIMENTS)}") from None
    _LOGGER.info("Running experiment %s", name)
    return experiment(settings or SolverSettings(), tolerances or ToleranceConfig())


def run_experiments(
    names: list[str],
    *,
    settings: SolverSettings | None = None,
    tolerances: ToleranceConfig | None = None,
    workers: int = 1,
) -> list[ExperimentReport]:
    """Independent experiments, reported in the order requested."""
    return ordered_map(lambda name: run_named_experiment(name, settings=settings, tolerances=tolerances), names, workers)
