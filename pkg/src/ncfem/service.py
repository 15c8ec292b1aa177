"""Runs solve, convergence, verify and experiment requests and writes their artifacts."""
from __future__ import annotations

import logging

from .assembly import SolverSettings, energy_order, solve_method
from .config import AppConfig, ConfigRejection, RunConfig, check_mesh_dimension
from .experiments import run_named_experiment
from .manufactured import ManufacturedSolution, parse_load
from .mesh import Mesh, MeshError, load_mesh_source, refine_uniform
from .reporting import (
    mesh_hash,
    solve_manifest,
    write_convergence,
    write_field_samples,
    write_json,
)
from .verify import energy_error_of, quasi_optimality_study, run_verify_suite

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1


def solver_settings(app_config: AppConfig, run: RunConfig | None = None) -> SolverSettings:
    tolerances = run.tolerances if run is not None else app_config.tolerances
    return SolverSettings(
        method=app_config.solver.method,
        residual=app_config.solver.residual,
        direct_max_dofs=app_config.solver.direct_max_dofs,
        poisson_extra=app_config.quadrature.poisson_extra,
        morley_degree=app_config.quadrature.morley_degree,
        dead_zone=(tolerances.rank_dead_zone_low, tolerances.rank_dead_zone_high),
        hct_condition=tolerances.hct_condition,
        workers=app_config.runtime.threads,
    )


class NcfemService:
    """Executes validated runs; every command returns a process exit code."""

    def __init__(self, *, config: AppConfig) -> None:
        self._config = config

    @property
    def config(self) -> AppConfig:
        return self._config

    def run(self, run: RunConfig) -> int:
        handlers = {
            "solve": self.solve,
            "convergence": self.convergence,
            "verify": self.verify,
            "experiment": self.experiment,
        }
        _LOGGER.info("Starting %s for %s on %s", run.command, run.method_label, run.mesh)
        return handlers[run.command](run)

    # helpers -----------------------------------------------------------------------

    def _mesh(self, run: RunConfig) -> Mesh:
        try:
            mesh = load_mesh_source(run.mesh)
        except MeshError as exc:
            raise ConfigRejection(str(exc)) from exc
        check_mesh_dimension(run, mesh.dim)
        _LOGGER.info("Mesh %s: %d elements, hash %s", run.mesh, mesh.n_elements, mesh_hash(mesh)[:12])
        return mesh

    @staticmethod
    def _matching_solution(solution: ManufacturedSolution | None, order: int) -> ManufacturedSolution | None:
        if solution is not None and solution.order != order:
            _LOGGER.warning("Manufactured solution '%s' does not solve this problem; skipping error report", solution.name)
            return None
        return solution

    def _float_format(self) -> str:
        return self._config.output.float_format

    # commands ----------------------------------------------------------------------

    def solve(self, run: RunConfig) -> int:
        mesh = self._mesh(run)
        load, solution = parse_load(run.load)
        settings = solver_settings(self._config, run)
        result = solve_method(run.method, run.variant, mesh, load, p=run.p, settings=settings, fault=run.fault)
        order = energy_order(result.space)

        out = run.out
        files = [
            write_field_samples(out / "solution.csv", result.field, order, self._float_format()),
            write_json(out / "dofs.json", result.space.dof_report()),
        ]
        manifest = solve_manifest(run.to_dict(), mesh, result, files + [out / "manifest.json"])
        solution = self._matching_solution(solution, order)
        if solution is not None:
            manifest["energy_error"] = energy_error_of(solution, result.field, order, self._config.quadrature.error_margin)
        write_json(out / "manifest.json", manifest)
        return EXIT_OK

    def convergence(self, run: RunConfig) -> int:
        base = self._mesh(run)
        _, solution = parse_load(run.load)
        if solution is None:
            raise ConfigRejection(f"a convergence study needs a manufactured load, got '{run.load}'")
        meshes = [base]
        for _ in range(run.levels - 1):
            meshes.append(refine_uniform(meshes[-1]))
        rows = quasi_optimality_study(
            run.method,
            run.variant,
            meshes,
            solution,
            p=run.p,
            settings=solver_settings(self._config, run),
            margin=self._config.quadrature.error_margin,
        )
        files = write_convergence(run.out, rows, self._float_format())
        write_json(
            run.out / "manifest.json",
            {
                "run": run.to_dict(),
                "meshes": [mesh_hash(mesh) for mesh in meshes],
                "levels": [row.to_dict() for row in rows],
                "files": sorted(path.name for path in files),
            },
        )
        return EXIT_OK

    def verify(self, run: RunConfig) -> int:
        mesh = self._mesh(run)
        _, solution = parse_load(run.load)
        suite = run_verify_suite(
            run.method,
            mesh,
            p=run.p,
            tolerances=run.tolerances,
            settings=solver_settings(self._config, run),
            solution=solution,
            fault=run.fault,
            seed=run.seed,
        )
        payload = suite.to_dict()
        payload["run"] = run.to_dict()
        payload["mesh_hash"] = mesh_hash(mesh)
        write_json(run.out / "verify.json", payload)
        if not suite.passed:
            _LOGGER.error("Verification failed: %s", ", ".join(suite.failures))
            return EXIT_CHECK_FAILED
        _LOGGER.info("All %d checks passed", len(suite.checks))
        return EXIT_OK

    def experiment(self, run: RunConfig) -> int:
        if run.experiment is None:
            raise ConfigRejection("the experiment command needs an experiment name")
        report = run_named_experiment(
            run.experiment,
            settings=solver_settings(self._config, run),
            tolerances=run.tolerances,
        )
        write_json(run.out / f"experiment-{run.experiment}.json", report.to_dict())
        if not report.passed:
            _LOGGER.error("Experiment %s did not reproduce", run.experiment)
            return EXIT_CHECK_FAILED
        return EXIT_OK
