"""CSV, JSON and gnuplot writers; everything written here is byte-stable for identical inputs."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy

from . import __version__
from .assembly import SolveResult, fitted_slope
from .mesh import Mesh, format_mesh
from .spaces import Field, sample_point_set
from .verify import LevelRow

_LOGGER = logging.getLogger(__name__)

DEFAULT_FLOAT_FORMAT = "%.12e"
CONVERGENCE_COLUMNS = ("level", "h_max", "dofs", "energy_error", "best_error", "ratio", "rate")


def format_value(value: object, float_format: str = DEFAULT_FLOAT_FORMAT) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return float_format % float(value)
    return str(value)


def _prepare(path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[object]],
    float_format: str = DEFAULT_FLOAT_FORMAT,
) -> Path:
    with _prepare(path).open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value, float_format) for value in row])
    _LOGGER.info("Wrote %s", path)
    return path


def _jsonable(value: object) -> object:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return value.as_posix()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(payload: object) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, default=_jsonable, allow_nan=True) + "\n"


def write_json(path: Path, payload: object) -> Path:
    _prepare(path).write_text(dumps(payload), encoding="utf-8")
    _LOGGER.info("Wrote %s", path)
    return path


def write_gnuplot_table(
    path: Path,
    header: Sequence[str],
    rows: Sequence[Sequence[float]],
    float_format: str = DEFAULT_FLOAT_FORMAT,
) -> Path:
    """Whitespace-separated columns with a ``#`` header line, as ``plot 'file' using 2:4`` expects."""
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(header))
    np.savetxt(_prepare(path), data, fmt=float_format, header=" ".join(header), comments="# ")
    _LOGGER.info("Wrote %s", path)
    return path


def mesh_hash(mesh: Mesh) -> str:
    return hashlib.sha256(format_mesh(mesh).encode("utf-8")).hexdigest()


# field samples ----------------------------------------------------------------


def field_sample_columns(dim: int, order: int) -> list[str]:
    axes = "xyz"[:dim]
    columns = list(axes) + ["value"] + [f"d{a}" for a in axes]
    if order >= 2:
        columns += [f"d{a}{b}" for a in axes for b in axes]
    return columns


def field_sample_rows(field: Field, order: int, per_edge: int = 2) -> list[list[float]]:
    """Point, value and derivatives up to *order* on interior sample points of every element."""
    points = sample_point_set(field.mesh, per_edge)
    blocks = [points.points, field.evaluate(points, 0).reshape(points.size, 1)]
    for k in range(1, order + 1):
        blocks.append(field.evaluate(points, k).reshape(points.size, -1))
    return np.hstack(blocks).tolist()


def write_field_samples(path: Path, field: Field, order: int, float_format: str = DEFAULT_FLOAT_FORMAT) -> Path:
    return write_csv(path, field_sample_columns(field.mesh.dim, order), field_sample_rows(field, order), float_format)


# convergence tables ---------------------------------------------------------------


def convergence_table(rows: Sequence[LevelRow]) -> list[list[object]]:
    """Per-level rows and a closing ``fit`` row carrying the least-squares rate."""
    table: list[list[object]] = [
        [row.level, row.h_max, row.dofs, row.energy_error, row.best_error, row.ratio, row.rate] for row in rows
    ]
    usable = [row for row in rows if row.energy_error > 0]
    fitted = fitted_slope([r.h_max for r in usable], [r.energy_error for r in usable]) if len(usable) >= 2 else None
    ratios = [row.ratio for row in rows if row.ratio is not None]
    table.append(["fit", None, None, None, None, max(ratios) if ratios else None, fitted])
    return table


def write_convergence(
    directory: Path,
    rows: Sequence[LevelRow],
    float_format: str = DEFAULT_FLOAT_FORMAT,
) -> list[Path]:
    table = convergence_table(rows)
    plot_rows = [[r.h_max, r.dofs, r.energy_error, r.best_error] for r in rows]
    return [
        write_csv(directory / "convergence.csv", CONVERGENCE_COLUMNS, table, float_format),
        write_gnuplot_table(directory / "convergence.dat", ("h_max", "dofs", "energy_error", "best_error"), plot_rows, float_format),
    ]


# manifests ---------------------------------------------------------------------------


def software_versions() -> dict[str, str]:
    return {"ncfem": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def solve_manifest(
    run: dict[str, object],
    mesh: Mesh,
    result: SolveResult,
    files: Sequence[Path],
) -> dict[str, object]:
    """Everything needed to reproduce a solve; no timestamps, so reruns hash identically."""
    manifest: dict[str, object] = {
        "run": run,
        "mesh": {
            "hash": mesh_hash(mesh),
            "dim": mesh.dim,
            "vertices": mesh.n_vertices,
            "elements": mesh.n_elements,
            "h_max": mesh.h_max,
            "gamma": mesh.gamma,
        },
        "space": {"label": result.space.label, "dofs": result.space.ndofs, "degree": result.space.degree},
        "solver": {"relative_residual": result.system.relative_residual(result.coefficients)},
        "files": sorted(path.name for path in files),
        "versions": software_versions(),
    }
    if result.smoother is not None:
        manifest["smoother"] = {
            "label": result.smoother.label,
            "target": getattr(result.smoother.target, "label", ""),
            "nnz": int(result.smoother.matrix.nnz),
        }
    return manifest
