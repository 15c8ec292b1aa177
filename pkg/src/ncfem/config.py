"""Application configuration models and helpers."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .models import Method, Variant
from .settings_loader import get_section, load_settings
from .workers import effective_workers

_LOGGER = logging.getLogger(__name__)

DEFAULT_SETTINGS_PATH = Path(__file__).resolve().parents[2] / "config" / "settings.toml"

COMMANDS = ("solve", "convergence", "verify", "experiment")
SOLVER_METHODS = ("direct", "cg")
DEFAULT_LOADS = {Method.CR: "manufactured:sinsin", Method.GL: "manufactured:sinsin", Method.MORLEY: "manufactured:biquartic"}
MANUFACTURED_ORDERS = {"sinsin": 1, "biquartic": 2}


class ConfigRejection(ValueError):
    """Raised for run configurations that cannot be executed as requested."""


@dataclass(frozen=True)
class ToleranceConfig:
    """Thresholds of the verification ladder (all relative)."""

    identity: float = 1e-12
    projection: float = 1e-10
    right_inverse: float = 1e-9
    c1_sampling: float = 1e-9
    rank: float = 1e-10
    rank_dead_zone_low: float = 1e-12
    rank_dead_zone_high: float = 1e-8
    hct_condition: float = 1e8


@dataclass
class QuadratureConfig:
    poisson_extra: int = 8
    morley_degree: int = 18
    error_margin: int = 4


@dataclass
class SolverConfig:
    method: str = "direct"
    direct_max_dofs: int = 50_000
    residual: float = 1e-12


@dataclass
class OutputConfig:
    directory: Path = Path("results")
    float_format: str = "%.12e"


@dataclass
class RuntimeConfig:
    threads: int = 1
    seed: int = 0


@dataclass
class AppConfig:
    """Top-level application configuration."""

    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    config_path: Optional[Path] = None


def _positive_float(section: Mapping[str, Any], key: str, default: float, where: str) -> float:
    value = section.get(key)
    if value is None:
        return default
    if isinstance(value, (int, float)) and not isinstance(value, bool) and float(value) > 0:
        return float(value)
    _LOGGER.warning("Invalid %s.%s '%s'; using %g", where, key, value, default)
    return default


def _int_at_least(section: Mapping[str, Any], key: str, default: int, minimum: int, where: str) -> int:
    value = section.get(key)
    if value is None:
        return default
    if isinstance(value, int) and not isinstance(value, bool) and value >= minimum:
        return value
    _LOGGER.warning("Invalid %s.%s '%s'; using %d", where, key, value, default)
    return default


def _parse_tolerances(settings: Mapping[str, Mapping[str, Any]]) -> ToleranceConfig:
    section = get_section(settings, "tolerances")
    defaults = ToleranceConfig()
    values = {f.name: _positive_float(section, f.name, getattr(defaults, f.name), "tolerances") for f in fields(ToleranceConfig)}
    config = ToleranceConfig(**values)
    if config.rank_dead_zone_low >= config.rank_dead_zone_high:
        _LOGGER.warning(
            "tolerances.rank_dead_zone_low %g must be below rank_dead_zone_high %g; using defaults",
            config.rank_dead_zone_low,
            config.rank_dead_zone_high,
        )
        config = replace(
            config,
            rank_dead_zone_low=defaults.rank_dead_zone_low,
            rank_dead_zone_high=defaults.rank_dead_zone_high,
        )
    return config


def _parse_quadrature(settings: Mapping[str, Mapping[str, Any]]) -> QuadratureConfig:
    config = QuadratureConfig()
    section = get_section(settings, "quadrature")
    config.poisson_extra = _int_at_least(section, "poisson_extra", config.poisson_extra, 0, "quadrature")
    config.morley_degree = _int_at_least(section, "morley_degree", config.morley_degree, 18, "quadrature")
    config.error_margin = _int_at_least(section, "error_margin", config.error_margin, 0, "quadrature")
    return config


def _parse_solver(settings: Mapping[str, Mapping[str, Any]]) -> SolverConfig:
    config = SolverConfig()
    section = get_section(settings, "solver")

    method_value = section.get("method")
    if isinstance(method_value, str) and method_value.strip().lower() in SOLVER_METHODS:
        config.method = method_value.strip().lower()
    elif method_value is not None:
        _LOGGER.warning("Invalid solver.method '%s'; using %s", method_value, config.method)

    config.direct_max_dofs = _int_at_least(section, "direct_max_dofs", config.direct_max_dofs, 1, "solver")
    config.residual = _positive_float(section, "residual", config.residual, "solver")
    return config


def _parse_output(settings: Mapping[str, Mapping[str, Any]]) -> OutputConfig:
    config = OutputConfig()
    section = get_section(settings, "output")

    directory_value = section.get("directory")
    if isinstance(directory_value, str) and directory_value.strip():
        config.directory = Path(directory_value.strip()).expanduser()
    elif directory_value is not None:
        _LOGGER.warning("Invalid output.directory '%s'; using %s", directory_value, config.directory)

    format_value = section.get("float_format")
    if isinstance(format_value, str):
        try:
            format_value % 1.0
        except (TypeError, ValueError):
            _LOGGER.warning("Invalid output.float_format '%s'; using %s", format_value, config.float_format)
        else:
            config.float_format = format_value
    elif format_value is not None:
        _LOGGER.warning("Invalid output.float_format '%s'; using %s", format_value, config.float_format)
    return config


def _parse_runtime(settings: Mapping[str, Mapping[str, Any]]) -> RuntimeConfig:
    config = RuntimeConfig()
    section = get_section(settings, "runtime")
    config.threads = effective_workers(_int_at_least(section, "threads", config.threads, 1, "runtime"))
    config.seed = _int_at_least(section, "seed", config.seed, 0, "runtime")
    return config


def load_app_config(settings_path: Path | None = None) -> AppConfig:
    """Load the composite application configuration from settings."""

    path = (settings_path or DEFAULT_SETTINGS_PATH).expanduser()
    settings = load_settings(path)
    return AppConfig(
        tolerances=_parse_tolerances(settings),
        quadrature=_parse_quadrature(settings),
        solver=_parse_solver(settings),
        output=_parse_output(settings),
        runtime=_parse_runtime(settings),
        config_path=path,
    )


# run configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation after validation."""

    command: str
    method: Method = Method.CR
    p: Optional[int] = None
    variant: Variant = Variant.SMOOTHED
    mesh: str = "gen:square:4"
    load: str = "manufactured:sinsin"
    levels: int = 4
    out: Path = Path("results")
    tolerances: ToleranceConfig = field(default_factory=ToleranceConfig)
    fault: Optional[str] = None
    experiment: Optional[str] = None
    seed: int = 0

    @property
    def method_label(self) -> str:
        return f"gl:{self.p}" if self.method is Method.GL else self.method.value

    def to_dict(self) -> dict[str, object]:
        return {
            "command": self.command,
            "method": self.method_label,
            "variant": self.variant.value,
            "mesh": self.mesh,
            "load": self.load,
            "levels": self.levels,
            "tolerances": {f.name: getattr(self.tolerances, f.name) for f in fields(ToleranceConfig)},
            "fault": self.fault,
            "experiment": self.experiment,
            "seed": self.seed,
        }


def parse_method(text: str, p: int | None = None) -> tuple[Method, int | None]:
    """``cr``, ``morley`` or ``gl:<p>`` (``gl`` with a separate *p* is accepted too)."""
    kind, _, order = text.strip().lower().partition(":")
    try:
        method = Method(kind)
    except ValueError:
        raise ConfigRejection(f"unknown method '{text}' (use cr, gl:<p> or morley)") from None
    if method is not Method.GL:
        if order:
            raise ConfigRejection(f"method '{kind}' takes no order")
        return method, None
    if order:
        try:
            parsed = int(order)
        except ValueError:
            raise ConfigRejection(f"bad order in method '{text}'") from None
        if p is not None and p != parsed:
            raise ConfigRejection(f"method '{text}' conflicts with --p {p}")
        p = parsed
    if p is None or p < 2:
        raise ConfigRejection("the jump-moment kernel method needs an order p >= 2")
    return method, p


def _load_order(load: str) -> int | None:
    kind, _, name = load.partition(":")
    if kind == "manufactured":
        return MANUFACTURED_ORDERS.get(name)
    return None


def build_run_config(
    command: str,
    *,
    method: str = "cr",
    p: int | None = None,
    variant: str = "smoothed",
    mesh: str = "gen:square:4",
    load: str | None = None,
    levels: int = 4,
    out: Path | None = None,
    tolerance_overrides: Mapping[str, float] | None = None,
    fault: str | None = None,
    experiment: str | None = None,
    app_config: AppConfig | None = None,
) -> RunConfig:
    """Validate a run request; incompatible combinations raise :class:`ConfigRejection`."""
    app_config = app_config or AppConfig()
    if command not in COMMANDS:
        raise ConfigRejection(f"unknown command '{command}'")
    parsed_method, parsed_p = parse_method(method, p)
    try:
        parsed_variant = Variant(variant)
    except ValueError:
        raise ConfigRejection(f"unknown variant '{variant}' (use classical or smoothed)") from None
    load = load or DEFAULT_LOADS[parsed_method]

    if parsed_variant is Variant.CLASSICAL and load == "checkerboard":
        raise ConfigRejection("the classical variant cannot take the divergence-form checkerboard load")
    if command == "convergence":
        if levels < 3:
            raise ConfigRejection(f"a convergence study needs at least 3 levels, got {levels}")
        expected = 2 if parsed_method is Method.MORLEY else 1
        order = _load_order(load)
        if order is None:
            raise ConfigRejection(f"a convergence study needs a manufactured load, got '{load}'")
        if order != expected:
            raise ConfigRejection(f"load '{load}' does not solve the {parsed_method.value} problem")
    if command == "experiment" and not experiment:
        raise ConfigRejection("the experiment command needs an experiment name")

    tolerances = app_config.tolerances
    if tolerance_overrides:
        unknown = set(tolerance_overrides) - {f.name for f in fields(ToleranceConfig)}
        if unknown:
            raise ConfigRejection(f"unknown tolerance override(s) {sorted(unknown)}")
        for key, value in tolerance_overrides.items():
            if not value > 0:
                raise ConfigRejection(f"tolerance {key} must be positive, got {value}")
        tolerances = replace(tolerances, **tolerance_overrides)

    return RunConfig(
        command=command,
        method=parsed_method,
        p=parsed_p,
        variant=parsed_variant,
        mesh=mesh,
        load=load,
        levels=levels,
        out=out or app_config.output.directory,
        tolerances=tolerances,
        fault=fault,
        experiment=experiment,
        seed=app_config.runtime.seed,
    )


def check_mesh_dimension(run: RunConfig, dim: int) -> None:
    if run.method is Method.MORLEY and dim != 2:
        raise ConfigRejection(f"the Morley method needs a triangulation, the mesh has dimension {dim}")
