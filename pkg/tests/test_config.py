from __future__ import annotations

import logging
from pathlib import Path

import pytest

from ncfem.assembly import SolverSettings
from ncfem.config import (
    DEFAULT_SETTINGS_PATH,
    AppConfig,
    ConfigRejection,
    ToleranceConfig,
    build_run_config,
    check_mesh_dimension,
    load_app_config,
    parse_method,
)
from ncfem.models import Method, Variant


@pytest.fixture(autouse=True)
def _no_thread_cap(monkeypatch):
    monkeypatch.delenv("NCFEM_THREADS", raising=False)


def write_settings(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "settings.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_shipped_settings_match_defaults():
    config = load_app_config(DEFAULT_SETTINGS_PATH)
    assert config.tolerances == ToleranceConfig()
    assert config.solver.method == "direct"
    assert config.quadrature.morley_degree == 18
    assert config.quadrature.poisson_extra == SolverSettings().poisson_extra == 8
    assert config.output.directory == Path("results")


def test_missing_file_gives_defaults(tmp_path):
    config = load_app_config(tmp_path / "absent.toml")
    assert config.tolerances == ToleranceConfig()
    assert config.runtime.threads == 1
    assert config.config_path == tmp_path / "absent.toml"


def test_values_are_read(tmp_path):
    path = write_settings(
        tmp_path,
        """
[tolerances]
projection = 1e-9

[solver]
method = " CG "
direct_max_dofs = 10

[output]
directory = "out/runs"
float_format = "%.6f"

[runtime]
threads = 3
seed = 7
""",
    )
    config = load_app_config(path)
    assert config.tolerances.projection == 1e-9
    assert config.solver.method == "cg"
    assert config.solver.direct_max_dofs == 10
    assert config.output.directory == Path("out/runs")
    assert config.output.float_format == "%.6f"
    assert config.runtime.threads == 3
    assert config.runtime.seed == 7


def test_invalid_values_fall_back(tmp_path, caplog):
    path = write_settings(
        tmp_path,
        """
[tolerances]
projection = -1.0
rank = "small"

[quadrature]
morley_degree = 12

[solver]
method = "gauss-seidel"
residual = true

[output]
float_format = "%d %d"
""",
    )
    with caplog.at_level(logging.WARNING, logger="ncfem.config"):
        config = load_app_config(path)
    defaults = AppConfig()
    assert config.tolerances.projection == defaults.tolerances.projection
    assert config.tolerances.rank == defaults.tolerances.rank
    assert config.quadrature.morley_degree == 18
    assert config.solver.method == "direct"
    assert config.solver.residual == defaults.solver.residual
    assert config.output.float_format == defaults.output.float_format
    assert "tolerances.projection" in caplog.text
    assert "solver.method" in caplog.text


def test_dead_zone_order_is_enforced(tmp_path, caplog):
    path = write_settings(tmp_path, "[tolerances]\nrank_dead_zone_low = 1e-6\nrank_dead_zone_high = 1e-9\n")
    with caplog.at_level(logging.WARNING, logger="ncfem.config"):
        config = load_app_config(path)
    assert config.tolerances.rank_dead_zone_low == 1e-12
    assert config.tolerances.rank_dead_zone_high == 1e-8
    assert "rank_dead_zone_low" in caplog.text


def test_threads_are_capped_by_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("NCFEM_THREADS", "2")
    config = load_app_config(write_settings(tmp_path, "[runtime]\nthreads = 8\n"))
    assert config.runtime.threads == 2


@pytest.mark.parametrize(
    "text, p, expected",
    [
        ("cr", None, (Method.CR, None)),
        ("Morley", None, (Method.MORLEY, None)),
        ("gl:3", None, (Method.GL, 3)),
        ("gl", 2, (Method.GL, 2)),
        ("gl:4", 4, (Method.GL, 4)),
    ],
)
def test_parse_method(text, p, expected):
    assert parse_method(text, p) == expected


@pytest.mark.parametrize(
    "text, p, message",
    [
        ("dg", None, "unknown method"),
        ("cr:2", None, "takes no order"),
        ("gl:x", None, "bad order"),
        ("gl:3", 2, "conflicts"),
        ("gl", None, "p >= 2"),
        ("gl:1", None, "p >= 2"),
    ],
)
def test_parse_method_rejections(text, p, message):
    with pytest.raises(ConfigRejection, match=message):
        parse_method(text, p)


def test_default_loads_follow_the_method():
    assert build_run_config("solve").load == "manufactured:sinsin"
    assert build_run_config("solve", method="morley").load == "manufactured:biquartic"


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"command": "plot"}, "unknown command"),
        ({"command": "solve", "variant": "weird"}, "unknown variant"),
        ({"command": "solve", "variant": "classical", "load": "checkerboard"}, "divergence-form"),
        ({"command": "convergence", "levels": 2}, "at least 3 levels"),
        ({"command": "convergence", "load": "constant"}, "manufactured load"),
        ({"command": "convergence", "method": "morley", "load": "manufactured:sinsin"}, "does not solve"),
        ({"command": "experiment"}, "experiment name"),
        ({"command": "verify", "tolerance_overrides": {"wobble": 1e-3}}, "unknown tolerance"),
        ({"command": "verify", "tolerance_overrides": {"projection": 0.0}}, "must be positive"),
    ],
)
def test_build_run_config_rejections(kwargs, message):
    kwargs = dict(kwargs)
    command = kwargs.pop("command")
    with pytest.raises(ConfigRejection, match=message):
        build_run_config(command, **kwargs)


def test_smoothed_checkerboard_is_accepted():
    run = build_run_config("solve", load="checkerboard")
    assert run.variant is Variant.SMOOTHED


def test_tolerance_overrides_and_payload(tmp_path):
    run = build_run_config(
        "verify",
        method="gl:2",
        out=tmp_path,
        tolerance_overrides={"projection": 1e-8},
    )
    assert run.tolerances.projection == 1e-8
    assert run.tolerances.identity == ToleranceConfig().identity
    payload = run.to_dict()
    assert payload["method"] == "gl:2"
    assert payload["tolerances"]["projection"] == 1e-8
    assert "out" not in payload


def test_check_mesh_dimension():
    check_mesh_dimension(build_run_config("solve"), 3)
    check_mesh_dimension(build_run_config("solve", method="morley"), 2)
    with pytest.raises(ConfigRejection, match="triangulation"):
        check_mesh_dimension(build_run_config("solve", method="morley"), 3)
