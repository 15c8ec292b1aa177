from __future__ import annotations

import json

import pytest

from ncfem.main import EXIT_REJECTED, build_default_app, main
from ncfem.mesh import write_mesh


@pytest.fixture(autouse=True)
def _no_thread_cap(monkeypatch):
    monkeypatch.delenv("NCFEM_THREADS", raising=False)


def run_cli(*args: str) -> int:
    return main(list(args) + ["--log-level", "WARNING"])


def test_build_default_app_reads_settings(tmp_path):
    path = tmp_path / "settings.toml"
    path.write_text('[solver]\nmethod = "cg"\n', encoding="utf-8")
    assert build_default_app(path).config.solver.method == "cg"


def test_solve_writes_outputs_and_a_stable_manifest(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert run_cli("solve", "--mesh", "gen:square:2", "--out", str(first)) == 0
    assert run_cli("solve", "--mesh", "gen:square:2", "--out", str(second)) == 0
    for name in ("solution.csv", "dofs.json", "manifest.json"):
        assert (first / name).exists()
    manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["files"] == ["dofs.json", "manifest.json", "solution.csv"]
    assert manifest["space"]["dofs"] == 8
    assert manifest["energy_error"] > 0
    # the output directory is not part of the manifest
    assert (first / "manifest.json").read_bytes() == (second / "manifest.json").read_bytes()
    assert (first / "solution.csv").read_bytes() == (second / "solution.csv").read_bytes()


def test_solve_morley(tmp_path):
    assert run_cli("solve", "--method", "morley", "--mesh", "gen:square:2", "--out", str(tmp_path)) == 0
    header = (tmp_path / "solution.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "x,y,value,dx,dy,dxx,dxy,dyx,dyy"


@pytest.mark.parametrize(
    "args",
    [
        ("solve", "--variant", "classical", "--load", "checkerboard"),
        ("solve", "--method", "gl"),
        ("solve", "--load", "manufactured:nothing"),
        ("convergence", "--levels", "2"),
        ("solve", "--mesh", "missing-mesh.txt"),
    ],
)
def test_rejections(tmp_path, args):
    assert run_cli(*args, "--out", str(tmp_path)) == EXIT_REJECTED


def test_morley_needs_triangles(tmp_path, tetrahedra):
    path = tmp_path / "tets.mesh"
    write_mesh(tetrahedra, path)
    assert run_cli("solve", "--method", "morley", "--mesh", str(path), "--out", str(tmp_path)) == EXIT_REJECTED


def test_verify_passes(tmp_path):
    assert run_cli("verify", "--mesh", "gen:square:2", "--out", str(tmp_path)) == 0
    payload = json.loads((tmp_path / "verify.json").read_text(encoding="utf-8"))
    assert payload["status"] == "pass"
    assert payload["run"]["method"] == "cr"
    for check in payload["checks"]:
        assert {"name", "status", "measured", "threshold", "paper_ref"} <= set(check)


def test_verify_reports_a_broken_smoother(tmp_path):
    assert run_cli("verify", "--mesh", "gen:square:2", "--fault", "skip-bubble", "--out", str(tmp_path)) == 1
    payload = json.loads((tmp_path / "verify.json").read_text(encoding="utf-8"))
    assert payload["status"] == "fail"


def test_unknown_experiment_is_an_argument_error():
    with pytest.raises(SystemExit):
        run_cli("experiment", "no-such-experiment")


@pytest.mark.slow
def test_convergence_study(tmp_path):
    assert run_cli("convergence", "--mesh", "gen:square:2", "--levels", "3", "--out", str(tmp_path)) == 0
    lines = (tmp_path / "convergence.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "level,h_max,dofs,energy_error,best_error,ratio,rate"
    assert len(lines) == 5
    assert lines[-1].startswith("fit,")
    assert (tmp_path / "convergence.dat").exists()


@pytest.mark.slow
def test_experiment_command(tmp_path):
    assert run_cli("experiment", "averaging-inconsistency", "--out", str(tmp_path)) == 0
    assert (tmp_path / "experiment-averaging-inconsistency.json").exists()


def test_verify_uses_the_configured_seed(tmp_path):
    settings = tmp_path / "settings.toml"
    settings.write_text("[runtime]\nseed = 7\n", encoding="utf-8")
    out = tmp_path / "out"
    assert run_cli("verify", "--mesh", "gen:square:2", "--settings", str(settings), "--out", str(out)) == 0
    payload = json.loads((out / "verify.json").read_text(encoding="utf-8"))
    assert payload["run"]["seed"] == 7
    rayleigh = next(check for check in payload["checks"] if check["name"] == "rayleigh-quotients")
    assert rayleigh["details"]["seed"] == 7
