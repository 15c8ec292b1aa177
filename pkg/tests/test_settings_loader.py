from __future__ import annotations

import logging

from ncfem.settings_loader import get_section, load_settings


def test_missing_file(tmp_path):
    assert load_settings(tmp_path / "nope.toml") == {}


def test_malformed_file(tmp_path, caplog):
    path = tmp_path / "broken.toml"
    path.write_text("[solver\nmethod = ", encoding="utf-8")
    with caplog.at_level(logging.WARNING, logger="ncfem.settings_loader"):
        assert load_settings(path) == {}
    assert "Could not read" in caplog.text


def test_sections_and_top_level_scalars(tmp_path, caplog):
    path = tmp_path / "settings.toml"
    path.write_text('title = "x"\n\n[solver]\nmethod = "cg"\n', encoding="utf-8")
    with caplog.at_level(logging.WARNING, logger="ncfem.settings_loader"):
        settings = load_settings(path)
    assert settings == {"solver": {"method": "cg"}}
    assert "title" in caplog.text


def test_get_section():
    settings = {"solver": {"method": "cg"}}
    assert get_section(settings, "solver") == {"method": "cg"}
    assert get_section(settings, "output") == {}
