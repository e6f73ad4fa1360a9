from pathlib import Path

import pytest

from pyspgls import config


def test_environment_fallback(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("SPGLS_TEST_SETTING", "42")
    value = config.get_config("nowhere", "setting", "SPGLS_TEST_SETTING")
    assert value == "42"
    assert config.get_config("nowhere", "setting") is None


def test_defaults() -> None:
    assert config.get_int("rtr_starts") >= 1
    assert config.get_float("krylov_tol") > 0
    assert config.output_dir is not None
    with pytest.raises(AttributeError):
        _ = config.unknown_setting


def test_purge_keeps_recent_files(tmp_path: Path) -> None:
    recent = tmp_path / "recent.parquet"
    recent.write_bytes(b"")
    config.purge_cache(tmp_path)
    assert recent.exists()
