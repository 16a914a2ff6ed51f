from __future__ import annotations

import shutil
from collections.abc import Iterator
from pathlib import Path

import pytest

from mobility.app.dependencies import reset_cached_dependencies

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def runtime_dir(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> Iterator[Path]:
    data_dir = tmp_path / "runtime-data"
    data_dir.mkdir(parents=True, exist_ok=True)
    monkeypatch.setenv("MOBILITY_DATA_DIR", str(data_dir))
    monkeypatch.delenv("MOBILITY_LOG", raising=False)
    monkeypatch.delenv("MOBILITY_WORKERS", raising=False)
    monkeypatch.delenv("MOBILITY_RESULTS_DIR", raising=False)
    reset_cached_dependencies()
    yield data_dir
    reset_cached_dependencies()


@pytest.fixture
def example_scenario(tmp_path: Path) -> Path:
    target = tmp_path / "example_scenario.json"
    shutil.copyfile(SCENARIO_DIR / "example_scenario.json", target)
    return target


@pytest.fixture
def relay_model(tmp_path: Path) -> Path:
    target = tmp_path / "two_member_relay.json"
    shutil.copyfile(SCENARIO_DIR / "two_member_relay.json", target)
    return target
