from __future__ import annotations

from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def example_ini() -> Path:
    path = Path(__file__).resolve().parent.parent / "scenario.example.ini"
    assert path.is_file(), path
    return path
