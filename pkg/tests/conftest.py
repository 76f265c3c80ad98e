from pathlib import Path

import pytest

from spillover.data import parse_group_summary

DATA = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def cholera_path():
    return DATA / "cholera.csv"


@pytest.fixture
def cholera(cholera_path):
    return parse_group_summary(cholera_path.read_text())
