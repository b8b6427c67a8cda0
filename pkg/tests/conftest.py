import csv
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def read_rows(name):
    with open(DATA / name, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="session")
def risk_factor_rows():
    return read_rows("risk_factor_rows.csv")


@pytest.fixture(scope="session")
def diagnostics_rows():
    return read_rows("diagnostics_rows.csv")
