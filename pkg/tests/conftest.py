from __future__ import annotations

import os
import re

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qrproc.core import Dataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def median3() -> Dataset:
    """Intercept-only data y = (1, 2, 3)."""
    return Dataset(np.array([1.0, 2.0, 3.0]), np.ones((3, 1)))


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """record(label, ok, detail): log one acceptance line, echo it live, and return ok."""

    def record(label: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append((label, bool(ok), detail))
        print(f"\n[acceptance] criterion {label}: {'PASS' if ok else 'FAIL'} - {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(row):
        head = re.match(r"\d+", row[0])
        return (int(head.group()) if head else 0, row[0])

    for label, ok, detail in sorted(_ACCEPTANCE, key=order):
        terminalreporter.write_line(f"criterion {label}: {'PASS' if ok else 'FAIL'} - {detail}")
