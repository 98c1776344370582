from __future__ import annotations

import json
from pathlib import Path

import pytest

from cle_lab.geometry import unit_disk
from cle_lab.lattice import LatticeSpec


@pytest.fixture(scope="session")
def oracles() -> dict:
    return json.loads(Path(__file__).with_name("oracles.json").read_text())


@pytest.fixture(scope="session")
def disk24() -> LatticeSpec:
    return LatticeSpec.for_domain(unit_disk(), cells_across=24)


@pytest.fixture(scope="session")
def disk48() -> LatticeSpec:
    return LatticeSpec.for_domain(unit_disk(), cells_across=48)


def pytest_configure(config):
    config._verdict_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for the terminal summary."""

    def emit(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} [{number}] {title}: {detail}"
        request.config._verdict_lines.append((number, line))
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = sorted(getattr(config, "_verdict_lines", []))
    if lines:
        terminalreporter.section("acceptance verdicts")
        for _, line in lines:
            terminalreporter.write_line(line)
