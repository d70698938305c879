from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from nsasym.cli import main
from nsasym.coeffs import Coefficient, MomentTable, initial_moments, orders_of
from nsasym.expansion import ProfileBuilder
from nsasym.field_core import make_grid
from nsasym.solver import InitialDataSpec, make_initial_vorticity


def golden_config() -> Path:
    return Path(str(resources.files("nsasym") / "configs" / "golden_n2.cfg"))


def synthetic_table(seed: int = 3, amplitude: float = 0.5, heat_mode: str = "hermite",
                    profile_grid=None) -> tuple[MomentTable, ProfileBuilder]:
    """Initial moments of real data plus fixed pseudo-random space-time coefficients."""
    g = make_grid(2, 16, 128)
    table = MomentTable(2)
    table.initial = initial_moments(make_initial_vorticity(InitialDataSpec(amplitude, 1.0, (0.3, -0.2)), g), 5)
    rng = np.random.default_rng(seed)
    for k in (1, 2):
        for l, beta in orders_of(2, k):
            table.put(l, beta, "raw_I", Coefficient(0.05 * rng.normal(size=2)))
    builder = ProfileBuilder(table, heat_mode, profile_grid or make_grid(2, 16, 128), j_nodes=32)
    builder.populate_profile_moments()
    for k in (3, 4):
        for l, beta in orders_of(2, k):
            table.put(l, beta, "renormalized", Coefficient(0.05 * rng.normal(size=2)))
    return table, builder


@pytest.fixture(scope="session")
def synthetic():
    return synthetic_table()


@dataclass
class GoldenRun:
    path: Path
    status: int
    report: dict


def _run_golden(directory: Path) -> GoldenRun:
    status = main(["run", str(golden_config()), "-o", str(directory)])
    report = json.loads((directory / "report.json").read_text())
    return GoldenRun(directory, status, report)


@pytest.fixture(scope="session")
def golden_run(tmp_path_factory):
    """The bundled golden configuration, run end to end through the CLI (about 2 minutes)."""
    return _run_golden(tmp_path_factory.mktemp("golden") / "run")


@pytest.fixture(scope="session")
def golden_repeat(tmp_path_factory):
    return _run_golden(tmp_path_factory.mktemp("golden_repeat") / "run")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def pytest_collection_modifyitems(items):
    for item in items:
        if {"golden_run", "golden_repeat"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)
