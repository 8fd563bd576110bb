"""Shared fixtures: full simulated runs are expensive, so each is cached per session."""

import functools

import pytest
from hypothesis import settings

from swarmest.evalcli.runner import RunOptions, run_world
from swarmest.simworld import build_world, load_scenario

settings.register_profile("repro", derandomize=True, deadline=None)
settings.load_profile("repro")


@functools.lru_cache(maxsize=None)
def cached_run(name: str, overrides: tuple = (), ablate: str = "none",
               loss_uwb: float | None = None, loss_vio: float | None = None):
    world = build_world(load_scenario(name, list(overrides)))
    return run_world(world, RunOptions(ablate=ablate, loss_uwb=loss_uwb, loss_vio=loss_vio))


@pytest.fixture(scope="session")
def run():
    return cached_run


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
