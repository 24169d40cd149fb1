"""Shared fixtures: cached scenario runs and the per-criterion acceptance summary."""

from __future__ import annotations

import dataclasses
import time

import pytest

from tbgflow import cli

_RUNS: dict[tuple, tuple[cli.RunResult, float]] = {}
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def run_bundled(name: str, baseline: bool = False, **overrides) -> tuple[cli.RunResult, float]:
    """Execute a bundled scenario once per session; returns (result, wall seconds)."""
    key = (name, baseline, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        s = cli.bundled_scenario(name)
        if overrides:
            s = dataclasses.replace(s, **overrides)
        t0 = time.perf_counter()
        result = cli.execute(s, with_baseline=baseline)
        _RUNS[key] = (result, time.perf_counter() - t0)
    return _RUNS[key]


@pytest.fixture
def bundled_run():
    return run_bundled


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append((criterion, bool(passed), detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion:<6} {detail}")
