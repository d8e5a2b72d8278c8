import dataclasses

import pytest

from memsim import HierarchyConfig, validate


def quiet_config(**core):
    """Default config with no launch jitter and no instruction fetches."""
    base = HierarchyConfig()
    opts = dict(launch_jitter=0, icache_fetch_interval=0)
    opts.update(core)
    return dataclasses.replace(base, core=dataclasses.replace(base.core, **opts))


@pytest.fixture
def vcfg():
    return validate(HierarchyConfig())


# one pass/fail line per acceptance criterion, printed at the end of the run
CRITERIA: dict[int, str] = {}


def record(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
