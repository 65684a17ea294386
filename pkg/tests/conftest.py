import numpy as np
import pytest

from degenbvp.benchmarks import disk_problem
from degenbvp.interface import extract_interface


@pytest.fixture(scope="session")
def disk():
    return disk_problem()


@pytest.fixture(scope="session")
def disk_curve(disk):
    spec = disk.problem
    return extract_interface(spec.phi, 512, box=spec.box, outer=spec.outer)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion, with the measured values."""
    lines = []
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py::test_ac" not in getattr(rep, "nodeid", ""):
                continue
            if rep.when != "call" and key != "error":
                continue
            props = dict(rep.user_properties)
            label = props.get("criterion", rep.nodeid.split("::")[-1])
            status = "PASS" if rep.passed else "FAIL"
            lines.append((label, f"{label:5s} {status}  {props.get('summary', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: int(t[0][2:]) if t[0][2:].isdigit() else 99):
            terminalreporter.write_line(line)
