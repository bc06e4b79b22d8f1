import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dmphyclus.tree import parse_newick  # noqa: E402

# criterion number -> (passed, line); filled by the acceptance tests
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE[number] = (passed, line)
    print(line)


def pytest_configure(config):
    for n in range(1, 9):
        config.addinivalue_line("markers", f"criterion_{n}: acceptance criterion {n}")


def pytest_runtest_logreport(report):
    # a criterion whose test crashed before recording still gets a FAIL line
    if report.when == "call" and report.failed:
        for key, _ in report.keywords.items():
            if key.startswith("criterion_"):
                n = int(key.split("_")[1])
                if n not in ACCEPTANCE:
                    ACCEPTANCE[n] = (False, f"[FAIL] criterion {n}: raised before reporting")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def cherry_plus_one():
    return parse_newick("((A:1,B:1):1,C:2);")


@pytest.fixture
def five_tip():
    return parse_newick("(((A:0.05,B:0.07):0.04,C:0.1):0.06,(D:0.03,E:0.08):0.09);")
