import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import lcskit
from lcskit import Domain, IntegratorParams

# one pass/fail line per acceptance criterion, printed in the summary
ACCEPTANCE_RESULTS = []


def record_acceptance(num, name, passed, detail, seconds, limit_s):
    ACCEPTANCE_RESULTS.append(
        (num, name, passed, detail, seconds, limit_s))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    tw = terminalreporter
    tw.section("acceptance criteria")
    for num, name, passed, detail, seconds, limit in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        tw.write_line(f"[{status}] criterion {num:2d} {name}: {detail} "
                      f"({seconds:.1f}s / limit {limit:.0f}s)")


@pytest.fixture(scope="session")
def saddle_cg():
    field = lcskit.linear_field([[1.0, 0.0], [0.0, -1.0]])
    dom = Domain((-1.0, -1.0), (1.0, 1.0), (False, False))
    fm = lcskit.compute_flow_map(field, (21, 21), 0.0, 1.0, aux_offset=1e-4,
                                 domain=dom)
    return lcskit.cauchy_green(fm)


@pytest.fixture(scope="session")
def duffing_field():
    return lcskit.make_duffing()


@pytest.fixture(scope="session")
def duffing_cg(duffing_field):
    dom = Domain((-3.0, -3.0), (3.0, 3.0), (False, False))
    fm = lcskit.compute_flow_map(duffing_field, (181, 181), 0.0, 2.0,
                                 aux_offset=1e-6, domain=dom)
    return lcskit.cauchy_green(fm)


@pytest.fixture(scope="session")
def dgyre_field():
    return lcskit.make_double_gyre(0.1, 0.1, 2.0 * np.pi / 10.0)


@pytest.fixture(scope="session")
def dgyre_cg(dgyre_field):
    p = IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)
    fm = lcskit.compute_flow_map(dgyre_field, (161, 81), 0.0, 10.0,
                                 aux_offset=1e-6, p=p)
    return lcskit.cauchy_green(fm)
