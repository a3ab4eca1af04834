"""Suite-wide plan auditing: every non-differentiable plan built during the run
must satisfy its marginals to within FEASIBILITY_TOL."""

import numpy as np
import pytest
import torch

from hgot import transport

FEASIBILITY_TOL = 1e-6

AUDIT = {"plans": 0, "violations": []}
# acceptance verdict lines, echoed in the terminal summary
VERDICTS: list[str] = []


def _audit(plan):
    if plan.differentiable:
        return
    AUDIT["plans"] += 1
    if not plan.max_residual <= FEASIBILITY_TOL:
        AUDIT["violations"].append((plan.pi.shape, plan.row_residual, plan.col_residual))


def pytest_configure(config):
    transport.plan_observers.append(_audit)
    torch.set_num_threads(1)


def pytest_unconfigure(config):
    if _audit in transport.plan_observers:
        transport.plan_observers.remove(_audit)


def pytest_terminal_summary(terminalreporter):
    for line in VERDICTS:
        terminalreporter.write_line(line)
    status = "PASS" if not AUDIT["violations"] else "FAIL"
    terminalreporter.write_line(
        f"[{status}] criterion 2 marginal feasibility (whole suite): "
        f"{AUDIT['plans']} plans audited, {len(AUDIT['violations'])} violations"
    )


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["violations"] and session.exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def plan_audit():
    return AUDIT


@pytest.fixture
def verdict():
    """Record and print one acceptance verdict line."""

    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number} {title}: {detail}"
        VERDICTS.append(line)
        print(line)
        return ok

    return record
