import numpy as np
import pytest

from recsearch import tensor as T


def scalarize(node, weights):
    """sum(node * weights) as a 1-element node, using only engine primitives."""
    tape = node.tape
    w = tape.constant(weights)
    prod = T.mul(node, w)
    if prod.value.ndim == 1:
        return T.shape_op("reduce_sum_last", prod)
    rows = T.shape_op("reduce_sum_last", prod)
    ones = tape.constant(np.ones((1, rows.shape[0])))
    return T.matmul(ones, rows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance report ---------------------------------------------------
# One PASS/FAIL/SKIP line per acceptance test, printed after the run.

_ACCEPTANCE_LINES = []
_STATUS = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when != "call" and report.outcome == "passed":
        return
    props = dict(report.user_properties)
    name = props.get("criterion", report.nodeid.rsplit("::", 1)[-1])
    detail = props.get("detail", "")
    if report.outcome == "skipped" and not detail and isinstance(report.longrepr, tuple):
        detail = report.longrepr[2]
    _ACCEPTANCE_LINES.append(f"{_STATUS[report.outcome]}  {name}: {detail}".rstrip(": "))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
