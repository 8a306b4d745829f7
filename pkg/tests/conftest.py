import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import audit  # noqa: E402
import ham.memory  # noqa: E402

ALPHA_SUM_TOLERANCE = 1e-9


@pytest.fixture(autouse=True, scope="session")
def attention_audit():
    """Check that every attention hop computed anywhere in the suite is normalised."""
    original = ham.memory._attend

    def audited(*args, **kwargs):
        out = original(*args, **kwargs)
        alpha = out[1].value
        dev = abs(float(np.sum(alpha)) - 1.0)
        audit.ATTENTION["hops"] += 1
        audit.ATTENTION["max_dev"] = max(audit.ATTENTION["max_dev"], dev)
        assert dev <= ALPHA_SUM_TOLERANCE, f"attention weights sum to 1 + {dev:.3e}"
        return out

    ham.memory._attend = audited
    yield
    ham.memory._attend = original


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((props["criterion"], report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE and not audit.ATTENTION["hops"]:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        tr.write_line(f"[{status}] {name}: {detail}")
    a = audit.ATTENTION
    tr.write_line(f"attention audit: {a['hops']} hops computed in this session, "
                  f"max |sum(alpha) - 1| = {a['max_dev']:.2e} (tolerance {ALPHA_SUM_TOLERANCE:g})")
