"""Session-wide fixtures.

Every converged solve made anywhere in the suite is certified against the
KKT conditions at 1e-8 relative tolerance. The kernel is wrapped once at
import time; ``test_kkt_certification`` is moved to the end of the run so it
sees every solve.
"""

import threading

import pytest

import s2knilm.nnls as nnls_module

KKT_TOL = 1e-8


class KktLedger:
    def __init__(self):
        self.lock = threading.Lock()
        self.checked = 0
        self.violations = []


KKT_LEDGER = KktLedger()
ACCEPTANCE_LINES = []

_kernel = nnls_module._fnnls


def _certified_kernel(G, h, tol, max_iter, trace):
    sol = _kernel(G, h, tol, max_iter, trace)
    if sol.converged:
        report = nnls_module.kkt_report(nnls_module.GramSystem(G, h), sol.a, KKT_TOL)
        with KKT_LEDGER.lock:
            KKT_LEDGER.checked += 1
            if not report.ok:
                KKT_LEDGER.violations.append(report)
    return sol


nnls_module._fnnls = _certified_kernel


def pytest_collection_modifyitems(session, config, items):
    last = [it for it in items if it.name == "test_kkt_certification"]
    rest = [it for it in items if it.name != "test_kkt_certification"]
    items[:] = rest + last


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def kkt_ledger():
    return KKT_LEDGER


@pytest.fixture
def criterion():
    """``criterion(n, name, ok, detail)`` prints and records one pass/fail
    line, then asserts ``ok``."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record
