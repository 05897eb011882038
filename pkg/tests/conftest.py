import numpy as np
import pytest

from tngd.thermo_solver import DampedLowRankSystem


def random_system(rng, n, m, damping=None, cond=None):
    """Damped system with a random PSD block-diagonal-free H_L.

    With ``cond`` the damping is chosen so that cond(A) equals it.
    """
    j = rng.standard_normal((m, n)) / np.sqrt(n)
    h = rng.standard_normal((m, m))
    h = h @ h.T / m
    g = rng.standard_normal(n)
    if cond is not None:
        top = np.linalg.eigvalsh(j.T @ h @ j)[-1]
        damping = top / (cond - 1.0)
    return DampedLowRankSystem(j, h, 1.0 if damping is None else damping, g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report one line each; printed in the terminal summary
CRITERIA = {}
SESSION = {}


@pytest.fixture
def report():
    def record(number, passed, detail):
        CRITERIA.setdefault(number, []).append((bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


def pytest_sessionstart(session):
    import time
    SESSION["start"] = time.perf_counter()


def pytest_terminal_summary(terminalreporter):
    import time
    if not CRITERIA:
        return
    elapsed = time.perf_counter() - SESSION["start"]
    if 13 in CRITERIA:
        CRITERIA[13].append((elapsed < 15 * 60, f"session wall time {elapsed:.0f} s (limit 900 s)"))
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA, key=lambda k: (int(str(k).rstrip("b")), str(k))):
        parts = CRITERIA[number]
        ok = all(p for p, _ in parts)
        terminalreporter.write_line(f"criterion {str(number):>2}: {'PASS' if ok else 'FAIL'}  " + "; ".join(d for _, d in parts))
