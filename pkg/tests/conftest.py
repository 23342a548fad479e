import numpy as np
import pytest

from ghdcorr import DrivingTerm, build_grid, lieb_liniger, sinh_gordon, solve_gge

# criterion number -> list of (ok, detail), filled by test_acceptance.py
_ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, ok: bool, detail: str):
        _ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[number]
        ok = all(c[0] for c in checks)
        failed = [d for good, d in checks if not good]
        note = f" ({'; '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}{note}")


@pytest.fixture(scope="session")
def ll():
    return lieb_liniger(1.0)


@pytest.fixture(scope="session")
def ll_grid(ll):
    return build_grid(ll.particle_types(), 64)


@pytest.fixture(scope="session")
def ll_thermal(ll, ll_grid):
    """Lieb-Liniger c=1 at beta=1, mu=1."""
    return solve_gge(DrivingTerm.thermal(ll, 1.0, 1.0), ll, ll_grid)


@pytest.fixture(scope="session")
def shg():
    return sinh_gordon(0.3)


@pytest.fixture(scope="session")
def shg_thermal(shg):
    grid = build_grid(shg.particle_types((-8.0, 8.0)), 64)
    return solve_gge(DrivingTerm.thermal(shg, 1.0), shg, grid)

