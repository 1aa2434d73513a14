import time
from contextlib import contextmanager

import pytest

from wingloads.wing import WingGeometry, generate_dataset

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def curves_238():
    """A moderately sized seeded training variant shared across test modules."""
    return generate_dataset(WingGeometry(), 238, 3000, seed=11)


@pytest.fixture
def criterion(request):
    """Context manager recording a PASS/FAIL line for one acceptance criterion.

    The body may fill ``info["detail"]``; any exception marks the criterion
    failed and is re-raised.
    """
    log = request.config.stash.setdefault(_ACCEPTANCE, [])

    @contextmanager
    def check(number: int, title: str):
        info = {"detail": ""}
        t0 = time.perf_counter()
        ok = False
        try:
            yield info
            ok = True
        except BaseException as exc:
            info["detail"] = (info["detail"] + f" | {type(exc).__name__}: {exc}").strip(" |")
            raise
        finally:
            line = (f"criterion {number:>2} {'PASS' if ok else 'FAIL'} "
                    f"({time.perf_counter() - t0:6.1f} s) {title}: {info['detail']}")
            log.append((number, line))
            print(line)

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line.splitlines()[0][:400])
