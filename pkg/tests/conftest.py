"""Collects acceptance results and prints one line per criterion at the end."""

import contextlib

RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


@contextlib.contextmanager
def criterion(number: int, part: str, detail: list):
    """Record PASS/FAIL for one part of an acceptance criterion.

    ``detail`` is a list the block appends measured values to; it is shown
    next to the verdict either way.
    """
    try:
        yield
    except BaseException as exc:
        msg = "; ".join(map(str, detail)) or str(exc).splitlines()[0]
        RESULTS.setdefault(number, []).append((part, False, msg))
        raise
    RESULTS.setdefault(number, []).append((part, True, "; ".join(map(str, detail))))


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(RESULTS):
        parts = RESULTS[n]
        ok = all(p[1] for p in parts)
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}")
        for part, good, msg in parts:
            tr.write_line(f"    [{'ok' if good else 'FAIL'}] {part}: {msg}")
