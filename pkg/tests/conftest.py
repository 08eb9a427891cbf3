"""Shared fixtures: the acceptance criterion recorder and its terminal summary."""

from contextlib import contextmanager

import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Context manager that records one PASS/FAIL line for an acceptance criterion.

    Usage::

        with criterion(3, "depth vs order") as info:
            info["depths"] = ...
            assert ...

    Entries put into ``info`` are echoed on the line, so a failure still
    shows the measured values.
    """
    results = request.config.stash[_RESULTS]

    @contextmanager
    def record(number: int, title: str):
        info: dict = {}
        try:
            yield info
        except BaseException:
            results[number] = _line("FAIL", number, title, info)
            raise
        results[number] = _line("PASS", number, title, info)

    return record


def _line(status, number, title, info):
    detail = "; ".join(f"{k}={v}" for k, v in info.items())
    return f"{status} criterion {number}: {title}" + (f" [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
