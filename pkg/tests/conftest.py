import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tensorucb.im_graph import SocialGraph  # noqa: E402

RESULTS = pytest.StashKey[dict]()
NOTES = pytest.StashKey[list]()


@pytest.fixture
def triangle():
    """0 -> 1, 1 -> 2, 0 -> 2."""
    return SocialGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def note(request):
    """Append a fragment to the one-line summary of the running acceptance criterion."""
    notes = []
    request.node.stash[NOTES] = notes
    return lambda fmt, *args: notes.append(fmt % args if args else fmt)


def pytest_configure(config):
    config.stash[RESULTS] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or rep.outcome != "passed"):
        number, title = mark.args
        detail = "; ".join(item.stash.get(NOTES, []))
        if rep.failed and call.excinfo is not None:
            detail = f"{detail}; {call.excinfo.typename}: {str(call.excinfo.value).splitlines()[0]}".lstrip("; ")
        item.config.stash[RESULTS][number] = (title, rep.outcome, detail)
    return rep


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, outcome, detail = results[number]
        tag = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{tag}] {number}. {title}: {detail}")
