import os
import re

import pytest
from hypothesis import HealthCheck, settings

from o2proxy.archsim import CoreGroupSpec, spawn_core_group

WORKER_COUNTS = (1, 2, 4, 8, 16, 32, 64)

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.register_profile(
    "ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


class GroupPool:
    """One long-lived core group per worker count, shared across tests."""

    def __init__(self):
        self._groups = {}

    def __call__(self, n_cpes: int):
        g = self._groups.get(n_cpes)
        if g is None:
            g = self._groups[n_cpes] = spawn_core_group(CoreGroupSpec(n_cpes=n_cpes))
        return g

    def close(self):
        for g in self._groups.values():
            g.close()


@pytest.fixture(scope="session")
def groups():
    pool = GroupPool()
    yield pool
    pool.close()


@pytest.fixture(params=WORKER_COUNTS, ids=lambda w: f"w{w}")
def group(request, groups):
    return groups(request.param)


@pytest.fixture
def fresh_group():
    made = []

    def make(**kw):
        g = spawn_core_group(CoreGroupSpec(**kw))
        made.append(g)
        return g

    yield make
    for g in made:
        g.close()


_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "skipped", "error"):
        for rep in terminalreporter.stats.get(key, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m:
                continue
            n = int(m.group(1))
            reason = ""
            if key == "skipped" and isinstance(rep.longrepr, tuple):
                reason = rep.longrepr[2]
            prev = outcomes.get(n)
            # a criterion fails if any of its parts fail
            if prev is None or key in ("failed", "error") or prev[0] == "skipped":
                outcomes[n] = (key, m.group(2), reason)
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    label = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}
    for n in sorted(outcomes):
        key, name, reason = outcomes[n]
        line = f"criterion {n:2d} {label[key]:4s} {name.replace('_', ' ')}"
        if reason:
            line += f"  ({reason})"
        terminalreporter.write_line(line)
