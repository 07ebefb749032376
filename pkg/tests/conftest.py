"""Shared fixtures: a session-scoped scenario cache.

Full scenario runs are the expensive unit of work here (seconds each), and
several test modules interrogate the same handful of configurations. Runs
are memoized by their frozen config so each configuration executes once per
session regardless of which test asks first.
"""

from __future__ import annotations

import pytest
from hypothesis import settings

from fedmon.config import RunConfig
from fedmon.sim import RunMetrics, run_scenario

settings.register_profile("suite", deadline=None)
settings.load_profile("suite")

_CACHE: dict[RunConfig, RunMetrics] = {}


def cached_scenario(**kwargs) -> RunMetrics:
    cfg = RunConfig(**kwargs)
    if cfg not in _CACHE:
        _CACHE[cfg] = run_scenario(cfg)
    return _CACHE[cfg]


@pytest.fixture(scope="session")
def scenario():
    """Callable fixture: scenario(seed=3, mode="attack", ...) -> RunMetrics."""
    return cached_scenario
