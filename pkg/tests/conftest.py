from __future__ import annotations

import pytest

from agentgate.gateway.config import load_config
from agentgate.gateway.runtime import GatewayRuntime


class FakeClock:
    """Injectable clock; tests advance it explicitly."""

    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self.now = start

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


@pytest.fixture
def make_runtime(clock):
    """Factory for fresh runtimes over the bundled fixture world."""

    def _make(data_dir=None, use_clock=True) -> GatewayRuntime:
        config = load_config()
        if data_dir is not None:
            config.data_dir = data_dir
        return GatewayRuntime(config, clock=clock if use_clock else __import__("time").time)

    return _make


@pytest.fixture
def runtime(make_runtime) -> GatewayRuntime:
    return make_runtime()


@pytest.fixture
def mgr(runtime):
    return runtime.authenticate("token-mgr-downtown")


@pytest.fixture
def clerk(runtime):
    return runtime.authenticate("token-clerk-downtown")


@pytest.fixture
def hq(runtime):
    return runtime.authenticate("token-hq-ops")


@pytest.fixture
def supervisor(runtime):
    return runtime.authenticate("token-supervisor")
