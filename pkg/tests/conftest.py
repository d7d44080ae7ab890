import hashlib

import numpy as np
import pytest

from dpus.sim import CorridorConfig


def params_digest(params) -> str:
    h = hashlib.sha256()
    for arr in params.flat_arrays():
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def recording(cls):
    """Subclass of a learner that stores per-agent parameter digests after
    every update (``trace_``), so two runs can be compared update by update."""

    class Recording(cls):
        def _setup(self, env, replay_seed):
            self.trace_ = []
            super()._setup(env, replay_seed)

        def _update(self, full):
            loss = super()._update(full)
            if hasattr(self, "network_"):
                p = self.network_.online
                self.trace_.append(tuple(params_digest(p.agent_view(r))
                                         for r in range(p.n_agents)))
            else:
                self.trace_.append(tuple(params_digest(n.online) for n in self.networks_))
            return loss

    Recording.__name__ = cls.__name__
    return Recording


@pytest.fixture
def corridor():
    return CorridorConfig()


@pytest.fixture
def no_spill_corridor():
    # no through traffic: connecting links stay empty
    return CorridorConfig(mainline_arrival_rate=0.0, demand_multiplier=3.0)


@pytest.fixture
def small_train():
    return dict(episodes=3, horizon=20, buffer_capacity=500, batch_size=8,
                target_sync_period=10, hidden_sizes=(16,))


ACCEPTANCE_LINES = []


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Record one acceptance line (printed in the terminal summary) and assert."""
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
