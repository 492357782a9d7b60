import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

from govchain.clock import SimClock  # noqa: E402
from govchain.contracts import Contracts  # noqa: E402
from govchain.ledger import Ledger  # noqa: E402
from govchain.monitor import BlockchainMonitor  # noqa: E402
from govchain.policy import PolicyStore  # noqa: E402

ACCEPTANCE_LINES: list[str] = []

POLICY_DOC = {
    "agents": [
        {"agent_id": "sup", "roles": ["supervisor"], "whitelisted": True},
        {"agent_id": "gk", "roles": ["gatekeeper"], "whitelisted": True},
        {"agent_id": "perc", "roles": ["perception"], "whitelisted": True},
        {"agent_id": "exec", "roles": ["executor"], "whitelisted": True},
        {"agent_id": "rogue", "roles": ["supervisor"], "whitelisted": False},
    ],
    "rules": [
        {
            "action_type": "adjust_signal",
            "param_bounds": {"green_duration": {"min": 10, "max": 120}},
            "allowed_roles": ["supervisor", "gatekeeper"],
            "rate_limit": {"max_count": 3, "window_ms": 60000},
        },
        {
            "action_type": "override_signal",
            "param_bounds": {"green_duration": {"min": 10, "max": 120}},
            "allowed_roles": ["gatekeeper"],
            "rate_limit": {"max_count": 1, "window_ms": 60000},
        },
    ],
}


@pytest.fixture
def policy_doc():
    return POLICY_DOC


@pytest.fixture
def store():
    return PolicyStore.from_dict(POLICY_DOC)


@pytest.fixture
def stack(store):
    """A fresh clock, ledger, contract layer and monitor facade."""
    clock = SimClock()
    ledger = Ledger(clock)
    contracts = Contracts(ledger, store)
    monitor = BlockchainMonitor(contracts)
    return clock, ledger, contracts, monitor


@pytest.fixture
def acceptance_line():
    def record(number: int, ok: bool, text: str) -> None:
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] AC{number:<2d} {text}")

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("AC")[1].split()[0])):
            terminalreporter.write_line(line)
