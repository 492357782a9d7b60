"""Blockchain Monitor Module: the tool surface agents use to reach the ledger.

Role gates here are independent of the on-chain whitelist: an agent that
passes the facade can still be rejected by the evaluation contract.
"""

from __future__ import annotations

import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

from . import canonical
from .contracts import Contracts, Status, Verdict
from .ledger import Receipt

SUBMIT_ROLES = frozenset({"supervisor", "gatekeeper"})
EFFECT_ROLES = frozenset({"executor"})
TOOLS = ("log_observation", "submit_action", "check_status", "log_effect")


class MonitorError(Exception):
    pass


class UnregisteredCaller(MonitorError):
    pass


class ToolAccessDenied(MonitorError):
    pass


@dataclass(frozen=True)
class ToolCallRecord:
    caller_agent_id: str
    tool: str
    allowed: bool
    timestamp_ms: int


class BlockchainMonitor:
    def __init__(self, contracts: Contracts, *, log_path: str | Path | None = None) -> None:
        self.contracts = contracts
        self.records: list[ToolCallRecord] = []
        self.log_path = Path(log_path) if log_path is not None else None
        self._lock = threading.Lock()
        if self.log_path is not None:
            self.log_path.write_text("", encoding="utf-8")

    def _record(self, caller: str, tool: str, allowed: bool) -> None:
        rec = ToolCallRecord(caller, tool, allowed, self.contracts.ledger.clock.now_ms)
        with self._lock:
            self.records.append(rec)
            if self.log_path is not None:
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(canonical.dumps(asdict(rec)) + "\n")

    def _gate(self, caller: str, tool: str, required: frozenset[str] | None = None) -> None:
        store = self.contracts.store
        if not store.is_registered(caller):
            self._record(caller, tool, False)
            raise UnregisteredCaller(caller)
        if required is not None and required.isdisjoint(store.roles_of(caller)):
            self._record(caller, tool, False)
            raise ToolAccessDenied(f"{caller} may not call {tool}")
        self._record(caller, tool, True)

    def log_observation(self, caller: str, obs_id: str, obs_hash: str, metadata: Mapping[str, Any]) -> Receipt:
        self._gate(caller, "log_observation")
        return self.contracts.register_observation(caller, obs_id, obs_hash, metadata)

    def submit_action(self, caller: str, proposal: Any) -> Verdict:
        self._gate(caller, "submit_action", SUBMIT_ROLES)
        payload = proposal.to_payload() if hasattr(proposal, "to_payload") else proposal
        return self.contracts.submit_action(caller, payload)

    def check_status(self, caller: str, action_id: str) -> Status:
        self._gate(caller, "check_status")
        return self.contracts.check_status(action_id)

    def log_effect(
        self, caller: str, action_id: str, effect_hash: str, summary: str, status_code: int = 200
    ) -> Receipt:
        self._gate(caller, "log_effect", EFFECT_ROLES)
        return self.contracts.record_effect(caller, action_id, effect_hash, summary, status_code)

    def denied(self) -> list[ToolCallRecord]:
        return [r for r in self.records if not r.allowed]
