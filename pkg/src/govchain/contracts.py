"""Action Registry, Policy and Usage Control, and Evaluation contracts.

Proposal evaluation order (first failing check decides the reason):

1. structure: mandatory keys, types, every referenced obs_hash anchored
2. identity: proposing agent whitelisted and equal to the submitting caller
3. policy lookup by action_type (missing policy rejects)
4. RBAC, then sliding-window rate limit, then inclusive safety bounds
   (a bounds failure also emits ``SafetyViolation`` for the agent)
5. optional compliance oracles

Both the proposal and its verdict are committed, whatever the outcome.
Peers endorse a verdict only if re-running steps 1-5 against the same
world state reproduces it.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from . import canonical
from .ledger import (
    MANDATORY_KEYS,
    Ledger,
    LedgerEvent,
    Receipt,
    StructuralError,
    Transaction,
    TxKind,
)
from .policy import (
    ComplianceOracle,
    PolicyStore,
    RateLimiter,
    UnknownActionType,
    check_rbac,
    check_safety_bounds,
)

UNAUTHORIZED = "Unauthorized Agent"
SAFETY = "Safety Bounds Exceeded"
RBAC_DENIED = "RBAC Denied"
RATE_LIMITED = "Rate Limit Exceeded"
UNKNOWN_TYPE = "Unknown Action Type"
STRUCTURAL = "Structural Error"
ORACLE_REJECTED = "Oracle Rejected"

REJECTION_REASONS = frozenset(
    {UNAUTHORIZED, SAFETY, RBAC_DENIED, RATE_LIMITED, UNKNOWN_TYPE, STRUCTURAL, ORACLE_REJECTED}
)

PROPOSAL_KEYS = MANDATORY_KEYS[TxKind.ACTION_PROPOSAL]


class ContractError(Exception):
    pass


class MalformedHash(ContractError):
    pass


class AnchorConflict(ContractError):
    pass


class UnknownActionId(ContractError):
    pass


class NotApproved(ContractError):
    pass


class DuplicateEffect(ContractError):
    pass


class DuplicateActionId(ContractError):
    pass


class Status(str, enum.Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"
    EXECUTED = "Executed"


@dataclass(frozen=True)
class Verdict:
    action_id: str
    status: Status
    reason: str
    evaluated_at_ms: int

    @property
    def approved(self) -> bool:
        return self.status is Status.APPROVED


@dataclass(frozen=True)
class Evaluation:
    status: Status
    reason: str = ""
    violated_param: str | None = None

    @property
    def safety_violation(self) -> bool:
        return self.reason == SAFETY


class ActionRegistry:
    """World state derived from committed and pending transactions."""

    def __init__(self, ledger: Ledger) -> None:
        self.ledger = ledger
        self.anchors: dict[str, tuple[str, Receipt]] = {}
        self.anchored_hashes: set[str] = set()
        self.proposals: dict[str, dict[str, Any]] = {}
        self.submitters: dict[str, str] = {}
        self.verdicts: dict[str, Verdict] = {}
        self.effects: dict[str, Receipt] = {}

    def commit(
        self, kind: TxKind, agent_id: str, payload: Mapping[str, Any], timestamp: int,
        events: Sequence[LedgerEvent] = (),
    ) -> tuple[Transaction, Receipt]:
        tx = self.ledger.new_transaction(kind, agent_id, payload, timestamp=timestamp)
        return tx, self.ledger.append_transaction(tx, events)


class PolicyControl:
    def __init__(self, store: PolicyStore, oracles: Iterable[ComplianceOracle] = (ComplianceOracle(),)) -> None:
        self.store = store
        self.limiter = RateLimiter(store)
        self.oracles = tuple(oracles)

    def evaluate(self, payload: Mapping[str, Any], now_ms: int) -> Evaluation:
        agent_id = payload["agent_id"]
        try:
            rule = self.store.get_policy(payload["action_type"])
        except UnknownActionType:
            return Evaluation(Status.REJECTED, UNKNOWN_TYPE)
        if not check_rbac(self.store.roles_of(agent_id), rule):
            return Evaluation(Status.REJECTED, RBAC_DENIED)
        if not self.limiter.would_allow(agent_id, rule.action_type, now_ms):
            return Evaluation(Status.REJECTED, RATE_LIMITED)
        bounds = check_safety_bounds(payload["params"], rule)
        if not bounds.ok:
            return Evaluation(Status.REJECTED, SAFETY, bounds.violated_param)
        for oracle in self.oracles:
            if not oracle.check(payload):
                return Evaluation(Status.REJECTED, ORACLE_REJECTED)
        return Evaluation(Status.APPROVED)


class EvaluationContract:
    def __init__(self, registry: ActionRegistry, control: PolicyControl) -> None:
        self.registry = registry
        self.control = control

    def structural_defects(self, payload: Mapping[str, Any]) -> list[str]:
        defects = sorted(PROPOSAL_KEYS - set(payload))
        if defects:
            return defects
        if not isinstance(payload["action_id"], str) or not payload["action_id"]:
            defects.append("action_id")
        if not isinstance(payload["action_type"], str):
            defects.append("action_type")
        if not isinstance(payload["params"], dict):
            defects.append("params")
        if not isinstance(payload["agent_id"], str):
            defects.append("agent_id")
        if not isinstance(payload["policy_context"], dict):
            defects.append("policy_context")
        hashes = payload["obs_hashes"]
        if (
            not isinstance(hashes, list)
            or not hashes
            or not all(canonical.is_digest(h) and h in self.registry.anchored_hashes for h in hashes)
        ):
            defects.append("obs_hashes")
        return defects

    def evaluate(self, payload: Mapping[str, Any], submitter: str, now_ms: int) -> Evaluation:
        if self.structural_defects(payload):
            return Evaluation(Status.REJECTED, STRUCTURAL)
        agent_id = payload["agent_id"]
        if agent_id != submitter or not self.control.store.is_whitelisted(agent_id):
            return Evaluation(Status.REJECTED, UNAUTHORIZED)
        return self.control.evaluate(payload, now_ms)


class Contracts:
    """The contract layer, invoked only through the monitor facade."""

    def __init__(
        self,
        ledger: Ledger,
        store: PolicyStore,
        oracles: Iterable[ComplianceOracle] = (ComplianceOracle(),),
    ) -> None:
        self.ledger = ledger
        self.registry = ActionRegistry(ledger)
        self.control = PolicyControl(store, oracles)
        self.evaluation = EvaluationContract(self.registry, self.control)
        self._lock = threading.RLock()
        ledger.register_validator(self.validate_tx)

    @property
    def store(self) -> PolicyStore:
        return self.control.store

    # -- peer-side re-validation ------------------------------------------

    def validate_tx(self, tx: Transaction) -> None:
        reg = self.registry
        p = tx.payload
        if tx.kind is TxKind.OBSERVATION_ANCHOR:
            if not canonical.is_digest(p["obs_hash"]) or not isinstance(p["metadata"], dict):
                raise StructuralError("malformed anchor")
            prior = reg.anchors.get(p["obs_id"])
            if prior is not None and prior[0] != p["obs_hash"]:
                raise StructuralError("conflicting anchor")
        elif tx.kind is TxKind.ACTION_PROPOSAL:
            if p["action_id"] in reg.proposals:
                raise StructuralError("duplicate proposal")
        elif tx.kind is TxKind.ACTION_VERDICT:
            action_id = p["action_id"]
            if action_id not in reg.proposals or action_id in reg.verdicts:
                raise StructuralError("verdict without open proposal")
            again = self.evaluation.evaluate(reg.proposals[action_id], reg.submitters[action_id], tx.timestamp)
            if (again.status.value, again.reason) != (p["verdict"], p["reason"]):
                raise StructuralError("verdict does not reproduce")
        elif tx.kind is TxKind.EFFECT_RECORD:
            verdict = reg.verdicts.get(p["action_id"])
            if verdict is None or not verdict.approved or p["action_id"] in reg.effects:
                raise StructuralError("effect without open approval")

    # -- entry points -------------------------------------------------------

    def register_observation(
        self, caller: str, obs_id: str, obs_hash: str, metadata: Mapping[str, Any]
    ) -> Receipt:
        if not canonical.is_digest(obs_hash):
            raise MalformedHash(f"obs_hash {obs_hash!r} is not a 32-byte lowercase hex digest")
        with self._lock:
            reg = self.registry
            prior = reg.anchors.get(obs_id)
            if prior is not None:
                if prior[0] != obs_hash:
                    raise AnchorConflict(f"obs_id {obs_id!r} already anchored with a different hash")
                return prior[1]
            payload = {"obs_id": obs_id, "obs_hash": obs_hash, "metadata": dict(metadata)}
            _, receipt = reg.commit(TxKind.OBSERVATION_ANCHOR, caller, payload, self.ledger.clock.now_ms)
            reg.anchors[obs_id] = (obs_hash, receipt)
            reg.anchored_hashes.add(obs_hash)
            return receipt

    def submit_action(self, caller: str, proposal: Mapping[str, Any]) -> Verdict:
        payload = canonical.loads(canonical.dumps(proposal))
        if not isinstance(payload, dict):
            raise StructuralError("proposal must be a mapping")
        action_id = payload.get("action_id")
        if not isinstance(action_id, str) or not action_id:
            raise StructuralError("proposal lacks an action_id; nothing to record")
        with self._lock:
            reg = self.registry
            if action_id in reg.proposals:
                raise DuplicateActionId(action_id)
            now = self.ledger.clock.now_ms
            result = self.evaluation.evaluate(payload, caller, now)
            recorded = {key: payload.get(key) for key in PROPOSAL_KEYS} | payload
            reg.commit(TxKind.ACTION_PROPOSAL, caller, recorded, now)
            reg.proposals[action_id] = recorded
            reg.submitters[action_id] = caller

            verdict_payload: dict[str, Any] = {
                "action_id": action_id,
                "verdict": result.status.value,
                "reason": result.reason,
            }
            if result.violated_param is not None:
                verdict_payload["violated_param"] = result.violated_param
            tx = self.ledger.new_transaction(TxKind.ACTION_VERDICT, caller, verdict_payload, timestamp=now)
            events = []
            if result.safety_violation:
                events.append(LedgerEvent("SafetyViolation", str(payload["agent_id"]), result.violated_param or "", now))
            name = "ActionApproved" if result.status is Status.APPROVED else "ActionRejected"
            events.append(LedgerEvent(name, tx.tx_id, result.reason, now))
            self.ledger.append_transaction(tx, events)

            if result.status is Status.APPROVED:
                self.control.limiter.record(payload["agent_id"], payload["action_type"], now)
            verdict = Verdict(action_id, result.status, result.reason, now)
            reg.verdicts[action_id] = verdict
            return verdict

    def check_status(self, action_id: str) -> Status:
        reg = self.registry
        if action_id in reg.effects:
            return Status.EXECUTED
        if action_id in reg.verdicts:
            return reg.verdicts[action_id].status
        if action_id in reg.proposals:
            return Status.PENDING
        raise UnknownActionId(action_id)

    def record_effect(
        self, caller: str, action_id: str, effect_hash: str, summary: str, status_code: int = 200
    ) -> Receipt:
        if not canonical.is_digest(effect_hash):
            raise MalformedHash(f"effect_hash {effect_hash!r} is malformed")
        with self._lock:
            reg = self.registry
            verdict = reg.verdicts.get(action_id)
            if verdict is None or not verdict.approved:
                raise NotApproved(action_id)
            if action_id in reg.effects:
                raise DuplicateEffect(action_id)
            payload = {
                "action_id": action_id,
                "effect_hash": effect_hash,
                "status_code": int(status_code),
                "summary": summary,
            }
            _, receipt = reg.commit(TxKind.EFFECT_RECORD, caller, payload, self.ledger.clock.now_ms)
            reg.effects[action_id] = receipt
            return receipt
