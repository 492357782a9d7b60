"""Action layer: approved actions become structured requests against
in-process simulated services; responses are hashed and anchored.

Failures (unroutable action -> 501, deadline exceeded -> 504, bad params ->
400) are anchored like successes.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from . import canonical
from .clock import SimClock
from .ledger import Ledger, LedgerEvent, Receipt, TxKind


class ExecutorError(Exception):
    pass


class UnroutableAction(ExecutorError):
    pass


@dataclass(frozen=True)
class Route:
    target_system: str
    operation: str


@dataclass(frozen=True)
class ActionRequest:
    action_id: str
    target_system: str
    operation: str
    params: dict[str, Any]
    issued_at_ms: int


def effect_digest(action_id: str, status_code: int, updated_state: Mapping[str, Any]) -> str:
    return canonical.digest({"action_id": action_id, "status_code": status_code, "updated_state": updated_state})


@dataclass(frozen=True)
class EffectRecord:
    action_id: str
    status_code: int
    latency_ms: float
    updated_state: dict[str, Any]
    effect_hash: str
    summary: str

    @classmethod
    def build(
        cls, action_id: str, status_code: int, latency_ms: float, updated_state: Mapping[str, Any], summary: str
    ) -> "EffectRecord":
        state = canonical.loads(canonical.dumps(updated_state))
        return cls(action_id, status_code, latency_ms, state, effect_digest(action_id, status_code, state), summary)

    def recompute_hash(self) -> str:
        return effect_digest(self.action_id, self.status_code, self.updated_state)


Handler = Callable[[Mapping[str, Any]], dict[str, Any]]


class BadRequest(ValueError):
    pass


def _require(params: Mapping[str, Any], *names: str) -> list[Any]:
    missing = [n for n in names if n not in params]
    if missing:
        raise BadRequest(f"missing params {missing}")
    return [params[n] for n in names]


class SimulatedService:
    """Minimal state machine behind one target system."""

    name = ""

    def __init__(self, latency_ms: tuple[float, float] = (120, 200), deadline_ms: float = 1000) -> None:
        self.latency_ms = latency_ms
        self.deadline_ms = deadline_ms
        self.state: dict[str, Any] = {}
        self.calls = 0

    def operations(self) -> dict[str, Handler]:
        raise NotImplementedError

    def invoke(self, operation: str, params: Mapping[str, Any]) -> tuple[int, dict[str, Any]]:
        self.calls += 1
        handler = self.operations().get(operation)
        if handler is None:
            return 501, {}
        try:
            return 200, handler(params)
        except BadRequest as exc:
            return 400, {"error": str(exc)}


class TrafficService(SimulatedService):
    name = "traffic"

    def operations(self) -> dict[str, Handler]:
        return {"set_green_duration": self._set_green}

    def _set_green(self, params: Mapping[str, Any]) -> dict[str, Any]:
        approach, green = _require(params, "approach", "green_duration")
        self.state.setdefault("green_duration", {})[approach] = green
        return {"approach": approach, "green_duration": green}


class InventoryService(SimulatedService):
    name = "inventory"

    def operations(self) -> dict[str, Handler]:
        return {"create_order": self._create_order}

    def _create_order(self, params: Mapping[str, Any]) -> dict[str, Any]:
        sku, quantity = _require(params, "sku", "quantity")
        self.state["pending_orders"] = self.state.get("pending_orders", 0) + 1
        ordered = self.state.setdefault("ordered_quantity", {})
        ordered[sku] = ordered.get(sku, 0) + quantity
        return {"sku": sku, "quantity": quantity, "pending_orders": self.state["pending_orders"]}


class HealthcareService(SimulatedService):
    name = "healthcare"

    def operations(self) -> dict[str, Handler]:
        return {
            "set_oxygen_flow": self._oxygen,
            "dispatch_alert": self._alert,
            "administer_medication": self._administer,
        }

    def _patient(self, patient: str) -> dict[str, Any]:
        return self.state.setdefault("patients", {}).setdefault(patient, {"alerts": 0, "doses": 0})

    def _oxygen(self, params: Mapping[str, Any]) -> dict[str, Any]:
        patient, flow = _require(params, "patient", "flow_lpm")
        self._patient(patient)["flow_lpm"] = flow
        return {"patient": patient, "flow_lpm": flow}

    def _alert(self, params: Mapping[str, Any]) -> dict[str, Any]:
        patient, severity = _require(params, "patient", "severity")
        rec = self._patient(patient)
        rec["alerts"] += 1
        return {"patient": patient, "severity": severity, "alerts": rec["alerts"]}

    def _administer(self, params: Mapping[str, Any]) -> dict[str, Any]:
        patient, dose = _require(params, "patient", "drug_dose")
        rec = self._patient(patient)
        rec["doses"] += 1
        rec["last_dose"] = dose
        return {"patient": patient, "drug_dose": dose, "doses": rec["doses"]}


SERVICE_TYPES: dict[str, type[SimulatedService]] = {
    cls.name: cls for cls in (TrafficService, InventoryService, HealthcareService)
}


def build_services(spec: Mapping[str, Mapping[str, Any]]) -> dict[str, SimulatedService]:
    services = {}
    for name, cfg in spec.items():
        latency = cfg.get("latency_ms", {"min": 120, "max": 200})
        services[name] = SERVICE_TYPES[name](
            latency_ms=(latency["min"], latency["max"]), deadline_ms=cfg.get("deadline_ms", 1000)
        )
    return services


class Executor:
    """Consumes approvals and drives the simulated services."""

    def __init__(
        self,
        routing: Mapping[str, Route],
        services: Mapping[str, SimulatedService],
        *,
        clock: SimClock | None = None,
        seed: int | str = 0,
        ledger: Ledger | None = None,
        monitor: Any = None,
        agent_id: str = "executor",
    ) -> None:
        self.routing = dict(routing)
        self.services = dict(services)
        self.clock = clock or SimClock()
        self.rng = random.Random(f"{seed}:executor")
        self.ledger = ledger
        self.monitor = monitor
        self.agent_id = agent_id
        self.timeouts = 0
        self.effects: list[EffectRecord] = []

    def build_request(self, action_id: str, action_type: str, params: Mapping[str, Any]) -> ActionRequest:
        route = self.routing.get(action_type)
        if route is None:
            raise UnroutableAction(f"no route for action type {action_type!r}")
        return ActionRequest(action_id, route.target_system, route.operation, dict(params), self.clock.now_ms)

    def on_approval(self, event: LedgerEvent) -> ActionRequest:
        if event.name != "ActionApproved" or self.ledger is None:
            raise ExecutorError("on_approval needs an ActionApproved event and a ledger")
        verdicts = self.ledger.query(by_tx_id=event.subject)
        if not verdicts or verdicts[0].payload.get("verdict") != "Approved":
            raise ExecutorError(f"event {event.subject} does not reference a committed approval")
        action_id = verdicts[0].payload["action_id"]
        proposal = next(
            tx for tx in self.ledger.query(by_action_id=action_id) if tx.kind is TxKind.ACTION_PROPOSAL
        )
        return self.build_request(action_id, proposal.payload["action_type"], proposal.payload["params"])

    def execute(self, request: ActionRequest) -> EffectRecord:
        label = f"{request.target_system}.{request.operation}"
        service = self.services.get(request.target_system)
        if service is None:
            return self._record(EffectRecord.build(request.action_id, 501, 0, {}, f"{label} -> 501 no such service"))
        latency = int(round(self.rng.uniform(*service.latency_ms)))
        if latency > service.deadline_ms:
            self.timeouts += 1
            self.clock.advance(service.deadline_ms)
            return self._record(
                EffectRecord.build(request.action_id, 504, service.deadline_ms, {}, f"{label} -> 504 timeout")
            )
        self.clock.advance(latency)
        status, state = service.invoke(request.operation, request.params)
        return self._record(EffectRecord.build(request.action_id, status, latency, state, f"{label} -> {status}"))

    def _record(self, effect: EffectRecord) -> EffectRecord:
        self.effects.append(effect)
        return effect

    def anchor_effect(self, effect: EffectRecord) -> Receipt:
        if self.monitor is None:
            raise ExecutorError("no monitor to anchor effects through")
        return self.monitor.log_effect(
            self.agent_id, effect.action_id, effect.effect_hash, effect.summary, status_code=effect.status_code
        )

    def unroutable_effect(self, action_id: str, exc: UnroutableAction) -> EffectRecord:
        return self._record(EffectRecord.build(action_id, 501, 0, {}, f"unroutable -> 501 {exc}"))

    def handle(self, event: LedgerEvent) -> EffectRecord:
        try:
            request = self.on_approval(event)
        except UnroutableAction as exc:
            action_id = self.ledger.query(by_tx_id=event.subject)[0].payload["action_id"]
            effect = self.unroutable_effect(action_id, exc)
        else:
            effect = self.execute(request)
        self.anchor_effect(effect)
        return effect

    def process(self, events: Iterable[LedgerEvent]) -> list[EffectRecord]:
        return [self.handle(e) for e in events]

    def snapshot(self) -> dict[str, Any]:
        return {name: svc.state for name, svc in sorted(self.services.items())}

    def dump_snapshot(self, path: str | Path) -> None:
        Path(path).write_text(canonical.dumps(self.snapshot()) + "\n", encoding="utf-8")
