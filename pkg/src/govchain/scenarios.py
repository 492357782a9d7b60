"""Evaluation scenarios: seeded observation generators, rule tables, policies
and unsafe-action injections, plus the end-to-end pipeline driver.

One tick runs perception -> conceptualization -> (ledger evaluation) ->
execution -> effect anchoring on the shared simulated clock. Subjects
(patients, SKUs, approaches, operator requests) are processed round-robin in
sorted order, so a run is a pure function of its config and seed.
"""

from __future__ import annotations

import dataclasses
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import canonical
from .agents import (
    AnchorFailure,
    CandidateAction,
    Observation,
    RuleBasedPlanner,
    RuleSpec,
    group_by_subject,
    perceive,
    propose,
    select_action,
)
from .bench import STAGES, LatencyModel
from .clock import SimClock
from .contracts import (
    ContractError,
    Contracts,
    RATE_LIMITED,
    SAFETY,
    STRUCTURAL,
    Status,
    UNAUTHORIZED,
)
from .executor import Executor, Route, SERVICE_TYPES, UnroutableAction, build_services
from .ledger import Ledger, LedgerError
from .monitor import BlockchainMonitor, MonitorError, SUBMIT_ROLES
from .policy import (
    AgentRegistryEntry,
    ComplianceOracle,
    PolicyError,
    PolicyRule,
    PolicyStore,
    check_safety_bounds,
)

SCENARIO_NAMES = ("healthcare", "inventory", "traffic")
PIPELINE_ROLES = ("perception", "planner", "supervisor", "gatekeeper", "executor")

OUT_OF_BOUNDS = "out_of_bounds_param"
UNAUTHORIZED_AGENT = "unauthorized_agent"
RATE_FLOOD = "rate_flood"
MALFORMED = "malformed_proposal"

EXPECTED_REASON = {
    OUT_OF_BOUNDS: SAFETY,
    UNAUTHORIZED_AGENT: UNAUTHORIZED,
    RATE_FLOOD: RATE_LIMITED,
    MALFORMED: STRUCTURAL,
}
INJECTION_KINDS = tuple(EXPECTED_REASON)
DEFECTS = ("unanchored_obs", "missing_key")


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    pass


class DanglingReference(ScenarioError):
    pass


class InvalidInjection(ScenarioError):
    pass


@dataclass(frozen=True)
class UnsafeInjection:
    """An operator request the policy must refuse.

    ``details`` carries ``action_type`` and ``params``, plus ``agent_id``
    (submitter, defaults to the gatekeeper), ``count`` for floods, and
    ``defect``/``missing_key`` for malformed proposals.
    """

    tick: int
    kind: str
    details: Mapping[str, Any]

    @property
    def action_type(self) -> str:
        return self.details["action_type"]

    @property
    def params(self) -> dict[str, Any]:
        return dict(self.details.get("params", {}))

    @property
    def count(self) -> int:
        return int(self.details.get("count", 1))

    @property
    def expected_reason(self) -> str:
        return EXPECTED_REASON[self.kind]

    def to_dict(self) -> dict[str, Any]:
        return {"tick": self.tick, "kind": self.kind, "details": dict(self.details)}


@dataclass(frozen=True)
class MetricSpec:
    nominal: tuple[int, int]
    anomaly: tuple[int, int]
    anomaly_prob: float

    def to_dict(self) -> dict[str, Any]:
        return {"nominal": list(self.nominal), "anomaly": list(self.anomaly), "anomaly_prob": self.anomaly_prob}


@dataclass(frozen=True)
class GeneratorSpec:
    source: str
    sensitivity: str
    subjects: tuple[str, ...]
    metrics: Mapping[str, MetricSpec]

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "sensitivity": self.sensitivity,
            "subjects": list(self.subjects),
            "metrics": {k: m.to_dict() for k, m in self.metrics.items()},
        }


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    seed: int
    ticks: int
    agents: tuple[AgentRegistryEntry, ...]
    policy: tuple[PolicyRule, ...]
    rules: tuple[RuleSpec, ...]
    routing: Mapping[str, Route]
    injections: tuple[UnsafeInjection, ...]
    pipeline: Mapping[str, str]
    generator: GeneratorSpec
    services: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    tick_interval_ms: int = 5000
    latency: LatencyModel = field(default_factory=LatencyModel)

    def policy_store(self) -> PolicyStore:
        return PolicyStore(self.agents, self.policy)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return _replace(self, seed=seed)

    def without_injections(self) -> "ScenarioConfig":
        return _replace(self, injections=())

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "seed": self.seed,
            "ticks": self.ticks,
            "tick_interval_ms": self.tick_interval_ms,
            "agents": [a.to_dict() for a in self.agents],
            "policy": [r.to_dict() for r in self.policy],
            "rules": [r.to_dict() for r in self.rules],
            "routing": {k: {"target_system": r.target_system, "operation": r.operation} for k, r in self.routing.items()},
            "injections": [i.to_dict() for i in self.injections],
            "pipeline": dict(self.pipeline),
            "generator": self.generator.to_dict(),
            "services": {k: dict(v) for k, v in self.services.items()},
            "latency": self.latency.to_dict(),
        }

    def digest(self) -> str:
        return canonical.digest(self.to_dict())


def _replace(config: ScenarioConfig, **changes: Any) -> ScenarioConfig:
    return dataclasses.replace(config, **changes)


# -- loading -----------------------------------------------------------------


def bundled_path(name: str) -> Path:
    if name not in SCENARIO_NAMES:
        raise ParseError(f"no bundled scenario named {name!r}")
    return Path(str(resources.files("govchain") / "data" / f"{name}.json"))


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load and cross-check a scenario file. A bare bundled name also works."""
    p = Path(path)
    if not p.exists() and str(path) in SCENARIO_NAMES:
        p = bundled_path(str(path))
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ParseError(f"scenario file not found: {p}") from exc
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot parse scenario {p}: {exc}") from exc
    return scenario_from_dict(data)


def scenario_from_dict(data: Any) -> ScenarioConfig:
    if not isinstance(data, Mapping):
        raise ParseError("scenario document must be a mapping")
    try:
        gen = data["generator"]
        generator = GeneratorSpec(
            source=gen["source"],
            sensitivity=gen.get("sensitivity", "normal"),
            subjects=tuple(gen["subjects"]),
            metrics={
                k: MetricSpec(tuple(m["nominal"]), tuple(m["anomaly"]), float(m["anomaly_prob"]))
                for k, m in sorted(gen["metrics"].items())
            },
        )
        config = ScenarioConfig(
            name=data["name"],
            seed=int(data["seed"]),
            ticks=int(data["ticks"]),
            tick_interval_ms=int(data.get("tick_interval_ms", 5000)),
            agents=tuple(AgentRegistryEntry.from_dict(a) for a in data["agents"]),
            policy=tuple(PolicyRule.from_dict(r) for r in data["policy"]),
            rules=tuple(RuleSpec.from_dict(r) for r in data["rules"]),
            routing={k: Route(v["target_system"], v["operation"]) for k, v in data["routing"].items()},
            injections=tuple(
                UnsafeInjection(int(i["tick"]), i["kind"], dict(i.get("details", {}))) for i in data.get("injections", [])
            ),
            pipeline=dict(data["pipeline"]),
            generator=generator,
            services={k: dict(v) for k, v in data.get("services", {}).items()},
            latency=LatencyModel.from_dict(data["latency"]) if "latency" in data else LatencyModel(),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ParseError(f"malformed scenario: {exc!r}") from exc
    validate(config)
    return config


def validate(config: ScenarioConfig) -> None:
    if config.name not in SCENARIO_NAMES:
        raise ParseError(f"unknown scenario name {config.name!r}")
    if config.ticks < 1 or config.tick_interval_ms < 1:
        raise ParseError("ticks and tick_interval_ms must be positive")
    if not (0 <= config.seed < 2**64):
        raise ParseError("seed must be a 64-bit unsigned integer")
    try:
        store = config.policy_store()
    except PolicyError as exc:
        raise ParseError(str(exc)) from exc

    missing_roles = [r for r in PIPELINE_ROLES if r not in config.pipeline]
    if missing_roles:
        raise ParseError(f"pipeline lacks {missing_roles}")
    for role, agent in config.pipeline.items():
        if not store.is_registered(agent):
            raise DanglingReference(f"pipeline {role} agent {agent!r} is not registered")

    def check_action_type(action_type: str, where: str) -> None:
        if action_type not in store.action_types:
            raise DanglingReference(f"{where} uses action type {action_type!r} with no policy rule")
        route = config.routing.get(action_type)
        if route is None:
            raise DanglingReference(f"{where} uses action type {action_type!r} with no route")
        if route.target_system not in config.services:
            raise DanglingReference(f"route for {action_type!r} targets unknown service {route.target_system!r}")

    for name in config.services:
        if name not in SERVICE_TYPES:
            raise DanglingReference(f"unknown service {name!r}")
    for rule in config.rules:
        if rule.mode == "passthrough":
            continue
        check_action_type(rule.action_type, f"rule {rule.name!r}")
        if rule.metric not in config.generator.metrics:
            raise DanglingReference(f"rule {rule.name!r} reads unknown metric {rule.metric!r}")

    has_passthrough = any(r.mode == "passthrough" and r.source == "user_request" for r in config.rules)
    for k, inj in enumerate(config.injections):
        where = f"injection {k}"
        if inj.kind not in INJECTION_KINDS:
            raise InvalidInjection(f"{where}: unknown kind {inj.kind!r}")
        if not (0 <= inj.tick < config.ticks):
            raise InvalidInjection(f"{where}: tick {inj.tick} outside [0, {config.ticks})")
        if not has_passthrough:
            raise DanglingReference(f"{where}: no passthrough rule turns operator requests into actions")
        if "action_type" not in inj.details:
            raise InvalidInjection(f"{where}: details need an action_type")
        check_action_type(inj.action_type, where)
        submitter = injection_submitter(config, inj)
        if not store.is_registered(submitter):
            raise DanglingReference(f"{where}: submitter {submitter!r} is not registered")
        if SUBMIT_ROLES.isdisjoint(store.roles_of(submitter)):
            raise InvalidInjection(f"{where}: submitter {submitter!r} cannot reach submit_action")
        rule = store.get_policy(inj.action_type)
        bounds_ok = check_safety_bounds(inj.params, rule).ok
        if inj.kind == OUT_OF_BOUNDS and bounds_ok:
            raise InvalidInjection(f"{where}: params are within bounds")
        if inj.kind != OUT_OF_BOUNDS and not bounds_ok:
            raise InvalidInjection(f"{where}: params must be in bounds so only the {inj.kind} defect applies")
        if inj.kind == UNAUTHORIZED_AGENT and store.is_whitelisted(submitter):
            raise InvalidInjection(f"{where}: submitter {submitter!r} is whitelisted")
        if inj.kind != UNAUTHORIZED_AGENT and submitter != config.pipeline["gatekeeper"]:
            raise InvalidInjection(f"{where}: only unauthorized_agent injections may override the submitter")
        if inj.kind == RATE_FLOOD and inj.count <= rule.rate_limit.max_count:
            raise InvalidInjection(f"{where}: count {inj.count} does not exceed max_count {rule.rate_limit.max_count}")
        if inj.kind != RATE_FLOOD and inj.count != 1:
            raise InvalidInjection(f"{where}: only floods repeat")
        if inj.kind == MALFORMED:
            defect = inj.details.get("defect")
            if defect not in DEFECTS:
                raise InvalidInjection(f"{where}: defect must be one of {DEFECTS}")
            if defect == "missing_key" and inj.details.get("missing_key") not in ("policy_context", "agent_id"):
                raise InvalidInjection(f"{where}: missing_key must name policy_context or agent_id")


def injection_submitter(config: ScenarioConfig, inj: UnsafeInjection) -> str:
    return inj.details.get("agent_id", config.pipeline["gatekeeper"])


def load_evaluation(paths: Iterable[str | Path] | None = None) -> list[ScenarioConfig]:
    return [load_scenario(p) for p in (paths if paths is not None else SCENARIO_NAMES)]


# -- observation generation --------------------------------------------------


@dataclass(frozen=True)
class InjectionTag:
    index: int
    request: int
    kind: str
    flagged: bool
    expected_reason: str


def _tick_start(config: ScenarioConfig, tick: int) -> int:
    return tick * config.tick_interval_ms


def injection_requests(config: ScenarioConfig, tick: int) -> list[tuple[dict[str, Any], InjectionTag]]:
    """Raw operator requests for the injections scheduled at ``tick``, with bookkeeping tags.

    For a flood only the requests past the rate limit are flagged as unsafe.
    """
    out = []
    start = _tick_start(config, tick)
    store = None
    for k, inj in enumerate(config.injections):
        if inj.tick != tick:
            continue
        if inj.kind == RATE_FLOOD:
            store = store or config.policy_store()
            limit = store.get_policy(inj.action_type).rate_limit.max_count
        else:
            limit = 0
        for j in range(inj.count):
            raw = {
                "obs_id": f"t{tick:04d}-req{k:02d}-{j}",
                "source": "user_request",
                "payload": {
                    "request": inj.action_type,
                    "params": inj.params,
                    "submitter": injection_submitter(config, inj),
                },
                "timestamp_ms": start + 1000 + k * 10 + j,
                "sensitivity": "high",
            }
            out.append((raw, InjectionTag(k, j, inj.kind, j >= limit, inj.expected_reason)))
    return out


def generate_tick(config: ScenarioConfig, tick: int) -> list[dict[str, Any]]:
    if not (0 <= tick < config.ticks):
        raise ValueError(f"tick {tick} outside [0, {config.ticks})")
    rng = random.Random(f"{config.seed}:{config.name}:{tick}")
    gen = config.generator
    start = _tick_start(config, tick)
    raws: list[dict[str, Any]] = []
    for subject in gen.subjects:
        payload: dict[str, Any] = {"subject": subject}
        for metric, spec in gen.metrics.items():
            lo, hi = spec.anomaly if rng.random() < spec.anomaly_prob else spec.nominal
            payload[metric] = rng.randint(lo, hi)
        raws.append(
            {
                "obs_id": f"t{tick:04d}-{subject}",
                "source": gen.source,
                "payload": payload,
                "timestamp_ms": start + rng.randint(0, 999),
                "sensitivity": gen.sensitivity,
            }
        )
    raws.extend(raw for raw, _ in injection_requests(config, tick))
    return raws


# -- pipeline ----------------------------------------------------------------


@dataclass
class InjectionOutcome:
    index: int
    tick: int
    kind: str
    expected_reason: str
    flagged_actions: list[str] = field(default_factory=list)
    reasons: list[str] = field(default_factory=list)
    executed: list[str] = field(default_factory=list)

    @property
    def blocked(self) -> bool:
        return bool(self.flagged_actions) and not self.executed and len(self.reasons) == len(self.flagged_actions)

    @property
    def reason_ok(self) -> bool:
        return self.blocked and all(r == self.expected_reason for r in self.reasons)

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "tick": self.tick,
            "kind": self.kind,
            "expected_reason": self.expected_reason,
            "flagged_actions": list(self.flagged_actions),
            "reasons": list(self.reasons),
            "executed": list(self.executed),
            "blocked": self.blocked,
            "reason_ok": self.reason_ok,
        }


@dataclass
class RunReport:
    scenario: str
    governed: bool
    seed: int
    ticks: int
    config_digest: str
    observations: int = 0
    dropped: int = 0
    anchors: int = 0
    candidates: int = 0
    proposals: int = 0
    approvals: int = 0
    rejections: dict[str, int] = field(default_factory=dict)
    executions: int = 0
    effects_by_status: dict[str, int] = field(default_factory=dict)
    facade_denied: int = 0
    injections: list[InjectionOutcome] = field(default_factory=list)
    stage_latency_ms: dict[str, list[float]] = field(default_factory=dict)
    executed_actions: list[dict[str, Any]] = field(default_factory=list)
    ledger_height: int = 0
    ledger_tip: str = ""
    sim_end_ms: int = 0

    @property
    def blocked_unsafe(self) -> int:
        return sum(o.blocked for o in self.injections)

    @property
    def unsafe_executed(self) -> int:
        return sum(bool(o.executed) for o in self.injections)

    def executed_multiset(self) -> Counter:
        return Counter(canonical.dumps([a["action_id"], a["action_type"], a["params"]]) for a in self.executed_actions)

    def stage_means_ms(self) -> dict[str, float]:
        return {
            k: round(sum(v) / len(v), 3) for k, v in self.stage_latency_ms.items() if v
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "governed": self.governed,
            "seed": self.seed,
            "ticks": self.ticks,
            "config_digest": self.config_digest,
            "observations": self.observations,
            "dropped": self.dropped,
            "anchors": self.anchors,
            "candidates": self.candidates,
            "proposals": self.proposals,
            "approvals": self.approvals,
            "rejections": dict(sorted(self.rejections.items())),
            "executions": self.executions,
            "effects_by_status": dict(sorted(self.effects_by_status.items())),
            "facade_denied": self.facade_denied,
            "blocked_unsafe": self.blocked_unsafe,
            "unsafe_executed": self.unsafe_executed,
            "injections": [o.to_dict() for o in self.injections],
            "stage_latency_mean_ms": self.stage_means_ms(),
            "executed_actions": list(self.executed_actions),
            "ledger_height": self.ledger_height,
            "ledger_tip": self.ledger_tip,
            "sim_end_ms": self.sim_end_ms,
        }

    def to_canonical(self) -> str:
        return canonical.dumps(self.to_dict())

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_canonical() + "\n", encoding="utf-8")

    def to_text(self) -> str:
        mode = "governed" if self.governed else "baseline"
        lines = [
            f"scenario {self.scenario} ({mode}, seed {self.seed}, {self.ticks} ticks)",
            f"  observations      {self.observations} (dropped {self.dropped}, anchored {self.anchors})",
            f"  candidates        {self.candidates}",
            f"  proposals         {self.proposals}",
            f"  approvals         {self.approvals}",
            f"  executions        {self.executions}",
        ]
        for reason, n in sorted(self.rejections.items()):
            lines.append(f"  rejected          {n:<4d} {reason}")
        total = len(self.injections)
        lines.append(f"  unsafe injected   {total}")
        lines.append(f"  unsafe blocked    {self.blocked_unsafe}")
        lines.append(f"  unsafe executed   {self.unsafe_executed}")
        for stage, mean in self.stage_means_ms().items():
            lines.append(f"  {stage + ' (ms)':<17s} {mean:.1f}")
        if self.governed:
            lines.append(f"  ledger height     {self.ledger_height}")
        return "\n".join(lines)


@dataclass
class RunResult:
    report: RunReport
    ledger: Ledger | None
    contracts: Contracts | None
    monitor: BlockchainMonitor | None
    executor: Executor


def _apply_defect(payload: dict[str, Any], details: Mapping[str, Any]) -> None:
    if details["defect"] == "unanchored_obs":
        fake = canonical.digest({"fabricated": payload["action_id"]})
        payload["obs_hashes"] = list(payload["obs_hashes"]) + [fake]
    else:
        payload.pop(details["missing_key"], None)


def run_scenario(
    config: ScenarioConfig,
    governed: bool = True,
    *,
    ledger_path: str | Path | None = None,
    tool_log_path: str | Path | None = None,
    oracles: Sequence[ComplianceOracle] = (ComplianceOracle(),),
) -> RunResult:
    clock = SimClock()
    store = config.policy_store()
    pipeline = config.pipeline
    report = RunReport(config.name, governed, config.seed, config.ticks, config.digest())
    report.stage_latency_ms = {s: [] for s in STAGES if governed or s != "blockchain"}
    lat_rng = random.Random(f"{config.seed}:{config.name}:latency")

    ledger = contracts = monitor = None
    if governed:
        ledger = Ledger(clock, log_path=ledger_path)
        contracts = Contracts(ledger, store, oracles)
        monitor = BlockchainMonitor(contracts, log_path=tool_log_path)
        approvals = ledger.subscribe({"ActionApproved"})
    executor = Executor(
        config.routing,
        build_services(config.services),
        clock=clock,
        seed=f"{config.seed}:{config.name}",
        ledger=ledger,
        monitor=monitor,
        agent_id=pipeline["executor"],
    )
    planner = RuleBasedPlanner(config.rules, store)
    outcomes = {k: InjectionOutcome(k, inj.tick, inj.kind, inj.expected_reason) for k, inj in enumerate(config.injections)}
    report.injections = list(outcomes.values())
    selected_by_id: dict[str, CandidateAction] = {}
    flagged: dict[str, InjectionTag] = {}

    def anchor_as(caller: str):
        def anchor(obs: Observation, tick: int) -> None:
            try:
                monitor.log_observation(caller, obs.obs_id, obs.obs_hash, obs.metadata(tick))
            except (MonitorError, ContractError, LedgerError) as exc:
                raise AnchorFailure(str(exc)) from exc
            report.anchors += 1

        return anchor

    def note_execution(action_id: str, status_code: int) -> None:
        cand = selected_by_id[action_id]
        report.executions += 1
        key = str(status_code)
        report.effects_by_status[key] = report.effects_by_status.get(key, 0) + 1
        report.executed_actions.append(
            {"action_id": action_id, "action_type": cand.action_type, "params": cand.params, "status_code": status_code}
        )
        report.stage_latency_ms["execution"].append(float(executor.effects[-1].latency_ms))
        tag = flagged.get(action_id)
        if tag is not None:
            outcomes[tag.index].executed.append(action_id)

    for tick in range(config.ticks):
        clock.advance_to(_tick_start(config, tick))
        raws = generate_tick(config, tick)
        tags = {raw["obs_id"]: tag for raw, tag in injection_requests(config, tick)}
        stage = config.latency.sample_ms(lat_rng)

        clock.advance(stage["perception"])
        report.stage_latency_ms["perception"].append(stage["perception"])
        batch = perceive(
            raws,
            tick,
            window=(_tick_start(config, tick), _tick_start(config, tick + 1)),
            anchor=anchor_as(pipeline["perception"]) if governed else None,
        )
        report.observations += len(batch)
        report.dropped += batch.dropped

        clock.advance(stage["reasoning"])
        report.stage_latency_ms["reasoning"].append(stage["reasoning"])
        candidates = planner.plan(batch)
        report.candidates += len(candidates)

        to_execute: list[CandidateAction] = []
        for subject, group in group_by_subject(candidates).items():
            selected = select_action(group)
            trigger = batch.get(selected.trigger_obs[0])
            submitter = trigger.payload.get("submitter", pipeline["supervisor"])
            tag = tags.get(trigger.obs_id)
            selected_by_id[selected.action_id] = selected
            if tag is not None and tag.flagged:
                flagged[selected.action_id] = tag
                outcomes[tag.index].flagged_actions.append(selected.action_id)
            report.proposals += 1
            # drawn in both modes so the latency stream stays aligned
            chain_ms = config.latency.sample_ms(lat_rng)["blockchain"]
            if not governed:
                to_execute.append(selected)
                continue
            try:
                proposal = propose(
                    selected, batch, submitter, store.roles_of(submitter), anchor=anchor_as(submitter)
                )
            except AnchorFailure:
                continue
            payload = proposal.to_payload()
            payload["policy_context"]["oracles"] = {o.name: "pass" if o.check(payload) else "fail" for o in oracles}
            if tag is not None and tag.kind == MALFORMED:
                _apply_defect(payload, config.injections[tag.index].details)
            clock.advance(chain_ms)
            report.stage_latency_ms["blockchain"].append(chain_ms)
            try:
                verdict = monitor.submit_action(submitter, payload)
            except MonitorError:
                report.facade_denied += 1
                continue
            if verdict.status is Status.APPROVED:
                report.approvals += 1
            else:
                report.rejections[verdict.reason] = report.rejections.get(verdict.reason, 0) + 1
                if tag is not None and tag.flagged:
                    outcomes[tag.index].reasons.append(verdict.reason)

        if governed:
            ledger.flush()
            for event in approvals.drain():
                effect = executor.handle(event)
                note_execution(effect.action_id, effect.status_code)
            ledger.flush()
        else:
            for selected in to_execute:
                try:
                    request = executor.build_request(selected.action_id, selected.action_type, selected.params)
                except UnroutableAction as exc:
                    effect = executor.unroutable_effect(selected.action_id, exc)
                else:
                    effect = executor.execute(request)
                note_execution(effect.action_id, effect.status_code)

    if governed:
        ledger.flush()
        report.ledger_height = ledger.height
        report.ledger_tip = ledger.blocks[-1].block_hash
    report.sim_end_ms = clock.now_ms
    return RunResult(report, ledger, contracts, monitor, executor)


def write_outputs(result: RunResult, out_dir: str | Path) -> dict[str, Path]:
    """Persist a run: report (canonical + text), service snapshot, ledger log if governed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    r = result.report
    stem = f"{r.scenario}-{'governed' if r.governed else 'baseline'}"
    paths = {"report": out / f"{stem}.report.json", "table": out / f"{stem}.report.txt", "state": out / f"{stem}.state.json"}
    r.write(paths["report"])
    paths["table"].write_text(r.to_text() + "\n", encoding="utf-8")
    result.executor.dump_snapshot(paths["state"])
    if result.ledger is not None:
        paths["ledger"] = out / f"{stem}.ledger.log"
        result.ledger.write_log(paths["ledger"])
    return paths


@dataclass
class EvaluationSummary:
    governed: bool
    reports: list[RunReport]

    @property
    def injected(self) -> int:
        return sum(len(r.injections) for r in self.reports)

    @property
    def blocked_unsafe(self) -> int:
        return sum(r.blocked_unsafe for r in self.reports)

    @property
    def unsafe_executed(self) -> int:
        return sum(r.unsafe_executed for r in self.reports)

    @property
    def reasons_ok(self) -> bool:
        return all(o.reason_ok for r in self.reports for o in r.injections)

    def rejections(self) -> dict[str, int]:
        total: Counter = Counter()
        for r in self.reports:
            total.update(r.rejections)
        return dict(sorted(total.items()))


def run_evaluation(configs: Sequence[ScenarioConfig] | None = None, governed: bool = True) -> EvaluationSummary:
    configs = list(configs) if configs is not None else load_evaluation()
    return EvaluationSummary(governed, [run_scenario(c, governed).report for c in configs])
