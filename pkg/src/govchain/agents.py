"""Perception and conceptualization agents.

The planner is a deterministic rule table standing in for an LLM planner;
anything implementing :class:`Planner` can replace it. The fixed pipeline
is planner -> risk assessor -> policy pre-check -> explainer (rationale),
then a supervisor selects one action per decision subject and builds the
transaction proposal.
"""

from __future__ import annotations

import dataclasses
import operator
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from . import canonical
from .policy import PolicyRule, PolicyStore, UnknownActionType, check_safety_bounds

SOURCES = frozenset({"sensor", "event_log", "user_request", "api"})
SENSITIVITIES = frozenset({"normal", "high"})
K_MAX = 8

_OPS: dict[str, Callable[[float, float], bool]] = {
    "lt": operator.lt,
    "le": operator.le,
    "gt": operator.gt,
    "ge": operator.ge,
}


class AnchorFailure(RuntimeError):
    """The ledger could not anchor an observation a proposal depends on."""


def observation_hash(obs_id: str, source: str, payload: Mapping[str, Any], timestamp_ms: int) -> str:
    return canonical.digest(
        {"obs_id": obs_id, "source": source, "payload": payload, "timestamp_ms": timestamp_ms}
    )


@dataclass(frozen=True)
class Observation:
    obs_id: str
    source: str
    payload: dict[str, Any]
    timestamp_ms: int
    obs_hash: str
    sensitivity: str = "normal"

    @classmethod
    def create(
        cls, obs_id: str, source: str, payload: Mapping[str, Any], timestamp_ms: int, sensitivity: str = "normal"
    ) -> "Observation":
        body = canonical.loads(canonical.dumps(payload))
        return cls(obs_id, source, body, timestamp_ms, observation_hash(obs_id, source, body, timestamp_ms), sensitivity)

    def metadata(self, tick: int) -> dict[str, Any]:
        return {"source": self.source, "sensitivity": self.sensitivity, "tick": tick}


@dataclass
class ObservationBatch:
    tick: int
    observations: tuple[Observation, ...]
    dropped: int = 0
    anchored: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        ids = [o.obs_id for o in self.observations]
        if len(ids) != len(set(ids)):
            raise ValueError("obs_ids must be unique within a batch")

    def get(self, obs_id: str) -> Observation:
        for obs in self.observations:
            if obs.obs_id == obs_id:
                return obs
        raise KeyError(obs_id)

    def __len__(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class CandidateAction:
    action_id: str
    action_type: str
    params: dict[str, Any]
    risk_score: float = 0.0
    rationale: str = ""
    subject: str = ""
    trigger_obs: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (0.0 <= self.risk_score <= 1.0):
            raise ValueError(f"risk_score {self.risk_score} outside [0, 1]")


@dataclass(frozen=True)
class ActionProposal:
    selected: CandidateAction
    obs_hashes: tuple[str, ...]
    agent_id: str
    policy_context: dict[str, Any]

    def __post_init__(self) -> None:
        if not self.obs_hashes:
            raise ValueError("a proposal must reference at least one observation")

    def to_payload(self) -> dict[str, Any]:
        return {
            "action_id": self.selected.action_id,
            "action_type": self.selected.action_type,
            "params": dict(self.selected.params),
            "obs_hashes": list(self.obs_hashes),
            "agent_id": self.agent_id,
            "policy_context": dict(self.policy_context),
        }


Anchor = Callable[[Observation, int], None]


def _well_formed(raw: Any, window: tuple[int, int] | None) -> bool:
    if not isinstance(raw, Mapping):
        return False
    obs_id, source, payload, ts = (raw.get(k) for k in ("obs_id", "source", "payload", "timestamp_ms"))
    if not isinstance(obs_id, str) or not obs_id or source not in SOURCES:
        return False
    if not isinstance(payload, Mapping) or not payload:
        return False
    if not isinstance(ts, int) or isinstance(ts, bool) or ts < 0:
        return False
    if window is not None and not (window[0] <= ts < window[1]):
        return False
    return raw.get("sensitivity", "normal") in SENSITIVITIES


def perceive(
    raw_inputs: Iterable[Any],
    tick: int,
    *,
    window: tuple[int, int] | None = None,
    anchor: Anchor | None = None,
) -> ObservationBatch:
    """Turn raw inputs into hashed observations, dropping malformed ones.

    High-sensitivity observations are anchored immediately when ``anchor`` is
    given; an anchoring failure leaves them for :func:`propose` to retry.
    """
    kept: list[Observation] = []
    seen: set[str] = set()
    dropped = 0
    for raw in raw_inputs:
        if not _well_formed(raw, window) or raw["obs_id"] in seen:
            dropped += 1
            continue
        try:
            obs = Observation.create(
                raw["obs_id"], raw["source"], raw["payload"], raw["timestamp_ms"], raw.get("sensitivity", "normal")
            )
        except canonical.CanonicalError:
            dropped += 1
            continue
        seen.add(obs.obs_id)
        kept.append(obs)
    batch = ObservationBatch(tick, tuple(kept), dropped)
    if anchor is not None:
        for obs in batch.observations:
            if obs.sensitivity == "high":
                try:
                    anchor(obs, tick)
                except AnchorFailure:
                    continue
                batch.anchored.add(obs.obs_id)
    return batch


@dataclass(frozen=True)
class RuleSpec:
    """One row of a scenario's planner rule table.

    ``mode`` is ``steps`` (one candidate per feasible step value), ``deficit``
    (value = target - metric) or ``passthrough`` (operator requests carry their
    own action type and parameters).
    """

    name: str
    mode: str
    source: str = "sensor"
    metric: str = ""
    op: str = "gt"
    threshold: float = 0.0
    action_type: str = ""
    param: str = ""
    steps: tuple[float, ...] = ()
    target: float = 0.0
    subject_param: str = "subject"
    fixed_params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RuleSpec":
        data = dict(data)
        if "steps" in data:
            data["steps"] = tuple(data["steps"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown rule keys {sorted(unknown)}")
        rule = cls(**data)
        if rule.mode not in ("steps", "deficit", "passthrough"):
            raise ValueError(f"unknown rule mode {rule.mode!r}")
        if rule.mode != "passthrough" and (rule.op not in _OPS or not rule.action_type or not rule.param):
            raise ValueError(f"rule {rule.name!r} needs op, action_type and param")
        return rule

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["steps"] = list(self.steps)
        d["fixed_params"] = dict(self.fixed_params)
        return d


def _numeric(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _feasible(value: float, param: str, policy: PolicyStore | None, action_type: str) -> bool:
    if policy is None:
        return True
    try:
        bound = policy.get_policy(action_type).param_bounds.get(param)
    except UnknownActionType:
        return True
    return bound is None or bound.min <= value <= bound.max


def plan(
    batch: ObservationBatch,
    rules: Sequence[RuleSpec],
    *,
    policy: PolicyStore | None = None,
    k_max: int = K_MAX,
) -> list[CandidateAction]:
    """Fire the rule table over a batch. At most ``k_max`` candidates per subject."""
    by_subject: dict[str, list[Observation]] = defaultdict(list)
    for obs in batch.observations:
        subject = obs.payload.get("subject")
        if isinstance(subject, str):
            by_subject[subject].append(obs)

    out: dict[str, list[CandidateAction]] = defaultdict(list)
    tick = batch.tick
    for rule in rules:
        if rule.mode == "passthrough":
            for obs in batch.observations:
                p = obs.payload
                if obs.source != rule.source or not isinstance(p.get("request"), str):
                    continue
                params = p.get("params")
                out[obs.obs_id].append(
                    CandidateAction(
                        action_id=f"{obs.obs_id}-{rule.name}-0",
                        action_type=p["request"],
                        params=dict(params) if isinstance(params, Mapping) else {},
                        subject=obs.obs_id,
                        trigger_obs=(obs.obs_id,),
                    )
                )
            continue
        cmp = _OPS[rule.op]
        for subject in sorted(by_subject):
            firing = [
                o
                for o in by_subject[subject]
                if o.source == rule.source and _numeric(o.payload.get(rule.metric)) and cmp(o.payload[rule.metric], rule.threshold)
            ]
            if not firing:
                continue
            readings = [o.payload[rule.metric] for o in firing]
            worst = min(readings) if rule.op in ("lt", "le") else max(readings)
            if rule.mode == "deficit":
                values = [rule.target - worst]
            else:
                values = [v for v in rule.steps if _feasible(v, rule.param, policy, rule.action_type)]
            for j, value in enumerate(values):
                params = {rule.subject_param: subject, rule.param: value, **rule.fixed_params}
                out[subject].append(
                    CandidateAction(
                        action_id=f"t{tick:04d}-{subject}-{rule.name}-{j}",
                        action_type=rule.action_type,
                        params=params,
                        subject=subject,
                        trigger_obs=tuple(o.obs_id for o in firing),
                        rationale=f"{rule.name}: {rule.metric} {rule.op} {format_value(rule.threshold)} (observed {format_value(worst)})",
                    )
                )
    result: list[CandidateAction] = []
    for subject in sorted(out):
        result.extend(out[subject][:k_max])
    return result


def format_value(value: Any) -> str:
    return canonical.format_number(value) if _numeric(value) else str(value)


def assess_risk(candidate: CandidateAction, rule: PolicyRule | None) -> float:
    """Normalized distance from each bounded param to its interval midpoint, max over params.

    0 at the midpoint, 1 at (or beyond) a bound. A bounded param that is
    missing or non-numeric scores 1.
    """
    if rule is None:
        return 1.0
    risk = 0.0
    for name, bound in rule.param_bounds.items():
        value = candidate.params.get(name)
        if not _numeric(value):
            return 1.0
        half = (bound.max - bound.min) / 2
        mid = bound.min + half
        if half == 0:
            r = 0.0 if value == mid else 1.0
        else:
            r = min(1.0, abs(value - mid) / half)
        risk = max(risk, r)
    return risk


def precheck(candidate: CandidateAction, rule: PolicyRule | None) -> str:
    """Local policy reading; advisory only, the ledger decides."""
    if rule is None:
        return "no local policy"
    result = check_safety_bounds(candidate.params, rule)
    return "within bounds" if result.ok else f"exceeds bound on {result.violated_param}"


def select_action(candidates: Sequence[CandidateAction]) -> CandidateAction | None:
    if not candidates:
        return None
    return min(candidates, key=lambda c: (c.risk_score, c.action_id))


class Planner(Protocol):
    def plan(self, batch: ObservationBatch) -> list[CandidateAction]: ...


class RuleBasedPlanner:
    def __init__(self, rules: Sequence[RuleSpec], policy: PolicyStore | None = None, k_max: int = K_MAX) -> None:
        self.rules = tuple(rules)
        self.policy = policy
        self.k_max = k_max

    def _rule(self, action_type: str) -> PolicyRule | None:
        if self.policy is None:
            return None
        try:
            return self.policy.get_policy(action_type)
        except UnknownActionType:
            return None

    def plan(self, batch: ObservationBatch) -> list[CandidateAction]:
        out = []
        for cand in plan(batch, self.rules, policy=self.policy, k_max=self.k_max):
            rule = self._rule(cand.action_type)
            risk = assess_risk(cand, rule)
            note = precheck(cand, rule)
            rationale = f"{cand.rationale}; risk {risk:.3f}; {note}" if cand.rationale else f"operator request; risk {risk:.3f}; {note}"
            out.append(dataclasses.replace(cand, risk_score=risk, rationale=rationale))
        return out


def group_by_subject(candidates: Iterable[CandidateAction]) -> dict[str, list[CandidateAction]]:
    groups: dict[str, list[CandidateAction]] = defaultdict(list)
    for cand in candidates:
        groups[cand.subject].append(cand)
    return dict(sorted(groups.items()))


def propose(
    selected: CandidateAction,
    batch: ObservationBatch,
    agent_id: str,
    roles: Iterable[str],
    *,
    anchor: Anchor | None = None,
    oracle_results: Mapping[str, str] | None = None,
) -> ActionProposal:
    """Build the supervisor's proposal, anchoring any referenced observation first."""
    observations = [batch.get(obs_id) for obs_id in selected.trigger_obs]
    for obs in observations:
        if obs.obs_id in batch.anchored or anchor is None:
            continue
        anchor(obs, batch.tick)
        batch.anchored.add(obs.obs_id)
    context: dict[str, Any] = {"roles": sorted(roles)}
    if oracle_results is not None:
        context["oracles"] = dict(oracle_results)
    return ActionProposal(selected, tuple(o.obs_hash for o in observations), agent_id, context)
