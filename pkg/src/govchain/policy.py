"""Key-value policy store and the predicates the evaluation contract calls.

A policy document has two sections::

    {"agents": [{"agent_id": ..., "roles": [...], "whitelisted": true}, ...],
     "rules":  [{"action_type": ..., "param_bounds": {"p": {"min": 0, "max": 1}},
                 "allowed_roles": [...], "rate_limit": {"max_count": 3, "window_ms": 60000}}]}

The store is immutable after load; rate-limit counters live in
:class:`RateLimiter` and are the only mutable policy state.
"""

from __future__ import annotations

import math
import threading
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from . import canonical


class PolicyError(ValueError):
    pass


class UnknownActionType(PolicyError):
    pass


class MissingParam(PolicyError):
    pass


@dataclass(frozen=True)
class Bound:
    min: float
    max: float

    def __post_init__(self) -> None:
        if not (self.min <= self.max):
            raise PolicyError(f"bound min {self.min} > max {self.max}")


@dataclass(frozen=True)
class RateLimit:
    max_count: int
    window_ms: int

    def __post_init__(self) -> None:
        if self.max_count < 1 or self.window_ms < 1:
            raise PolicyError("rate limit values must be positive")


@dataclass(frozen=True)
class PolicyRule:
    action_type: str
    param_bounds: Mapping[str, Bound]
    allowed_roles: frozenset[str]
    rate_limit: RateLimit

    def __post_init__(self) -> None:
        if not self.allowed_roles:
            raise PolicyError(f"rule {self.action_type!r} allows no roles")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PolicyRule":
        try:
            bounds = {
                name: Bound(b["min"], b["max"]) for name, b in dict(data.get("param_bounds", {})).items()
            }
            rl = data["rate_limit"]
            return cls(
                action_type=data["action_type"],
                param_bounds=bounds,
                allowed_roles=frozenset(data["allowed_roles"]),
                rate_limit=RateLimit(int(rl["max_count"]), int(rl["window_ms"])),
            )
        except (KeyError, TypeError) as exc:
            raise PolicyError(f"malformed policy rule: {exc!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "action_type": self.action_type,
            "param_bounds": {k: {"min": b.min, "max": b.max} for k, b in self.param_bounds.items()},
            "allowed_roles": sorted(self.allowed_roles),
            "rate_limit": {"max_count": self.rate_limit.max_count, "window_ms": self.rate_limit.window_ms},
        }


@dataclass(frozen=True)
class AgentRegistryEntry:
    agent_id: str
    roles: frozenset[str]
    whitelisted: bool

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AgentRegistryEntry":
        try:
            return cls(data["agent_id"], frozenset(data["roles"]), bool(data["whitelisted"]))
        except (KeyError, TypeError) as exc:
            raise PolicyError(f"malformed agent entry: {exc!r}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {"agent_id": self.agent_id, "roles": sorted(self.roles), "whitelisted": self.whitelisted}


@dataclass(frozen=True)
class BoundsCheck:
    ok: bool
    violated_param: str | None = None
    missing: bool = False


class PolicyStore:
    def __init__(self, agents: Iterable[AgentRegistryEntry], rules: Iterable[PolicyRule]) -> None:
        self._agents: dict[str, AgentRegistryEntry] = {}
        for entry in agents:
            if entry.agent_id in self._agents:
                raise PolicyError(f"duplicate agent id {entry.agent_id!r}")
            self._agents[entry.agent_id] = entry
        self._rules: dict[str, PolicyRule] = {}
        for rule in rules:
            if rule.action_type in self._rules:
                raise PolicyError(f"duplicate rule for {rule.action_type!r}")
            self._rules[rule.action_type] = rule

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PolicyStore":
        return cls(
            [AgentRegistryEntry.from_dict(a) for a in data.get("agents", [])],
            [PolicyRule.from_dict(r) for r in data.get("rules", [])],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "agents": [a.to_dict() for a in self._agents.values()],
            "rules": [r.to_dict() for r in self._rules.values()],
        }

    def digest(self) -> str:
        """Content hash so the policy itself can be anchored."""
        return canonical.digest(self.to_dict())

    @property
    def agents(self) -> dict[str, AgentRegistryEntry]:
        return dict(self._agents)

    @property
    def action_types(self) -> frozenset[str]:
        return frozenset(self._rules)

    def is_registered(self, agent_id: str) -> bool:
        return agent_id in self._agents

    def roles_of(self, agent_id: str) -> frozenset[str]:
        entry = self._agents.get(agent_id)
        return entry.roles if entry else frozenset()

    def is_whitelisted(self, agent_id: str) -> bool:
        entry = self._agents.get(agent_id)
        return entry is not None and entry.whitelisted

    def get_policy(self, action_type: str) -> PolicyRule:
        try:
            return self._rules[action_type]
        except (KeyError, TypeError):
            raise UnknownActionType(str(action_type)) from None


def load_policy(path: str | Path) -> PolicyStore:
    return PolicyStore.from_dict(canonical.loads(Path(path).read_text(encoding="utf-8")))


def _as_number(value: Any) -> float | None:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return None
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def check_safety_bounds(params: Mapping[str, Any], rule: PolicyRule) -> BoundsCheck:
    """Inclusive interval check; the first violation in sorted name order is reported.

    A bounded parameter that is absent or non-numeric counts as a violation.
    """
    for name in sorted(rule.param_bounds):
        bound = rule.param_bounds[name]
        if name not in params:
            return BoundsCheck(False, name, missing=True)
        value = _as_number(params[name])
        if value is None or not (bound.min <= value <= bound.max):
            return BoundsCheck(False, name)
    return BoundsCheck(True)


def check_rbac(agent_roles: Iterable[str], rule: PolicyRule) -> bool:
    return not rule.allowed_roles.isdisjoint(agent_roles)


class RateLimiter:
    """Sliding-window approval counters keyed by (agent_id, action_type).

    The window for a check at ``now_ms`` is ``(now_ms - window_ms, now_ms]``.
    """

    def __init__(self, store: PolicyStore) -> None:
        self.store = store
        self._approvals: dict[tuple[str, str], deque[int]] = defaultdict(deque)
        self._lock = threading.Lock()

    def _count(self, key: tuple[str, str], now_ms: int, window_ms: int) -> int:
        return sum(1 for t in self._approvals[key] if now_ms - window_ms < t <= now_ms)

    def would_allow(self, agent_id: str, action_type: str, now_ms: int) -> bool:
        limit = self.store.get_policy(action_type).rate_limit
        with self._lock:
            return self._count((agent_id, action_type), now_ms, limit.window_ms) < limit.max_count

    def record(self, agent_id: str, action_type: str, now_ms: int) -> None:
        limit = self.store.get_policy(action_type).rate_limit
        with self._lock:
            q = self._approvals[(agent_id, action_type)]
            q.append(now_ms)
            # timestamps are non-decreasing, so everything left of the window is stale
            while q and q[0] <= now_ms - limit.window_ms:
                q.popleft()

    def check_rate_limit(self, agent_id: str, action_type: str, now_ms: int) -> bool:
        """Atomic check-and-reserve."""
        limit = self.store.get_policy(action_type).rate_limit
        key = (agent_id, action_type)
        with self._lock:
            if self._count(key, now_ms, limit.window_ms) >= limit.max_count:
                return False
            self._approvals[key].append(now_ms)
            return True


OracleCheck = Callable[[Mapping[str, Any]], bool]


def always_pass(proposal: Mapping[str, Any]) -> bool:
    return True


@dataclass(frozen=True)
class ComplianceOracle:
    """Optional external risk/compliance hook; the default never objects."""

    name: str = "risk_compliance"
    check: OracleCheck = field(default=always_pass)
