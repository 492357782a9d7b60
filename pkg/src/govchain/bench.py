"""Latency/throughput benchmark as a discrete-event simulation.

Each trial is one decision round: every agent starts a cycle at the round
start (perception -> reasoning -> [blockchain] -> execution) and the next
round starts once all agents have finished. Stage latencies are drawn from
per-stage uniform ranges; a Gaussian copula couples the four draws of one
cycle (a shared load factor) without changing the uniform marginals.

The blockchain stage is endorsement followed by ordering. Endorsement runs
in parallel; ordering holds a single serial orderer for
``order_service_ms``. At most ``orderer_capacity`` transactions may be in
flight (endorsing or ordering); later arrivals wait in a pre-ordering
queue. Time is kept in integer microseconds so per-cycle totals equal the
sum of their components exactly.
"""

from __future__ import annotations

import heapq
import math
import random
import statistics
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import NormalDist
from typing import Any, Sequence

from . import canonical

STAGES = ("perception", "reasoning", "blockchain", "execution")
Z95 = NormalDist().inv_cdf(0.975)
_STD_NORMAL = NormalDist()


class MismatchedConfigs(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    perception: tuple[float, float] = (180.0, 250.0)
    reasoning: tuple[float, float] = (900.0, 1200.0)
    blockchain: tuple[float, float] = (350.0, 450.0)
    execution: tuple[float, float] = (120.0, 200.0)
    correlation: float = 0.75

    def __post_init__(self) -> None:
        for name in STAGES:
            lo, hi = getattr(self, name)
            if not (0 <= lo <= hi):
                raise ValueError(f"{name} range must satisfy 0 <= min <= max")
        if not (0.0 <= self.correlation <= 1.0):
            raise ValueError("correlation must lie in [0, 1]")

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {name: getattr(self, name) for name in STAGES}

    def quantiles(self, rng: random.Random) -> list[float]:
        rho = self.correlation
        shared = _gauss(rng)
        out = []
        for _ in STAGES:
            z = math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * _gauss(rng)
            out.append(_STD_NORMAL.cdf(z))
        return out

    def sample_ms(self, rng: random.Random) -> dict[str, float]:
        return {
            name: lo + u * (hi - lo)
            for name, (lo, hi), u in zip(STAGES, (getattr(self, s) for s in STAGES), self.quantiles(rng))
        }

    def midpoint_total_ms(self, governed: bool = True) -> float:
        return sum((lo + hi) / 2 for name, (lo, hi) in self.ranges().items() if governed or name != "blockchain")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {name: {"min": lo, "max": hi} for name, (lo, hi) in self.ranges().items()}
        d["correlation"] = self.correlation
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LatencyModel":
        kwargs: dict[str, Any] = {n: (data[n]["min"], data[n]["max"]) for n in STAGES if n in data}
        if "correlation" in data:
            kwargs["correlation"] = data["correlation"]
        return cls(**kwargs)


def _gauss(rng: random.Random) -> float:
    u = min(max(rng.random(), 1e-12), 1.0 - 1e-12)
    return _STD_NORMAL.inv_cdf(u)


@dataclass(frozen=True)
class BenchConfig:
    latency: LatencyModel = field(default_factory=LatencyModel)
    agents: int = 1
    orderer_capacity: int = 50
    order_service_ms: float = 20.0
    seed: int = 2024

    def to_dict(self) -> dict[str, Any]:
        return {
            "latency": self.latency.to_dict(),
            "agents": self.agents,
            "orderer_capacity": self.orderer_capacity,
            "order_service_ms": self.order_service_ms,
            "seed": self.seed,
        }

    def digest(self) -> str:
        return canonical.digest(self.to_dict())


@dataclass(frozen=True)
class CycleRecord:
    round: int
    agent: int
    perception_us: int
    reasoning_us: int
    blockchain_us: int
    execution_us: int
    admission_wait_us: int
    order_wait_us: int
    total_us: int

    def component_sum_us(self) -> int:
        return (
            self.perception_us + self.reasoning_us + self.blockchain_us + self.execution_us
            + self.admission_wait_us + self.order_wait_us
        )


@dataclass
class SimResult:
    cycles: list[CycleRecord]
    makespan_us: int
    max_queue_depth: int
    mean_queue_depth: float
    queue_depth_trace: list[tuple[int, int]]


def _us(ms: float) -> int:
    return int(round(ms * 1000))


def simulate(config: BenchConfig, trials: int, governed: bool) -> SimResult:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if config.agents < 1 or config.orderer_capacity < 1:
        raise ValueError("agents and orderer_capacity must be >= 1")
    service = _us(config.order_service_ms)
    if service > _us(config.latency.blockchain[0]):
        raise ValueError("order_service_ms cannot exceed the minimum blockchain-stage latency")
    rng = random.Random(f"{config.seed}:bench")
    cycles: list[CycleRecord] = []
    trace: list[tuple[int, int]] = [(0, 0)]
    depth_area = 0
    max_depth = 0
    t0 = 0

    for rnd in range(trials):
        draws = []
        for _ in range(config.agents):
            ms = config.latency.sample_ms(rng)
            draws.append({k: _us(v) for k, v in ms.items()})

        events: list[tuple[int, int, str, int]] = []
        seq = 0

        def push(t: int, kind: str, agent: int) -> None:
            nonlocal seq
            heapq.heappush(events, (t, seq, kind, agent))
            seq += 1

        marks: dict[int, dict[str, int]] = {i: {} for i in range(config.agents)}
        for i, d in enumerate(draws):
            push(t0 + d["perception"] + d["reasoning"], "ready" if governed else "exec", i)

        in_flight = 0
        admission: deque[int] = deque()
        order_queue: deque[int] = deque()
        orderer_busy = False
        depth = 0
        last_t = t0
        done: dict[int, int] = {}

        def set_depth(t: int, new: int) -> None:
            nonlocal depth, depth_area, last_t, max_depth
            depth_area += depth * (t - last_t)
            last_t = t
            if new != depth:
                depth = new
                trace.append((t, depth))
                max_depth = max(max_depth, depth)

        def admit(t: int, agent: int) -> None:
            nonlocal in_flight
            in_flight += 1
            marks[agent]["admitted"] = t
            push(t + draws[agent]["blockchain"] - service, "endorsed", agent)

        def start_order(t: int, agent: int) -> None:
            nonlocal orderer_busy
            orderer_busy = True
            marks[agent]["order_start"] = t
            push(t + service, "ordered", agent)

        while events:
            t, _, kind, agent = heapq.heappop(events)
            if kind == "ready":
                marks[agent]["ready"] = t
                if in_flight < config.orderer_capacity:
                    admit(t, agent)
                else:
                    admission.append(agent)
                    set_depth(t, len(admission))
            elif kind == "endorsed":
                marks[agent]["endorsed"] = t
                if orderer_busy:
                    order_queue.append(agent)
                else:
                    start_order(t, agent)
            elif kind == "ordered":
                in_flight -= 1
                orderer_busy = False
                if order_queue:
                    start_order(t, order_queue.popleft())
                if admission:
                    nxt = admission.popleft()
                    set_depth(t, len(admission))
                    admit(t, nxt)
                push(t + draws[agent]["execution"], "done", agent)
            elif kind == "exec":
                push(t + draws[agent]["execution"], "done", agent)
            else:
                done[agent] = t

        for i, d in enumerate(draws):
            m = marks[i]
            adm_wait = m["admitted"] - m["ready"] if governed else 0
            ord_wait = m["order_start"] - m["endorsed"] if governed else 0
            cycles.append(
                CycleRecord(
                    rnd, i, d["perception"], d["reasoning"], d["blockchain"] if governed else 0,
                    d["execution"], adm_wait, ord_wait, done[i] - t0,
                )
            )
        round_end = max(done.values())
        set_depth(round_end, depth)
        t0 = round_end

    mean_depth = depth_area / t0 if t0 else 0.0
    return SimResult(cycles, t0, max_depth, mean_depth, trace)


@dataclass(frozen=True)
class Summary:
    n: int
    mean_s: float
    variance_s2: float
    ci95_s: tuple[float, float]


def summarize(raw_totals_ms: Sequence[float]) -> Summary:
    """Mean, sample variance and normal-approximation 95% CI, in seconds."""
    n = len(raw_totals_ms)
    mean_ms = statistics.mean(raw_totals_ms)
    var_ms2 = statistics.variance(raw_totals_ms) if n > 1 else 0.0
    mean_s = mean_ms / 1000.0
    var_s2 = var_ms2 / 1e6
    half = Z95 * math.sqrt(var_s2 / n)
    return Summary(n, mean_s, var_s2, (mean_s - half, mean_s + half))


@dataclass(frozen=True)
class BenchReport:
    governed: bool
    trials: int
    agents: int
    mean_total_s: float
    variance_s2: float
    ci95_s: tuple[float, float]
    throughput_tx_per_s: float
    stage_means_s: dict[str, float]
    blocked_unsafe: int
    success_rate: float
    max_queue_depth: int
    mean_queue_depth: float
    config_digest: str
    raw_totals_ms: tuple[float, ...] = ()

    def to_dict(self, *, include_raw: bool = False) -> dict[str, Any]:
        d = asdict(self)
        d["ci95_s"] = list(self.ci95_s)
        raw = d.pop("raw_totals_ms")
        if include_raw:
            d["raw_totals_ms"] = list(raw)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any], raw_totals_ms: Sequence[float] = ()) -> "BenchReport":
        d = dict(data)
        d["ci95_s"] = tuple(d["ci95_s"])
        d["raw_totals_ms"] = tuple(d.pop("raw_totals_ms", raw_totals_ms))
        return cls(**d)

    def write(self, path: str | Path) -> tuple[Path, Path]:
        """Write the report and, alongside it, the raw per-trial totals."""
        path = Path(path)
        raw_path = path.with_name(path.stem + ".raw.json")
        path.write_text(canonical.dumps(self.to_dict()) + "\n", encoding="utf-8")
        raw_path.write_text(canonical.dumps(list(self.raw_totals_ms)) + "\n", encoding="utf-8")
        return path, raw_path


def load_report(path: str | Path) -> BenchReport:
    path = Path(path)
    raw = canonical.loads(path.with_name(path.stem + ".raw.json").read_text(encoding="utf-8"))
    return BenchReport.from_dict(canonical.loads(path.read_text(encoding="utf-8")), raw)


def run_bench(
    config: BenchConfig,
    trials: int,
    governed: bool,
    *,
    blocked_unsafe: int = 0,
    success_rate: float = 1.0,
) -> BenchReport:
    sim = simulate(config, trials, governed)
    raw = tuple(c.total_us / 1000.0 for c in sim.cycles)
    summary = summarize(raw)
    n = len(sim.cycles)
    stage_means = {
        name: statistics.mean(getattr(c, f"{name}_us") for c in sim.cycles) / 1e6
        for name in STAGES
        if governed or name != "blockchain"
    }
    stage_means["queueing"] = statistics.mean(c.admission_wait_us + c.order_wait_us for c in sim.cycles) / 1e6
    throughput = n / (sim.makespan_us / 1e6) if sim.makespan_us else math.inf
    return BenchReport(
        governed=governed,
        trials=trials,
        agents=config.agents,
        mean_total_s=summary.mean_s,
        variance_s2=summary.variance_s2,
        ci95_s=summary.ci95_s,
        throughput_tx_per_s=throughput,
        stage_means_s=stage_means,
        blocked_unsafe=blocked_unsafe,
        success_rate=success_rate,
        max_queue_depth=sim.max_queue_depth,
        mean_queue_depth=sim.mean_queue_depth,
        config_digest=config.digest(),
        raw_totals_ms=raw,
    )


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[tuple[str, str, str, str], ...]
    latency_delta_s: float
    throughput_ratio: float
    blocked_delta: int

    @property
    def throughput_change_pct(self) -> float:
        return (self.throughput_ratio - 1.0) * 100.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [list(r) for r in self.rows],
            "latency_delta_s": self.latency_delta_s,
            "throughput_ratio": self.throughput_ratio,
            "blocked_delta": self.blocked_delta,
        }

    def to_text(self) -> str:
        header = ("Scenario / Metric", "No BC", "With BC", "Delta")
        table = [header, *self.rows]
        widths = [max(len(r[i]) for r in table) for i in range(4)]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines)


def compare(governed: BenchReport, baseline: BenchReport) -> ComparisonTable:
    if (
        governed.config_digest != baseline.config_digest
        or governed.trials != baseline.trials
        or governed.agents != baseline.agents
    ):
        raise MismatchedConfigs("reports come from different configurations or trial counts")
    delta = governed.mean_total_s - baseline.mean_total_s
    if baseline.throughput_tx_per_s:
        ratio = governed.throughput_tx_per_s / baseline.throughput_tx_per_s
    else:
        ratio = 1.0
    blocked = governed.blocked_unsafe - baseline.blocked_unsafe

    def ci(r: BenchReport) -> str:
        return f"[{r.ci95_s[0]:.2f}s, {r.ci95_s[1]:.2f}s]"

    rows = (
        ("Blocked Unsafe Actions", str(baseline.blocked_unsafe), str(governed.blocked_unsafe), f"{blocked:+d}"),
        ("Mean Latency", f"{baseline.mean_total_s:.2f} s", f"{governed.mean_total_s:.2f} s", f"{delta:+.2f} s"),
        ("95% CI Latency", ci(baseline), ci(governed), "--"),
        (
            "Success Rate (%)",
            f"{baseline.success_rate * 100:.0f}%",
            f"{governed.success_rate * 100:.0f}%",
            f"{(governed.success_rate - baseline.success_rate) * 100:+.0f}",
        ),
        (
            "Throughput (Tx/sec)",
            f"{baseline.throughput_tx_per_s:.3f}",
            f"{governed.throughput_tx_per_s:.3f}",
            f"{(ratio - 1) * 100:+.0f}%",
        ),
        ("Agents Tested", str(baseline.agents), str(governed.agents), "--"),
    )
    return ComparisonTable(rows, delta, ratio, blocked)


@dataclass(frozen=True)
class SweepRow:
    agents: int
    mean_total_s: float
    throughput_tx_per_s: float
    max_queue_depth: int
    mean_queue_depth: float


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    reports: tuple[BenchReport, ...] = ()

    def row(self, agents: int) -> SweepRow:
        return next(r for r in self.rows if r.agents == agents)

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [asdict(r) for r in self.rows]}

    def to_text(self) -> str:
        base = self.rows[0].mean_total_s
        lines = ["agents  mean_latency_s  vs_first  throughput_tx_s  max_queue  mean_queue"]
        for r in self.rows:
            lines.append(
                f"{r.agents:>6}  {r.mean_total_s:>14.3f}  {r.mean_total_s / base:>8.3f}  "
                f"{r.throughput_tx_per_s:>15.3f}  {r.max_queue_depth:>9}  {r.mean_queue_depth:>10.3f}"
            )
        return "\n".join(lines)


def scalability_sweep(config: BenchConfig, agent_counts: Sequence[int], trials: int = 50) -> SweepReport:
    counts = list(agent_counts)
    if not counts or counts != sorted(counts):
        raise ValueError("agent_counts must be a non-empty ascending list")
    reports = tuple(run_bench(replace(config, agents=n), trials, True) for n in counts)
    rows = tuple(
        SweepRow(r.agents, r.mean_total_s, r.throughput_tx_per_s, r.max_queue_depth, r.mean_queue_depth)
        for r in reports
    )
    return SweepReport(rows, reports)
