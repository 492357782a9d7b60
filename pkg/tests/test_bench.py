import random
import statistics
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from govchain import canonical
from govchain.bench import (
    STAGES,
    BenchConfig,
    LatencyModel,
    MismatchedConfigs,
    compare,
    load_report,
    run_bench,
    scalability_sweep,
    simulate,
    summarize,
)
from oracles import reference_summary


def test_latency_marginals_stay_in_range():
    model = LatencyModel()
    rng = random.Random(1)
    for _ in range(500):
        for name, v in model.sample_ms(rng).items():
            lo, hi = model.ranges()[name]
            assert lo <= v <= hi


def test_copula_marginals_are_uniform():
    model = LatencyModel()
    rng = random.Random(5)
    us = [model.quantiles(rng) for _ in range(4000)]
    for k in range(len(STAGES)):
        col = [u[k] for u in us]
        assert statistics.mean(col) == pytest.approx(0.5, abs=0.02)
        assert statistics.variance(col) == pytest.approx(1 / 12, abs=0.006)


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel(perception=(5, 1))
    with pytest.raises(ValueError):
        LatencyModel(correlation=1.5)
    assert LatencyModel.from_dict(LatencyModel().to_dict()) == LatencyModel()
    assert LatencyModel().midpoint_total_ms() == pytest.approx(1825.0)
    assert LatencyModel().midpoint_total_ms(governed=False) == pytest.approx(1425.0)


@pytest.mark.parametrize("agents", [1, 10, 75])
@pytest.mark.parametrize("governed", [True, False])
def test_totals_are_exact_component_sums(agents, governed):
    sim = simulate(BenchConfig(agents=agents), 5, governed)
    assert len(sim.cycles) == 5 * agents
    for c in sim.cycles:
        assert c.total_us == c.component_sum_us()
        if not governed:
            assert c.blockchain_us == c.admission_wait_us == c.order_wait_us == 0


def test_single_agent_overhead_is_blockchain_stage():
    cfg = BenchConfig()
    gov = simulate(cfg, 20, True)
    base = simulate(cfg, 20, False)
    for g, b in zip(gov.cycles, base.cycles):
        assert g.total_us - b.total_us == g.blockchain_us
    assert gov.max_queue_depth == 0


def test_degenerate_model_has_zero_latency():
    zero = LatencyModel((0, 0), (0, 0), (0, 0), (0, 0))
    report = run_bench(BenchConfig(latency=zero, order_service_ms=0), 10, True)
    assert report.mean_total_s == 0.0


def test_order_service_cannot_exceed_blockchain_stage():
    with pytest.raises(ValueError):
        simulate(BenchConfig(order_service_ms=400), 1, True)


def test_trials_must_be_positive():
    with pytest.raises(ValueError):
        run_bench(BenchConfig(), 0, True)


@settings(max_examples=25)
@given(st.sampled_from(STAGES), st.floats(0, 300), st.integers(0, 10_000))
def test_widening_a_range_never_lowers_the_mean(stage, extra, seed):
    base = LatencyModel()
    lo, hi = getattr(base, stage)
    wider = replace(base, **{stage: (lo, hi + extra)})
    a = run_bench(BenchConfig(latency=base, seed=seed), 10, True).mean_total_s
    b = run_bench(BenchConfig(latency=wider, seed=seed), 10, True).mean_total_s
    assert b >= a


@settings(max_examples=30)
@given(st.lists(st.floats(0, 5000, allow_nan=False), min_size=2, max_size=60))
def test_summary_matches_exact_recomputation(raw):
    s = summarize(raw)
    mean_s, var_s2, lo, hi = reference_summary(raw)
    assert s.mean_s == pytest.approx(mean_s, rel=1e-12, abs=1e-12)
    assert s.variance_s2 == pytest.approx(var_s2, rel=1e-9, abs=1e-12)
    assert s.ci95_s == pytest.approx((lo, hi), rel=1e-9, abs=1e-9)


def test_report_round_trip(tmp_path):
    report = run_bench(BenchConfig(), 12, True)
    path, raw_path = report.write(tmp_path / "r.json")
    assert raw_path.name == "r.raw.json"
    assert canonical.is_canonical(path.read_text(encoding="utf-8").strip())
    assert load_report(path) == report


def test_compare_mismatch_and_identity():
    a = run_bench(BenchConfig(), 10, True)
    with pytest.raises(MismatchedConfigs):
        compare(a, run_bench(BenchConfig(), 11, False))
    with pytest.raises(MismatchedConfigs):
        compare(a, run_bench(BenchConfig(seed=1), 10, False))
    same = compare(a, a)
    assert (same.latency_delta_s, same.throughput_ratio, same.blocked_delta) == (0.0, 1.0, 0)
    assert "Mean Latency" in same.to_text()


def test_sweep_rows_and_ordering():
    report = scalability_sweep(BenchConfig(), [5, 10, 25, 50], trials=50)
    means = [r.mean_total_s for r in report.rows]
    assert means == sorted(means)
    assert all(r.max_queue_depth == 0 for r in report.rows)
    with pytest.raises(ValueError):
        scalability_sweep(BenchConfig(), [10, 5])
    with pytest.raises(ValueError):
        scalability_sweep(BenchConfig(), [])


def test_queueing_past_capacity():
    sim = simulate(BenchConfig(agents=75), 10, True)
    assert sim.max_queue_depth > 0 and sim.mean_queue_depth > 0
    assert any(d > 0 for _, d in sim.queue_depth_trace)
