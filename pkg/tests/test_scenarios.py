import json
from collections import Counter

import pytest

from govchain.ledger import TxKind
from govchain.scenarios import (
    EXPECTED_REASON,
    SCENARIO_NAMES,
    DanglingReference,
    InvalidInjection,
    ParseError,
    bundled_path,
    generate_tick,
    injection_requests,
    load_evaluation,
    load_scenario,
    run_evaluation,
    run_scenario,
    scenario_from_dict,
    write_outputs,
)


def doc(name="traffic"):
    return json.loads(bundled_path(name).read_text(encoding="utf-8"))


def test_bundled_configs_load():
    configs = load_evaluation()
    assert [c.name for c in configs] == list(SCENARIO_NAMES)
    assert sum(len(c.injections) for c in configs) == 14
    assert {i.kind for c in configs for i in c.injections} == set(EXPECTED_REASON)


def test_loading_is_pure():
    a, b = load_scenario("traffic"), load_scenario(bundled_path("traffic"))
    assert a == b and a.digest() == b.digest()
    assert a.with_seed(9).seed == 9 and a.with_seed(9).digest() != a.digest()


def test_parse_errors(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParseError):
        load_scenario(bad)
    d = doc()
    del d["policy"]
    with pytest.raises(ParseError):
        scenario_from_dict(d)
    with pytest.raises(ParseError):
        scenario_from_dict([1, 2])


def test_rule_without_policy_is_dangling():
    d = doc()
    d["policy"] = [p for p in d["policy"] if p["action_type"] != "adjust_signal"]
    with pytest.raises(DanglingReference):
        scenario_from_dict(d)


def test_route_to_unknown_service_is_dangling():
    d = doc()
    d["routing"]["adjust_signal"]["target_system"] = "nowhere"
    with pytest.raises(DanglingReference):
        scenario_from_dict(d)


def _with_injection(**inj):
    d = doc()
    d["injections"] = [inj]
    return d


@pytest.mark.parametrize(
    "inj",
    [
        {"tick": 1, "kind": "nonsense", "details": {"action_type": "adjust_signal", "params": {}}},
        {"tick": 99, "kind": "out_of_bounds_param", "details": {"action_type": "adjust_signal", "params": {"approach": "n", "green_duration": 500}}},
        {"tick": 1, "kind": "out_of_bounds_param", "details": {"action_type": "adjust_signal", "params": {"approach": "n", "green_duration": 60}}},
        {"tick": 1, "kind": "unauthorized_agent", "details": {"action_type": "adjust_signal", "params": {"approach": "n", "green_duration": 60}}},
        {"tick": 1, "kind": "rate_flood", "details": {"action_type": "override_signal", "params": {"approach": "n", "green_duration": 60}, "count": 2}},
        {"tick": 1, "kind": "malformed_proposal", "details": {"action_type": "adjust_signal", "params": {"approach": "n", "green_duration": 60}, "defect": "gremlins"}},
        {"tick": 1, "kind": "malformed_proposal", "details": {"action_type": "adjust_signal", "params": {"approach": "n", "green_duration": 60}, "defect": "missing_key", "missing_key": "params"}},
        {"tick": 1, "kind": "out_of_bounds_param", "details": {"params": {}}},
    ],
)
def test_invalid_injections(inj):
    with pytest.raises(InvalidInjection):
        scenario_from_dict(_with_injection(**inj))


def test_injection_with_unknown_action_type_is_dangling():
    inj = {"tick": 1, "kind": "out_of_bounds_param", "details": {"action_type": "launch", "params": {}}}
    with pytest.raises(DanglingReference):
        scenario_from_dict(_with_injection(**inj))


def test_generation_is_seeded():
    c = load_scenario("traffic")
    assert generate_tick(c, 3) == generate_tick(c, 3)
    assert generate_tick(c, 3) != generate_tick(c.with_seed(c.seed + 1), 3)


def test_flood_requests_flag_only_the_overflow():
    c = load_scenario("traffic")
    flood = next(i for i in c.injections if i.kind == "rate_flood")
    reqs = injection_requests(c, flood.tick)
    assert len(reqs) == flood.count
    limit = c.policy_store().get_policy(flood.action_type).rate_limit.max_count
    assert [tag.flagged for _, tag in reqs] == [j >= limit for j in range(flood.count)]


def test_traffic_governed_vs_baseline():
    c = load_scenario("traffic")
    gov = run_scenario(c).report
    base = run_scenario(c, governed=False).report
    assert gov.rejections == {"Safety Bounds Exceeded": 1, "Unauthorized Agent": 2, "Rate Limit Exceeded": 1}
    assert gov.unsafe_executed == 0 and gov.blocked_unsafe == 4
    assert all(o.reason_ok for o in gov.injections)
    assert base.rejections == {} and base.unsafe_executed == 4 and base.blocked_unsafe == 0


def test_evaluation_totals():
    gov = run_evaluation()
    assert (gov.injected, gov.blocked_unsafe, gov.unsafe_executed, gov.reasons_ok) == (14, 14, 0, True)
    assert sum(gov.rejections().values()) == 14


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_facade_mediates_every_contract_call(name):
    result = run_scenario(load_scenario(name))
    allowed = Counter(r.tool for r in result.monitor.records if r.allowed)
    kinds = Counter(t.kind for t in result.ledger.transactions())
    # proposals and effects map one-to-one onto facade calls
    assert allowed["submit_action"] == kinds[TxKind.ACTION_PROPOSAL] == kinds[TxKind.ACTION_VERDICT]
    assert allowed["log_effect"] == kinds[TxKind.EFFECT_RECORD]
    # anchoring is idempotent, so repeated calls never add transactions
    assert allowed["log_observation"] >= kinds[TxKind.OBSERVATION_ANCHOR] > 0
    assert set(kinds) <= {TxKind.OBSERVATION_ANCHOR, TxKind.ACTION_PROPOSAL, TxKind.ACTION_VERDICT, TxKind.EFFECT_RECORD}


@pytest.mark.parametrize("name", SCENARIO_NAMES)
def test_ledger_verifies_and_outputs_written(name, tmp_path):
    result = run_scenario(load_scenario(name))
    assert result.ledger.verify_chain().ok
    paths = write_outputs(result, tmp_path)
    assert set(paths) == {"report", "table", "state", "ledger"}
    assert all(p.exists() for p in paths.values())
    base = write_outputs(run_scenario(load_scenario(name), False), tmp_path)
    assert "ledger" not in base


def test_latency_stages_recorded():
    report = run_scenario(load_scenario("inventory")).report
    means = report.stage_means_ms()
    assert set(means) == {"perception", "reasoning", "blockchain", "execution"}
    assert 180 <= means["perception"] <= 250 and 350 <= means["blockchain"] <= 450
    assert "blockchain" not in run_scenario(load_scenario("inventory"), False).report.stage_means_ms()
