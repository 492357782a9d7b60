import pytest
from hypothesis import given, settings, strategies as st

from govchain import canonical
from govchain.contracts import (
    REJECTION_REASONS,
    AnchorConflict,
    DuplicateActionId,
    DuplicateEffect,
    MalformedHash,
    NotApproved,
    Status,
    UnknownActionId,
)
from govchain.ledger import EndorsementFailure, StructuralError, TxKind
from policy_fuzz import run_fuzz

OBS_HASH = canonical.digest({"queue": 22})


def proposal(action_id="a1", agent="sup", green=45, action_type="adjust_signal", hashes=None):
    return {
        "action_id": action_id,
        "action_type": action_type,
        "params": {"approach": "north", "green_duration": green},
        "obs_hashes": [OBS_HASH] if hashes is None else hashes,
        "agent_id": agent,
        "policy_context": {"roles": ["supervisor"]},
    }


@pytest.fixture
def anchored(stack):
    clock, ledger, contracts, monitor = stack
    contracts.register_observation("perc", "o1", OBS_HASH, {"tick": 0})
    return stack


def events(ledger, *names):
    return ledger.subscribe(set(names))


def test_register_observation_is_idempotent(stack):
    _, ledger, contracts, _ = stack
    r1 = contracts.register_observation("perc", "o1", OBS_HASH, {})
    r2 = contracts.register_observation("perc", "o1", OBS_HASH, {"other": 1})
    ledger.flush()
    assert r1 == r2
    assert len([t for t in ledger.transactions() if t.kind is TxKind.OBSERVATION_ANCHOR]) == 1


def test_register_observation_errors(stack):
    _, _, contracts, _ = stack
    with pytest.raises(MalformedHash):
        contracts.register_observation("perc", "o1", OBS_HASH[:-2], {})
    contracts.register_observation("perc", "o1", OBS_HASH, {})
    with pytest.raises(AnchorConflict):
        contracts.register_observation("perc", "o1", canonical.digest(1), {})


def test_in_bounds_action_approved(anchored):
    _, ledger, contracts, _ = anchored
    approved = events(ledger, "ActionApproved")
    verdict = contracts.submit_action("sup", proposal())
    assert verdict.status is Status.APPROVED and verdict.reason == ""
    ledger.flush()
    [event] = approved.drain()
    assert ledger.query(by_tx_id=event.subject)[0].payload["verdict"] == "Approved"


def test_non_whitelisted_agent(anchored):
    _, ledger, contracts, _ = anchored
    safety = events(ledger, "SafetyViolation")
    verdict = contracts.submit_action("rogue", proposal(agent="rogue", green=500))
    assert verdict.reason == "Unauthorized Agent"
    ledger.flush()
    assert safety.drain() == []  # gate ordering: bounds never reached


def test_agent_id_must_match_submitter(anchored):
    _, _, contracts, _ = anchored
    assert contracts.submit_action("gk", proposal(agent="sup")).reason == "Unauthorized Agent"


def test_bounds_violation_emits_safety_event(anchored):
    _, ledger, contracts, _ = anchored
    stream = events(ledger, "SafetyViolation", "ActionRejected")
    verdict = contracts.submit_action("sup", proposal(green=121))
    assert verdict.reason == "Safety Bounds Exceeded"
    ledger.flush()
    safety, rejected = stream.drain()
    assert (safety.name, safety.subject, safety.detail) == ("SafetyViolation", "sup", "green_duration")
    assert rejected.name == "ActionRejected"
    tx = ledger.query(by_tx_id=rejected.subject)[0]
    assert tx.payload == {
        "action_id": "a1",
        "verdict": "Rejected",
        "reason": "Safety Bounds Exceeded",
        "violated_param": "green_duration",
    }


def test_rbac_and_unknown_type(anchored):
    _, _, contracts, _ = anchored
    assert contracts.submit_action("sup", proposal(action_type="override_signal")).reason == "RBAC Denied"
    assert contracts.submit_action("sup", proposal("a2", action_type="launch")).reason == "Unknown Action Type"
    assert contracts.submit_action("gk", proposal("a3", agent="gk", action_type="override_signal")).approved


def test_rate_limit_counts_only_approvals(anchored):
    clock, _, contracts, _ = anchored
    for i in range(3):
        assert contracts.submit_action("sup", proposal(f"ok{i}")).approved
    # a rejection does not consume a slot, and neither does the limited attempt
    assert contracts.submit_action("sup", proposal("bad", green=999)).reason == "Rate Limit Exceeded"
    assert contracts.submit_action("sup", proposal("r1")).reason == "Rate Limit Exceeded"
    clock.advance(60000)
    assert contracts.submit_action("sup", proposal("r2")).approved


def test_unanchored_reference_is_structural(anchored):
    _, _, contracts, _ = anchored
    other = canonical.digest("never anchored")
    assert contracts.submit_action("sup", proposal(hashes=[OBS_HASH, other])).reason == "Structural Error"
    assert contracts.submit_action("sup", proposal("a2", hashes=[])).reason == "Structural Error"


def test_missing_keys_recorded_with_nulls(anchored):
    _, ledger, contracts, _ = anchored
    p = proposal()
    del p["policy_context"]
    assert contracts.submit_action("sup", p).reason == "Structural Error"
    ledger.flush()
    recorded = [t for t in ledger.transactions() if t.kind is TxKind.ACTION_PROPOSAL][0]
    assert recorded.payload["policy_context"] is None


def test_proposal_without_action_id_raises(anchored):
    _, _, contracts, _ = anchored
    p = proposal()
    del p["action_id"]
    with pytest.raises(StructuralError):
        contracts.submit_action("sup", p)


def test_duplicate_action_id(anchored):
    _, _, contracts, _ = anchored
    contracts.submit_action("sup", proposal())
    with pytest.raises(DuplicateActionId):
        contracts.submit_action("sup", proposal())


def test_status_lifecycle_and_effects(anchored):
    _, ledger, contracts, _ = anchored
    with pytest.raises(UnknownActionId):
        contracts.check_status("nope")
    contracts.submit_action("sup", proposal())
    assert contracts.check_status("a1") is Status.APPROVED
    contracts.record_effect("exec", "a1", canonical.digest("e"), "ok")
    assert contracts.check_status("a1") is Status.EXECUTED
    with pytest.raises(DuplicateEffect):
        contracts.record_effect("exec", "a1", canonical.digest("e"), "ok")
    with pytest.raises(MalformedHash):
        contracts.record_effect("exec", "a1", "xyz", "ok")
    ledger.flush()
    kinds = [t.kind for t in ledger.query(by_action_id="a1")]
    assert kinds == [TxKind.OBSERVATION_ANCHOR, TxKind.ACTION_PROPOSAL, TxKind.ACTION_VERDICT, TxKind.EFFECT_RECORD]


def test_effect_for_rejected_action(anchored):
    _, _, contracts, _ = anchored
    contracts.submit_action("sup", proposal(green=0))
    assert contracts.check_status("a1") is Status.REJECTED
    with pytest.raises(NotApproved):
        contracts.record_effect("exec", "a1", canonical.digest("e"), "ok")


def test_ledger_scan_invariants(anchored):
    _, ledger, contracts, _ = anchored
    for i, g in enumerate([45, 500, 60, 5, 90]):
        v = contracts.submit_action("sup", proposal(f"a{i}", green=g))
        if v.approved:
            contracts.record_effect("exec", v.action_id, canonical.digest(i), "ok")
    ledger.flush()
    txs = ledger.transactions()
    proposals = [t.payload["action_id"] for t in txs if t.kind is TxKind.ACTION_PROPOSAL]
    verdicts = [t for t in txs if t.kind is TxKind.ACTION_VERDICT]
    assert sorted(proposals) == sorted(v.payload["action_id"] for v in verdicts)
    seen_approved = set()
    for t in txs:
        if t.kind is TxKind.ACTION_VERDICT:
            if t.payload["verdict"] == "Approved":
                seen_approved.add(t.payload["action_id"])
            else:
                assert t.payload["reason"] in REJECTION_REASONS
        if t.kind is TxKind.EFFECT_RECORD:
            assert t.payload["action_id"] in seen_approved
    assert ledger.verify_chain().ok


def test_peers_refuse_a_forged_verdict(anchored):
    _, ledger, contracts, _ = anchored
    p = proposal(green=500)
    tx = ledger.new_transaction(TxKind.ACTION_PROPOSAL, "sup", p)
    ledger.append_transaction(tx)
    contracts.registry.proposals["a1"] = p
    contracts.registry.submitters["a1"] = "sup"
    forged = ledger.new_transaction(TxKind.ACTION_VERDICT, "sup", {"action_id": "a1", "verdict": "Approved", "reason": ""})
    with pytest.raises(EndorsementFailure):
        ledger.append_transaction(forged)


def test_failing_oracle_rejects(store):
    from govchain.clock import SimClock
    from govchain.contracts import Contracts
    from govchain.ledger import Ledger
    from govchain.policy import ComplianceOracle

    contracts = Contracts(Ledger(SimClock()), store, [ComplianceOracle("deny", lambda p: False)])
    contracts.register_observation("perc", "o1", OBS_HASH, {})
    assert contracts.submit_action("sup", proposal()).reason == "Oracle Rejected"


@settings(max_examples=15)
@given(st.integers(0, 2**32))
def test_verdicts_match_reference_evaluator(seed):
    disagreements, _, _ = run_fuzz(seed, 120)
    assert disagreements == []
