import pytest

from govchain import canonical
from govchain.bench import load_report
from govchain.cli import main


@pytest.fixture
def traffic_run(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--scenario", "traffic", "--out", str(out)]) == 0
    return out


def _ids(log, verdict):
    ids = []
    for line in log.read_text(encoding="utf-8").splitlines():
        for tx in canonical.loads(line)["txs"]:
            if tx["kind"] == "ActionVerdict" and tx["payload"]["verdict"] == verdict:
                ids.append(tx["payload"]["action_id"])
    return ids


def test_run_writes_outputs(traffic_run, capsys):
    names = sorted(p.name for p in traffic_run.iterdir())
    assert names == [
        "traffic-governed.ledger.log",
        "traffic-governed.report.json",
        "traffic-governed.report.txt",
        "traffic-governed.state.json",
    ]


def test_run_baseline_has_no_ledger(tmp_path):
    assert main(["run", "--scenario", "healthcare", "--governed", "false", "--out", str(tmp_path)]) == 0
    assert not list(tmp_path.glob("*.ledger.log"))


def test_run_input_errors(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["run", "--scenario", "traffic", "--governed", "maybe"]) == 2
    assert main(["run", "--scenario", "traffic", "--bogus", "1"]) == 2
    assert main(["frobnicate"]) == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GOVCHAIN_OUT", str(tmp_path / "env"))
    assert main(["run", "--scenario", "traffic"]) == 0
    assert (tmp_path / "env" / "traffic-governed.ledger.log").exists()


def test_same_seed_gives_identical_files(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--scenario", "inventory", "--seed", "77", "--out", str(tmp_path / d)]) == 0
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    assert main(["run", "--scenario", "inventory", "--seed", "78", "--out", str(tmp_path / "c")]) == 0
    log = "inventory-governed.ledger.log"
    assert (tmp_path / "a" / log).read_bytes() != (tmp_path / "c" / log).read_bytes()


def test_verify(traffic_run, tmp_path, capsys):
    log = traffic_run / "traffic-governed.ledger.log"
    assert main(["verify", "--ledger", str(log)]) == 0
    data = bytearray(log.read_bytes())
    second_line = data.index(b"\n") + 1
    data[second_line + 40] ^= 0x01
    bad = tmp_path / "bad.log"
    bad.write_bytes(bytes(data))
    capsys.readouterr()
    assert main(["verify", "--ledger", str(bad)]) == 3
    assert "height 1" in capsys.readouterr().out
    empty = tmp_path / "empty.log"
    empty.write_bytes(b"")
    assert main(["verify", "--ledger", str(empty)]) == 2
    assert main(["verify", "--ledger", str(tmp_path / "absent.log")]) == 2


def test_trace_rows(traffic_run, capsys):
    log = traffic_run / "traffic-governed.ledger.log"
    executed = _ids(log, "Approved")[0]
    rejected = _ids(log, "Rejected")[0]
    capsys.readouterr()
    assert main(["trace", "--ledger", str(log), "--action-id", executed]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split()[0] for r in rows] == ["anchor", "proposal", "verdict", "effect"]
    assert main(["trace", "--ledger", str(log), "--action-id", rejected]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert [r.split()[0] for r in rows] == ["anchor", "proposal", "verdict"]
    assert "Rejected" in rows[-1]
    assert main(["trace", "--ledger", str(log), "--action-id", "no-such-action"]) == 4


def test_trace_refuses_tampered_log(traffic_run, tmp_path):
    log = traffic_run / "traffic-governed.ledger.log"
    executed = _ids(log, "Approved")[0]
    data = bytearray(log.read_bytes())
    data[10] ^= 0x02
    bad = tmp_path / "bad.log"
    bad.write_bytes(bytes(data))
    assert main(["trace", "--ledger", str(bad), "--action-id", executed]) == 3


def test_inspect(traffic_run, capsys):
    log = traffic_run / "traffic-governed.ledger.log"
    assert main(["inspect", "--ledger", str(log)]) == 0
    out = capsys.readouterr().out
    assert "verified yes" in out and "ActionProposal" in out
    assert main(["inspect", "--ledger", str(log), "--height", "0"]) == 0
    assert canonical.is_canonical(capsys.readouterr().out.strip())
    assert main(["inspect", "--ledger", str(log), "--height", "99999"]) == 2


def test_bench_and_sweep(tmp_path, capsys):
    assert main(["bench", "--trials", "20", "--safety", "false", "--out", str(tmp_path)]) == 0
    assert "Mean Latency" in capsys.readouterr().out
    report = load_report(tmp_path / "bench-governed.json")
    assert report.trials == 20 and len(report.raw_totals_ms) == 20
    assert (tmp_path / "bench-comparison.json").exists()
    assert main(["bench", "--trials", "0"]) == 2
    assert main(["bench", "--agents", "x"]) == 2
    assert main(["sweep", "--counts", "5,10", "--trials", "10", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep-10.json").exists()
    assert main(["sweep", "--counts", "10,5"]) == 2
