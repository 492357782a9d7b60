"""Command-line driver.

Exit codes:
  0  success
  1  internal error
  2  bad flags, unreadable or invalid input (config, empty ledger file)
  3  ledger verification failed (first bad height printed)
  4  trace failed: unknown action id or incomplete lineage

Human-readable output goes to stdout; machine-readable artifacts are written
only to files under ``--out`` (default: ``$GOVCHAIN_OUT`` or ``./govchain-out``).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Sequence

from . import canonical
from .bench import BenchConfig, compare, run_bench, scalability_sweep
from .ledger import Ledger, LedgerError, TxKind, lineage, verify_log
from .scenarios import ScenarioError, load_scenario, run_evaluation, run_scenario, write_outputs

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_TAMPERED, EXIT_TRACE = 0, 1, 2, 3, 4

STAGE_OF = {
    TxKind.OBSERVATION_ANCHOR: "anchor",
    TxKind.ACTION_PROPOSAL: "proposal",
    TxKind.ACTION_VERDICT: "verdict",
    TxKind.EFFECT_RECORD: "effect",
}


class InputError(Exception):
    pass


def _out_dir(value: str | None) -> Path:
    return Path(value or os.environ.get("GOVCHAIN_OUT") or "govchain-out")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _counts(text: str) -> list[int]:
    try:
        counts = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not counts or any(c < 1 for c in counts) or counts != sorted(set(counts)):
        raise argparse.ArgumentTypeError("agent counts must be positive and strictly ascending")
    return counts


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(config, args.governed)
    paths = write_outputs(result, out)
    print(result.report.to_text())
    for kind, path in sorted(paths.items()):
        print(f"wrote {kind}: {path}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    try:
        report = verify_log(args.ledger)
    except (OSError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if report.ok:
        print(f"ok: {args.ledger} verifies")
        return EXIT_OK
    print(f"tampered: first bad block at height {report.first_bad_height} ({report.reason})")
    return EXIT_TAMPERED


def cmd_trace(args: argparse.Namespace) -> int:
    try:
        check = verify_log(args.ledger)
        if not check.ok:
            print(f"tampered: first bad block at height {check.first_bad_height}; refusing to trace")
            return EXIT_TAMPERED
        ledger = Ledger.from_log(args.ledger)
    except (OSError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rows = lineage(ledger.transactions(), args.action_id)
    if not any(tx.kind is TxKind.ACTION_PROPOSAL for tx in rows):
        print(f"unknown action id {args.action_id!r}")
        return EXIT_TRACE
    for tx in rows:
        ref = tx.payload.get("obs_hash") or tx.payload.get("effect_hash") or tx.payload_hash
        extra = ""
        if tx.kind is TxKind.ACTION_VERDICT:
            extra = f" {tx.payload['verdict']}" + (f" ({tx.payload['reason']})" if tx.payload["reason"] else "")
        elif tx.kind is TxKind.EFFECT_RECORD:
            extra = f" status {tx.payload['status_code']}"
        print(f"{STAGE_OF[tx.kind]:<9s} t={tx.timestamp:<9d} tx={tx.tx_id} agent={tx.agent_id} hash={ref}{extra}")
    missing = lineage_gaps(rows)
    if missing:
        print(f"incomplete lineage: missing {', '.join(missing)}")
        return EXIT_TRACE
    return EXIT_OK


def lineage_gaps(rows) -> list[str]:
    stages = {STAGE_OF[tx.kind] for tx in rows}
    verdicts = [tx for tx in rows if tx.kind is TxKind.ACTION_VERDICT]
    required = ["anchor", "proposal", "verdict"]
    if verdicts and verdicts[0].payload.get("verdict") == "Approved":
        required.append("effect")
    return [s for s in required if s not in stages]


def cmd_inspect(args: argparse.Namespace) -> int:
    try:
        check = verify_log(args.ledger)
        ledger = Ledger.from_log(args.ledger)
    except (OSError, LedgerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    blocks = ledger.blocks
    if args.height is not None:
        if not (0 <= args.height < len(blocks)):
            print(f"error: height {args.height} outside [0, {len(blocks) - 1}]", file=sys.stderr)
            return EXIT_INPUT
        print(blocks[args.height].to_line())
        return EXIT_OK
    counts: dict[str, int] = {}
    for tx in ledger.transactions():
        counts[tx.kind.value] = counts.get(tx.kind.value, 0) + 1
    print(f"ledger   {args.ledger}")
    print(f"height   {len(blocks) - 1}")
    print(f"tip      {blocks[-1].block_hash}")
    print(f"verified {'yes' if check.ok else f'no (first bad height {check.first_bad_height})'}")
    for kind, n in sorted(counts.items()):
        print(f"  {kind:<18s} {n}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = BenchConfig(agents=args.agents, seed=args.seed)
    if args.safety:
        governed_eval = run_evaluation(governed=True)
        baseline_eval = run_evaluation(governed=False)
        blocked = (governed_eval.blocked_unsafe, baseline_eval.blocked_unsafe)
    else:
        blocked = (0, 0)
    governed = run_bench(config, args.trials, True, blocked_unsafe=blocked[0])
    baseline = run_bench(config, args.trials, False, blocked_unsafe=blocked[1])
    table = compare(governed, baseline)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    governed.write(out / "bench-governed.json")
    baseline.write(out / "bench-baseline.json")
    (out / "bench-comparison.json").write_text(canonical.dumps(table.to_dict()) + "\n", encoding="utf-8")
    print(table.to_text())
    print(f"governed variance {governed.variance_s2:.4f} s^2, CI width {governed.ci95_s[1] - governed.ci95_s[0]:.3f} s")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = BenchConfig(seed=args.seed)
    report = scalability_sweep(config, args.counts, trials=args.trials)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(canonical.dumps(report.to_dict()) + "\n", encoding="utf-8")
    for r in report.reports:
        r.write(out / f"sweep-{r.agents}.json")
    print(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="govchain", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario end to end")
    p.add_argument("--scenario", required=True, help="scenario file, or a bundled name (healthcare, inventory, traffic)")
    p.add_argument("--governed", type=_bool, default=True, help="route proposals through the ledger (default true)")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="check a ledger log's hash chain and endorsements")
    p.add_argument("--ledger", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("trace", help="print the anchor -> proposal -> verdict -> effect lineage of an action")
    p.add_argument("--ledger", required=True)
    p.add_argument("--action-id", required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("inspect", help="summarize a ledger log or print one block")
    p.add_argument("--ledger", required=True)
    p.add_argument("--height", type=int, default=None)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("bench", help="governed vs baseline latency/throughput comparison")
    p.add_argument("--trials", type=_positive, default=50)
    p.add_argument("--agents", type=_positive, default=1)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--safety", type=_bool, default=True, help="fill the blocked-unsafe row from the bundled scenarios")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="mean latency and queue depth across agent counts")
    p.add_argument("--counts", type=_counts, default=[5, 10, 25, 50])
    p.add_argument("--trials", type=_positive, default=50)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
