"""Governed vs baseline comparison table, plus the safety counts from the bundled scenarios.

    python scripts/reproduce_table1.py --trials 50 --out results/
"""

import argparse
from pathlib import Path

from govchain import canonical
from govchain.bench import BenchConfig, compare, run_bench
from govchain.scenarios import run_evaluation


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--agents", type=int, default=1)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    gov_eval = run_evaluation(governed=True)
    base_eval = run_evaluation(governed=False)
    config = BenchConfig(agents=args.agents, seed=args.seed)
    gov = run_bench(config, args.trials, True, blocked_unsafe=gov_eval.blocked_unsafe)
    base = run_bench(config, args.trials, False, blocked_unsafe=base_eval.blocked_unsafe)
    table = compare(gov, base)

    args.out.mkdir(parents=True, exist_ok=True)
    gov.write(args.out / "table1-governed.json")
    base.write(args.out / "table1-baseline.json")
    (args.out / "table1.json").write_text(canonical.dumps(table.to_dict()) + "\n", encoding="utf-8")

    print(table.to_text())
    print()
    print(f"injected unsafe actions  {gov_eval.injected}")
    print(f"rejections by reason     {gov_eval.rejections()}")
    print(f"baseline unsafe executed {base_eval.unsafe_executed}")
    print(f"governed variance        {gov.variance_s2:.4f} s^2")
    print(f"governed 95% CI          [{gov.ci95_s[0]:.3f}, {gov.ci95_s[1]:.3f}] s")
    print(f"throughput change        {table.throughput_change_pct:+.1f}%")
    print("stage means (s)          " + ", ".join(f"{k}={v:.3f}" for k, v in gov.stage_means_s.items()))


if __name__ == "__main__":
    main()
