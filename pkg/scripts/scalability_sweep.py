"""Mean latency and pre-ordering queue depth as the number of parallel agents grows.

    python scripts/scalability_sweep.py --counts 5,10,25,50,75,100
"""

import argparse
from pathlib import Path

from govchain import canonical
from govchain.bench import BenchConfig, scalability_sweep


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", default="5,10,25,50,75,100")
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--capacity", type=int, default=50, help="orderer in-flight limit")
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    counts = [int(c) for c in args.counts.split(",")]
    report = scalability_sweep(BenchConfig(orderer_capacity=args.capacity, seed=args.seed), counts, args.trials)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "sweep.json").write_text(canonical.dumps(report.to_dict()) + "\n", encoding="utf-8")
    print(report.to_text())
    if 5 in counts and 50 in counts:
        ratio = report.row(50).mean_total_s / report.row(5).mean_total_s
        print(f"\n50 vs 5 agents: {ratio:.3f}x ({(ratio - 1) * 100:+.1f}%)")


if __name__ == "__main__":
    main()
