"""Run the campus scenario with and without multitasking over a range of seeds.

Prints one line per seed with aggregate throughput, mean goodput and the
coefficient of variation of node channel utilization, then a tally of how
often multitasking came out ahead.

    python3 scripts/compare_modes.py --seeds 10
"""

import argparse
import time

from hetsim.netsim import run_scenario
from hetsim.scenario import load_scenario, reference_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="scenario file (default: bundled campus)")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--first-seed", type=int, default=0)
    args = ap.parse_args()

    base = load_scenario(args.config) if args.config else reference_scenario("campus")
    wins_tp = wins_cov = 0
    print(f"{'seed':>4} {'tp_multi':>10} {'tp_single':>10} {'gp_multi':>8} {'gp_single':>9} "
          f"{'cov_multi':>9} {'cov_single':>10}")
    t0 = time.perf_counter()
    for seed in range(args.first_seed, args.first_seed + args.seeds):
        m = run_scenario(base.with_multitasking(True), seed)
        s = run_scenario(base.with_multitasking(False), seed)
        cm, cs = m.util_cov(), s.util_cov()
        wins_tp += m.aggregate_throughput_bps() >= s.aggregate_throughput_bps()
        wins_cov += cm is not None and cs is not None and cm <= cs
        print(
            f"{seed:>4} {m.aggregate_throughput_bps() / 1e6:>10.3f} {s.aggregate_throughput_bps() / 1e6:>10.3f} "
            f"{m.mean_goodput_pct() or 0:>8.2f} {s.mean_goodput_pct() or 0:>9.2f} "
            f"{cm or 0:>9.3f} {cs or 0:>10.3f}"
        )
    print(f"multitask throughput >= single: {wins_tp}/{args.seeds}")
    print(f"multitask utilization CoV <= single: {wins_cov}/{args.seeds}")
    print(f"elapsed {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
