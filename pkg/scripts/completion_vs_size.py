"""Completion time against file size.

Runs one uncontended transfer per size on a single 54 Mb/s link and, with
``--campus``, also the campus scenario with every profile forced to the
same size choice, then prints mean completion time per size next to the
serialization bound.
"""

import argparse
from dataclasses import replace

from hetsim.metrics import avg_completion_time
from hetsim.netsim import run_scenario
from hetsim.scenario import FileSize, parse_scenario, reference_scenario

MB = 2**20
PAIR = """hetsim-scenario v1
[sim]
duration = {duration}
warmup = 0
[chain c]
states: idle, send
0, 1
0, 1
[link 1]
a = 1
b = 2
bandwidth = {bandwidth}
delay = {delay}
[terminal 1]
kind = wired
chain = c
link = 1
[terminal 2]
kind = wired
link = 1
[profile c.1]
file_size = {size}
destination = 2
"""


def bound(size, packet=1024, header=40, bandwidth=54e6, delay=1e-4):
    n = -(-size // packet)
    return (size + n * header) * 8 / bandwidth + 2 * delay


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1,5,10,50", help="file sizes in MiB")
    ap.add_argument("--campus", action="store_true", help="also run the campus scenario")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    sizes = [int(float(s) * MB) for s in args.sizes.split(",")]

    print(f"{'size_bytes':>11} {'uncontended_s':>14} {'bound_s':>9}")
    for size in sizes:
        t = 1.5 * bound(size) + 5
        cfg = parse_scenario(PAIR.format(duration=t, bandwidth=54e6, delay=1e-4, size=size))
        (rec,) = run_scenario(cfg, args.seed).completions
        print(f"{size:>11} {rec[1]:>14.4f} {bound(size):>9.4f}")

    if args.campus:
        base = reference_scenario("campus")
        choice = FileSize("choice", tuple(sizes))
        profiles = {k: replace(p, file_size=choice) for k, p in base.profiles.items()}
        for enabled in (True, False):
            report = run_scenario(replace(base, profiles=profiles).with_multitasking(enabled), args.seed)
            label = "multitask" if enabled else "single"
            for size, mean in avg_completion_time(report.completions):
                print(f"campus {label:>9} {size:>11} {mean:>9.3f} s")


if __name__ == "__main__":
    main()
