"""Acceptance criteria, one test (or small group) per criterion.

The campus sweep (seeds 0-9, both modes) runs once per session and is shared
by the throughput and utilization-uniformity criteria. The terminal summary
prints one PASS/FAIL line per criterion.
"""

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings

from hetsim.admission import AdmissionController, Admitted, Task
from hetsim.cli import main as cli_main
from hetsim.cli import series_csv
from hetsim.markov import simulate_trajectory, steady_state, validate_chain
from hetsim.metrics import avg_completion_time, channel_efficiency_pct, goodput_pct
from hetsim.netsim import Simulation, run_scenario
from hetsim.rng import substream
from hetsim.scenario import (
    TransportConfig,
    parse_scenario,
    reference_scenario,
    serialize_scenario,
)

from builders import pair
from oracles import brute_force_eviction, single_flow_completion, stationary_by_stepping
from strategies import scenario_configs

MB = 2**20
SEEDS = range(10)


# -- 1 -----------------------------------------------------------------------


def _random_irreducible(rnd, n):
    """Sparse random rows plus a self-loop and a ring edge, so the chain is
    irreducible and aperiodic."""
    m = [[rnd.random() if rnd.random() < 0.4 else 0.0 for _ in range(n)] for _ in range(n)]
    for i in range(n):
        m[i][i] += rnd.uniform(0.05, 1)
        m[i][(i + 1) % n] += rnd.uniform(0.05, 1)
    return [[x / math.fsum(r) for x in r] for r in m]


@pytest.mark.criterion(1, "steady state matches power-iteration oracle on 100 random chains")
def test_c1_steady_state_oracle(record_property):
    rnd = random.Random(2024)
    worst_gap = worst_res = 0.0
    for _ in range(100):
        n = rnd.randint(2, 10)
        m = _random_irreducible(rnd, n)
        chain = validate_chain([f"s{i}" for i in range(n)], m)
        pi = np.array(steady_state(chain).probs)
        oracle = np.array(stationary_by_stepping(m))
        gap = float(np.max(np.abs(pi - oracle)))
        res = float(np.max(np.abs(pi @ chain.as_array() - pi)))
        worst_gap, worst_res = max(worst_gap, gap), max(worst_res, res)
        assert gap <= 1e-9
        assert res <= 1e-9
        assert abs(pi.sum() - 1) <= 1e-9
    record_property("detail", f"worst oracle gap {worst_gap:.1e}, worst residual {worst_res:.1e}")


# -- 2 -----------------------------------------------------------------------


@pytest.mark.criterion(2, "10^6-step wired trajectory frequencies within 5e-3 of pi")
def test_c2_trajectory_consistency(record_property):
    chain = reference_scenario("campus").chains["wired"].chain
    pi = np.array(steady_state(chain).probs)
    path = simulate_trajectory(chain, 0, 10**6, substream(11, "trajectory"))
    freq = np.bincount(np.asarray(path), minlength=chain.n) / len(path)
    err = float(np.max(np.abs(freq - pi)))
    record_property("detail", f"max-norm error {err:.2e}")
    assert err <= 5e-3


# -- 3 -----------------------------------------------------------------------


@pytest.mark.criterion(3, "admission never exceeds capacity; evictions match brute force")
def test_c3_capacity_never_exceeded():
    rnd = random.Random(5)
    for _ in range(10**4):
        cap_m, cap_d = rnd.uniform(10, 100), rnd.uniform(10, 100)
        c = AdmissionController(cap_m, cap_d, auto_terminate=rnd.random() < 0.8)
        for i in range(rnd.randint(1, 12)):
            if c.ledger and rnd.random() < 0.3:
                c.terminate(rnd.choice(sorted(c.ledger)))
            else:
                c.request_service(
                    Task(i, "s", rnd.randint(0, 4), rnd.uniform(0, cap_m), rnd.uniform(0, cap_d))
                )
            mem = math.fsum(t.memory for t in c.ledger.values())
            dem = math.fsum(t.demand for t in c.ledger.values())
            assert mem <= cap_m and dem <= cap_d


@pytest.mark.criterion(3, "admission never exceeds capacity; evictions match brute force")
def test_c3_evictions_match_brute_force(record_property):
    rnd = random.Random(6)
    evicting = 0
    for _ in range(1000):
        auto = rnd.random() < 0.85
        c = AdmissionController(100, 100, auto_terminate=auto)
        for i in range(rnd.randint(0, 8)):
            c.request_service(Task(i, "s", rnd.randint(0, 4), rnd.randint(0, 45), rnd.randint(0, 45)))
        ledger = [
            dict(id=t.id, priority=t.priority, memory=t.memory, demand=t.demand)
            for t in c.ledger.values()
        ]
        new = dict(id=99, priority=rnd.randint(0, 4), memory=rnd.randint(0, 100), demand=rnd.randint(0, 100))
        expected = brute_force_eviction(100, 100, ledger, new, auto)
        d = c.request_service(Task(99, "s", new["priority"], new["memory"], new["demand"]))
        if expected is None:
            assert not isinstance(d, Admitted)
        else:
            assert isinstance(d, Admitted) and tuple(sorted(d.evicted)) == expected
            evicting += bool(d.evicted)
    record_property("detail", f"{evicting}/1000 instances needed evictions")
    assert evicting > 100


# -- 4 -----------------------------------------------------------------------


@pytest.mark.criterion(4, "metric formulas exact; zero-loss runs give 100% goodput")
def test_c4_metric_formulas():
    assert goodput_pct(80, 100) == 80.0
    assert channel_efficiency_pct(80e6, 100e6) == 80.0


@pytest.mark.criterion(4, "metric formulas exact; zero-loss runs give 100% goodput")
@pytest.mark.parametrize("multitasking", [True, False])
def test_c4_zero_loss_goodput(multitasking):
    base = reference_scenario("minimal").with_multitasking(multitasking)
    present = 0
    for seed in range(3):
        report = run_scenario(base, seed)
        for ms in report.terminals.values():
            for g in ms.goodput_pct:
                if g is not None:
                    present += 1
                    assert g == 100.0
    assert present > 100


# -- 5 and 7 share one sweep -------------------------------------------------


@pytest.fixture(scope="module")
def campus_sweep():
    base = reference_scenario("campus")
    out = {}
    for seed in SEEDS:
        out[seed] = (
            run_scenario(base.with_multitasking(True), seed),
            run_scenario(base.with_multitasking(False), seed),
        )
    return out


@pytest.mark.slow
@pytest.mark.criterion(5, "campus throughput multitask >= single in >= 9 of 10 seeds")
def test_c5_throughput_trend(campus_sweep, record_property):
    wins = sum(
        m.aggregate_throughput_bps() >= s.aggregate_throughput_bps() for m, s in campus_sweep.values()
    )
    ratios = [m.aggregate_throughput_bps() / s.aggregate_throughput_bps() for m, s in campus_sweep.values()]
    record_property("detail", f"{wins}/10 seeds, ratio {min(ratios):.2f}-{max(ratios):.2f}")
    assert wins >= 9


@pytest.mark.slow
@pytest.mark.criterion(7, "utilization CoV multitask <= single in a majority of 10 seeds")
def test_c7_utilization_uniformity(campus_sweep, record_property):
    wins = 0
    for m, s in campus_sweep.values():
        cm, cs = m.util_cov(), s.util_cov()
        assert cm is not None and cs is not None
        wins += cm <= cs
    record_property("detail", f"{wins}/10 seeds")
    assert wins >= 6


# -- 6 -----------------------------------------------------------------------


@pytest.mark.criterion(6, "completion time increases with size; single flow within 5% of oracle")
def test_c6_completion_time_trend(record_property):
    records = []
    worst = 0.0
    tp = TransportConfig()
    for size_mb in (1, 5, 10, 50):
        size = size_mb * MB
        sim = Simulation(pair(file_size=size, duration=20.0), 0)
        report = sim.run()
        (tr,) = sim.all_transfers
        assert tr.complete
        records += report.completions
        oracle = single_flow_completion(size, tp.packet_size, tp.header_bytes, 54e6, 0.0001)
        rel = abs(report.completions[0][1] - oracle) / oracle
        worst = max(worst, rel)
        assert rel <= 0.05
    means = [m for _, m in avg_completion_time(records)]
    record_property("detail", "means " + ", ".join(f"{m:.3f}s" for m in means) + f"; worst gap {worst:.1e}")
    assert all(a < b for a, b in zip(means, means[1:]))


# -- 8 -----------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.criterion(8, "byte-identical CSV across repeat runs and compare-mode sub-runs")
def test_c8_determinism(tmp_path, capsys):
    args = ["run", "--config", "builtin:campus", "--seed", "42"]
    for mode in ("multitask", "single", "compare"):
        assert cli_main(args + ["--mode", mode, "--out", str(tmp_path / mode)]) == 0
    capsys.readouterr()
    for mode in ("multitask", "single"):
        solo = (tmp_path / f"{mode}.csv").read_bytes()
        assert solo == (tmp_path / f"compare.{mode}.csv").read_bytes()
        assert (tmp_path / f"{mode}.completions.csv").read_bytes() == (
            tmp_path / f"compare.{mode}.completions.csv"
        ).read_bytes()
    again = series_csv(run_scenario(reference_scenario("campus"), 42)).encode()
    assert again == (tmp_path / "multitask.csv").read_bytes()


# -- 9 -----------------------------------------------------------------------


@pytest.mark.criterion(9, "parse(serialize(parse)) identity on 200 configs; defaults exact")
@settings(max_examples=200, deadline=None)
@given(scenario_configs())
def test_c9_round_trip(config):
    once = parse_scenario(serialize_scenario(config))
    assert once == config
    assert parse_scenario(serialize_scenario(once)) == once


@pytest.mark.criterion(9, "parse(serialize(parse)) identity on 200 configs; defaults exact")
def test_c9_defaults():
    c = parse_scenario(
        "hetsim-scenario v1\n[chain c]\nstates: idle, x\n0.5, 0.5\n0.5, 0.5\n"
        "[link 1]\na = 1\nb = 2\n[terminal 1]\nkind = wired\nchain = c\nlink = 1\n"
        "[terminal 2]\nkind = wired\nlink = 1\n[profile c.1]\nfile_size = 1\ndestination = 2\n"
    )
    assert (c.duration, c.warmup) == (400.0, 30.0)
    assert c.transport.packet_size == 1024
    assert (c.transport.rto_initial, c.transport.rto_min, c.transport.rto_max) == (4.0, 1.0, 60.0)
    assert c.links[0].bandwidth == 54e6 and c.links[0].queue_limit == 50
