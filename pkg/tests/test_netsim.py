from dataclasses import replace

import pytest

from hetsim.markov import validate_chain
from hetsim.netsim import (
    ACTIVE,
    COMPLETE,
    Channel,
    EventQueue,
    FileTransfer,
    Packet,
    Simulation,
    SimulationDiverged,
    StartService,
    StopTask,
    TerminalState,
    UnknownPacket,
    ack_packet,
    advance_service_state,
    enqueue_packet,
    rto_schedule,
    run_scenario,
)
from hetsim.rng import substream
from hetsim.scenario import TerminalSpec, TransportConfig, parse_scenario, reference_scenario

from builders import pair, pair_text
from oracles import drop_tail_replay, single_flow_completion

MB = 2**20


def cycle(n):
    return tuple(tuple(1.0 if c == (r + 1) % n else 0.0 for c in range(n)) for r in range(n))


# -- event queue -------------------------------------------------------------


def test_equal_times_dispatch_in_insertion_order():
    q = EventQueue()
    for tag in "abc":
        q.push(1.0, 0, tag)
    q.push(0.5, 0, "first")
    assert [q.pop()[3] for _ in range(4)] == ["first", "a", "b", "c"]


def test_event_cap_raises():
    cfg = parse_scenario(pair_text(), ["event_cap=2"])
    with pytest.raises(SimulationDiverged):
        run_scenario(cfg)


# -- links -------------------------------------------------------------------


def _channel(limit=50, bandwidth=54e6):
    sim = Simulation(pair(), 0)
    return Channel(sim, 1, bandwidth, 0.0001, limit, 0.0, substream(0, "test"))


def test_enqueue_boundaries():
    ch = _channel(limit=2)
    pkt = lambda: Packet(None, 0, 1024, 1064, 0)  # noqa: E731
    assert enqueue_packet(ch, pkt(), 0.0)
    assert enqueue_packet(ch, pkt(), 0.0)
    assert not enqueue_packet(ch, pkt(), 0.0)
    assert ch.drops == 1


def test_burst_into_drop_tail_matches_replay():
    ch = _channel(limit=50)
    accepted = [ch.enqueue(Packet(None, i, 1024, 1064, 0), 0.0) for i in range(60)]
    expected = drop_tail_replay([0.0] * 60, 50, 1064 * 8 / 54e6)
    assert ch.drops == expected == 10
    assert accepted == [True] * 50 + [False] * 10


def test_fifo_departure_order():
    sim = Simulation(pair(), 0)
    ch = sim.channels[(1, 0)]
    for i in range(5):
        ch.enqueue(Packet(None, i, 1024, 1064, 0), 0.0)
    out = []
    while sim.events:
        t, _, kind, a, _ = sim.events.pop()
        pkt, ok = a.tx_done(t)
        out.append((pkt.seq, t))
    assert [s for s, _ in out] == list(range(5))
    ser = 1064 * 8 / 54e6
    assert [t for _, t in out] == pytest.approx([ser * (k + 1) for k in range(5)])


# -- transport ---------------------------------------------------------------


def test_rto_schedule_doubles_and_clamps():
    assert rto_schedule(7, TransportConfig()) == [4, 8, 16, 32, 60, 60, 60]


def test_rto_floor():
    tp = TransportConfig(rto_initial=0.25, rto_min=1.0)
    assert rto_schedule(3, tp) == [1.0, 1.0, 1.0]


def test_ack_packet_completes_and_rejects_duplicates():
    tr = FileTransfer(1, 1, 1, 2, 2048, 1024, 0.0, TransportConfig())
    assert tr.total_packets == 2
    tr.record_send(0, 0, 4.0)
    tr.record_send(1, 0, 4.0)
    ack_packet(tr, 0, 0.5)
    assert tr.status == ACTIVE
    with pytest.raises(UnknownPacket):
        ack_packet(tr, 0, 0.6)
    ack_packet(tr, 1, 0.7)
    assert tr.status == COMPLETE and tr.end_time == 0.7


def test_packet_count_is_ceiling():
    assert FileTransfer(1, 1, 1, 2, 1025, 1024, 0.0, TransportConfig()).total_packets == 2
    assert FileTransfer(1, 1, 1, 2, 1024, 1024, 0.0, TransportConfig()).total_packets == 1


@pytest.mark.parametrize("size", [1024, 65536, MB, 1_000_003])
def test_single_flow_matches_serialization_oracle(size):
    sim = Simulation(pair(file_size=size), 0)
    sim.run()
    (tr,) = sim.all_transfers
    assert tr.complete
    oracle = single_flow_completion(size, 1024, 40, 54e6, 0.0001)
    assert tr.end_time - tr.start_time == pytest.approx(oracle, rel=0.05)
    assert tr.end_time - tr.start_time >= oracle * (1 - 1e-9)


def test_zero_loss_means_no_retransmissions():
    sim = Simulation(pair(file_size=5 * MB), 0)
    report = sim.run()
    (tr,) = sim.all_transfers
    assert tr.packets_sent == tr.packets_acked == tr.total_packets
    assert report.totals["transmissions"] == tr.total_packets
    assert report.totals["drops"] == report.totals["losses"] == 0


class Scripted:
    """Stands in for a channel's random stream: loses the first packet only."""

    def __init__(self):
        self.calls = 0

    def random(self):
        self.calls += 1
        return 0.0 if self.calls == 1 else 1.0


def test_single_scripted_drop_is_retransmitted_once():
    sim = Simulation(pair(file_size=8192, loss=1e-9), 0)
    sim.channels[(1, 0)].rng = Scripted()
    report = sim.run()
    (tr,) = sim.all_transfers
    assert tr.complete
    assert tr.sends[0] == 2
    assert all(tr.sends[s] == 1 for s in range(1, tr.total_packets))
    assert tr.packets_acked == tr.total_packets == 8
    assert tr.packets_sent == 9
    assert report.totals["losses"] == 1
    # the lost packet waits out the initial timeout before being resent
    assert tr.end_time - tr.start_time > 4.0


def test_exhausted_retransmissions_fail_the_transfer():
    cfg = parse_scenario(pair_text(file_size=1024, loss=0.999999, duration=400))
    sim = Simulation(cfg, 0)
    report = sim.run()
    (tr,) = sim.all_transfers
    assert tr.status == "failed"
    assert tr.sends[0] == 7  # first try plus six retransmissions
    assert report.totals["transfers_failed"] == 1


def test_lossy_link_conservation():
    cfg = parse_scenario(
        pair_text(file_size=50_000, loss=0.05, duration=400, matrix=((0.0, 1.0), (0.05, 0.95)))
    )
    sim = Simulation(cfg, 7, debug=True)
    report = sim.run()
    done = [tr for tr in sim.all_transfers if tr.complete]
    assert len(done) >= 3
    for tr in done:
        assert tr.packets_acked == tr.total_packets == sum(tr.delivered)
        assert tr.packets_sent >= tr.packets_acked
    assert report.totals["losses"] > 0


# -- workload ----------------------------------------------------------------


def _terminal(matrix, multitasking):
    chain = validate_chain(["idle"] + [f"s{k}" for k in range(1, len(matrix))], matrix)
    spec = TerminalSpec(1, "wired", 1, "c", multitasking=multitasking)
    return TerminalState(spec, chain, 0, 0)


def test_pinned_idle_starts_nothing():
    term = _terminal(((1.0, 0.0), (0.5, 0.5)), True)
    rng = substream(0, "t")
    assert all(advance_service_state(term, t, rng) == [] for t in range(50))
    report = run_scenario(pair(matrix=((1.0, 0.0), (0.5, 0.5)), duration=50))
    assert report.totals["transfers_started"] == 0


def test_single_mode_stops_before_starting():
    term = _terminal(cycle(4), False)
    term.state, term.active = 1, {5: 1}
    assert advance_service_state(term, 0.0, substream(0, "t")) == [StopTask(5), StartService(2)]


def test_entering_idle_stops_everything():
    term = _terminal(cycle(3), True)
    term.state, term.active = 2, {4: 1, 9: 2}
    assert advance_service_state(term, 0.0, substream(0, "t")) == [StopTask(4), StopTask(9)]


def test_multitask_reentry_is_a_noop():
    term = _terminal(((0.0, 1.0), (0.0, 1.0)), True)
    term.state, term.active = 0, {3: 1}
    assert advance_service_state(term, 0.0, substream(0, "t")) == []


@pytest.mark.parametrize("multitasking, held, aborted", [(True, [1, 2, 3], 0), (False, [3], 2)])
def test_three_epoch_script(multitasking, held, aborted):
    # 0 -> 1 -> 2 -> 3 at epochs 0, 1, 2; files too large to finish in time
    cfg = pair(matrix=cycle(5), file_size=50 * MB, duration=2.5, multitasking=multitasking)
    sim = Simulation(cfg, 0, debug=True)
    report = sim.run()
    term = sim.terminals[1]
    assert sorted(term.active.values()) == held
    assert len(term.controller.ledger) == len(held)
    assert report.totals["transfers_aborted"] == aborted


# -- whole runs --------------------------------------------------------------


def test_duration_zero_is_empty():
    report = run_scenario(pair(duration=0))
    assert report.window_starts == []
    assert report.totals["transfers_started"] == 0
    assert report.aggregate_throughput_bps() == 0.0
    assert all(ms.throughput_bps == [] for ms in report.terminals.values())


def test_trace_is_a_pure_function_of_config_and_seed():
    cfg = parse_scenario(
        pair_text(file_size="choice 10000, 200000", loss=0.02, duration=60, matrix=cycle(3))
    )
    a = run_scenario(cfg, 42, trace=True)
    b = run_scenario(cfg, 42, trace=True)
    c = run_scenario(cfg, 43, trace=True)
    assert a.trace == b.trace and len(a.trace) > 1000
    assert a.trace != c.trace
    times = [t for t, _, _ in a.trace]
    assert times == sorted(times)


@pytest.mark.slow
@pytest.mark.parametrize("multitasking", [True, False])
def test_campus_invariants_hold_at_every_event(multitasking):
    cfg = replace(reference_scenario("campus").with_multitasking(multitasking), duration=90.0)
    report = run_scenario(cfg, 3, debug=True)
    assert report.totals["transfers_started"] > 0
    assert report.totals["acked"] <= report.totals["transmissions"]


def test_windowed_throughput_conserves_delivered_bits():
    cfg = parse_scenario(pair_text(file_size="uniform 5000 400000", duration=40.5, warmup=3, matrix=cycle(3)))
    report = run_scenario(cfg, 2)
    assert report.window_lengths[-1] == pytest.approx(0.5)
    total = sum(
        bps * length
        for ms in report.terminals.values()
        for bps, length in zip(ms.throughput_bps, report.window_lengths)
    )
    assert total == pytest.approx(report.totals["delivered_bits"], rel=1e-12)
    assert report.totals["delivered_bits"] > 0


def test_idle_run_has_zero_utilization():
    report = run_scenario(pair(matrix=((1.0, 0.0), (0.5, 0.5)), duration=30))
    assert all(u == 0.0 for series in report.link_util_pct.values() for u in series)
    assert all(g is None for ms in report.terminals.values() for g in ms.goodput_pct)
