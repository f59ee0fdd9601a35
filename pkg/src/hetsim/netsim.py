"""Deterministic discrete-event engine.

Terminals step their service chain every ``state_epoch`` seconds from the
end of warm-up. Entering an active state asks the terminal's admission
controller to run that state's service; an admitted task sends one file to
the profile's destination with a windowed, per-packet-acknowledged transport.

Data packets cross each hop through a drop-tail FIFO (serialization, then
propagation). Acknowledgements return over the reverse path with propagation
delay only and are never lost.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

import networkx as nx
import numpy as np

from hetsim import markov
from hetsim.admission import AdmissionController, Admitted, Task
from hetsim.metrics import (
    MetricsSeries,
    channel_efficiency_pct,
    coefficient_of_variation,
    window_edges,
)
from hetsim.rng import substream
from hetsim.scenario import ScenarioConfig, TerminalSpec, TransportConfig, topology_graph


class SimulationError(RuntimeError):
    pass


class SimulationDiverged(SimulationError):
    pass


class UnknownPacket(SimulationError, KeyError):
    pass


ARRIVE, TX_DONE, ACK, TIMER, EPOCH = range(5)


class EventQueue:
    """Time-ordered events; equal times dispatch in insertion order."""

    def __init__(self, cap: int = 10**7):
        self._heap: list = []
        self._seq = itertools.count()
        self.cap = cap
        self.now = 0.0

    def push(self, time: float, kind: int, a=None, b=None) -> None:
        # handlers never schedule into the past; the run loop checks causality
        heapq.heappush(self._heap, (time, next(self._seq), kind, a, b))

    def check_cap(self) -> None:
        if len(self._heap) > self.cap:
            raise SimulationDiverged(f"more than {self.cap} pending events")

    def pop(self):
        ev = heapq.heappop(self._heap)
        self.now = ev[0]
        return ev

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def __len__(self):
        return len(self._heap)


def retransmission_timeout(attempt: int, transport: TransportConfig) -> float:
    """Timeout for the ``attempt``-th transmission of a packet (0 = first)."""
    rto = transport.rto_initial * 2.0**attempt
    return min(max(rto, transport.rto_min), transport.rto_max)


def rto_schedule(n: int, transport: TransportConfig) -> list[float]:
    return [retransmission_timeout(k, transport) for k in range(n)]


class Packet:
    __slots__ = ("transfer", "seq", "payload", "wire_bytes", "hop", "tx_window")

    def __init__(self, transfer, seq, payload, wire_bytes, tx_window):
        self.transfer = transfer
        self.seq = seq
        self.payload = payload
        self.wire_bytes = wire_bytes
        self.hop = 0
        self.tx_window = tx_window


ACTIVE, COMPLETE, ABORTED, FAILED = "active", "complete", "aborted", "failed"


class FileTransfer:
    """One file sent packet by packet; holds both sender and receiver state."""

    def __init__(self, id, task_id, src, dst, size, packet_size, start_time, transport):
        self.id = id
        self.task_id = task_id
        self.src = src
        self.dst = dst
        self.size = size
        self.packet_size = packet_size
        self.total_packets = -(-size // packet_size)
        self.start_time = start_time
        self.end_time: Optional[float] = None
        self.packets_sent = 0
        self.packets_acked = 0
        self.status = ACTIVE
        self.next_seq = 0
        self.cwnd = float(transport.initial_window)
        self.max_window = max(1, transport.receive_window // packet_size)
        self.outstanding: dict[int, list] = {}  # seq -> [attempt, deadline]
        self.sends: dict[int, int] = {}  # seq -> transmissions so far
        self.timer_at: Optional[float] = None
        self.timer_token = 0
        self.delivered = bytearray(self.total_packets)
        self.route: list = []
        self.ack_delay = 0.0

    def payload(self, seq: int) -> int:
        if seq == self.total_packets - 1:
            return self.size - seq * self.packet_size
        return self.packet_size

    @property
    def complete(self) -> bool:
        return self.status == COMPLETE

    def record_send(self, seq: int, attempt: int, deadline: float) -> None:
        self.packets_sent += 1
        self.sends[seq] = self.sends.get(seq, 0) + 1
        self.outstanding[seq] = [attempt, deadline]

    def ack(self, seq: int, now: float) -> "FileTransfer":
        """Acknowledge ``seq`` once; completes the transfer on the last ack."""
        if seq not in self.outstanding:
            raise UnknownPacket(f"transfer {self.id}: seq {seq} is not awaiting an ack")
        del self.outstanding[seq]
        self.packets_acked += 1
        self.cwnd = min(self.cwnd + 1.0 / self.cwnd, float(self.max_window))
        if self.packets_acked == self.total_packets:
            self.status = COMPLETE
            self.end_time = now
        return self

    def expired(self, now: float) -> list[int]:
        return [s for s, (_, deadline) in self.outstanding.items() if deadline <= now]


def ack_packet(transfer: FileTransfer, packet_seq: int, now: float) -> FileTransfer:
    return transfer.ack(packet_seq, now)


class Channel:
    """One direction of a link: drop-tail FIFO in front of a serializer.

    Occupancy counts the packet being serialized.
    """

    def __init__(self, sim, link_id, bandwidth, delay, queue_limit, loss, rng):
        self.sim = sim
        self.link_id = link_id
        self.bandwidth = bandwidth
        self.delay = delay
        self.queue_limit = queue_limit
        self.loss = loss
        self.rng = rng
        self.queue: deque = deque()
        self.drops = 0
        self.losses = 0
        self.transmissions = 0
        self.wire_bits = [0.0] * sim.n_windows

    def enqueue(self, packet: Packet, now: float) -> bool:
        if len(self.queue) >= self.queue_limit:
            self.drops += 1
            return False
        self.queue.append(packet)
        assert len(self.queue) <= self.queue_limit
        if len(self.queue) == 1:
            self._start(now)
        return True

    def _start(self, now: float) -> None:
        bits = self.queue[0].wire_bytes * 8
        ser = bits / self.bandwidth
        self.transmissions += 1
        self.sim.account(self.wire_bits, now, now + ser, bits)
        self.sim.events.push(now + ser, TX_DONE, self)

    def tx_done(self, now: float) -> tuple[Packet, bool]:
        """Finish the head packet; the flag is False if the channel lost it."""
        pkt = self.queue.popleft()
        if self.queue:
            self._start(now)
        if self.loss > 0.0 and self.rng.random() < self.loss:
            self.losses += 1
            return pkt, False
        return pkt, True


def enqueue_packet(channel: Channel, packet: Packet, now: float) -> bool:
    return channel.enqueue(packet, now)


@dataclass(frozen=True)
class StartService:
    state: int


@dataclass(frozen=True)
class StopTask:
    task_id: int


WorkloadAction = Union[StartService, StopTask]


class TerminalState:
    def __init__(self, spec: TerminalSpec, chain, n_windows: int, seed: int):
        self.spec = spec
        self.id = spec.id
        self.chain = chain
        self.multitasking_enabled = spec.multitasking
        self.controller = AdmissionController(
            spec.capacity_mem, spec.capacity_demand, spec.auto_terminate
        )
        self.chain_rng = substream(seed, "chain", spec.id)
        self.work_rng = substream(seed, "workload", spec.id)
        self.state = 0
        self.active: dict[int, int] = {}  # task id -> chain state
        self.transfers: dict[int, FileTransfer] = {}  # task id -> transfer
        self.delivered_bits = [0.0] * n_windows
        self.acked = [0] * n_windows
        self.failed = [0] * n_windows
        self.completions: list[tuple[int, float]] = []


def advance_service_state(
    terminal: TerminalState, now: float, rng: np.random.Generator
) -> list[WorkloadAction]:
    """Step the terminal's chain and translate the move into workload actions."""
    prev = terminal.state
    nxt = markov.step(terminal.chain, prev, rng)
    terminal.state = nxt
    if nxt == prev:
        return []
    running = sorted(terminal.active)
    if nxt == 0:
        return [StopTask(t) for t in running]
    actions: list[WorkloadAction] = []
    if not terminal.multitasking_enabled:
        actions += [StopTask(t) for t in running]
    elif nxt in terminal.active.values():
        return []
    actions.append(StartService(nxt))
    return actions


@dataclass
class SimulationReport:
    seed: int
    window_starts: list[float]
    window_lengths: list[float]
    terminals: dict[int, MetricsSeries]
    attach_links: dict[int, int]
    link_util_pct: dict[int, list[float]]
    network_util_pct: list[float]
    node_util_pct: list[float]
    completions: list[tuple[int, float]]
    totals: dict[str, float] = field(default_factory=dict)
    trace: Optional[list] = None

    @property
    def measured_seconds(self) -> float:
        return sum(self.window_lengths)

    def aggregate_throughput_bps(self) -> float:
        if not self.window_lengths:
            return 0.0
        return self.totals["delivered_bits"] / self.measured_seconds

    def mean_goodput_pct(self) -> Optional[float]:
        resolved = self.totals["acked"] + self.totals["failed"]
        return 100.0 * self.totals["acked"] / resolved if resolved else None

    def mean_channel_util_pct(self) -> float:
        """Mean over windows of the node channel utilization."""
        u = self.node_util_pct
        return sum(u) / len(u) if u else 0.0

    def util_cov(self) -> Optional[float]:
        """Dispersion of the node channel utilization series."""
        if not self.node_util_pct or self.mean_channel_util_pct() == 0:
            return None
        return coefficient_of_variation(self.node_util_pct)


class Simulation:
    def __init__(self, config: ScenarioConfig, seed: int, trace: bool = False, debug: bool = False):
        self.cfg = config
        self.seed = seed
        self.tp = config.transport
        self.edges = window_edges(config.warmup, config.duration, config.window)
        self.n_windows = len(self.edges)
        self._w0 = config.warmup
        self._inv_window = 1.0 / config.window
        self._last_window = self.n_windows - 1
        self.events = EventQueue(config.event_cap)
        self.trace: Optional[list] = [] if trace else None
        self.debug = debug
        self.totals = dict.fromkeys(
            (
                "delivered_bits", "transmissions", "acked", "failed", "drops", "losses",
                "duplicates", "transfers_started", "transfers_completed", "transfers_aborted",
                "transfers_failed", "evictions", "rejections", "events",
            ),
            0,
        )

        self.links = {link.id: link for link in config.links}
        self.channels: dict[tuple[int, int], Channel] = {}
        for link in config.links:
            for d in (0, 1):
                self.channels[(link.id, d)] = Channel(
                    self, link.id, link.bandwidth, link.delay, link.queue_limit, link.loss,
                    substream(seed, "link", 2 * link.id + d),
                )
        self.graph = topology_graph(config)
        self._routes: dict[tuple[int, int], tuple[list, float]] = {}
        self.terminals: dict[int, TerminalState] = {}
        for spec in config.terminals:
            chain = config.chains[spec.chain].chain if spec.chain else None
            self.terminals[spec.id] = TerminalState(spec, chain, self.n_windows, seed)
        self._next_task = 0
        self._next_transfer = 0
        self.all_transfers: list[FileTransfer] = []

    # -- helpers ---------------------------------------------------------------

    def window_index(self, t: float) -> int:
        k = int((t - self._w0) * self._inv_window)
        if k < 0:
            return 0
        return k if k <= self._last_window else self._last_window

    def account(self, series: list, t0: float, t1: float, amount: float) -> None:
        """Spread ``amount`` uniformly over [t0, t1] into per-window bins."""
        if self.n_windows == 0:
            return
        w0 = self.window_index(t0)
        if t1 <= self.edges[w0][1] or w0 == self._last_window:
            series[w0] += amount
            return
        w1 = self.window_index(t1)
        rate = amount / (t1 - t0)
        for w in range(w0, w1 + 1):
            lo, hi = self.edges[w]
            lo = max(lo, t0) if w > w0 else t0
            hi = min(hi, t1) if w < w1 else t1
            series[w] += rate * (hi - lo)

    def route(self, src: int, dst: int) -> tuple[list, float]:
        key = (src, dst)
        if key not in self._routes:
            nodes = nx.shortest_path(self.graph, str(src), str(dst))
            hops = []
            delay = 0.0
            for u, v in zip(nodes, nodes[1:]):
                lid = self.graph.edges[u, v]["id"]
                link = self.links[lid]
                hops.append(self.channels[(lid, 0 if link.a == u else 1)])
                delay += link.delay
            self._routes[key] = (hops, delay)
        return self._routes[key]

    def _resolve(self, pkt: Packet, ok: bool) -> None:
        term = self.terminals[pkt.transfer.src]
        if ok:
            term.acked[pkt.tx_window] += 1
            self.totals["acked"] += 1
        else:
            term.failed[pkt.tx_window] += 1
            self.totals["failed"] += 1

    # -- transport -------------------------------------------------------------

    def _send(self, tr: FileTransfer, seq: int, attempt: int, now: float) -> None:
        deadline = now + retransmission_timeout(attempt, self.tp)
        tr.record_send(seq, attempt, deadline)
        self.totals["transmissions"] += 1
        payload = tr.payload(seq)
        pkt = Packet(tr, seq, payload, payload + self.tp.header_bytes, self.window_index(now))
        if tr.timer_at is None or deadline < tr.timer_at:
            tr.timer_token += 1
            tr.timer_at = deadline
            self.events.push(deadline, TIMER, tr, tr.timer_token)
        if not tr.route[0].enqueue(pkt, now):
            self.totals["drops"] += 1
            self._resolve(pkt, False)

    def _pump(self, tr: FileTransfer, now: float) -> None:
        # new data waits while the sender's own interface queue is full
        first = tr.route[0]
        while (
            tr.next_seq < tr.total_packets
            and len(tr.outstanding) < int(tr.cwnd)
            and len(first.queue) < first.queue_limit
        ):
            seq = tr.next_seq
            tr.next_seq += 1
            self._send(tr, seq, 0, now)

    def _on_timer(self, tr: FileTransfer, token: int, now: float) -> None:
        if token != tr.timer_token or tr.status != ACTIVE:
            return
        tr.timer_at = None
        expired = tr.expired(now)
        if expired:
            if any(tr.outstanding[s][0] >= self.tp.max_retransmits for s in expired):
                self._end_task(self.terminals[tr.src], tr.task_id, FAILED)
                return
            tr.cwnd = max(1.0, tr.cwnd / 2.0)
            for s in expired:
                self._send(tr, s, tr.outstanding[s][0] + 1, now)
        if tr.outstanding and tr.timer_at is None:
            tr.timer_at = min(d for _, d in tr.outstanding.values())
            tr.timer_token += 1
            self.events.push(tr.timer_at, TIMER, tr, tr.timer_token)

    def _on_arrive(self, pkt: Packet, now: float) -> None:
        tr = pkt.transfer
        if pkt.hop < len(tr.route):
            if not tr.route[pkt.hop].enqueue(pkt, now):
                self.totals["drops"] += 1
                self._resolve(pkt, False)
            return
        if tr.delivered[pkt.seq]:
            self.totals["duplicates"] += 1
            self._resolve(pkt, False)
            return
        tr.delivered[pkt.seq] = 1
        bits = pkt.payload * 8
        self.terminals[tr.src].delivered_bits[self.window_index(now)] += bits
        self.totals["delivered_bits"] += bits
        self.events.push(now + tr.ack_delay, ACK, pkt)

    def _on_ack(self, pkt: Packet, now: float) -> None:
        self._resolve(pkt, True)
        tr = pkt.transfer
        if tr.status != ACTIVE:
            return
        tr.ack(pkt.seq, now)
        term = self.terminals[tr.src]
        if tr.complete:
            term.completions.append((tr.size, now - tr.start_time))
            self._end_task(term, tr.task_id, COMPLETE)
        else:
            self._pump(tr, now)

    # -- workload --------------------------------------------------------------

    def _end_task(self, term: TerminalState, task_id: int, status: str) -> None:
        tr = term.transfers.pop(task_id)
        if tr.status == ACTIVE:
            tr.status = status
        tr.outstanding.clear()
        tr.timer_token += 1
        term.active.pop(task_id, None)
        if task_id in term.controller.ledger:
            term.controller.terminate(task_id)
        self.totals["transfers_" + {COMPLETE: "completed", ABORTED: "aborted", FAILED: "failed"}[status]] += 1

    def apply(self, term: TerminalState, action: WorkloadAction, now: float) -> None:
        if isinstance(action, StopTask):
            self._end_task(term, action.task_id, ABORTED)
            return
        profile = self.cfg.profiles[(term.spec.chain, action.state)]
        self._next_task += 1
        task = Task(self._next_task, profile.service, profile.priority, profile.memory, profile.demand)
        decision = term.controller.request_service(task)
        if not isinstance(decision, Admitted):
            self.totals["rejections"] += 1
            return
        for victim in decision.evicted:
            self.totals["evictions"] += 1
            self._end_task(term, victim, ABORTED)
        term.active[task.id] = action.state
        size = profile.file_size.sample(term.work_rng)
        self._next_transfer += 1
        tr = FileTransfer(
            self._next_transfer, task.id, term.id, profile.destination, size,
            self.tp.packet_size, now, self.tp,
        )
        tr.route, tr.ack_delay = self.route(term.id, profile.destination)
        term.transfers[task.id] = tr
        self.all_transfers.append(tr)
        self.totals["transfers_started"] += 1
        self._pump(tr, now)

    def _on_epoch(self, term: TerminalState, k: int, now: float) -> None:
        for action in advance_service_state(term, now, term.chain_rng):
            self.apply(term, action, now)
        t_next = self.cfg.warmup + (k + 1) * self.cfg.state_epoch
        if t_next < self.cfg.duration:
            self.events.push(t_next, EPOCH, term, k + 1)

    # -- main loop -------------------------------------------------------------

    def run(self) -> SimulationReport:
        cfg = self.cfg
        if cfg.warmup < cfg.duration:
            for term in self.terminals.values():
                if term.chain is not None:
                    self.events.push(cfg.warmup, EPOCH, term, 0)
        events = self.events
        heap = events._heap
        trace = self.trace
        n = 0
        cap = events.cap
        end = cfg.duration
        pop = heapq.heappop
        while heap and heap[0][0] < end:
            if len(heap) > cap:
                events.check_cap()
            now, _, kind, a, b = pop(heap)
            if now < events.now:
                raise SimulationError(f"causality violated: {now} < {events.now}")
            events.now = now
            n += 1
            if trace is not None:
                trace.append((now, kind, _describe(kind, a, b)))
            if kind == TX_DONE:
                pkt, ok = a.tx_done(now)
                if not ok:
                    self.totals["losses"] += 1
                    self._resolve(pkt, False)
                else:
                    pkt.hop += 1
                    events.push(now + a.delay, ARRIVE, pkt)
            elif kind == ARRIVE:
                self._on_arrive(a, now)
            elif kind == ACK:
                self._on_ack(a, now)
            elif kind == TIMER:
                self._on_timer(a, b, now)
            else:
                self._on_epoch(a, b, now)
            if self.debug:
                self.check_invariants()
        self.totals["events"] = n
        return self._report()

    def check_invariants(self) -> None:
        for ch in self.channels.values():
            assert len(ch.queue) <= ch.queue_limit
        for term in self.terminals.values():
            mem, dem = term.controller.used()
            assert mem <= term.controller.capacity_mem
            assert dem <= term.controller.capacity_demand
            if not term.multitasking_enabled:
                assert len(term.controller.ledger) <= 1
            assert set(term.controller.ledger) == set(term.active) == set(term.transfers)

    def _report(self) -> SimulationReport:
        cfg = self.cfg
        lengths = [hi - lo for lo, hi in self.edges]
        link_util: dict[int, list[float]] = {}
        for link in cfg.links:
            series = []
            for w, length in enumerate(lengths):
                best = max(self.channels[(link.id, d)].wire_bits[w] for d in (0, 1))
                series.append(channel_efficiency_pct(best / length, link.bandwidth))
            link_util[link.id] = series
        network = [
            sum(link_util[lid][w] for lid in link_util) / len(link_util) for w in range(self.n_windows)
        ]
        # access links of the terminals that generate work
        node_links = [t.spec.link for t in self.terminals.values() if t.chain is not None]
        node = [
            sum(link_util[lid][w] for lid in node_links) / len(node_links) if node_links else 0.0
            for w in range(self.n_windows)
        ]
        series = {}
        attach = {}
        for tid, term in self.terminals.items():
            attach[tid] = term.spec.link
            ms = MetricsSeries(window=cfg.window, window_starts=[lo for lo, _ in self.edges])
            for w, length in enumerate(lengths):
                ms.throughput_bps.append(term.delivered_bits[w] / length)
                resolved = term.acked[w] + term.failed[w]
                ms.goodput_pct.append(100.0 * term.acked[w] / resolved if resolved else None)
                ms.channel_util_pct.append(link_util[term.spec.link][w])
            ms.completion_records = list(term.completions)
            series[tid] = ms
        completions = [c for tid in sorted(self.terminals) for c in self.terminals[tid].completions]
        self.totals["wire_bits"] = sum(sum(ch.wire_bits) for ch in self.channels.values())
        return SimulationReport(
            seed=self.seed,
            window_starts=[lo for lo, _ in self.edges],
            window_lengths=lengths,
            terminals=series,
            attach_links=attach,
            link_util_pct=link_util,
            network_util_pct=network,
            node_util_pct=node,
            completions=completions,
            totals=dict(self.totals),
        )


def _describe(kind, a, b):
    if kind in (ARRIVE, ACK):
        return (a.transfer.id, a.seq, a.hop)
    if kind == TX_DONE:
        return (a.link_id, len(a.queue))
    if kind == TIMER:
        return (a.id, b)
    return (a.id, b)


def run_scenario(
    config: ScenarioConfig, seed: int = 0, trace: bool = False, debug: bool = False
) -> SimulationReport:
    """Run one simulation; identical (config, seed) pairs give identical reports."""
    sim = Simulation(config, seed, trace=trace, debug=debug)
    report = sim.run()
    if trace:
        report.trace = sim.trace
    return report
