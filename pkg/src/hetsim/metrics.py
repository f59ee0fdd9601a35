"""Throughput, goodput, channel efficiency and completion-time statistics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence


class MetricsError(ValueError):
    pass


class NonPositiveInterval(MetricsError):
    pass


class NoTransmissions(MetricsError, ZeroDivisionError):
    pass


class NonPositiveNominal(MetricsError):
    pass


class EmptyGroup(MetricsError):
    pass


class EmptySeries(MetricsError):
    pass


class ZeroMean(MetricsError, ZeroDivisionError):
    pass


def throughput(delivered_bits: float, interval_seconds: float) -> float:
    """Delivered bits per second over an interval."""
    if interval_seconds <= 0:
        raise NonPositiveInterval(f"interval must be > 0, got {interval_seconds}")
    return delivered_bits / interval_seconds


def goodput_pct(acked_packets: int, transmitted_packets: int) -> float:
    """Acknowledged over transmitted packets, as a percentage."""
    if transmitted_packets == 0:
        raise NoTransmissions("no packets transmitted")
    if acked_packets < 0 or acked_packets > transmitted_packets:
        raise MetricsError(f"acked={acked_packets} not in [0, transmitted={transmitted_packets}]")
    return 100.0 * acked_packets / transmitted_packets


def channel_efficiency_pct(achieved_bps: float, nominal_bps: float) -> float:
    """Achieved wire bitrate as a percentage of nominal, capped at 100."""
    if nominal_bps <= 0:
        raise NonPositiveNominal(f"nominal rate must be > 0, got {nominal_bps}")
    return min(100.0, 100.0 * achieved_bps / nominal_bps)


def avg_completion_time(
    records: Iterable[tuple[int, float]], group_by_size: bool = True
) -> list[tuple[Optional[int], float]]:
    """Mean completion seconds per file size, sizes ascending.

    With ``group_by_size=False`` all records form one group keyed ``None``.
    """
    groups = defaultdict(list)
    for size, secs in records:
        groups[size if group_by_size else None].append(secs)
    if not groups:
        raise EmptyGroup("no completion records")
    # fsum of a sorted group keeps the mean independent of input order
    return [
        (size, math.fsum(sorted(v)) / len(v))
        for size, v in sorted(groups.items(), key=lambda kv: (kv[0] is None, kv[0]))
    ]


def coefficient_of_variation(series: Sequence[Optional[float]]) -> float:
    """Population standard deviation over mean; ``None`` entries are skipped."""
    xs = [x for x in series if x is not None]
    if not xs:
        raise EmptySeries("series is empty")
    mean = math.fsum(xs) / len(xs)
    if mean == 0:
        raise ZeroMean("mean is zero")
    var = math.fsum((x - mean) ** 2 for x in xs) / len(xs)
    return math.sqrt(var) / mean


def window_edges(warmup: float, duration: float, window: float) -> list[tuple[float, float]]:
    """Back-to-back windows covering [warmup, duration]; the last may be short."""
    if window <= 0:
        raise NonPositiveInterval("window must be > 0")
    n = math.ceil((duration - warmup) / window - 1e-9) if duration > warmup else 0
    edges = []
    for k in range(n):
        lo = warmup + k * window
        hi = min(warmup + (k + 1) * window, duration)
        edges.append((lo, hi))
    return edges


@dataclass
class MetricsSeries:
    """Per-window measurements for one terminal.

    ``goodput_pct`` holds ``None`` for windows with no resolved transmissions.
    """

    window: float
    window_starts: list[float] = field(default_factory=list)
    throughput_bps: list[float] = field(default_factory=list)
    goodput_pct: list[Optional[float]] = field(default_factory=list)
    channel_util_pct: list[float] = field(default_factory=list)
    completion_records: list[tuple[int, float]] = field(default_factory=list)
