"""Per-terminal admission and eviction of service tasks.

A newcomer is admitted if it fits in free memory and demand. Otherwise the
controller terminates incumbents one at a time, lowest priority first, until
the newcomer fits. Incumbents with strictly higher priority than the
newcomer are never touched, and a request that cannot succeed leaves the
ledger as it was.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Union


class AdmissionError(Exception):
    pass


class DuplicateTaskId(AdmissionError):
    pass


class InvalidTask(AdmissionError, ValueError):
    pass


class UnknownTaskId(AdmissionError, KeyError):
    pass


class EmptySet(AdmissionError, ValueError):
    pass


@dataclass(frozen=True)
class Task:
    id: int
    service: str
    priority: int
    memory: float
    demand: float


@dataclass(frozen=True)
class Admitted:
    evicted: tuple[int, ...] = ()


@dataclass(frozen=True)
class Rejected:
    reason: str


Decision = Union[Admitted, Rejected]


def eviction_key(task: Task):
    """Sort key of the eviction order: first element is evicted first."""
    return (task.priority, -task.memory, -task.demand, task.id)


def find_eviction_victim(tasks: Iterable[Task]) -> int:
    tasks = list(tasks)
    if not tasks:
        raise EmptySet("no tasks to choose from")
    return min(tasks, key=eviction_key).id


@dataclass
class AdmissionController:
    capacity_mem: float
    capacity_demand: float
    auto_terminate: bool = True
    ledger: dict[int, Task] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity_mem <= 0 or self.capacity_demand <= 0:
            raise ValueError("capacities must be positive")

    def used(self) -> tuple[float, float]:
        mem = math.fsum(t.memory for t in self.ledger.values())
        dem = math.fsum(t.demand for t in self.ledger.values())
        return mem, dem

    def _fits(self, keep: list[Task], task: Task) -> bool:
        mem = math.fsum([t.memory for t in keep] + [task.memory])
        dem = math.fsum([t.demand for t in keep] + [task.demand])
        return mem <= self.capacity_mem and dem <= self.capacity_demand

    def free_capacity(self) -> tuple[float, float]:
        mem, dem = self.used()
        return max(self.capacity_mem - mem, 0.0), max(self.capacity_demand - dem, 0.0)

    def request_service(self, task: Task) -> Decision:
        if task.id in self.ledger:
            raise DuplicateTaskId(task.id)
        if task.memory < 0 or task.demand < 0:
            raise InvalidTask(f"task {task.id} has negative resources")
        if task.memory > self.capacity_mem or task.demand > self.capacity_demand:
            return Rejected("exceeds total capacity")

        if self._fits(list(self.ledger.values()), task):
            self.ledger[task.id] = task
            return Admitted()
        if not self.auto_terminate:
            return Rejected("insufficient capacity, termination declined")

        candidates = sorted(
            (t for t in self.ledger.values() if t.priority <= task.priority),
            key=eviction_key,
        )
        victims = []
        for t in candidates:
            victims.append(t.id)
            keep = [u for u in self.ledger.values() if u.id not in victims]
            if self._fits(keep, task):
                break
        else:
            return Rejected("insufficient capacity after evicting lower-priority tasks")

        for tid in victims:
            del self.ledger[tid]
        self.ledger[task.id] = task
        return Admitted(tuple(victims))

    def terminate(self, task_id: int) -> tuple[float, float]:
        try:
            t = self.ledger.pop(task_id)
        except KeyError:
            raise UnknownTaskId(task_id) from None
        return t.memory, t.demand


def request_service(controller: AdmissionController, task: Task) -> Decision:
    return controller.request_service(task)


def terminate(controller: AdmissionController, task_id: int) -> tuple[float, float]:
    return controller.terminate(task_id)


def free_capacity(controller: AdmissionController) -> tuple[float, float]:
    return controller.free_capacity()
