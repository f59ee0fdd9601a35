"""Finite-state service chains: validation, steady state, and sampling.

A chain is a row-stochastic matrix over labelled states; state 0 is idle.
``matrix[m][n]`` is the probability of moving to state ``n`` from state ``m``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_SUM_TOL = 1e-9
CONVERGENCE_TOL = 1e-12
UNIQUENESS_TOL = 1e-6
MAX_ITERATIONS = 10**6
MAX_STATES = 64


class ChainError(ValueError):
    """Base class for chain validation and solver errors."""


class NotSquare(ChainError):
    pass


class ChainTooLarge(ChainError):
    pass


class RowSumViolation(ChainError):
    def __init__(self, row: int, total: float):
        self.row = row
        self.total = total
        super().__init__(f"row {row} sums to {total!r}, expected 1")


class EntryOutOfRange(ChainError):
    def __init__(self, row: int, col: int, value: float):
        self.row = row
        self.col = col
        self.value = value
        super().__init__(f"entry ({row}, {col}) = {value!r} is outside [0, 1]")


class NonUniqueStationary(ChainError):
    pass


class StateOutOfRange(ChainError, IndexError):
    pass


@dataclass(frozen=True)
class ServiceChain:
    states: tuple[str, ...]
    matrix: tuple[tuple[float, ...], ...]
    _cumulative: tuple[tuple[float, ...], ...] = field(
        init=False, repr=False, compare=False
    )
    _last_positive: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cum = []
        last = []
        for row in self.matrix:
            acc = 0.0
            c = []
            for p in row:
                acc += p
                c.append(acc)
            cum.append(tuple(c))
            last.append(max(i for i, p in enumerate(row) if p > 0))
        object.__setattr__(self, "_cumulative", tuple(cum))
        object.__setattr__(self, "_last_positive", tuple(last))

    @property
    def n(self) -> int:
        return len(self.states)

    def as_array(self) -> np.ndarray:
        return np.array(self.matrix, dtype=float)


@dataclass(frozen=True)
class StationaryDistribution:
    probs: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.probs, dtype=float)


def validate_chain(states: Sequence[str], matrix) -> ServiceChain:
    """Check a labelled transition matrix and freeze it into a ServiceChain.

    Raises NotSquare, EntryOutOfRange, RowSumViolation or ChainTooLarge.
    """
    rows = [list(map(float, r)) for r in matrix]
    n = len(rows)
    if n != len(states) or any(len(r) != n for r in rows):
        raise NotSquare(
            f"expected a {len(states)}x{len(states)} matrix for {len(states)} states"
        )
    if n < 2:
        raise NotSquare("a chain needs at least 2 states")
    if n > MAX_STATES:
        raise ChainTooLarge(f"{n} states exceeds the limit of {MAX_STATES}")
    for i, r in enumerate(rows):
        for j, p in enumerate(r):
            if not 0.0 <= p <= 1.0:
                raise EntryOutOfRange(i, j, p)
    for i, r in enumerate(rows):
        total = float(np.sum(r))
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise RowSumViolation(i, total)
    return ServiceChain(tuple(str(s) for s in states), tuple(tuple(r) for r in rows))


def _power_iterate(m: np.ndarray, start: np.ndarray, max_iter: int):
    pi = start
    for _ in range(max_iter):
        nxt = pi @ m
        if np.max(np.abs(nxt - pi)) < CONVERGENCE_TOL:
            return nxt
        pi = nxt
    return None


def steady_state(chain: ServiceChain, max_iter: int = MAX_ITERATIONS) -> StationaryDistribution:
    """Stationary distribution by dense power iteration.

    Iterates from the uniform vector and from the idle basis vector; if either
    run fails to settle or the two limits disagree the chain is rejected with
    NonUniqueStationary.
    """
    m = chain.as_array()
    n = chain.n
    a = _power_iterate(m, np.full(n, 1.0 / n), max_iter)
    e0 = np.zeros(n)
    e0[0] = 1.0
    b = _power_iterate(m, e0, max_iter)
    if a is None or b is None:
        raise NonUniqueStationary("power iteration did not converge")
    if np.max(np.abs(a - b)) > UNIQUENESS_TOL:
        raise NonUniqueStationary("limits from distinct starting vectors differ")
    a = a / a.sum()
    return StationaryDistribution(tuple(float(x) for x in a))


def _pick(chain: ServiceChain, current: int, u: float) -> int:
    row = chain._cumulative[current]
    k = bisect.bisect_right(row, u)
    # row sums may fall a hair short of 1
    last = chain._last_positive[current]
    return k if k <= last else last


def step(chain: ServiceChain, current: int, rng: np.random.Generator) -> int:
    """Sample the successor of ``current``; consumes exactly one uniform draw."""
    if not 0 <= current < chain.n:
        raise StateOutOfRange(f"state {current} not in [0, {chain.n})")
    return _pick(chain, current, rng.random())


def simulate_trajectory(
    chain: ServiceChain, start: int, steps: int, rng: np.random.Generator
) -> list[int]:
    """States after 1..steps transitions from ``start``.

    Draws the uniforms in one block; the result equals ``steps`` calls to
    :func:`step` on the same generator.
    """
    if not 0 <= start < chain.n:
        raise StateOutOfRange(f"state {start} not in [0, {chain.n})")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = []
    s = start
    for u in rng.random(steps).tolist():
        s = _pick(chain, s, u)
        out.append(s)
    return out


def parse_chain_text(text: str) -> ServiceChain:
    """Parse the ``states: a, b`` header followed by comma-separated rows."""
    states = None
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.lower().startswith("states:"):
            states = [s.strip() for s in line.split(":", 1)[1].split(",")]
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise ChainError(f"line {lineno}: cannot parse matrix row {line!r}") from None
    if states is None:
        raise ChainError("missing 'states:' line")
    return validate_chain(states, rows)


def format_chain(chain: ServiceChain) -> str:
    lines = ["states: " + ", ".join(chain.states)]
    lines += [", ".join(repr(p) for p in row) for row in chain.matrix]
    return "\n".join(lines) + "\n"
