"""Desire calculators, desire aggregation and processor allocation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

from .execution import DomainError, QuantumStats


class PolicyKind(str, enum.Enum):
    AC_DS = "AC_DS"
    AG_DS = "AG_DS"
    EQUI_EQUI = "EQUI_EQUI"

    @classmethod
    def parse(cls, value: "str | PolicyKind") -> "PolicyKind":
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown policy {value!r}; expected one of "
                             f"{', '.join(p.value for p in cls)}") from None


INITIAL_DESIRE = 1.0


def ac_desire(stats: QuantumStats | None, prev: float | None = None) -> float:
    """Next desire under A-Control: the average parallelism just observed."""
    if stats is None:
        return INITIAL_DESIRE
    if stats.l_q <= 0.0:
        return prev if prev is not None else INITIAL_DESIRE
    return stats.A_q


@dataclass
class AgState:
    prev_desire: float = INITIAL_DESIRE
    utilization_threshold: float = 0.8
    multiplier: float = 2.0


def ag_desire(stats: QuantumStats, state: AgState, alloc: float, satisfied: bool,
              quantum_len: float = 1.0) -> float:
    """Next desire under A-Greedy's multiplicative rule."""
    if alloc < 0:
        raise DomainError("allocation must be non-negative")
    d = state.prev_desire
    if not satisfied:
        return d
    if stats.w_q >= state.utilization_threshold * alloc * quantum_len:
        return d * state.multiplier
    return max(INITIAL_DESIRE, d / state.multiplier)


def ds_aggregate(child_desires: Sequence[float]) -> float:
    return math.fsum(child_desires)


class _DepthCounter:
    __slots__ = ("depth",)

    def __init__(self):
        self.depth = 0


def deq_allocate(desires: Mapping[Hashable, float], amount: float,
                 _counter: _DepthCounter | None = None) -> dict:
    """Dynamic equi-partitioning of ``amount`` among children by desire.

    Children whose desire fits under the current equal share are granted
    their desire and the rest is re-partitioned among the others; once no
    child fits, every remaining child gets the equal share.  Processors left
    over when every desire is met are not handed out.
    """
    if amount < 0:
        raise DomainError("amount must be non-negative")
    for key, d in desires.items():
        if d < 0:
            raise DomainError(f"negative desire {d} for child {key!r}")
    keys = list(desires)
    split = deq_split([desires[k] for k in keys], float(amount), _counter)
    return dict(zip(keys, split))


def deq_split(desires: list[float], amount: float,
              _counter: _DepthCounter | None = None) -> list[float]:
    """``deq_allocate`` over a positional list of desires, without validation."""
    alloc = [0.0] * len(desires)
    remaining = range(len(desires))
    left = amount
    while remaining:
        if _counter is not None:
            _counter.depth += 1
        share = left / len(remaining)
        rest = []
        granted = []
        for i in remaining:
            d = desires[i]
            if d <= share:
                alloc[i] = d
                granted.append(d)
            else:
                rest.append(i)
        if not granted:
            for i in rest:
                alloc[i] = share
            break
        left -= math.fsum(granted)
        if left < 0.0:
            left = 0.0
        remaining = rest
    return alloc


def deq_rounds(desires: Mapping[Hashable, float], amount: float) -> int:
    """Number of partitioning rounds DEQ needs for this instance."""
    counter = _DepthCounter()
    deq_allocate(desires, amount, counter)
    return counter.depth


def equi_allocate(active_children: int, amount: float) -> list[float]:
    if active_children <= 0:
        return []
    return [amount / active_children] * active_children
