"""Job execution under an allocation.

A job's parallelism h is piecewise constant over span progress.  Given an
allocation a, work accrues at rate min(a, h) and span at min(a, h) / h, so
integration proceeds one segment at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .workload import MalleableJob, Phase

COMPLETION_TOL = 1e-9


class DomainError(ValueError):
    pass


@dataclass
class ExecDelta:
    work_done: float = 0.0
    span_done: float = 0.0
    wall_time_consumed: float = 0.0
    completed: bool = False


@dataclass
class QuantumStats:
    w_q: float
    l_q: float
    A_q: float


@dataclass
class JobExecState:
    job_id: int
    segment_index: int = 0
    segment_offset: float = 0.0
    span_done: float = 0.0
    remaining_work: float = 0.0
    desire: float = 1.0
    allocation: float = 0.0
    satisfied_time: float = 0.0
    deprived_time: float = 0.0
    total_allocation: float = 0.0
    completion_time: float | None = None
    work_tolerance: float = 0.0

    @classmethod
    def for_job(cls, job: MalleableJob) -> "JobExecState":
        w = job.total_work
        return cls(job.job_id, remaining_work=w, work_tolerance=COMPLETION_TOL * w)

    @property
    def done(self) -> bool:
        return self.completion_time is not None

    def phase_position(self, job: MalleableJob) -> tuple[int, float]:
        """(phase index, span progress within that phase)."""
        s = self.span_done
        last = len(job.phases) - 1
        for i, ph in enumerate(job.phases):
            if s < ph.span_length or i == last:
                return i, min(s, ph.span_length)
            s -= ph.span_length
        return last, job.phases[last].span_length


def parallelism_at(phase: Phase, s: float) -> float:
    if not 0.0 <= s <= phase.span_length:
        raise DomainError(f"span progress {s} outside [0, {phase.span_length}]")
    n = len(phase.segments)
    k = min(int(s / phase.span_length * n), n - 1) if phase.span_length > 0 else 0
    return phase.segments[k]


def advance(state: JobExecState, job: MalleableJob, a: float, dt: float) -> ExecDelta:
    """Run ``job`` on ``a`` processors for up to ``dt`` time, in place."""
    if a < 0 or dt < 0:
        raise DomainError(f"allocation and duration must be non-negative (a={a}, dt={dt})")
    widths, heights = job.segment_table()
    return ExecDelta(*advance_table(state, widths, heights, a, dt))


def advance_table(state: JobExecState, widths: list[float], heights: list[float],
                  a: float, dt: float) -> tuple[float, float, float, bool]:
    """Kernel of ``advance`` over a flattened segment table.

    Returns (work, span, wall time consumed, completed).
    """
    nseg = len(widths)
    k = state.segment_index
    off = state.segment_offset
    left = dt
    work = 0.0
    span = 0.0
    if a > 0:
        while k < nseg and left > 0.0:
            h = heights[k]
            rate = a if a < h else h
            seg_left = widths[k] - off
            need = seg_left * h / rate
            if need <= left:
                work += seg_left * h
                span += seg_left
                left -= need
                k += 1
                off = 0.0
            else:
                ds = left * rate / h
                work += left * rate
                span += ds
                off += ds
                left = 0.0
    state.segment_index = k
    state.segment_offset = off
    state.span_done += span
    state.remaining_work -= work
    if k >= nseg or state.remaining_work <= state.work_tolerance:
        state.segment_index = nseg
        state.segment_offset = 0.0
        if state.remaining_work < 0.0:
            state.remaining_work = 0.0
        return work, span, dt - left, True
    return work, span, dt, False


def quantum_stats(deltas: Sequence[ExecDelta], previous_desire: float = 1.0) -> QuantumStats:
    w = math.fsum(d.work_done for d in deltas)
    l = math.fsum(d.span_done for d in deltas)
    if l <= 0.0:
        return QuantumStats(w, 0.0, previous_desire)
    return QuantumStats(w, l, w / l)
