"""Malleable workload generation.

Moldable jobs (release time, total work, average parallelism) are sampled
first; each one is then cut into fixed-length phases whose parallelism
follows one of seven curve families.  Every phase keeps the work, length
and average parallelism of the flat Step baseline, so a synthesized job is
always consistent with the moldable job it came from.

Time is measured in units of the base quantum L and work in processor*L.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SEGMENTS_PER_PHASE = 100
IMPULSE_WIDTH = 0.05
IMPULSE_HEIGHT_FACTOR = 10.0
CONSISTENCY_TOL = 1e-3

# shape constants for the logarithmic and exponential families
_LOG_K = 9.0
_EXP_K = 3.0


class ConfigError(ValueError):
    """Raised when a configuration violates one of its bounds."""


class Family(str, enum.Enum):
    STEP = "Step"
    LOG = "Log"
    POLY_II = "PolyII"
    RAMP = "Ramp"
    POLY_I = "PolyI"
    EXP = "Exp"
    IMPULSE = "Impulse"

    @property
    def flat(self) -> bool:
        return self in (Family.STEP, Family.IMPULSE)


class Direction(str, enum.Enum):
    INCREASING = "Increasing"
    DECREASING = "Decreasing"
    FLAT = "Flat"


@dataclass(frozen=True)
class CurveKind:
    family: Family
    direction: Direction

    def __post_init__(self):
        if self.family.flat != (self.direction is Direction.FLAT):
            raise ConfigError(f"{self.family.value} cannot be {self.direction.value}")


@dataclass
class WorkloadConfig:
    offered_load: float = 1.0
    job_count: int | None = None
    total_processors: int = 256
    avg_parallelism_range: tuple[float, float] = (1.0, 256.0)
    beta1: float = -0.14
    beta2: float = 0.073
    work_range: tuple[float, float] = (100.0, 10000.0)
    phase_span_length: float = 10.0
    max_span: float | None = 200.0
    seed: int = 0

    def __post_init__(self):
        if self.job_count is None:
            self.job_count = int(round(160 * self.offered_load))
        self.avg_parallelism_range = tuple(map(float, self.avg_parallelism_range))
        self.work_range = tuple(map(float, self.work_range))

    @property
    def n(self) -> int:
        return self.job_count

    def validate(self) -> None:
        a_min, a_max = self.avg_parallelism_range
        w_min, w_max = self.work_range
        checks = [
            (self.offered_load > 0, "offered_load must be > 0"),
            (self.job_count >= 0, "job_count must be >= 0"),
            (self.total_processors >= 1, "total_processors must be >= 1"),
            (a_min >= 1, "avg_parallelism_range lower bound must be >= 1"),
            (a_max <= self.total_processors,
             "avg_parallelism_range upper bound must be <= total_processors"),
            (a_min <= a_max, "avg_parallelism_range must be ordered"),
            (w_min > 0, "work_range lower bound must be > 0"),
            (w_min <= w_max, "work_range must be ordered"),
            (self.phase_span_length > 0, "phase_span_length must be > 0"),
            (self.max_span is None or self.max_span * a_max >= w_max,
             "max_span * avg_parallelism upper bound must cover the largest work"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def mean_work(self) -> float:
        lo, hi = self.work_range
        if hi == lo:
            return lo
        return (hi - lo) / math.log(hi / lo)


@dataclass(frozen=True)
class MoldableJobSpec:
    job_id: int
    release_time: float
    total_work: float
    avg_parallelism: float

    @property
    def span(self) -> float:
        return self.total_work / self.avg_parallelism


@dataclass
class Phase:
    span_length: float
    work: float
    avg_parallelism: float
    curve: CurveKind
    curve_params: dict = field(default_factory=dict)
    # piecewise-constant parallelism, SEGMENTS_PER_PHASE equal-width segments
    segments: list[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.segments:
            self.segments = [self.avg_parallelism] * SEGMENTS_PER_PHASE

    def numeric_mean(self) -> float:
        return math.fsum(self.segments) / len(self.segments)


@dataclass
class MalleableJob:
    job_id: int
    release_time: float
    phases: list[Phase]
    _table: tuple | None = field(default=None, init=False, repr=False, compare=False)

    @property
    def total_work(self) -> float:
        return math.fsum(p.work for p in self.phases)

    @property
    def total_span(self) -> float:
        return math.fsum(p.span_length for p in self.phases)

    @property
    def avg_parallelism(self) -> float:
        return self.total_work / self.total_span

    def segment_table(self) -> tuple[list[float], list[float]]:
        """Flattened (span widths, parallelism) over the job's life.

        Adjacent segments with equal parallelism are merged so flat stretches
        cost one integration step.
        """
        if self._table is None:
            widths: list[float] = []
            heights: list[float] = []
            for ph in self.phases:
                dw = ph.span_length / len(ph.segments)
                for h in ph.segments:
                    if heights and heights[-1] == h:
                        widths[-1] += dw
                    else:
                        widths.append(dw)
                        heights.append(h)
            self._table = (widths, heights)
        return self._table


# ---------------------------------------------------------------------------
# curve shapes
#
# Monotone families are h(x) = lo + (hi - lo) * f(x) on x in [0, 1] with f
# rising from 0 to 1.  F is the antiderivative of f, used to give each
# segment its exact average so the discrete table keeps the mean.

def _shape(family: Family):
    if family is Family.RAMP:
        return lambda x: x, lambda x: x * x / 2
    if family is Family.POLY_I:
        return lambda x: x * x, lambda x: x ** 3 / 3
    if family is Family.POLY_II:
        return lambda x: math.sqrt(x), lambda x: 2 * x ** 1.5 / 3
    if family is Family.LOG:
        k = _LOG_K
        norm = math.log1p(k)
        return (lambda x: math.log1p(k * x) / norm,
                lambda x: ((1 + k * x) * math.log1p(k * x) - k * x) / (k * norm))
    if family is Family.EXP:
        k = _EXP_K
        norm = math.expm1(k)
        return (lambda x: math.expm1(k * x) / norm,
                lambda x: (math.expm1(k * x) / k - x) / norm)
    raise ValueError(f"{family} is not a monotone family")


def shape_mean(family: Family) -> float:
    _, F = _shape(family)
    return F(1.0) - F(0.0)


def impulse_cap(avg_parallelism: float, total_processors: float) -> float:
    return min(IMPULSE_HEIGHT_FACTOR * avg_parallelism, float(total_processors))


def monotone_endpoints(family: Family, avg_parallelism: float, cap: float) -> tuple[float, float]:
    """Widest (low, high) endpoints within [1, cap] whose curve averages A."""
    m = shape_mean(family)
    a = avg_parallelism
    lo, hi = 1.0, 1.0 + (a - 1.0) / m
    if hi > cap:
        hi = cap
        lo = (a - cap * m) / (1.0 - m)
    return lo, hi


def curve_value(kind: CurveKind, params: dict, x: float) -> float:
    """Continuous curve at relative span progress x in [0, 1]."""
    fam = kind.family
    if fam is Family.STEP:
        return params["level"]
    if fam is Family.IMPULSE:
        start = params["start"]
        inside = start <= x < start + params["width"]
        return params["height"] if inside else params["base"]
    f, _ = _shape(fam)
    if kind.direction is Direction.DECREASING:
        x = 1.0 - x
    return params["low"] + (params["high"] - params["low"]) * f(x)


def _segment_means(kind: CurveKind, params: dict, n: int) -> list[float]:
    fam = kind.family
    if fam is Family.STEP:
        return [params["level"]] * n
    if fam is Family.IMPULSE:
        out = []
        start, width = params["start"], params["width"]
        for i in range(n):
            a, b = i / n, (i + 1) / n
            overlap = max(0.0, min(b, start + width) - max(a, start))
            frac = min(1.0, overlap * n)
            out.append(frac * params["height"] + (1 - frac) * params["base"])
        return out
    _, F = _shape(fam)
    lo, hi = params["low"], params["high"]
    out = []
    for i in range(n):
        a, b = i / n, (i + 1) / n
        if kind.direction is Direction.DECREASING:
            a, b = 1.0 - b, 1.0 - a
        avg = (F(b) - F(a)) * n
        out.append(lo + (hi - lo) * avg)
    return out


def make_phase(kind: CurveKind, span_length: float, avg_parallelism: float,
               total_processors: float, endpoints: tuple[float, float] | None = None,
               impulse_width: float = IMPULSE_WIDTH) -> Phase:
    """Build one phase of the given family with the Step phase's (T, work, A)."""
    a = avg_parallelism
    cap = impulse_cap(a, total_processors)
    fam = kind.family
    if fam is Family.STEP:
        params = {"level": a}
    elif fam is Family.IMPULSE:
        height = cap
        base = (a - impulse_width * height) / (1 - impulse_width)
        if base < 1.0:
            base = 1.0
            height = (a - (1 - impulse_width)) / impulse_width
        params = {"height": height, "base": base, "width": impulse_width,
                  "start": 0.5 - impulse_width / 2}
    else:
        if endpoints is None:
            lo, hi = monotone_endpoints(fam, a, cap)
        else:
            lo, hi = map(float, endpoints)
            if kind.direction is Direction.DECREASING:
                lo, hi = hi, lo
            m = shape_mean(fam)
            if abs(lo + (hi - lo) * m - a) > 1e-9 * a:
                raise ConfigError(f"endpoints {endpoints} do not average {a} for {fam.value}")
        params = {"low": lo, "high": hi}
    segs = _segment_means(kind, params, SEGMENTS_PER_PHASE)
    return Phase(span_length=span_length, work=a * span_length, avg_parallelism=a,
                 curve=kind, curve_params=params, segments=segs)


# ---------------------------------------------------------------------------
# sampling

def _log_uniform(rng: np.random.Generator, lo: float, hi: float, size: int) -> np.ndarray:
    if lo == hi:
        return np.full(size, lo)
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


def sample_moldable_jobs(cfg: WorkloadConfig, rng: np.random.Generator | None = None
                         ) -> list[MoldableJobSpec]:
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    n = cfg.job_count
    if n == 0:
        return []
    work = _log_uniform(rng, *cfg.work_range, n)
    a_min, a_max = cfg.avg_parallelism_range
    if cfg.max_span is None:
        par = _log_uniform(rng, a_min, a_max, n)
    else:
        # parallelism floor keeps w / A within max_span
        lo = np.maximum(a_min, work / cfg.max_span)
        u = rng.uniform(0.0, 1.0, n)
        par = np.exp(np.log(lo) + u * (math.log(a_max) - np.log(lo)))
    mean_gap = cfg.mean_work() / (cfg.offered_load * cfg.total_processors)
    gaps = rng.exponential(mean_gap, n)
    gaps[0] = 0.0
    releases = np.cumsum(gaps)
    return [MoldableJobSpec(i, float(releases[i]), float(work[i]), float(par[i]))
            for i in range(n)]


def synthesize_phases(spec: MoldableJobSpec, cfg: WorkloadConfig,
                      rng: np.random.Generator) -> MalleableJob:
    span = spec.span
    a = spec.avg_parallelism
    t = cfg.phase_span_length
    count = max(1, math.ceil(span / t - 1e-12))
    lengths = [t] * (count - 1) + [span - t * (count - 1)]

    families = list(Family)
    phases: list[Phase] = []
    pending: Family | None = None
    for length in lengths:
        if pending is not None:
            kind = CurveKind(pending, Direction.DECREASING)
            pending = None
        else:
            fam = families[rng.integers(len(families))]
            if fam.flat:
                kind = CurveKind(fam, Direction.FLAT)
            else:
                kind = CurveKind(fam, Direction.INCREASING)
                pending = fam
        phases.append(make_phase(kind, length, a, cfg.total_processors))
    return MalleableJob(spec.job_id, spec.release_time, phases)


def generate_workload(cfg: WorkloadConfig) -> list[MalleableJob]:
    rng = np.random.default_rng(cfg.seed)
    return [synthesize_phases(s, cfg, rng) for s in sample_moldable_jobs(cfg, rng)]


# ---------------------------------------------------------------------------
# consistency checking

@dataclass
class PhaseDelta:
    phase_index: int
    mean_error: float
    work_error: float
    length_error: float

    @property
    def worst(self) -> float:
        return max(self.mean_error, self.work_error, self.length_error)


@dataclass
class ConsistencyReport:
    job_id: int
    deltas: list[PhaseDelta]
    tolerance: float = CONSISTENCY_TOL

    @property
    def passed(self) -> bool:
        return all(d.worst <= self.tolerance for d in self.deltas)

    @property
    def failing_phases(self) -> list[int]:
        return [d.phase_index for d in self.deltas if d.worst > self.tolerance]


def check_phase_consistency(job: MalleableJob, tolerance: float = CONSISTENCY_TOL,
                            nominal_length: float | None = None) -> ConsistencyReport:
    """Compare every phase with the Step baseline of the same (T, A).

    Work and length errors are relative to the baseline; when
    ``nominal_length`` is given, every phase but the last must have it.
    """
    deltas = []
    last = len(job.phases) - 1
    for i, ph in enumerate(job.phases):
        a = ph.avg_parallelism
        base_work = a * ph.span_length
        mean_err = abs(ph.numeric_mean() - a) / a
        work_err = abs(ph.work - base_work) / base_work if base_work else abs(ph.work)
        len_err = 0.0
        if nominal_length is not None and i < last:
            len_err = abs(ph.span_length - nominal_length) / nominal_length
        deltas.append(PhaseDelta(i, mean_err, work_err, len_err))
    return ConsistencyReport(job.job_id, deltas, tolerance)


# ---------------------------------------------------------------------------
# workload files

FORMAT_VERSION = 1


def _phase_to_dict(ph: Phase) -> dict:
    return {
        "T": ph.span_length,
        "work": ph.work,
        "A": ph.avg_parallelism,
        "family": ph.curve.family.value,
        "direction": ph.curve.direction.value,
        "params": ph.curve_params,
        "segments": ph.segments,
    }


def _phase_from_dict(d: dict) -> Phase:
    kind = CurveKind(Family(d["family"]), Direction(d["direction"]))
    return Phase(span_length=d["T"], work=d["work"], avg_parallelism=d["A"],
                 curve=kind, curve_params=dict(d["params"]), segments=list(d["segments"]))


def dump_workload(jobs: Iterable[MalleableJob], path: str | Path | None = None) -> str:
    doc = {
        "format": "hiersched-workload",
        "version": FORMAT_VERSION,
        "jobs": [
            {"id": j.job_id, "release": j.release_time,
             "phases": [_phase_to_dict(p) for p in j.phases]}
            for j in jobs
        ],
    }
    text = json.dumps(doc, indent=1) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_workload(source: str | Path) -> list[MalleableJob]:
    """Read a workload file (path) or a workload document (JSON text)."""
    if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
        text = Path(source).read_text()
    else:
        text = str(source)
    doc = json.loads(text)
    if doc.get("format") != "hiersched-workload":
        raise ConfigError("not a workload file")
    return [MalleableJob(j["id"], j["release"], [_phase_from_dict(p) for p in j["phases"]])
            for j in doc["jobs"]]


def workload_summary(jobs: Sequence[MalleableJob]) -> dict:
    if not jobs:
        return {"jobs": 0, "total_work": 0.0, "max_span": 0.0}
    return {
        "jobs": len(jobs),
        "total_work": math.fsum(j.total_work for j in jobs),
        "max_span": max(j.total_span for j in jobs),
        "last_release": max(j.release_time for j in jobs),
    }
