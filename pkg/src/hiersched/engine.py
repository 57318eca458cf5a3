"""Quantum-driven simulation of hierarchical processor allocation.

The scheduler tree has its root at level K and job-attachment nodes (leaves)
at level 2.  Time advances one bottom quantum L at a time.  A node at level
k reallocates among its children every QF**(k-2) steps; between expiries it
keeps handing its children whatever it gave them last.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .execution import JobExecState, QuantumStats, advance_table
from .policies import AgState, PolicyKind, ag_desire, deq_split, equi_allocate
from .workload import ConfigError, MalleableJob

EPS = 1e-9
# how an intermediate node's accumulated delay is charged when it reallocates:
# "subtree" idles everything the node hands out, "moved" only what changed hands
DELAY_SCOPES = ("subtree", "moved")


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    total_processors: int = 256
    levels: int = 2
    quantum_factor: int = 1
    cost_factor: float = 0.0
    base_quantum: float = 1.0
    policy: PolicyKind = PolicyKind.AC_DS
    branching_range: tuple[int, int] = (1, 5)
    seed: int = 0
    ag_threshold: float = 0.8
    ag_multiplier: float = 2.0
    delay_scope: str = "subtree"
    record_trace: bool = False

    def __post_init__(self):
        self.policy = PolicyKind.parse(self.policy)
        self.branching_range = tuple(int(b) for b in self.branching_range)

    def validate(self) -> None:
        lo, hi = self.branching_range
        checks = [
            (self.total_processors >= 1, "total_processors must be >= 1"),
            (self.levels >= 2, "levels must be >= 2"),
            (int(self.quantum_factor) == self.quantum_factor and self.quantum_factor >= 1,
             "quantum_factor must be an integer >= 1"),
            (self.cost_factor >= 0, "cost_factor must be >= 0"),
            (self.base_quantum > 0, "base_quantum must be > 0"),
            (1 <= lo <= hi, "branching_range must satisfy 1 <= lo <= hi"),
            (0 < self.ag_threshold < 1, "ag_threshold must be in (0, 1)"),
            (self.ag_multiplier > 1, "ag_multiplier must be > 1"),
            (self.delay_scope in DELAY_SCOPES,
             f"delay_scope must be one of {', '.join(DELAY_SCOPES)}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    def quantum_steps(self, level: int) -> int:
        return int(self.quantum_factor) ** (level - 2)


# ---------------------------------------------------------------------------
# tree

@dataclass
class Node:
    node_id: int
    level: int
    parent: int | None
    children: list[int] = field(default_factory=list)
    quantum: int = 1

    @property
    def is_leaf(self) -> bool:
        return self.level == 2


@dataclass
class Hierarchy:
    nodes: list[Node]
    root: int = 0

    @property
    def levels(self) -> int:
        return self.nodes[self.root].level

    @property
    def leaves(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.is_leaf]

    def depth(self, node_id: int) -> int:
        d = 0
        while self.nodes[node_id].parent is not None:
            node_id = self.nodes[node_id].parent
            d += 1
        return d

    def check(self) -> None:
        leaves = self.leaves
        if not leaves:
            raise ConfigError("hierarchy has no leaves")
        depths = {self.depth(n) for n in leaves}
        if len(depths) != 1:
            raise ConfigError("leaves are not at equal depth")
        for n in self.nodes:
            if not n.is_leaf and not n.children:
                raise ConfigError(f"intermediate node {n.node_id} has no children")
            for c in n.children:
                if self.nodes[c].level != n.level - 1:
                    raise ConfigError(f"node {c} is not one level below {n.node_id}")
                if n.quantum % self.nodes[c].quantum:
                    raise ConfigError(f"quantum of node {n.node_id} is not a multiple of "
                                      f"its child {c}")


def generate_tree(cfg: SimConfig, rng: np.random.Generator | None = None) -> Hierarchy:
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 0])
    lo, hi = cfg.branching_range
    nodes = [Node(0, cfg.levels, None, quantum=cfg.quantum_steps(cfg.levels))]
    frontier = [0]
    while frontier:
        nxt = []
        for nid in frontier:
            node = nodes[nid]
            if node.is_leaf:
                continue
            for _ in range(int(rng.integers(lo, hi + 1))):
                child = Node(len(nodes), node.level - 1, nid,
                             quantum=cfg.quantum_steps(node.level - 1))
                nodes.append(child)
                node.children.append(child.node_id)
                nxt.append(child.node_id)
        frontier = nxt
    return Hierarchy(nodes)


# ---------------------------------------------------------------------------
# results

@dataclass
class JobOutcome:
    job_id: int
    release: float
    completion: float
    satisfied_time: float
    deprived_time: float
    total_allocation: float
    work: float
    span: float
    leaf: int
    work_executed: float
    parallelism_history: list[float] = field(default_factory=list)


@dataclass
class SimResult:
    config: SimConfig
    makespan: float
    utilization: float
    jobs: list[JobOutcome]
    trace: list[dict] | None = None
    steps: int = 0


@dataclass
class Metrics:
    makespan: float
    utilization: float
    jobs: list[JobOutcome]


def compute_metrics(result: SimResult) -> Metrics:
    return Metrics(result.makespan, _utilization(result.jobs, result.config.total_processors,
                                                 result.makespan), result.jobs)


def _utilization(jobs: Sequence[JobOutcome], procs: int, makespan: float) -> float:
    if not jobs:
        return 1.0
    window = makespan - min(j.release for j in jobs)
    if window <= 0:
        return 1.0
    return math.fsum(j.work for j in jobs) / (procs * window)


# ---------------------------------------------------------------------------
# reallocation cost

def apply_reallocation_delay(old: dict, new: dict, cfg: SimConfig) -> dict:
    """Delay charged to each child whose allocation shrank (x * L * CF)."""
    out = {}
    for key, before in old.items():
        x = before - new.get(key, 0.0)
        if x > EPS:
            out[key] = x * cfg.base_quantum * cfg.cost_factor
    return out


def accumulate_delay(child_delays: Sequence[float]) -> float:
    return math.fsum(child_delays)


# ---------------------------------------------------------------------------
# simulation

class _JobRun:
    __slots__ = ("job", "state", "leaf", "stalls", "ag", "history", "work_executed",
                 "work", "span", "widths", "heights")

    def __init__(self, job: MalleableJob, leaf: int, ag: AgState | None):
        self.job = job
        self.state = JobExecState.for_job(job)
        self.leaf = leaf
        self.stalls: list[list[float]] = []
        self.ag = ag
        self.history: list[float] = []
        self.work_executed = 0.0
        self.work = job.total_work
        self.span = job.total_span
        self.widths, self.heights = job.segment_table()


class _NodeRun:
    __slots__ = ("node", "alloc", "desire", "jobs", "active", "delay", "stalls", "kids",
                 "leaf", "quantum", "parent")

    def __init__(self, node: Node):
        self.node = node
        self.leaf = node.is_leaf
        self.quantum = node.quantum
        self.alloc = 0.0
        self.desire = 0.0
        self.jobs: list[_JobRun] = []
        self.active = 0
        self.delay = 0.0
        self.stalls: list[tuple[float, float]] = []
        self.kids: list[_NodeRun] = []
        self.parent: _NodeRun | None = None


def _check_jobs(jobs: Sequence[MalleableJob]) -> list[MalleableJob]:
    seen = set()
    for j in jobs:
        if j.job_id in seen:
            raise ConfigError(f"duplicate job id {j.job_id}")
        seen.add(j.job_id)
        if j.release_time < 0 or not math.isfinite(j.release_time):
            raise ConfigError(f"job {j.job_id} has invalid release time {j.release_time}")
        if not j.phases or j.total_work <= 0:
            raise ConfigError(f"job {j.job_id} has no work")
    return sorted(jobs, key=lambda j: (j.release_time, j.job_id))


def run(cfg: SimConfig, jobs: Sequence[MalleableJob], tree: Hierarchy) -> SimResult:
    cfg.validate()
    tree.check()
    return _Simulator(cfg, _check_jobs(jobs), tree).run()


class _Simulator:
    def __init__(self, cfg: SimConfig, jobs: list[MalleableJob], tree: Hierarchy):
        self.cfg = cfg
        self.jobs = jobs
        self.tree = tree
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.nodes = [_NodeRun(n) for n in tree.nodes]
        for nr in self.nodes:
            nr.kids = [self.nodes[c] for c in nr.node.children]
            for k in nr.kids:
                k.parent = nr
        self.root = self.nodes[tree.root]
        self.leaves = [self.nodes[i] for i in tree.leaves]
        # nodes grouped by level, top first
        by_level: dict[int, list[_NodeRun]] = {}
        for nr in self.nodes:
            by_level.setdefault(nr.node.level, []).append(nr)
        self.levels_desc = [by_level[k] for k in sorted(by_level, reverse=True)]
        self.levels_asc = self.levels_desc[::-1]
        self.trace: list[dict] | None = [] if cfg.record_trace else None
        self.outcomes: list[JobOutcome] = []

    # -- per-step phases ---------------------------------------------------

    def _attach(self, job: MalleableJob, now: float) -> _JobRun:
        leaf = self.leaves[int(self.rng.integers(len(self.leaves)))]
        ag = None
        if self.cfg.policy is PolicyKind.AG_DS:
            ag = AgState(1.0, self.cfg.ag_threshold, self.cfg.ag_multiplier)
        jr = _JobRun(job, leaf.node.node_id, ag)
        jr.state.desire = 1.0
        jr.state.deprived_time += now - job.release_time
        leaf.jobs.append(jr)
        nr: _NodeRun | None = leaf
        while nr is not None:
            nr.active += 1
            nr = nr.parent
        return jr

    def _detach(self, jr: _JobRun) -> None:
        leaf = self.nodes[jr.leaf]
        leaf.jobs.remove(jr)
        nr: _NodeRun | None = leaf
        while nr is not None:
            nr.active -= 1
            nr = nr.parent

    def _aggregate(self) -> None:
        fsum = math.fsum
        for level in self.levels_asc:
            for nr in level:
                if not nr.active:
                    nr.desire = 0.0
                elif nr.leaf:
                    nr.desire = fsum([j.state.desire for j in nr.jobs])
                else:
                    nr.desire = fsum([k.desire for k in nr.kids])

    def _allocate(self, step: int) -> None:
        cfg = self.cfg
        equi = cfg.policy is PolicyKind.EQUI_EQUI
        charge = cfg.cost_factor > 0
        for level in self.levels_desc:
            for nr in level:
                if step % nr.quantum:
                    continue
                if nr is self.root:
                    nr.alloc = float(cfg.total_processors)
                leaf = nr.leaf
                children = nr.jobs if leaf else nr.kids
                if not children:
                    nr.stalls = []
                    nr.delay = 0.0
                    continue
                if leaf:
                    old = [j.state.allocation for j in children]
                else:
                    old = [k.alloc for k in children]
                if not nr.active:
                    if not charge and not any(old):
                        continue
                    new = [0.0] * len(children)
                elif equi:
                    if leaf:
                        new = equi_allocate(len(children), nr.alloc)
                    else:
                        live = [i for i, k in enumerate(children) if k.active > 0]
                        new = [0.0] * len(children)
                        for i, share in zip(live, equi_allocate(len(live), nr.alloc)):
                            new[i] = share
                else:
                    desires = ([j.state.desire for j in children] if leaf
                               else [k.desire for k in children])
                    new = deq_split(desires, nr.alloc)
                if charge:
                    self._charge(nr, children, old, new)
                if leaf:
                    for j, a in zip(children, new):
                        j.state.allocation = a
                else:
                    for k, a in zip(children, new):
                        k.alloc = a

    def _charge(self, nr: _NodeRun, children: list, old: list[float], new: list[float]) -> None:
        """Turn processors moved between children into stalled capacity."""
        cfg = self.cfg
        leaf = nr.leaf
        dec = [max(0.0, o - n) for o, n in zip(old, new)]
        gain = [max(0.0, n - o) for o, n in zip(old, new)]
        moved = math.fsum(dec)
        gained = math.fsum(gain)
        if leaf:
            delays = apply_reallocation_delay(dict(enumerate(old)), dict(enumerate(new)), cfg)
            nr.delay = accumulate_delay(list(delays.values()))
            tau = (math.fsum(dec[i] * d for i, d in delays.items()) / moved
                   if moved > EPS else 0.0)
        else:
            nr.delay = accumulate_delay([k.delay for k in children])
            tau = nr.delay
        whole = not leaf and cfg.delay_scope == "subtree"
        total_new = math.fsum(new)
        incoming = nr.stalls
        nr.stalls = []
        for i, c in enumerate(children):
            pieces = []
            if moved > EPS and tau > 0:
                if whole:
                    if new[i] > EPS:
                        pieces.append((new[i], tau))
                elif gain[i] > EPS:
                    pieces.append((gain[i] * min(1.0, moved / gained), tau))
            if total_new > EPS and new[i] > EPS:
                frac = new[i] / total_new
                pieces.extend((s * frac, d) for s, d in incoming)
            if not pieces:
                continue
            if leaf:
                c.stalls.extend([s, d] for s, d in pieces)
            else:
                c.stalls.extend(pieces)

    def _execute(self, jr: _JobRun, dt: float) -> tuple[float, float, float, bool]:
        """(work, span, wall time consumed, completed) for one quantum."""
        a = jr.state.allocation
        if not jr.stalls:
            return advance_table(jr.state, jr.widths, jr.heights, a, dt)
        total = math.fsum(s for s, _ in jr.stalls)
        scale = min(1.0, a / total) if total > 0 else 0.0
        if scale < 1.0:
            for st in jr.stalls:
                st[0] *= scale
            total = a
        cuts = sorted((d, s) for s, d in jr.stalls if d < dt)
        work = span = 0.0
        consumed = None
        t0 = 0.0
        stalled = total
        for d, s in cuts:
            if d > t0:
                w, l, used, done = advance_table(jr.state, jr.widths, jr.heights,
                                                 max(0.0, a - stalled), d - t0)
                work += w
                span += l
                if done:
                    consumed = t0 + used
                    break
                t0 = d
            stalled -= s
        if consumed is None:
            w, l, used, done = advance_table(jr.state, jr.widths, jr.heights,
                                             max(0.0, a - stalled), dt - t0)
            work += w
            span += l
            consumed = t0 + used
        jr.stalls = [[s, d - dt] for s, d in jr.stalls if d > dt]
        return work, span, consumed, done

    def _record_nodes(self, now: float) -> None:
        for nr in self.nodes:
            self.trace.append({"t": now, "kind": "node", "id": nr.node.node_id,
                               "level": nr.node.level, "desire": nr.desire,
                               "allocation": nr.alloc})

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimResult:
        cfg = self.cfg
        L = cfg.base_quantum
        pending = deque(self.jobs)
        running: list[_JobRun] = []
        policy = cfg.policy
        horizon = self._horizon()
        step = 0
        while pending or running:
            now = step * L
            if now > horizon:
                raise SimulationError(f"simulation exceeded horizon {horizon} with "
                                      f"{len(running)} jobs unfinished")
            while pending and pending[0].release_time <= now + EPS:
                running.append(self._attach(pending.popleft(), now))
            if not running:
                step = self._skip_idle(step, pending[0].release_time)
                continue
            self._aggregate()
            self._allocate(step)
            if self.trace is not None:
                self._record_nodes(now)

            still = []
            ag = policy is PolicyKind.AG_DS
            for jr in running:
                st = jr.state
                a = st.allocation
                d = st.desire
                work, span, used, done = self._execute(jr, L)
                satisfied = a >= d - EPS * max(1.0, d)
                if satisfied:
                    st.satisfied_time += used
                else:
                    st.deprived_time += used
                st.total_allocation += a * L
                jr.work_executed += work
                if span > 0:
                    # average parallelism over this quantum; also the A-Control desire
                    nxt = work / span
                    jr.history.append(nxt)
                else:
                    nxt = d
                if ag:
                    nxt = ag_desire(QuantumStats(work, span, nxt), jr.ag, a, satisfied, L)
                    jr.ag.prev_desire = nxt
                if self.trace is not None:
                    self.trace.append({"t": now, "kind": "job", "id": jr.job.job_id,
                                       "leaf": jr.leaf, "desire": d, "allocation": a,
                                       "work": work, "span": span,
                                       "satisfied": satisfied})
                if done:
                    st.completion_time = now + used
                    self._detach(jr)
                    self._finish(jr)
                else:
                    st.desire = nxt
                    still.append(jr)
            running = still
            step += 1

        self.outcomes.sort(key=lambda o: o.job_id)
        makespan = max((o.completion for o in self.outcomes), default=0.0)
        return SimResult(cfg, makespan,
                         _utilization(self.outcomes, cfg.total_processors, makespan),
                         self.outcomes, self.trace, step)

    def _finish(self, jr: _JobRun) -> None:
        st = jr.state
        self.outcomes.append(JobOutcome(
            job_id=jr.job.job_id, release=jr.job.release_time, completion=st.completion_time,
            satisfied_time=st.satisfied_time, deprived_time=st.deprived_time,
            total_allocation=st.total_allocation, work=jr.work, span=jr.span,
            leaf=jr.leaf, work_executed=jr.work_executed, parallelism_history=jr.history))

    def _skip_idle(self, step: int, release: float) -> int:
        """Jump over an empty stretch to the step where ``release`` attaches.

        Any node whose quantum expires inside the gap would have partitioned
        an empty subtree, so its children end up with nothing.
        """
        target = max(step + 1, math.ceil(release / self.cfg.base_quantum - EPS))
        for nr in self.nodes:
            q = nr.quantum
            if -(-step // q) * q < target:
                for k in nr.kids:
                    k.alloc = 0.0
                nr.delay = 0.0
                nr.stalls = []
        return target

    def _horizon(self) -> float:
        if not self.jobs:
            return 0.0
        last = max(j.release_time for j in self.jobs)
        work = math.fsum(j.total_work for j in self.jobs)
        top = self.root.node.quantum * self.cfg.base_quantum
        return 10.0 * (last + work + top) + 100.0 * self.cfg.base_quantum

