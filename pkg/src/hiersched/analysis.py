"""Oracles and empirical bound checks for simulation results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

from .engine import Hierarchy, Node, SimResult
from .policies import PolicyKind

INF = float("inf")


class BoundViolation(AssertionError):
    pass


def _rlw(job) -> tuple[float, float, float]:
    """(release, span, work) of a MalleableJob or a JobOutcome."""
    if hasattr(job, "phases"):
        return job.release_time, job.total_span, job.total_work
    return job.release, job.span, job.work


def lower_bound(jobs: Iterable, total_processors: float) -> float:
    """max(max_i r_i + l_i, sum_i w_i / P); 0 for no jobs."""
    rlw = [_rlw(j) for j in jobs]
    if not rlw:
        return 0.0
    return max(max(r + l for r, l, _ in rlw),
               math.fsum(w for _, _, w in rlw) / total_processors)


def water_level(desires: Sequence[float], amount: float) -> float:
    """Level lam with sum(min(d, lam)) == min(amount, sum(d)); inf if undersubscribed."""
    ds = sorted(desires)
    if not ds or math.fsum(ds) <= amount:
        return INF
    below = 0.0
    n = len(ds)
    for i, d in enumerate(ds):
        lam = (amount - below) / (n - i)
        if lam <= d:
            return lam
        below += d
    return INF


def water_filling(desires: Mapping[Hashable, float], amount: float) -> dict:
    lam = water_level(list(desires.values()), amount)
    return {k: min(d, lam) for k, d in desires.items()}


def measure_transition_factor(trace) -> float:
    """Largest adjacent-quantum ratio of average parallelism over all jobs.

    ``trace`` is a SimResult, or a mapping / iterable of per-job sequences of
    per-quantum average parallelism.
    """
    if isinstance(trace, SimResult):
        seqs = [j.parallelism_history for j in trace.jobs]
    elif isinstance(trace, Mapping):
        seqs = list(trace.values())
    else:
        seqs = list(trace)
    c = 1.0
    for seq in seqs:
        for a, b in zip(seq, seq[1:]):
            r = a / b if a > b else b / a
            if r > c:
                c = r
    return c


@dataclass
class JobCheck:
    job_id: int
    satisfied_ratio: float
    allocation_ratio: float
    satisfied_ok: bool
    allocation_ok: bool


@dataclass
class BoundReport:
    transition_factor: float
    jobs: list[JobCheck]
    makespan: float
    makespan_bound: float
    lower_bound: float
    theorem_pass: bool
    alpha: float
    beta: float
    informational: bool
    violations: list[str] = field(default_factory=list)

    @property
    def c(self) -> float:
        return self.transition_factor

    @property
    def lemma_pass(self) -> bool:
        return all(j.satisfied_ok and j.allocation_ok for j in self.jobs)

    def raise_if_failed(self) -> None:
        if self.violations:
            raise BoundViolation("; ".join(self.violations))

    def as_row(self) -> dict:
        return {"c": self.c, "alpha": self.alpha, "beta": self.beta,
                "lemma_pass": self.lemma_pass, "theorem_pass": self.theorem_pass}


def in_proven_regime(result: SimResult) -> bool:
    cfg = result.config
    return (cfg.policy is PolicyKind.AC_DS and cfg.quantum_factor == 1
            and cfg.cost_factor == 0)


def check_bounds(result: SimResult, slack_quanta: float = 2.0,
                 strict: bool = False) -> BoundReport:
    """Check the per-job satisfied-time / allocation bounds and the makespan bound.

    Outside the proven regime (AC_DS, QF=1, CF=0) the report is informational
    and never raises.  ``slack_quanta`` quanta of additive slack absorb the
    partial quanta at release and completion.
    """
    cfg = result.config
    L = cfg.base_quantum
    P = cfg.total_processors
    c = measure_transition_factor(result)
    informational = not in_proven_regime(result)
    slack = slack_quanta * L

    checks = []
    violations = []
    alpha = beta = 0.0
    for j in result.jobs:
        sr = j.satisfied_time / j.span
        ar = j.total_allocation / j.work
        alpha = max(alpha, sr)
        beta = max(beta, ar)
        s_ok = j.satisfied_time <= (c + 1) * j.span + slack
        a_ok = j.total_allocation <= (c + 1) * j.work + slack * P
        checks.append(JobCheck(j.job_id, sr, ar, s_ok, a_ok))
        if not s_ok:
            violations.append(f"job {j.job_id}: satisfied time {j.satisfied_time:.6g} > "
                              f"(c+1)*span + slack = {(c + 1) * j.span + slack:.6g}")
        if not a_ok:
            violations.append(f"job {j.job_id}: total allocation {j.total_allocation:.6g} > "
                              f"(c+1)*work + slack = {(c + 1) * j.work + slack * P:.6g}")

    total_work = math.fsum(j.work for j in result.jobs)
    bound = 0.0
    if result.jobs:
        last = max(j.completion for j in result.jobs)
        bound = max((c + 1) * (j.release + j.span) for j in result.jobs
                    if j.completion == last)
        bound += (c + 1) * total_work / P + slack
    theorem_ok = result.makespan <= bound + 1e-9 * max(1.0, bound)
    if not theorem_ok:
        violations.append(f"makespan {result.makespan:.6g} exceeds bound {bound:.6g}")

    report = BoundReport(c, checks, result.makespan, bound,
                         lower_bound(result.jobs, P), theorem_ok, alpha, beta,
                         informational, [] if informational else violations)
    if strict and not informational:
        report.raise_if_failed()
    return report


def passthrough_transform(tree: Hierarchy, extra_levels: int) -> Hierarchy:
    """Insert a chain of single-child nodes above every leaf.

    Every non-leaf node moves up ``extra_levels`` levels; inserted nodes take
    the quantum of the leaf they sit on.
    """
    if extra_levels < 0:
        raise ValueError("extra_levels must be >= 0")
    if extra_levels == 0:
        return Hierarchy([Node(n.node_id, n.level, n.parent, list(n.children), n.quantum)
                          for n in tree.nodes], tree.root)
    nodes = [Node(n.node_id, n.level if n.is_leaf else n.level + extra_levels,
                  n.parent, list(n.children), n.quantum) for n in tree.nodes]
    for leaf in [n for n in nodes if n.is_leaf]:
        below = leaf
        for depth in range(1, extra_levels + 1):
            mid = Node(len(nodes), 2 + depth, None, [below.node_id], leaf.quantum)
            nodes.append(mid)
            below.parent = mid.node_id
            below = mid
        old_parent = tree.nodes[leaf.node_id].parent
        below.parent = old_parent
        if old_parent is None:
            root = below.node_id
        else:
            kids = nodes[old_parent].children
            kids[kids.index(leaf.node_id)] = below.node_id
    if tree.nodes[tree.root].is_leaf:
        return Hierarchy(nodes, root)
    return Hierarchy(nodes, tree.root)
