import pytest
from hypothesis import given, settings, strategies as st

from conftest import step_job
from hiersched.analysis import (
    BoundViolation, check_bounds, in_proven_regime, lower_bound, measure_transition_factor,
    passthrough_transform, water_filling, water_level,
)
from hiersched.engine import JobOutcome, SimConfig, SimResult, generate_tree, run
from hiersched.policies import PolicyKind
from hiersched.workload import WorkloadConfig, generate_workload


def outcome(job_id, release, span, work, **kw):
    base = dict(completion=release + span, satisfied_time=span, deprived_time=0.0,
                total_allocation=work, leaf=0, work_executed=work)
    base.update(kw)
    return JobOutcome(job_id=job_id, release=release, span=span, work=work, **base)


# -- lower bound ------------------------------------------------------------

def test_lower_bound_work_term():
    jobs = [outcome(0, 0, 5, 10), outcome(1, 0, 2, 10)]
    assert lower_bound(jobs, 2) == 10


def test_lower_bound_span_term():
    assert lower_bound([step_job(0, [(10, 10)])], 4) == 25
    assert lower_bound([step_job(0, [(10, 10)], release=30)], 4) == 40


def test_lower_bound_empty():
    assert lower_bound([], 4) == 0


# -- transition factor --------------------------------------------------------

def test_transition_factor_examples():
    assert measure_transition_factor({0: [3, 3, 3]}) == 1
    assert measure_transition_factor([[4, 8, 8]]) == 2
    assert measure_transition_factor([[5]]) == 1
    assert measure_transition_factor([]) == 1
    assert measure_transition_factor([[8, 2], [1, 3]]) == 4


# -- water filling ----------------------------------------------------------------

def test_water_filling_examples():
    assert water_level([2, 5, 9], 12) == 5
    assert water_filling({0: 2, 1: 5, 2: 9}, 12) == {0: 2, 1: 5, 2: 5}
    assert water_level([3, 3], 12) == float("inf")
    assert water_filling({0: 3, 1: 3}, 12) == {0: 3, 1: 3}
    assert water_filling({0: 10, 1: 10}, 8) == {0: 4, 1: 4}


@settings(max_examples=200, deadline=None)
@given(ds=st.lists(st.floats(0, 100), min_size=1, max_size=40), amount=st.floats(0, 200))
def test_water_level_solves_budget(ds, amount):
    lam = water_level(ds, amount)
    total = sum(min(d, lam) for d in ds)
    assert total == pytest.approx(min(amount, sum(ds)), rel=1e-9, abs=1e-9)


# -- bound checks -------------------------------------------------------------------

def test_single_constant_job_bounds():
    cfg = SimConfig(total_processors=4)
    res = run(cfg, [step_job(0, [(4, 4)])], generate_tree(cfg))
    rep = check_bounds(res, strict=True)
    assert rep.c == 1
    assert rep.lemma_pass and rep.theorem_pass
    assert not rep.informational
    assert rep.alpha == pytest.approx(4.75 / 4)
    assert rep.beta == pytest.approx(17 / 16)
    # makespan bound from the last job: 2 * (0 + 4) + 2 * 16 / 4 + 2
    assert rep.makespan_bound == pytest.approx(18)


@pytest.mark.parametrize("seed", range(4))
def test_seeded_ac_runs_meet_bounds(seed):
    jobs = generate_workload(WorkloadConfig(offered_load=2, job_count=40, seed=seed))
    cfg = SimConfig(levels=2 + seed, seed=seed)
    rep = check_bounds(run(cfg, jobs, generate_tree(cfg)), strict=True)
    assert rep.lemma_pass and rep.theorem_pass
    assert rep.lower_bound <= rep.makespan + 1e-9


def test_equi_report_is_informational():
    jobs = generate_workload(WorkloadConfig(job_count=20, seed=1))
    cfg = SimConfig(levels=3, policy=PolicyKind.EQUI_EQUI)
    res = run(cfg, jobs, generate_tree(cfg))
    assert not in_proven_regime(res)
    rep = check_bounds(res, strict=True)
    assert rep.informational
    assert rep.violations == []


def test_regime_detection():
    assert not in_proven_regime(SimResult(SimConfig(quantum_factor=2), 0, 1, []))
    assert not in_proven_regime(SimResult(SimConfig(cost_factor=0.1), 0, 1, []))
    assert in_proven_regime(SimResult(SimConfig(), 0, 1, []))


def test_violation_is_reported_and_raised():
    bad = outcome(7, 0.0, 2.0, 8.0, completion=40.0, satisfied_time=40.0,
                  total_allocation=8.0, parallelism_history=[4, 4])
    res = SimResult(SimConfig(total_processors=4), 40.0, 0.05, [bad])
    rep = check_bounds(res)
    assert not rep.lemma_pass
    assert not rep.theorem_pass
    assert any("job 7" in v for v in rep.violations)
    with pytest.raises(BoundViolation, match="job 7"):
        check_bounds(res, strict=True)


def test_zero_slack_option():
    cfg = SimConfig(total_processors=4)
    res = run(cfg, [step_job(0, [(4, 4)])], generate_tree(cfg))
    assert check_bounds(res, slack_quanta=0).lemma_pass


def test_report_row_columns():
    cfg = SimConfig(total_processors=4)
    res = run(cfg, [step_job(0, [(4, 4)])], generate_tree(cfg))
    assert set(check_bounds(res).as_row()) == {"c", "alpha", "beta", "lemma_pass",
                                               "theorem_pass"}


# -- pass-through transform ------------------------------------------------------------

def test_passthrough_identity():
    tree = generate_tree(SimConfig(levels=3, seed=2))
    assert passthrough_transform(tree, 0) == tree


def test_passthrough_flat_to_chain():
    tree = passthrough_transform(generate_tree(SimConfig(levels=2)), 3)
    tree.check()
    assert tree.levels == 5
    assert len(tree.nodes) == 4
    assert len(tree.leaves) == 1


@pytest.mark.parametrize("k, extra", [(3, 1), (4, 2), (2, 1)])
def test_passthrough_node_count(k, extra):
    base = generate_tree(SimConfig(levels=k, seed=k))
    tree = passthrough_transform(base, extra)
    tree.check()
    assert len(tree.nodes) == len(base.nodes) + len(base.leaves) * extra
    assert tree.levels == k + extra
    assert all(len(n.children) == 1 for n in tree.nodes[len(base.nodes):])


def test_passthrough_rejects_negative():
    with pytest.raises(ValueError):
        passthrough_transform(generate_tree(SimConfig()), -1)
