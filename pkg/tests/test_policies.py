import math

import pytest
from hypothesis import given, settings, strategies as st

from conftest import step_job
from hiersched.analysis import water_filling, water_level
from hiersched.execution import DomainError, JobExecState, QuantumStats, advance, quantum_stats
from hiersched.policies import (
    AgState, PolicyKind, ac_desire, ag_desire, deq_allocate, deq_rounds, ds_aggregate,
    equi_allocate,
)

desire_lists = st.lists(st.floats(0, 100), min_size=0, max_size=50)


def test_policy_parse():
    assert PolicyKind.parse("ac-ds") is PolicyKind.AC_DS
    assert PolicyKind.parse(PolicyKind.EQUI_EQUI) is PolicyKind.EQUI_EQUI
    with pytest.raises(ValueError, match="unknown policy"):
        PolicyKind.parse("fifo")


# -- AC -------------------------------------------------------------------

def test_ac_first_quantum_is_one():
    assert ac_desire(None) == 1.0


def test_ac_uses_average_parallelism():
    assert ac_desire(QuantumStats(8, 1, 8), 1.0) == 8


def test_ac_zero_progress_keeps_previous():
    assert ac_desire(QuantumStats(0, 0, 3.0), 3.0) == 3.0


def test_ac_underallocated_constant_job_reports_true_parallelism():
    job = step_job(0, [(50, 4)])
    st_ = JobExecState.for_job(job)
    d = advance(st_, job, 2, 1)
    assert ac_desire(quantum_stats([d]), 1.0) == pytest.approx(4)


def test_ac_fixed_point_for_satisfied_constant_job():
    job = step_job(0, [(50, 5)])
    st_ = JobExecState.for_job(job)
    desires = [ac_desire(None)]
    for _ in range(6):
        d = advance(st_, job, desires[-1], 1)
        desires.append(ac_desire(quantum_stats([d]), desires[-1]))
    assert desires[0] == 1
    assert all(x == pytest.approx(5) for x in desires[1:])


# -- AG -------------------------------------------------------------------

def test_ag_efficient_doubles():
    assert ag_desire(QuantumStats(3.6, 1, 3.6), AgState(4.0), 4, True, 1.0) == 8


def test_ag_inefficient_halves():
    assert ag_desire(QuantumStats(2.0, 1, 2.0), AgState(4.0), 4, True, 1.0) == 2


def test_ag_deprived_unchanged():
    assert ag_desire(QuantumStats(2.0, 1, 2.0), AgState(4.0), 2, False, 1.0) == 4


def test_ag_floor_at_one():
    assert ag_desire(QuantumStats(0.1, 0.1, 1), AgState(1.0), 1, True, 1.0) == 1


def test_ag_negative_allocation_rejected():
    with pytest.raises(DomainError):
        ag_desire(QuantumStats(0, 0, 1), AgState(), -1, True)


# -- DS -------------------------------------------------------------------

@pytest.mark.parametrize("xs, total", [([3, 5, 7], 15), ([], 0), ([2.5, 0.5], 3.0)])
def test_ds_examples(xs, total):
    assert ds_aggregate(xs) == total


@given(a=desire_lists, b=desire_lists)
def test_ds_linear(a, b):
    assert ds_aggregate(a + b) == pytest.approx(ds_aggregate(a) + ds_aggregate(b),
                                                rel=1e-12, abs=1e-12)


# -- DEQ ------------------------------------------------------------------

def test_deq_water_fill_example():
    assert deq_allocate({"a": 2, "b": 5, "c": 9}, 12) == {"a": 2, "b": 5, "c": 5}


def test_deq_empty():
    assert deq_allocate({}, 10) == {}


def test_deq_undersubscribed_leaves_idle():
    got = deq_allocate({0: 3, 1: 3}, 12)
    assert got == {0: 3, 1: 3}
    assert 12 - sum(got.values()) == 6


def test_deq_oversubscribed_even_split():
    assert deq_allocate({0: 10, 1: 10}, 8) == {0: 4, 1: 4}


def test_deq_rejects_negative():
    with pytest.raises(DomainError):
        deq_allocate({0: -1}, 4)
    with pytest.raises(DomainError):
        deq_allocate({0: 1}, -4)


def test_deq_preserves_keys_and_order():
    got = deq_allocate({"z": 1, "a": 50, "m": 2}, 10)
    assert list(got) == ["z", "a", "m"]


@settings(max_examples=300, deadline=None)
@given(ds=desire_lists, amount=st.floats(0, 200))
def test_deq_properties(ds, amount):
    desires = dict(enumerate(ds))
    got = deq_allocate(desires, amount)
    # conservation
    assert math.fsum(got.values()) == pytest.approx(min(amount, math.fsum(ds)),
                                                    rel=1e-9, abs=1e-9)
    # monotone fairness
    for i in desires:
        for j in desires:
            if desires[i] <= desires[j]:
                assert got[i] <= got[j] + 1e-12
    # min(desire, level) with the oracle's level
    lam = water_level(ds, amount)
    for i, d in desires.items():
        assert got[i] == pytest.approx(min(d, lam), rel=1e-9, abs=1e-9)
    # rounds bounded by the number of children
    assert deq_rounds(desires, amount) <= max(1, len(ds))


@settings(max_examples=300, deadline=None)
@given(ds=desire_lists, amount=st.floats(0, 200))
def test_deq_matches_water_filling(ds, amount):
    desires = dict(enumerate(ds))
    got = deq_allocate(desires, amount)
    want = water_filling(desires, amount)
    assert all(abs(got[k] - want[k]) <= 1e-9 for k in desires)


# -- EQUI -----------------------------------------------------------------

def test_equi_examples():
    assert equi_allocate(4, 12) == [3, 3, 3, 3]
    assert equi_allocate(3, 8) == pytest.approx([8 / 3] * 3)
    assert equi_allocate(0, 8) == []
