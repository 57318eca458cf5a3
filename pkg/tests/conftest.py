import pytest

from hiersched.workload import CurveKind, Direction, Family, MalleableJob, make_phase

STEP = CurveKind(Family.STEP, Direction.FLAT)


def step_job(job_id, pieces, release=0.0, procs=256):
    """Job made of Step phases given as (span length, parallelism) pairs."""
    phases = [make_phase(STEP, t, h, procs) for t, h in pieces]
    return MalleableJob(job_id, release, phases)


@pytest.fixture
def make_step_job():
    return step_job


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
