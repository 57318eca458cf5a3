"""Hierarchical scheduling of malleable parallel jobs.

Simulates AC-DS, AG-DS and EQUI-EQUI on a tree of schedulers and checks
measured runs against the satisfied-time, allocation and makespan bounds.
"""

from .analysis import (BoundReport, check_bounds, lower_bound, measure_transition_factor,
                       passthrough_transform, water_filling)
from .engine import (Hierarchy, SimConfig, SimResult, apply_reallocation_delay,
                     compute_metrics, generate_tree, run)
from .execution import JobExecState, advance, parallelism_at, quantum_stats
from .policies import (AgState, PolicyKind, ac_desire, ag_desire, deq_allocate, ds_aggregate,
                       equi_allocate)
from .workload import (ConfigError, MalleableJob, WorkloadConfig, check_phase_consistency,
                       generate_workload, sample_moldable_jobs, synthesize_phases)

__version__ = "0.1.0"
