"""Experiment harness: config parsing, sweeps and result tables.

Subcommands::

    hiersched gen    --config exp.toml --out DIR      write a workload file
    hiersched run    --config exp.toml --out DIR      one simulation, trace + metrics
    hiersched sweep  --config exp.toml --out DIR      full grid, averaged table
    hiersched verify [--config exp.toml]              oracle and bound suites

Exit status is 0 on success, 1 on a configuration error and 2 when a
verification suite fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analysis import check_bounds, water_filling
from .engine import SimConfig, generate_tree, run
from .policies import PolicyKind, deq_allocate
from .workload import ConfigError, WorkloadConfig, dump_workload, generate_workload

log = logging.getLogger("hiersched")

JOBS_PER_UNIT_LOAD = 160
RUN_COLUMNS = ["seed", "policy", "K", "QF", "CF", "n", "makespan", "utilization",
               "c", "alpha", "beta", "lemma_pass", "theorem_pass"]
KEY_COLUMNS = ["policy", "K", "QF", "CF", "n"]


@dataclass
class ExperimentSpec:
    sim: SimConfig = field(default_factory=SimConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    fixed_load: bool = False
    policies: list[PolicyKind] = field(
        default_factory=lambda: [PolicyKind.AC_DS, PolicyKind.AG_DS, PolicyKind.EQUI_EQUI])
    levels: list[int] = field(default_factory=lambda: [2, 3, 4, 5])
    quantum_factors: list[int] = field(default_factory=lambda: [1])
    cost_factors: list[float] = field(default_factory=lambda: [0.0])
    job_counts: list[int] = field(default_factory=lambda: list(range(20, 501, 20)))
    repetitions: int = 10
    output: str = "results"
    seed: int = 0

    def validate(self) -> None:
        for name in ("policies", "levels", "quantum_factors", "cost_factors", "job_counts"):
            if not getattr(self, name):
                raise ConfigError(f"sweep axis {name!r} must not be empty")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        for k in self.levels:
            dataclasses.replace(self.sim, levels=k).validate()
        for qf in self.quantum_factors:
            dataclasses.replace(self.sim, quantum_factor=qf).validate()
        for cf in self.cost_factors:
            dataclasses.replace(self.sim, cost_factor=cf).validate()
        for n in self.job_counts:
            if n < 0:
                raise ConfigError("job counts must be >= 0")
        self.sim.validate()
        self.workload.validate()

    def workload_for(self, n: int, seed: int) -> WorkloadConfig:
        load = self.workload.offered_load if self.fixed_load else n / JOBS_PER_UNIT_LOAD
        return dataclasses.replace(self.workload, job_count=n, offered_load=max(load, 1e-9),
                                   total_processors=self.sim.total_processors, seed=seed)


# ---------------------------------------------------------------------------
# config parsing

_SIM_KEYS = {"total_processors", "base_quantum", "branching_range", "delay_scope",
             "ag_threshold", "ag_multiplier"}
_WORKLOAD_KEYS = {"offered_load", "avg_parallelism_range", "beta1", "beta2", "work_range",
                  "phase_span_length", "max_span"}
_SWEEP_KEYS = {"policies", "levels", "quantum_factors", "cost_factors", "job_counts"}
_TOP_KEYS = {"repetitions", "output", "seed", "sim", "workload", "sweep"}


def _reject_unknown(table: dict, allowed: set, where: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def spec_from_dict(doc: dict) -> ExperimentSpec:
    _reject_unknown(doc, _TOP_KEYS, "top level")
    sim_t = doc.get("sim", {})
    wl_t = doc.get("workload", {})
    sw_t = doc.get("sweep", {})
    _reject_unknown(sim_t, _SIM_KEYS, "[sim]")
    _reject_unknown(wl_t, _WORKLOAD_KEYS, "[workload]")
    _reject_unknown(sw_t, _SWEEP_KEYS, "[sweep]")
    try:
        sim = SimConfig(**sim_t)
        workload = WorkloadConfig(**wl_t)
        spec = ExperimentSpec(sim=sim, workload=workload, fixed_load="offered_load" in wl_t)
        if "policies" in sw_t:
            spec.policies = [PolicyKind.parse(p) for p in sw_t["policies"]]
        for key in ("levels", "quantum_factors", "job_counts"):
            if key in sw_t:
                setattr(spec, key, [int(v) for v in sw_t[key]])
        if "cost_factors" in sw_t:
            spec.cost_factors = [float(v) for v in sw_t["cost_factors"]]
        for key in ("repetitions", "seed"):
            if key in doc:
                setattr(spec, key, int(doc[key]))
        if "output" in doc:
            spec.output = str(doc["output"])
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    spec.validate()
    return spec


def parse_config(path: str | Path | None) -> ExperimentSpec:
    if path is None:
        return spec_from_dict({})
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return spec_from_dict(doc)


# ---------------------------------------------------------------------------
# sweeps

def derive_seed(master: int, *parts: Any) -> int:
    key = ":".join(str(p) for p in (master,) + parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


@dataclass(frozen=True)
class RunPoint:
    policy: PolicyKind
    K: int
    QF: int
    CF: float
    n: int
    rep: int


def _run_point(spec: ExperimentSpec, pt: RunPoint) -> dict:
    # workload depends only on (n, rep); the tree adds K.  Policies, QF and CF
    # therefore compare on identical inputs.
    wseed = derive_seed(spec.seed, "workload", pt.n, pt.rep)
    tseed = derive_seed(spec.seed, "tree", pt.n, pt.K, pt.rep)
    jobs = generate_workload(spec.workload_for(pt.n, wseed))
    cfg = dataclasses.replace(spec.sim, levels=pt.K, quantum_factor=pt.QF, cost_factor=pt.CF,
                              policy=pt.policy, seed=tseed, record_trace=False)
    result = run(cfg, jobs, generate_tree(cfg))
    report = check_bounds(result)
    return {"seed": tseed, "policy": pt.policy.value, "K": pt.K, "QF": pt.QF, "CF": pt.CF,
            "n": pt.n, "makespan": result.makespan, "utilization": result.utilization,
            **report.as_row()}


def _run_point_safe(args) -> tuple[RunPoint, dict | None, str | None]:
    spec, pt = args
    try:
        return pt, _run_point(spec, pt), None
    except Exception as exc:  # recorded per grid point, sweep continues
        return pt, None, f"{type(exc).__name__}: {exc}"


@dataclass
class ResultTable:
    columns: list[str]
    rows: list[list[Any]]
    runs: list[dict] = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]

    def lookup(self, **key) -> dict:
        for row in self.as_dicts():
            if all(row[k] == v for k, v in key.items()):
                return row
        raise KeyError(key)


def grid(spec: ExperimentSpec) -> list[RunPoint]:
    return [RunPoint(p, k, qf, cf, n, r)
            for p in spec.policies for k in spec.levels for qf in spec.quantum_factors
            for cf in spec.cost_factors for n in spec.job_counts
            for r in range(spec.repetitions)]


def run_sweep(spec: ExperimentSpec, workers: int = 1) -> ResultTable:
    spec.validate()
    points = grid(spec)
    tasks = [(spec, pt) for pt in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_point_safe, tasks, chunksize=4))
    else:
        outcomes = [_run_point_safe(t) for t in tasks]

    by_key: dict[tuple, list[dict]] = {}
    errors: dict[tuple, str] = {}
    runs = []
    for pt, row, err in outcomes:
        key = (pt.policy.value, pt.K, pt.QF, pt.CF, pt.n)
        if err is not None:
            errors[key] = err
            log.error("grid point %s failed: %s", key, err)
            continue
        runs.append(row)
        by_key.setdefault(key, []).append(row)
    for key in errors:
        by_key.pop(key, None)
    return summarize(by_key, spec, runs, errors)


def _mean(rows, col):
    return math.fsum(float(r[col]) for r in rows) / len(rows)


def summarize(by_key: dict, spec: ExperimentSpec, runs: list[dict],
              errors: dict) -> ResultTable:
    with_ratio = PolicyKind.EQUI_EQUI in spec.policies
    columns = ["seed", "policy", "K", "QF", "CF", "n", "makespan", "utilization",
               "makespan_std", "utilization_std", "runs"]
    if with_ratio:
        columns.append("makespan_ratio")
    columns += ["c", "alpha", "beta", "lemma_pass", "theorem_pass"]

    order = {p.value: i for i, p in enumerate(PolicyKind)}
    keys = sorted(by_key, key=lambda k: (order[k[0]],) + k[1:])
    rows = []
    for key in keys:
        rs = by_key[key]
        policy, k, qf, cf, n = key
        ms = [r["makespan"] for r in rs]
        us = [r["utilization"] for r in rs]
        row = {"seed": spec.seed, "policy": policy, "K": k, "QF": qf, "CF": cf, "n": n,
               "makespan": _mean(rs, "makespan"), "utilization": _mean(rs, "utilization"),
               "makespan_std": statistics.pstdev(ms), "utilization_std": statistics.pstdev(us),
               "runs": len(rs)}
        if with_ratio:
            base = by_key.get((PolicyKind.EQUI_EQUI.value, k, qf, cf, n))
            ratio = (_mean(base, "makespan") / row["makespan"]
                     if base and row["makespan"] > 0 else float("nan"))
            row["makespan_ratio"] = ratio
        row.update({"c": _mean(rs, "c"), "alpha": _mean(rs, "alpha"), "beta": _mean(rs, "beta"),
                    "lemma_pass": _mean(rs, "lemma_pass"),
                    "theorem_pass": _mean(rs, "theorem_pass")})
        rows.append([row[c] for c in columns])
    runs = sorted(runs, key=lambda r: (order[r["policy"]], r["K"], r["QF"], r["CF"], r["n"],
                                       r["seed"]))
    return ResultTable(columns, rows, runs, errors)


# ---------------------------------------------------------------------------
# output

def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_cell(s: str) -> Any:
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def table_to_csv(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def csv_to_table(text: str) -> tuple[list[str], list[list[Any]]]:
    reader = csv.reader(io.StringIO(text))
    columns = next(reader)
    return columns, [[_parse_cell(c) for c in r] for r in reader]


def _json_value(v: Any) -> Any:
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def table_to_json(columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    doc = {"columns": list(columns), "rows": [[_json_value(v) for v in r] for r in rows]}
    return json.dumps(doc, indent=1) + "\n"


def json_to_table(text: str) -> tuple[list[str], list[list[Any]]]:
    doc = json.loads(text)
    rows = [[float(v) if v in ("nan", "inf", "-inf") else v for v in r] for r in doc["rows"]]
    return doc["columns"], rows


def emit_results(table: ResultTable, out_dir: str | Path, fmt: str = "csv") -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        render = table_to_csv if fmt == "csv" else table_to_json
        summary = out / f"summary.{fmt}"
        summary.write_text(render(table.columns, table.rows))
        runs = out / f"runs.{fmt}"
        runs.write_text(render(RUN_COLUMNS, [[r[c] for c in RUN_COLUMNS] for r in table.runs]))
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return [summary, runs]


# ---------------------------------------------------------------------------
# verification suites

def verify_oracle(instances: int = 10_000, seed: int = 0) -> list[str]:
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(instances):
        m = int(rng.integers(1, 51))
        desires = dict(enumerate(rng.uniform(0, 100, m).tolist()))
        amount = float(rng.uniform(0, 200))
        got = deq_allocate(desires, amount)
        want = water_filling(desires, amount)
        if any(abs(got[k] - want[k]) > 1e-9 for k in desires):
            failures.append(f"instance {i}: DEQ and water-filling disagree")
    return failures


def verify_bounds(spec: ExperimentSpec, runs: int = 50) -> list[str]:
    failures = []
    counts = [n for n in spec.job_counts if n > 0] or [100]
    for r in range(runs):
        k = spec.levels[r % len(spec.levels)]
        n = counts[r % len(counts)]
        wseed = derive_seed(spec.seed, "verify-workload", r)
        tseed = derive_seed(spec.seed, "verify-tree", r)
        jobs = generate_workload(spec.workload_for(n, wseed))
        cfg = dataclasses.replace(spec.sim, levels=k, quantum_factor=1, cost_factor=0.0,
                                  policy=PolicyKind.AC_DS, seed=tseed)
        report = check_bounds(run(cfg, jobs, generate_tree(cfg)))
        failures.extend(f"run {r} (K={k}, n={n}): {v}" for v in report.violations)
    return failures


# ---------------------------------------------------------------------------
# entry point

def _first_point(spec: ExperimentSpec) -> RunPoint:
    return RunPoint(spec.policies[0], spec.levels[0], spec.quantum_factors[0],
                    spec.cost_factors[0], spec.job_counts[0], 0)


def _apply_overrides(spec: ExperimentSpec, args) -> ExperimentSpec:
    if args.seed is not None:
        spec.seed = args.seed
    if args.jobs is not None:
        spec.job_counts = [args.jobs]
    if args.out is not None:
        spec.output = args.out
    spec.validate()
    return spec


def cmd_gen(spec: ExperimentSpec, args) -> int:
    n = spec.job_counts[0]
    wc = spec.workload_for(n, spec.seed)
    out = Path(spec.output)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "workload.json"
    dump_workload(generate_workload(wc), path)
    print(path)
    return 0


def cmd_run(spec: ExperimentSpec, args) -> int:
    pt = _first_point(spec)
    wc = spec.workload_for(pt.n, spec.seed)
    jobs = generate_workload(wc)
    cfg = dataclasses.replace(spec.sim, levels=pt.K, quantum_factor=pt.QF, cost_factor=pt.CF,
                              policy=pt.policy, seed=spec.seed, record_trace=True)
    result = run(cfg, jobs, generate_tree(cfg))
    report = check_bounds(result)
    out = Path(spec.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.jsonl", "w") as fh:
        for rec in result.trace:
            fh.write(json.dumps(rec) + "\n")
    row = {"seed": spec.seed, "policy": pt.policy.value, "K": pt.K, "QF": pt.QF, "CF": pt.CF,
           "n": pt.n, "makespan": result.makespan, "utilization": result.utilization,
           **report.as_row()}
    render = table_to_csv if args.format == "csv" else table_to_json
    (out / f"metrics.{args.format}").write_text(
        render(RUN_COLUMNS, [[row[c] for c in RUN_COLUMNS]]))
    jobs_cols = ["job_id", "release", "completion", "satisfied_time", "deprived_time",
                 "total_allocation", "work", "span", "leaf"]
    (out / f"jobs.{args.format}").write_text(
        render(jobs_cols, [[getattr(j, c) for c in jobs_cols] for j in result.jobs]))
    print(f"makespan={result.makespan:.6g} utilization={result.utilization:.4f} "
          f"c={report.c:.4g} lemma_pass={report.lemma_pass} theorem_pass={report.theorem_pass}")
    return 0


def cmd_sweep(spec: ExperimentSpec, args) -> int:
    table = run_sweep(spec, workers=args.workers)
    for path in emit_results(table, spec.output, args.format):
        print(path)
    return 0 if not table.errors else 2


def cmd_verify(spec: ExperimentSpec, args) -> int:
    failures = verify_oracle(seed=spec.seed)
    print(f"DEQ vs water-filling: {'PASS' if not failures else 'FAIL'}")
    bound_failures = verify_bounds(spec, runs=args.runs)
    print(f"satisfied-time / allocation / makespan bounds: "
          f"{'PASS' if not bound_failures else 'FAIL'}")
    for f in (failures + bound_failures)[:20]:
        print("  " + f)
    return 2 if failures or bound_failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiersched",
                                     description="Hierarchical malleable job scheduling "
                                                 "simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--jobs", type=int, help="job count override (n)")
    common.add_argument("--workers", type=int, default=1, help="parallel sweep processes")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("gen", parents=[common], help="write a workload file")
    sub.add_parser("run", parents=[common], help="run one simulation")
    sub.add_parser("sweep", parents=[common], help="run the configured grid")
    p_verify = sub.add_parser("verify", parents=[common], help="oracle and bound suites")
    p_verify.add_argument("--runs", type=int, default=50, help="seeded AC-DS runs to check")
    return parser


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        spec = _apply_overrides(parse_config(args.config), args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](spec, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
