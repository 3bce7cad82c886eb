"""Experiment commands behind the CLI: steady, converge, compare, sweep, fleet.

Each ``cmd_*`` function takes an `ExperimentConfig`, returns its report
object and, when `out` is given, writes CSV files plus a summary document
into that directory.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reporting
from ._validation import EdgePowerError
from .config import ExperimentConfig
from .fleet import FleetReport, fleet_expected_energy, simulate_fleet
from .markov import expected_power, perturb_row, residual, steady_state, validate_matrix
from .montecarlo import ConvergenceReport, SimulationRun, convergence_study
from .policy import PolicySpec, QLearningPolicy, run_policy

# Published headline improvements of predictive over reactive management, in percent.
CLAIMED_REDUCTION_PCT = {"energy": 20.0, "overload": 27.0, "late_service": 20.0}


class MissingBaselineError(EdgePowerError):
    pass


@dataclass
class SteadyReport:
    pi: np.ndarray
    watts: float
    residual: float
    labels: tuple[str, ...]


def cmd_steady(cfg: ExperimentConfig, out=None) -> SteadyReport:
    pi = steady_state(cfg.matrix)
    report = SteadyReport(pi.probs, expected_power(pi, cfg.profile), residual(pi, cfg.matrix), cfg.profile.labels)
    if out is not None:
        power = cfg.profile.state_power
        reporting.write_csv(
            Path(out) / "steady.csv",
            ("state", "label", "pi", "power_w", "contribution_w"),
            ((i, lab, report.pi[i], power[i], report.pi[i] * power[i]) for i, lab in enumerate(report.labels)),
        )
        reporting.write_summary(
            Path(out) / "steady_summary.txt",
            {
                "command": "steady",
                "config": cfg.source,
                "profile": cfg.profile.name,
                "pi": report.pi,
                "expected_power_w": report.watts,
                "residual_inf_norm": report.residual,
            },
        )
    return report


def cmd_converge(cfg: ExperimentConfig, out=None) -> ConvergenceReport:
    report = convergence_study(
        cfg.matrix,
        cfg.profile,
        cfg.simulation.seed,
        checkpoints=cfg.checkpoints,
        replicas=cfg.replicas,
        initial_state=cfg.simulation.initial_state,
        burn_in=cfg.simulation.burn_in,
        n_jobs=cfg.n_jobs,
    )
    if out is not None:
        reporting.write_convergence_csv(out, report, cfg.profile.labels)
        reporting.write_summary(
            Path(out) / "converge_summary.txt",
            {"command": "converge", "config": cfg.source, **reporting.convergence_summary(report)},
        )
    return report


def reduction(baseline: float, candidate: float) -> float:
    """(baseline - candidate) / baseline; 0 when both are 0, NaN when only the baseline is."""
    if baseline == 0:
        return 0.0 if candidate == 0 else math.nan
    return (baseline - candidate) / baseline


@dataclass
class PolicyResult:
    name: str
    kind: str
    run: SimulationRun
    energy_reduction: float = 0.0
    overload_reduction: float = 0.0
    late_service_reduction: float = 0.0

    @property
    def energy_total(self) -> float:
        return self.run.energy_joules


@dataclass
class ComparisonReport:
    baseline: str
    results: list[PolicyResult] = field(default_factory=list)
    claimed_reduction_pct: dict = field(default_factory=lambda: dict(CLAIMED_REDUCTION_PCT))

    def __getitem__(self, name: str) -> PolicyResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


COMPARE_HEADER = (
    "policy",
    "kind",
    "energy_joules",
    "mean_power_w",
    "overload_fraction",
    "late_service_fraction",
    "unserved_tasks",
    "energy_reduction_pct",
    "claimed_energy_reduction_pct",
    "overload_reduction_pct",
    "claimed_overload_reduction_pct",
    "late_service_reduction_pct",
    "claimed_late_service_reduction_pct",
)


def _baseline(cfg: ExperimentConfig) -> PolicySpec:
    if len(cfg.policies) < 2:
        raise MissingBaselineError("compare needs at least two policies")
    if cfg.baseline is not None:
        for p in cfg.policies:
            if p.name == cfg.baseline:
                return p
        raise MissingBaselineError(f"baseline {cfg.baseline!r} is not among the configured policies")
    for p in cfg.policies:
        if p.kind == "reactive":
            return p
    raise MissingBaselineError("compare needs a reactive baseline policy")


def trained_spec(spec: PolicySpec, cfg: ExperimentConfig) -> PolicySpec:
    """Train a q-learning spec on a held-out trace and attach its table."""
    if spec.kind != "q-learning" or spec.table is not None:
        return spec
    r = spec.resolved()
    seed = r["train_seed"] if r["train_seed"] is not None else cfg.simulation.seed + 1
    workload_seed = cfg.workload.seed if cfg.workload.seed is not None else cfg.simulation.seed
    train = cfg.workload.training_trace(int(r["training_ticks"]), workload_seed + 1)
    est = QLearningPolicy(
        gamma=r["gamma"],
        learning_rate=r["learning_rate"],
        epsilon=r["epsilon"],
        epsilon_final=r["epsilon_final"],
        capacity=r["capacity"],
        idle_capacity=r["idle_capacity"],
        energy_weight=r["energy_weight"],
        switch_weight=r["switch_weight"],
        delay_penalty=r["delay_penalty"],
        seed=seed,
        profile=cfg.profile,
    ).fit(train)
    trained = est.to_spec(spec.name)
    trained.params = dict(spec.params)
    return trained


def cmd_compare(cfg: ExperimentConfig, out=None) -> ComparisonReport:
    base_spec = _baseline(cfg)
    trace = cfg.workload_trace()
    results = []
    for spec in cfg.policies:
        spec = trained_spec(spec, cfg)
        results.append(PolicyResult(spec.name, spec.kind, run_policy(spec, cfg.matrix, cfg.profile, trace, cfg.simulation)))
    base = next(r for r in results if r.name == base_spec.name)
    for r in results:
        r.energy_reduction = reduction(base.run.energy_joules, r.run.energy_joules)
        r.overload_reduction = reduction(base.run.overload_fraction, r.run.overload_fraction)
        r.late_service_reduction = reduction(base.run.late_service_fraction, r.run.late_service_fraction)
    report = ComparisonReport(base.name, results)
    if out is not None:
        claimed = report.claimed_reduction_pct
        rows = []
        for r in results:
            is_base = r.name == base.name
            rows.append(
                (
                    r.name,
                    r.kind,
                    r.run.energy_joules,
                    r.run.mean_power,
                    r.run.overload_fraction,
                    r.run.late_service_fraction,
                    r.run.unserved,
                    100 * r.energy_reduction,
                    None if is_base else claimed["energy"],
                    100 * r.overload_reduction,
                    None if is_base else claimed["overload"],
                    100 * r.late_service_reduction,
                    None if is_base else claimed["late_service"],
                )
            )
        reporting.write_csv(Path(out) / "compare.csv", COMPARE_HEADER, rows)
        reporting.write_summary(
            Path(out) / "compare_summary.txt",
            {
                "command": "compare",
                "config": cfg.source,
                "baseline": base.name,
                "workload": trace.source,
                "reduction_definition": "(baseline - candidate) / baseline",
                "claimed_reduction_pct": claimed,
                "policies": {
                    r.name: {"kind": r.kind, **reporting.run_summary(r.run), "energy_reduction_pct": 100 * r.energy_reduction}
                    for r in results
                },
                "policy_params": {s.name: s.to_dict() for s in cfg.policies},
            },
        )
    return report


@dataclass
class SweepPoint:
    value: float
    pi: np.ndarray | None
    watts: float | None
    status: str = "ok"


def cmd_sweep(cfg: ExperimentConfig, out=None) -> list[SweepPoint]:
    if cfg.sweep is None:
        raise EdgePowerError("config has no sweep section")
    sw = cfg.sweep
    points = []
    for v in sw.values:
        try:
            m = perturb_row(cfg.matrix, sw.row, sw.column, v)
            report = validate_matrix(m)
            if not report.ok:
                raise EdgePowerError(str(report))
            pi = steady_state(m)
            points.append(SweepPoint(v, pi.probs, expected_power(pi, cfg.profile)))
        except EdgePowerError as exc:
            points.append(SweepPoint(v, None, None, f"error: {exc}"))
    if out is not None:
        n = cfg.matrix.n
        header = ("value", *(f"pi{i}" for i in range(n)), "watts", "status")
        rows = (
            (p.value, *(p.pi if p.pi is not None else [None] * n), p.watts, p.status.replace(",", ";"))
            for p in points
        )
        reporting.write_csv(Path(out) / "sweep.csv", header, rows)
        reporting.write_summary(
            Path(out) / "sweep_summary.txt",
            {
                "command": "sweep",
                "config": cfg.source,
                "entry": [sw.row, sw.column],
                "base_value": float(cfg.matrix.entries[sw.row, sw.column]),
                "values": sw.values,
                "watts": [p.watts for p in points],
                "failed_points": sum(p.status != "ok" for p in points),
            },
        )
    return points


def cmd_fleet(cfg: ExperimentConfig, out=None) -> dict[str, FleetReport]:
    if cfg.fleet is None:
        raise EdgePowerError("config has no fleet section")
    trace = cfg.workload_trace()
    specs = cfg.fleet.nodes
    reports = {
        strategy: simulate_fleet(specs, trace, cfg.fleet.coupling, strategy, cfg.simulation)
        for strategy in cfg.fleet.strategies
    }
    if out is not None:
        try:
            analytical = fleet_expected_energy(specs)
        except EdgePowerError:
            analytical = [None] * len(specs)
        occ_rows, node_rows = [], []
        for strategy, rep in reports.items():
            occ_rows.extend(reporting.fleet_occupancy_rows(rep, specs))
            for m, (run, spec) in enumerate(zip(rep.node_runs, specs)):
                # The chain's analytical draw only describes nodes that follow the chain.
                expected = analytical[m] if spec.policy.kind == "fixed-matrix" else None
                node_rows.append(
                    (strategy, m, spec.profile.name, spec.capacity, spec.policy.kind, run.energy_joules, run.mean_power, expected, run.unserved)
                )
        reporting.write_csv(Path(out) / "fleet_occupancy.csv", reporting.FLEET_OCCUPANCY_HEADER, occ_rows)
        reporting.write_csv(
            Path(out) / "fleet_nodes.csv",
            ("strategy", "node", "profile", "capacity", "policy", "energy_joules", "mean_power_w", "matrix_expected_power_w", "unserved_tasks"),
            node_rows,
        )
        reporting.write_summary(
            Path(out) / "fleet_summary.txt",
            {
                "command": "fleet",
                "config": cfg.source,
                "workload": trace.source,
                "coupling": {"kind": cfg.fleet.coupling.kind, "sensitivity": cfg.fleet.coupling.sensitivity},
                "strategies": {
                    s: {
                        "total_energy_joules": r.total_energy,
                        "per_node_energy_joules": r.per_node_energy,
                        "disparity_cv": r.disparity_cv,
                        "unserved_tasks": r.unserved_total,
                    }
                    for s, r in reports.items()
                },
                "generator": next(iter(reports.values())).generator if reports else None,
            },
        )
    return reports


COMMANDS = {
    "steady": cmd_steady,
    "converge": cmd_converge,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "fleet": cmd_fleet,
}
