"""Experiment configuration documents (YAML).

Every section is optional; omitted sections fall back to the reference
chain, the default profile and the defaults of the other modules. See the
README for the full schema.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ._validation import EdgePowerError, check_probability
from .fleet import CouplingRule, NodeSpec
from .markov import REFERENCE_MATRIX, DeviceProfile, TransitionMatrix, default_profile, raspberry_pi4_profile, validate_matrix
from .montecarlo import SimulationConfig
from .policy import PolicySpec
from .workload import WorkloadTrace, generate_poisson, load_trace


class ConfigError(EdgePowerError):
    def __init__(self, location: str, message: str):
        super().__init__(f"{location}: {message}")
        self.location = location


@dataclass
class WorkloadSpec:
    kind: str = "poisson"
    lam: float = 0.5
    seed: int | None = None
    path: str | None = None

    def trace(self, ticks: int, default_seed: int) -> WorkloadTrace:
        if self.kind == "poisson":
            return generate_poisson(self.lam, ticks, default_seed if self.seed is None else self.seed)
        if self.kind == "zeros":
            return WorkloadTrace.zeros(ticks)
        if self.kind == "file":
            trace = load_trace(self.path)
            if len(trace) < ticks:
                raise ConfigError("workload.path", f"trace has {len(trace)} ticks, simulation.steps is {ticks}")
            return trace
        raise ConfigError("workload.kind", f"unknown workload kind {self.kind!r}")

    def training_trace(self, ticks: int, seed: int) -> WorkloadTrace:
        """Held-out trace for learners: same generator, different seed.

        File workloads train on Poisson arrivals at the file's mean rate.
        """
        if self.kind == "poisson":
            return generate_poisson(self.lam, ticks, seed)
        if self.kind == "zeros":
            return WorkloadTrace.zeros(ticks)
        rate = float(np.mean(load_trace(self.path).demands)) or 1e-9
        return generate_poisson(rate, ticks, seed)


@dataclass
class SweepSpec:
    row: int
    column: int
    values: list[float]


@dataclass
class FleetSpec:
    nodes: list[NodeSpec]
    strategies: list[str] = field(default_factory=lambda: ["greedy-efficiency", "random"])
    coupling: CouplingRule = field(default_factory=CouplingRule)


@dataclass
class ExperimentConfig:
    matrix: TransitionMatrix = REFERENCE_MATRIX
    profile: DeviceProfile = field(default_factory=default_profile)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    policies: list[PolicySpec] = field(default_factory=list)
    baseline: str | None = None
    checkpoints: list[int] = field(default_factory=lambda: [1_000, 10_000, 100_000])
    replicas: int = 30
    n_jobs: int | None = None
    sweep: SweepSpec | None = None
    fleet: FleetSpec | None = None
    source: str = "<defaults>"

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        from dataclasses import replace

        return replace(self, simulation=self.simulation.replace(seed=int(seed)))

    def workload_trace(self) -> WorkloadTrace:
        return self.workload.trace(self.simulation.steps, self.simulation.seed)


def _matrix(node, where: str) -> TransitionMatrix:
    if node is None:
        return REFERENCE_MATRIX
    if isinstance(node, list):
        node = {"rows": node}
    if "rows" not in node:
        raise ConfigError(where, "matrix needs 'rows'")
    try:
        m = TransitionMatrix(node["rows"], labels=node.get("labels"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, str(exc)) from None
    report = validate_matrix(m)
    if not report.ok:
        raise ConfigError(where, str(report))
    return m


def _profile(node, where: str) -> DeviceProfile:
    if node is None:
        return default_profile()
    node = dict(node)
    preset = node.pop("preset", None)
    try:
        if preset == "raspberry-pi-4":
            return raspberry_pi4_profile(node.get("state_power"))
        if preset not in (None, "default"):
            raise ConfigError(f"{where}.preset", f"unknown preset {preset!r}")
        if preset == "default" and "state_power" not in node:
            return default_profile()
        if "state_power" not in node:
            raise ConfigError(where, "profile needs 'state_power' or a 'preset'")
        name = node.get("name", "custom")
        if "transition_power" in node:
            return DeviceProfile.from_transitions(
                name, node["state_power"], node["transition_power"], node["edge_latency"], node.get("labels")
            )
        return DeviceProfile(name, node["state_power"], node.get("edge_latency"), node.get("edge_energy"), node.get("labels"))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(where, str(exc)) from None


def _policy(node, where: str) -> PolicySpec:
    if isinstance(node, str):
        node = {"kind": node}
    try:
        return PolicySpec.from_dict(node)
    except EdgePowerError as exc:
        raise ConfigError(where, str(exc)) from None


def _state(value):
    if isinstance(value, str) and value.lower() != "random" and not value.isdigit():
        from .markov import PowerState

        return int(PowerState.parse(value))
    return value


def parse_config(doc: dict, source: str = "<inline>", base_dir: str | os.PathLike = ".") -> ExperimentConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(source, "top level must be a mapping")
    known = {"matrix", "profile", "simulation", "workload", "policies", "baseline", "converge", "sweep", "fleet"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(source, f"unknown sections {sorted(unknown)}")

    matrix = _matrix(doc.get("matrix"), "matrix")
    profile = _profile(doc.get("profile"), "profile")
    if matrix.n != profile.n:
        raise ConfigError("profile", f"profile has {profile.n} states, matrix has {matrix.n}")

    sim = doc.get("simulation") or {}
    try:
        simulation = SimulationConfig(
            steps=int(sim.get("steps", 100_000)),
            seed=int(sim.get("seed", 0)),
            initial_state=_state(sim.get("initial_state", 0)),
            burn_in=int(sim.get("burn_in", 0)),
        )
    except (EdgePowerError, ValueError, TypeError) as exc:
        raise ConfigError("simulation", str(exc)) from None

    wl = doc.get("workload") or {}
    path = wl.get("path")
    if path is not None:
        path = str(Path(base_dir) / path)
    workload = WorkloadSpec(wl.get("kind", "poisson"), float(wl.get("lambda", 0.5)), wl.get("seed"), path)
    if workload.kind not in ("poisson", "file", "zeros"):
        raise ConfigError("workload.kind", f"unknown workload kind {workload.kind!r}")
    if workload.kind == "file" and path is None:
        raise ConfigError("workload", "file workload needs 'path'")

    policies = [_policy(p, f"policies[{i}]") for i, p in enumerate(doc.get("policies") or [])]

    conv = doc.get("converge") or {}
    checkpoints = [int(c) for c in conv.get("checkpoints", [1_000, 10_000, 100_000])]

    sweep = None
    if doc.get("sweep") is not None:
        sw = doc["sweep"]
        try:
            values = [check_probability(v, "sweep value") for v in sw["values"]]
            sweep = SweepSpec(int(sw["row"]), int(sw["column"]), values)
        except KeyError as exc:
            raise ConfigError("sweep", f"missing key {exc}") from None
        except EdgePowerError as exc:
            raise ConfigError("sweep.values", str(exc)) from None
        if not (0 <= sweep.row < matrix.n and 0 <= sweep.column < matrix.n):
            raise ConfigError("sweep", f"entry ({sweep.row}, {sweep.column}) outside a {matrix.n}-state matrix")

    fleet = None
    if doc.get("fleet") is not None:
        fleet = _fleet(doc["fleet"], matrix, profile)

    return ExperimentConfig(
        matrix=matrix,
        profile=profile,
        simulation=simulation,
        workload=workload,
        policies=policies,
        baseline=doc.get("baseline"),
        checkpoints=checkpoints,
        replicas=int(conv.get("replicas", 30)),
        n_jobs=conv.get("n_jobs"),
        sweep=sweep,
        fleet=fleet,
        source=source,
    )


def _fleet(node, matrix: TransitionMatrix, profile: DeviceProfile) -> FleetSpec:
    from .fleet import STRATEGIES, demo_fleet

    strategies = list(node.get("strategies", ["greedy-efficiency", "random"]))
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError("fleet.strategies", f"unknown strategy {s!r}")
    cp = node.get("coupling") or {}
    try:
        coupling = CouplingRule(cp.get("kind", "none"), float(cp.get("sensitivity", 0.0)))
    except EdgePowerError as exc:
        raise ConfigError("fleet.coupling", str(exc)) from None
    if node.get("demo"):
        policy = _policy(node.get("policy", "reactive"), "fleet.policy")
        return FleetSpec(demo_fleet(policy, matrix), strategies, coupling)
    raw = node.get("nodes")
    if not raw:
        raise ConfigError("fleet", "fleet needs 'nodes' or 'demo: true'")
    nodes = []
    for i, nd in enumerate(raw):
        where = f"fleet.nodes[{i}]"
        prof = _profile(nd["profile"], f"{where}.profile") if "profile" in nd else profile
        scale = float(nd.get("power_scale", 1.0))
        if scale != 1.0:
            prof = prof.scaled(scale, f"node{i}-x{scale:g}")
        mat = _matrix(nd.get("matrix"), f"{where}.matrix") if "matrix" in nd else matrix
        try:
            nodes.append(
                NodeSpec(
                    prof,
                    mat,
                    int(nd.get("capacity", 2)),
                    _policy(nd.get("policy", "reactive"), f"{where}.policy"),
                    int(nd.get("idle_capacity", 1)),
                )
            )
        except EdgePowerError as exc:
            raise ConfigError(where, str(exc)) from None
    return FleetSpec(nodes, strategies, coupling)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from None
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ConfigError(where, f"YAML parse error: {getattr(exc, 'problem', exc)}") from None
    return parse_config(doc, source=str(path), base_dir=path.parent)
