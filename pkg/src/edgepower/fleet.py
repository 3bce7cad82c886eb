"""Heterogeneous multi-node simulation: scheduling, load-coupled transitions, per-node energy."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from ._validation import DimensionMismatchError, EdgePowerError, check_transition_matrix
from .markov import REFERENCE_MATRIX, DeviceProfile, TransitionMatrix, default_profile, expected_power, steady_state
from .montecarlo import SimulationConfig, SimulationRun, finalize_run, state_roles
from .policy import NodeRuntime, PolicySpec, build_controller
from .workload import WorkloadTrace

STRATEGIES = ("greedy-efficiency", "random")
COUPLING_KINDS = ("none", "load-share")


@dataclass(frozen=True)
class FleetState:
    node_states: tuple[int, ...]
    tick: int = 0

    def __post_init__(self):
        if len(self.node_states) < 1:
            raise EdgePowerError("a fleet needs at least one node")


@dataclass
class NodeSpec:
    profile: DeviceProfile
    matrix: TransitionMatrix = REFERENCE_MATRIX
    capacity: int = 2
    policy: PolicySpec = field(default_factory=lambda: PolicySpec("reactive"))
    idle_capacity: int = 1

    def __post_init__(self):
        if not isinstance(self.matrix, TransitionMatrix):
            self.matrix = TransitionMatrix(self.matrix)
        if self.matrix.n != self.profile.n:
            raise DimensionMismatchError(
                f"node matrix has {self.matrix.n} states, profile {self.profile.name!r} has {self.profile.n}"
            )
        if self.capacity < 1:
            raise EdgePowerError(f"capacity must be >= 1, got {self.capacity}")

    @property
    def active_index(self) -> int:
        lowered = [lab.lower() for lab in self.profile.labels]
        return lowered.index("active") if "active" in lowered else int(np.argmax(self.profile.state_power))

    @property
    def joules_per_task(self) -> float:
        return float(self.profile.state_power[self.active_index]) / self.capacity

    def effective_policy(self) -> PolicySpec:
        params = {**self.policy.params, "capacity": self.capacity, "idle_capacity": self.idle_capacity}
        return replace(self.policy, params=params)


@dataclass(frozen=True)
class CouplingRule:
    kind: str = "none"
    sensitivity: float = 0.0

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise EdgePowerError(f"unknown coupling kind {self.kind!r}")
        if self.sensitivity < 0:
            raise EdgePowerError("coupling sensitivity must be >= 0")


@dataclass(frozen=True)
class Assignment:
    """Tasks placed within node capacities plus demand beyond fleet capacity.

    `overflow` is still handed to `overflow_node` (so its policy sees the
    overload) but can never be served there.
    """

    tasks: tuple[int, ...]
    overflow: int = 0
    overflow_node: int = 0

    def observed(self) -> list[int]:
        out = list(self.tasks)
        out[self.overflow_node] += self.overflow
        return out


@dataclass(frozen=True, eq=False)
class FleetReport:
    per_node_energy: np.ndarray
    per_node_occupancy: np.ndarray
    disparity_cv: float
    unserved_total: int
    strategy: str
    ticks: int
    node_runs: tuple[SimulationRun, ...] = ()
    coupling: CouplingRule = CouplingRule()
    generator: str = _rng.GENERATOR_NAME

    @property
    def total_energy(self) -> float:
        return float(np.sum(self.per_node_energy))

    @property
    def per_node_mean_power(self) -> np.ndarray:
        return self.per_node_energy / self.ticks


def coefficient_of_variation(values) -> float:
    """Population standard deviation over mean; 0 for an all-zero vector."""
    v = np.asarray(values, dtype=float)
    mean = v.mean()
    return 0.0 if mean == 0 else float(v.std() / mean)


def _awake(spec: NodeSpec, state: int) -> bool:
    sleeping, _ = state_roles(spec.profile)
    return state not in sleeping


def schedule(demand: int, fleet: FleetState, specs, strategy: str = "greedy-efficiency", rng=None) -> Assignment:
    """Split one tick's demand across nodes.

    greedy-efficiency fills awake nodes before sleeping ones, each group in
    ascending joules per task (Active power over capacity), ties by index.
    random sends every task to a uniformly chosen node.
    """
    M = len(specs)
    if len(fleet.node_states) != M:
        raise DimensionMismatchError(f"fleet state has {len(fleet.node_states)} nodes, {M} specs given")
    if demand < 0:
        raise EdgePowerError(f"demand must be >= 0, got {demand}")
    tasks = [0] * M
    if demand == 0:
        return Assignment(tuple(tasks))
    if strategy == "greedy-efficiency":
        order = sorted(
            range(M),
            key=lambda m: (not _awake(specs[m], fleet.node_states[m]), specs[m].joules_per_task, m),
        )
        remaining = int(demand)
        for m in order:
            take = min(remaining, specs[m].capacity)
            tasks[m] = take
            remaining -= take
            if remaining == 0:
                break
        return Assignment(tuple(tasks), overflow=remaining, overflow_node=order[0])
    if strategy == "random":
        if rng is None:
            raise EdgePowerError("random scheduling needs a random generator")
        picks = rng.integers(M, size=int(demand))
        counts = np.bincount(picks, minlength=M)
        return Assignment(tuple(int(c) for c in counts))
    raise EdgePowerError(f"unknown scheduling strategy {strategy!r}; expected one of {STRATEGIES}")


def apply_coupling(base_row, node_share: float, rule: CouplingRule, state: int) -> np.ndarray:
    """Tilt row `state` toward higher states in proportion to the node's demand share."""
    row = np.asarray(base_row, dtype=float)
    if not 0.0 <= node_share <= 1.0:
        raise EdgePowerError(f"node_share must lie in [0, 1], got {node_share}")
    if rule.kind == "none" or rule.sensitivity == 0.0 or node_share == 0.0:
        return row
    factor = 1.0 + rule.sensitivity * node_share
    out = row.copy()
    out[state + 1 :] *= factor
    out[:state] /= factor
    return out / out.sum()


def simulate_fleet(
    specs,
    trace: WorkloadTrace,
    coupling: CouplingRule = CouplingRule(),
    strategy: str = "greedy-efficiency",
    cfg: SimulationConfig = SimulationConfig(),
) -> FleetReport:
    """Run every node for `cfg.steps` ticks under a shared scheduler.

    Node m draws from the streams of (seed, m), so a one-node fleet replays
    `run_policy` exactly. Predictive nodes get the assignment the scheduler
    would make next tick from the current fleet state as their oracle.
    """
    specs = list(specs)
    M = len(specs)
    if M < 1:
        raise EdgePowerError("a fleet needs at least one node")
    if strategy not in STRATEGIES:
        raise EdgePowerError(f"unknown scheduling strategy {strategy!r}; expected one of {STRATEGIES}")
    if len(trace) < cfg.steps:
        raise DimensionMismatchError(f"trace has {len(trace)} ticks, simulation needs {cfg.steps}")
    demands = trace.demands[: cfg.steps].tolist()
    shares = [0.0] * M

    def coupled(m):
        if coupling.kind == "none":
            return None
        return lambda row, state: apply_coupling(row, shares[m], coupling, state)

    nodes: list[NodeRuntime] = []
    policies = [s.effective_policy() for s in specs]
    for m, spec in enumerate(specs):
        P = check_transition_matrix(spec.matrix)
        ctrl = build_controller(policies[m], P, spec.profile, row_transform=coupled(m))
        nodes.append(NodeRuntime(ctrl, spec.profile, cfg, node=m))
    needs_lookahead = any(p.kind == "predictive" for p in policies)
    if strategy == "random":
        # All placements are drawn up front so a look-ahead is a plain slice.
        picks = _rng.scheduler_stream(cfg.seed).integers(M, size=int(sum(demands)))
        offsets = np.concatenate(([0], np.cumsum(demands)))

        def assign(t, states):
            counts = np.bincount(picks[offsets[t] : offsets[t + 1]], minlength=M)
            return Assignment(tuple(int(c) for c in counts))

    else:

        def assign(t, states):
            return schedule(demands[t], FleetState(states, t), specs, strategy)

    observed = [[0] * cfg.steps for _ in range(M)]
    seen = assign(0, tuple(n.state for n in nodes)).observed()
    for t in range(cfg.steps):
        for m in range(M):
            observed[m][t] = seen[m]
        if t == cfg.steps - 1:
            break
        current = tuple(n.state for n in nodes)
        upcoming = assign(t + 1, current).observed() if needs_lookahead else [0] * M
        total = demands[t]
        for m, node in enumerate(nodes):
            shares[m] = min(1.0, seen[m] / total) if total else 0.0
            node.advance(t, seen[m], upcoming[m])
        seen = assign(t + 1, tuple(n.state for n in nodes)).observed()

    runs = tuple(
        finalize_run(
            node.states,
            spec.profile,
            burn_in=cfg.burn_in,
            demands=observed[m],
            capacity=spec.capacity,
            idle_capacity=spec.idle_capacity,
        )
        for m, (node, spec) in enumerate(zip(nodes, specs))
    )
    energy = np.array([r.energy_joules for r in runs])
    return FleetReport(
        per_node_energy=energy,
        per_node_occupancy=_stack_occupancy([r.occupancy for r in runs]),
        disparity_cv=coefficient_of_variation(energy),
        unserved_total=int(sum(r.unserved for r in runs)),
        strategy=strategy,
        ticks=cfg.steps,
        node_runs=runs,
        coupling=coupling,
    )


def _stack_occupancy(rows):
    if len({len(r) for r in rows}) == 1:
        return np.stack(rows)
    return tuple(rows)


def fleet_expected_energy(specs) -> np.ndarray:
    """Analytical mean power per node: stationary distribution dotted with state power."""
    return np.array([expected_power(steady_state(s.matrix), s.profile) for s in specs])


def demo_fleet(policy: PolicySpec | None = None, matrix=REFERENCE_MATRIX) -> list[NodeSpec]:
    """Three nodes with the default ladder scaled x1, x1.5, x2 and capacities 1, 2, 3."""
    policy = policy or PolicySpec("reactive")
    base = default_profile()
    return [
        NodeSpec(base.scaled(scale, f"node{m}-x{scale:g}"), matrix, capacity, policy)
        for m, (scale, capacity) in enumerate(((1.0, 1), (1.5, 2), (2.0, 3)))
    ]
