"""Power-management policies and the tick-by-tick node engine.

Four policy kinds share one engine:

* ``fixed-matrix``: samples the next state from the transition matrix
  (identical draws to `montecarlo.simulate`).
* ``reactive``: climbs the ladder after demand is seen, descends after a run
  of idle ticks.
* ``predictive``: the same ladder driven by a one-step demand forecast.
* ``q-learning``: a tabular agent minimizing discounted cost.

Tick semantics: at tick t the node sits in state s_t and receives d_t tasks.
It serves up to the state's service capacity (see
`montecarlo.service_capacity`) and pays state power for the tick. The
policy then picks s_{t+1}, paying the edge energy if the state changes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as _rng
from ._validation import DimensionMismatchError, EdgePowerError, check_transition_matrix
from .markov import DeviceProfile, PowerState, TransitionMatrix
from .montecarlo import (
    TICK_SECONDS,
    SimulationConfig,
    SimulationRun,
    cumulative_rows,
    finalize_run,
    initial_state,
    sample_next,
    service_capacity,
)
from .workload import WorkloadTrace, expected_tasks, make_forecaster

OFF, SLEEP, IDLE, ACTIVE, OVERLOADED = (int(s) for s in PowerState)

# Structural graph of the reference chain: self loops, +/-1 ladder steps and Idle -> Overloaded.
LEGAL_ACTIONS: dict[int, tuple[int, ...]] = {
    OFF: (OFF, SLEEP),
    SLEEP: (OFF, SLEEP, IDLE),
    IDLE: (SLEEP, IDLE, ACTIVE, OVERLOADED),
    ACTIVE: (IDLE, ACTIVE, OVERLOADED),
    OVERLOADED: (ACTIVE, OVERLOADED),
}

REASONS = ("sampled", "step-up", "step-down", "hold", "prewake", "learned")
POLICY_KINDS = ("fixed-matrix", "reactive", "predictive", "q-learning")


class IllegalActionError(EdgePowerError):
    pass


def legal_actions(state) -> tuple[int, ...]:
    return LEGAL_ACTIONS[int(state)]


@dataclass(frozen=True)
class PolicyDecision:
    next_state: PowerState
    reason: str
    wake_up_delay: bool = False
    anticipated_overload: bool = False


@dataclass(frozen=True)
class ReactiveParams:
    step_down_patience: int = 3
    capacity: int = 2


@dataclass(frozen=True)
class PredictiveParams:
    capacity: int = 2


@dataclass(frozen=True)
class CostParams:
    energy_weight: float = 1.0
    switch_weight: float = 1.0
    delay_penalty: float = 10.0

    def __post_init__(self):
        if min(self.energy_weight, self.switch_weight, self.delay_penalty) < 0:
            raise EdgePowerError("cost weights must be >= 0")

    def scaled(self, factor: float) -> "CostParams":
        return CostParams(self.energy_weight * factor, self.switch_weight * factor, self.delay_penalty * factor)


def demand_level(demand, capacity: int) -> int:
    """0 for no demand, 1 for demand the node can absorb, 2 beyond capacity."""
    if demand <= 0:
        return 0
    return 1 if demand <= capacity else 2


# --- rule-based policies -------------------------------------------------------------------


def reactive_decide(current, observed_demand, idle_ticks: int, params: ReactiveParams = ReactiveParams()) -> PolicyDecision:
    """Move only after demand (or its absence) has been observed."""
    s = PowerState(int(current))
    d = observed_demand
    if s == PowerState.OVERLOADED:
        if d > params.capacity:
            return PolicyDecision(s, "hold")
        return PolicyDecision(PowerState.ACTIVE, "step-down")
    if d > 0 and s < PowerState.ACTIVE:
        return PolicyDecision(PowerState(s + 1), "step-up", wake_up_delay=s <= PowerState.SLEEP)
    if s == PowerState.ACTIVE and d > params.capacity:
        return PolicyDecision(PowerState.OVERLOADED, "step-up")
    if d == 0 and idle_ticks >= params.step_down_patience and s > PowerState.OFF:
        return PolicyDecision(PowerState(s - 1), "step-down")
    return PolicyDecision(s, "hold")


def predictive_decide(current, predicted_demand, params: PredictiveParams = PredictiveParams()) -> PolicyDecision:
    """Ladder moves driven by forecast demand instead of observed demand.

    The node parks at Sleep rather than Off so one pre-wake step always lands
    arriving demand on a powered-on state. Forecasts above capacity keep the
    node Active and flag the overload for the scheduler.
    """
    if predicted_demand < 0:
        raise EdgePowerError(f"predicted demand must be >= 0, got {predicted_demand}")
    s = PowerState(int(current))
    tasks = expected_tasks(predicted_demand)
    over = tasks > params.capacity
    if s == PowerState.OVERLOADED:
        return PolicyDecision(PowerState.ACTIVE, "step-down", anticipated_overload=over)
    if tasks > 0:
        if s < PowerState.ACTIVE:
            return PolicyDecision(PowerState(s + 1), "prewake", anticipated_overload=over)
        return PolicyDecision(s, "hold", anticipated_overload=over)
    if s > PowerState.SLEEP:
        return PolicyDecision(PowerState(s - 1), "step-down")
    if s == PowerState.OFF:
        return PolicyDecision(PowerState.SLEEP, "prewake")
    return PolicyDecision(s, "hold")


# --- cost and Q-learning ---------------------------------------------------------------------


def step_cost(state, action, unserved, profile: DeviceProfile, params: CostParams = CostParams(), tick_seconds: float = TICK_SECONDS, actions=legal_actions) -> float:
    s, a = int(state), int(action)
    if a not in actions(s):
        raise IllegalActionError(f"action {a} is not reachable from state {s}")
    switch = profile.edge_energy[s, a] if s != a else 0.0
    return (
        params.energy_weight * profile.state_power[s] * tick_seconds
        + params.switch_weight * switch
        + params.delay_penalty * unserved
    )


@dataclass
class QTable:
    """Action values keyed by (power state, demand level), lazily zero-initialized.

    `actions` maps a power state to its legal actions; the default is the
    five-state ladder.
    """

    learning_rate: float = 0.1
    gamma: float = 0.95
    epsilon: float = 0.1
    actions: Callable[[int], tuple[int, ...]] = field(default=legal_actions, repr=False)
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.learning_rate <= 1.0:
            raise EdgePowerError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 <= self.gamma < 1.0:
            raise EdgePowerError(f"gamma must be in [0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise EdgePowerError(f"epsilon must be in [0, 1], got {self.epsilon}")

    def row(self, key: tuple[int, Hashable]) -> dict[int, float]:
        r = self.values.get(key)
        if r is None:
            r = self.values[key] = {a: 0.0 for a in self.actions(key[0])}
        return r

    def greedy(self, key) -> int:
        r = self.row(key)
        best = min(r.values())
        return min(a for a, v in r.items() if v == best)

    def min_value(self, key) -> float:
        return min(self.row(key).values())

    def items(self):
        """(state, level, action, value) rows in sorted order."""
        for (s, level), r in sorted(self.values.items()):
            for a in sorted(r):
                yield s, level, a, r[a]

    def greedy_policy(self) -> dict:
        return {key: self.greedy(key) for key in sorted(self.values)}


def q_update(table: QTable, s, a: int, cost: float, s_next) -> QTable:
    """Q(s,a) <- (1-lr) Q(s,a) + lr (cost + gamma * min_a' Q(s',a')). Updates in place."""
    r = table.row(s)
    if a not in r:
        raise IllegalActionError(f"action {a} is not legal in {s}")
    target = cost + table.gamma * table.min_value(s_next)
    r[a] = (1.0 - table.learning_rate) * r[a] + table.learning_rate * target
    return table


def q_decide(table: QTable, s, rng: np.random.Generator | None = None, epsilon: float | None = None) -> PolicyDecision:
    """Epsilon-greedy over legal actions; ties break toward the lowest state index."""
    eps = table.epsilon if epsilon is None else epsilon
    if eps > 0.0:
        if rng is None:
            raise EdgePowerError("exploration needs a random generator")
        if rng.random() < eps:
            acts = table.actions(s[0])
            return PolicyDecision(_as_state(acts[int(rng.integers(len(acts)))]), "learned")
    return PolicyDecision(_as_state(table.greedy(s)), "learned")


def _as_state(a: int):
    try:
        return PowerState(a)
    except ValueError:
        return a


def train_q_table(
    demands,
    profile: DeviceProfile,
    *,
    capacity: int = 2,
    idle_capacity: int = 1,
    cost: CostParams = CostParams(),
    learning_rate: float = 0.1,
    gamma: float = 0.95,
    epsilon: float = 0.1,
    epsilon_final: float = 0.01,
    seed: int = 0,
    start_state: int = IDLE,
    table: QTable | None = None,
) -> QTable:
    """Learn a Q-table by driving one node through `demands`.

    Exploration decays linearly from `epsilon` to `epsilon_final` over the
    first half of the ticks and stays there afterwards.
    """
    d = [int(x) for x in np.asarray(getattr(demands, "demands", demands)).reshape(-1)]
    if table is None:
        table = QTable(learning_rate=learning_rate, gamma=gamma, epsilon=epsilon)
    if profile.n != 5:
        raise DimensionMismatchError("Q-learning needs the five-state ladder")
    rng = _rng.node_streams(seed, 0).policy
    caps = service_capacity(profile, capacity, idle_capacity).tolist()
    power = profile.state_power.tolist()
    edge = profile.edge_energy.tolist()
    ew, sw, dp = cost.energy_weight, cost.switch_weight, cost.delay_penalty
    lr, g = table.learning_rate, table.gamma
    T = len(d)
    half = max(1, T // 2)
    s = int(start_state)
    for t in range(T - 1):
        key = (s, demand_level(d[t], capacity))
        eps = epsilon + (epsilon_final - epsilon) * min(1.0, t / half)
        row = table.row(key)
        if rng.random() < eps:
            acts = LEGAL_ACTIONS[s]
            a = acts[int(rng.integers(len(acts)))]
        else:
            best = min(row.values())
            a = min(k for k, v in row.items() if v == best)
        unserved = d[t] - min(d[t], caps[s])
        c = ew * power[s] * TICK_SECONDS + sw * edge[s][a] + dp * unserved
        nxt = table.row((a, demand_level(d[t + 1], capacity)))
        row[a] = (1.0 - lr) * row[a] + lr * (c + g * min(nxt.values()))
        s = a
    table.epsilon = epsilon_final
    return table


# --- policy specification --------------------------------------------------------------------

_DEFAULTS = {
    "fixed-matrix": {},
    "reactive": {"step_down_patience": 3},
    "predictive": {"forecaster": "oracle", "noise_sd": 0.0, "alpha": 0.5},
    "q-learning": {
        "gamma": 0.95,
        "learning_rate": 0.1,
        "epsilon": 0.1,
        "epsilon_final": 0.01,
        "training_ticks": 500_000,
        "train_seed": None,
        "energy_weight": 1.0,
        "switch_weight": 1.0,
        "delay_penalty": 10.0,
    },
}
_COMMON = {"capacity": 2, "idle_capacity": 1}


@dataclass
class PolicySpec:
    """Tagged description of a policy; `params` override the per-kind defaults.

    A q-learning spec may carry a trained `table`; it is not serialized.
    """

    kind: str
    name: str | None = None
    params: dict = field(default_factory=dict)
    table: QTable | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise EdgePowerError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind]) - set(_COMMON)
        if unknown:
            raise EdgePowerError(f"unknown parameters for {self.kind} policy: {sorted(unknown)}")
        if self.name is None:
            self.name = self.kind

    def get(self, key):
        if key in self.params:
            return self.params[key]
        if key in _COMMON:
            return _COMMON[key]
        return _DEFAULTS[self.kind][key]

    def resolved(self) -> dict:
        return {**_COMMON, **_DEFAULTS[self.kind], **self.params}

    def cost_params(self) -> CostParams:
        return CostParams(self.get("energy_weight"), self.get("switch_weight"), self.get("delay_penalty"))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, **self.resolved()}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicySpec":
        d = dict(d)
        try:
            kind = d.pop("kind")
        except KeyError:
            raise EdgePowerError("policy entry needs a 'kind'") from None
        name = d.pop("name", None)
        return cls(kind, name, d)


# --- engine ----------------------------------------------------------------------------------


class FixedMatrixController:
    """Samples from the matrix using one pre-drawn uniform per tick.

    `row_transform(row, state)` optionally rewrites the sampled row (used for
    fleet coupling).
    """

    def __init__(self, P: np.ndarray, row_transform=None):
        self.P = np.asarray(P, dtype=float)
        self.cum = cumulative_rows(self.P)
        self.row_transform = row_transform

    def start(self, streams, steps: int):
        self.uniforms = streams.transitions.random(steps - 1).tolist()

    def decide(self, t, state, demand, next_demand):
        u = self.uniforms[t]
        if self.row_transform is None:
            nxt = sample_next(self.cum[state], u)
        else:
            row = self.row_transform(self.P[state], state)
            nxt = sample_next(cumulative_rows(row[None, :])[0], u)
        return PolicyDecision(_as_state(nxt), "sampled")


class ReactiveController:
    def __init__(self, params: ReactiveParams):
        self.params = params

    def start(self, streams, steps):
        self.idle_ticks = 0

    def decide(self, t, state, demand, next_demand):
        self.idle_ticks = self.idle_ticks + 1 if demand == 0 else 0
        dec = reactive_decide(state, demand, self.idle_ticks, self.params)
        if dec.reason == "step-down":
            self.idle_ticks = 0
        return dec


class PredictiveController:
    def __init__(self, params: PredictiveParams, forecaster: str = "oracle", noise_sd: float = 0.0, alpha: float = 0.5):
        self.params = params
        self.kind = forecaster
        self.noise_sd = noise_sd
        self.alpha = alpha

    def start(self, streams, steps):
        self.forecaster = make_forecaster(self.kind, alpha=self.alpha, noise_sd=self.noise_sd, rng=streams.forecast)

    def decide(self, t, state, demand, next_demand):
        predicted = self.forecaster.step(demand, next_demand)
        return predictive_decide(state, predicted, self.params)


class QController:
    def __init__(self, table: QTable, capacity: int, epsilon: float = 0.0):
        self.table = table
        self.capacity = capacity
        self.epsilon = epsilon

    def start(self, streams, steps):
        self.rng = streams.policy

    def decide(self, t, state, demand, next_demand):
        return q_decide(self.table, (state, demand_level(demand, self.capacity)), self.rng, self.epsilon)


def build_controller(spec: PolicySpec, P: np.ndarray, profile: DeviceProfile, row_transform=None):
    cap = int(spec.get("capacity"))
    if spec.kind == "fixed-matrix":
        return FixedMatrixController(P, row_transform)
    if profile.n != 5:
        raise DimensionMismatchError(f"{spec.kind} policy needs the five-state ladder, profile has {profile.n} states")
    if spec.kind == "reactive":
        return ReactiveController(ReactiveParams(int(spec.get("step_down_patience")), cap))
    if spec.kind == "predictive":
        return PredictiveController(
            PredictiveParams(cap), spec.get("forecaster"), float(spec.get("noise_sd")), float(spec.get("alpha"))
        )
    if spec.table is None:
        raise EdgePowerError(f"q-learning policy {spec.name!r} has no trained table; fit a QLearningPolicy first")
    return QController(spec.table, cap)


class NodeRuntime:
    """One node advancing tick by tick under a controller."""

    def __init__(self, controller, profile: DeviceProfile, cfg: SimulationConfig, node: int = 0):
        self.controller = controller
        self.profile = profile
        streams = _rng.node_streams(cfg.seed, node)
        self.state = initial_state(cfg, profile.n, streams.init)
        controller.start(streams, cfg.steps)
        self.states = [self.state]
        self.decisions_flagged = 0

    def advance(self, t: int, demand: int, next_demand: int):
        dec = self.controller.decide(t, self.state, demand, next_demand)
        if dec.anticipated_overload:
            self.decisions_flagged += 1
        self.state = int(dec.next_state)
        self.states.append(self.state)
        return dec


def run_policy(
    policy: PolicySpec,
    m,
    profile: DeviceProfile,
    trace: WorkloadTrace | None,
    cfg: SimulationConfig,
) -> SimulationRun:
    """Drive one node for `cfg.steps` ticks under `policy`.

    With a fixed-matrix policy the state path equals `montecarlo.simulate`
    for the same seed.
    """
    P = check_transition_matrix(m)
    if P.shape[0] != profile.n:
        raise DimensionMismatchError(f"matrix has {P.shape[0]} states, profile {profile.name!r} has {profile.n}")
    if trace is None:
        demands = [0] * cfg.steps
    else:
        if len(trace) < cfg.steps:
            raise DimensionMismatchError(f"trace has {len(trace)} ticks, simulation needs {cfg.steps}")
        demands = trace.demands[: cfg.steps].tolist()
    node = NodeRuntime(build_controller(policy, P, profile), profile, cfg)
    for t in range(cfg.steps - 1):
        node.advance(t, demands[t], demands[t + 1])
    return finalize_run(
        node.states,
        profile,
        burn_in=cfg.burn_in,
        demands=None if trace is None else demands,
        capacity=int(policy.get("capacity")),
        idle_capacity=int(policy.get("idle_capacity")),
    )


class QLearningPolicy(BaseEstimator):
    """Tabular Q-learning power policy with a scikit-learn interface.

    `fit` trains on a workload trace (or demand array). `predict` maps rows
    of (power state, observed demand) to the greedy next state.
    """

    def __init__(
        self,
        gamma: float = 0.95,
        learning_rate: float = 0.1,
        epsilon: float = 0.1,
        epsilon_final: float = 0.01,
        capacity: int = 2,
        idle_capacity: int = 1,
        energy_weight: float = 1.0,
        switch_weight: float = 1.0,
        delay_penalty: float = 10.0,
        seed: int = 0,
        profile: DeviceProfile | None = None,
    ):
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.epsilon_final = epsilon_final
        self.capacity = capacity
        self.idle_capacity = idle_capacity
        self.energy_weight = energy_weight
        self.switch_weight = switch_weight
        self.delay_penalty = delay_penalty
        self.seed = seed
        self.profile = profile

    def fit(self, X, y=None):
        from .markov import default_profile

        profile = self.profile if self.profile is not None else default_profile()
        self.table_ = train_q_table(
            X,
            profile,
            capacity=self.capacity,
            idle_capacity=self.idle_capacity,
            cost=CostParams(self.energy_weight, self.switch_weight, self.delay_penalty),
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            epsilon=self.epsilon,
            epsilon_final=self.epsilon_final,
            seed=self.seed,
        )
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "table_")
        X = np.atleast_2d(np.asarray(X, dtype=np.int64))
        return np.array([self.table_.greedy((int(s), demand_level(int(d), self.capacity))) for s, d in X])

    def to_spec(self, name: str = "q-learning") -> PolicySpec:
        check_is_fitted(self, "table_")
        params = {k: getattr(self, k) for k in ("gamma", "learning_rate", "epsilon", "epsilon_final", "capacity", "idle_capacity", "energy_weight", "switch_weight", "delay_penalty")}
        return PolicySpec("q-learning", name, params, table=self.table_)
