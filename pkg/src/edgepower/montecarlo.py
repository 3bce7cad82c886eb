"""Seeded Monte Carlo trajectories, empirical occupancy, TVD and confidence intervals."""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, clone

from . import rng as _rng
from ._validation import DimensionMismatchError, EdgePowerError, check_transition_matrix
from .markov import DeviceProfile, PowerState, TransitionMatrix, steady_state

TICK_SECONDS = 1.0
Z95 = 1.96

SLEEPING_LABELS = frozenset({"off", "sleep", "light sleep", "deep sleep"})
OVERLOAD_LABELS = frozenset({"overloaded"})

WAKE_UP_DELAY = "wake_up_delay"
OVERLOAD_ENTRY = "overload_entry"


@dataclass(frozen=True)
class SimulationConfig:
    steps: int = 100_000
    seed: int = 0
    initial_state: int | str = 0
    burn_in: int = 0

    def __post_init__(self):
        if int(self.steps) < 1:
            raise EdgePowerError(f"steps must be >= 1, got {self.steps}")
        if not 0 <= int(self.burn_in) < int(self.steps):
            raise EdgePowerError(f"burn_in must satisfy 0 <= burn_in < steps, got {self.burn_in}")
        if not 0 <= int(self.seed) < 2**64:
            raise EdgePowerError(f"seed must be an unsigned 64-bit integer, got {self.seed}")

    def replace(self, **changes) -> "SimulationConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SimulationRun:
    """One seeded trajectory plus its energy and event ledgers."""

    states: np.ndarray
    occupancy: np.ndarray
    energy_joules: float
    events: tuple[tuple[int, str], ...]
    burn_in: int = 0
    generator: str = _rng.GENERATOR_NAME
    demand_total: int = 0
    arrival_ticks: int = 0
    late_arrivals: int = 0
    unserved: int = 0
    overload_state: int | None = None
    tick_seconds: float = TICK_SECONDS

    @property
    def steps(self) -> int:
        return len(self.states)

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.occupancy * (self.steps - self.burn_in)).astype(np.int64)

    @property
    def mean_power(self) -> float:
        return self.energy_joules / (self.steps * self.tick_seconds)

    @property
    def overload_fraction(self) -> float:
        if self.overload_state is None:
            return 0.0
        return float(self.occupancy[self.overload_state])

    @property
    def late_service_fraction(self) -> float:
        """Share of demand-carrying ticks that found the node in Off or Sleep."""
        return self.late_arrivals / self.arrival_ticks if self.arrival_ticks else 0.0

    def same_trajectory(self, other: "SimulationRun") -> bool:
        return (
            np.array_equal(self.states, other.states)
            and np.array_equal(self.occupancy, other.occupancy)
            and self.energy_joules == other.energy_joules
        )


def state_roles(profile: DeviceProfile):
    """Indices of sleeping states and the overloaded state (if any) by label."""
    lowered = [lab.lower() for lab in profile.labels]
    sleeping = [i for i, lab in enumerate(lowered) if lab in SLEEPING_LABELS]
    overload = next((i for i, lab in enumerate(lowered) if lab in OVERLOAD_LABELS), None)
    return sleeping, overload


def service_capacity(profile: DeviceProfile, capacity: int, idle_capacity: int) -> np.ndarray:
    """Tasks a node can serve per tick in each state.

    Sleeping states serve nothing, Idle serves `idle_capacity`, every other
    powered-on state serves `capacity`.
    """
    caps = np.full(profile.n, int(capacity), dtype=np.int64)
    for i, lab in enumerate(profile.labels):
        lab = lab.lower()
        if lab in SLEEPING_LABELS:
            caps[i] = 0
        elif lab == "idle":
            caps[i] = int(idle_capacity)
    return caps


def finalize_run(
    states,
    profile: DeviceProfile,
    burn_in: int = 0,
    demands=None,
    capacity: int = 2,
    idle_capacity: int = 1,
    tick_seconds: float = TICK_SECONDS,
) -> SimulationRun:
    """Build the ledgers of a finished trajectory.

    Energy is state power times the tick length on every tick plus the edge
    energy of every state change.
    """
    states = np.asarray(states, dtype=np.int64)
    n = profile.n
    steps = len(states)
    counts = np.bincount(states[burn_in:], minlength=n)
    occupancy = counts / (steps - burn_in)
    energy = float(np.sum(profile.state_power[states]) * tick_seconds)
    if steps > 1:
        energy += float(np.sum(profile.edge_energy[states[:-1], states[1:]]))

    sleeping, overload = state_roles(profile)
    events = []
    if overload is not None:
        entered = np.flatnonzero((states[1:] == overload) & (states[:-1] != overload)) + 1
        events.extend((int(t), OVERLOAD_ENTRY) for t in entered)

    demand_total = arrival_ticks = late = unserved = 0
    if demands is not None:
        d = np.asarray(demands, dtype=np.int64)[:steps]
        if len(d) != steps:
            raise DimensionMismatchError(f"trace has {len(d)} ticks, simulation needs {steps}")
        caps = service_capacity(profile, capacity, idle_capacity)
        served = np.minimum(d, caps[states])
        unserved = int(np.sum(d - served))
        demand_total = int(d.sum())
        arriving = d > 0
        arrival_ticks = int(arriving.sum())
        late_mask = arriving & np.isin(states, sleeping)
        late = int(late_mask.sum())
        events.extend((int(t), WAKE_UP_DELAY) for t in np.flatnonzero(late_mask))
    events.sort()
    states.setflags(write=False)
    occupancy.setflags(write=False)
    return SimulationRun(
        states=states,
        occupancy=occupancy,
        energy_joules=energy,
        events=tuple(events),
        burn_in=burn_in,
        demand_total=demand_total,
        arrival_ticks=arrival_ticks,
        late_arrivals=late,
        unserved=unserved,
        overload_state=overload,
        tick_seconds=tick_seconds,
    )


def cumulative_rows(P: np.ndarray) -> list[list[float]]:
    """Per-row CDFs for inverse-transform sampling.

    Entries from the last nonzero column onward are pinned to 1.0 so a
    uniform in [0, 1) can never select a zero-probability tail state.
    """
    rows = []
    for row in np.asarray(P, dtype=float):
        cum = np.cumsum(row)
        last = int(np.flatnonzero(row > 0)[-1])
        cum[last:] = 1.0
        rows.append(cum.tolist())
    return rows


def sample_next(cum_row, u: float) -> int:
    return bisect_right(cum_row, u)


def initial_state(cfg: SimulationConfig, n: int, init_rng: np.random.Generator) -> int:
    if isinstance(cfg.initial_state, str) and cfg.initial_state.lower() == "random":
        return int(init_rng.integers(n))
    if isinstance(cfg.initial_state, str):
        return int(PowerState.parse(cfg.initial_state)) if n == 5 else int(cfg.initial_state)
    s = int(cfg.initial_state)
    if not 0 <= s < n:
        raise EdgePowerError(f"initial_state {s} outside 0..{n - 1}")
    return s


def _check_dims(P: np.ndarray, profile: DeviceProfile) -> None:
    if P.shape[0] != profile.n:
        raise DimensionMismatchError(f"matrix has {P.shape[0]} states, profile {profile.name!r} has {profile.n}")


def sample_path(P, cum, cfg: SimulationConfig, last: int) -> np.ndarray:
    """State path of length `last` drawn from the node-0 transition stream of `cfg.seed`."""
    streams = _rng.node_streams(cfg.seed, 0)
    s = initial_state(cfg, P.shape[0], streams.init)
    uniforms = streams.transitions.random(last - 1)
    states = [s]
    append = states.append
    for u in uniforms.tolist():
        s = bisect_right(cum[s], u)
        append(s)
    return np.asarray(states, dtype=np.int64)


def simulate(m, profile: DeviceProfile, cfg: SimulationConfig) -> SimulationRun:
    """Sample one trajectory of `cfg.steps` states from the fixed chain `m`."""
    P = check_transition_matrix(m)
    _check_dims(P, profile)
    states = sample_path(P, cumulative_rows(P), cfg, cfg.steps)
    return finalize_run(states, profile, burn_in=cfg.burn_in)


def tvd(empirical, analytical) -> float:
    """Sum of absolute differences, without the conventional 1/2 factor."""
    a = np.asarray(empirical, dtype=float)
    b = np.asarray(analytical, dtype=float)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"distributions have shapes {a.shape} and {b.shape}")
    return float(np.sum(np.abs(a - b)))


def confidence_interval(pi_hat: float, sigma: float, n: int, method: str = "wald") -> tuple[float, float]:
    """95% interval around `pi_hat`.

    ``paper-formula`` uses the half width 1.96 * sqrt(sigma / n) as written;
    ``wald`` uses 1.96 * sqrt(pi_hat * (1 - pi_hat) / n). Bounds are clamped
    to [0, 1].
    """
    if not 0.0 <= pi_hat <= 1.0:
        raise EdgePowerError(f"pi_hat must lie in [0, 1], got {pi_hat}")
    if sigma < 0 or n < 1:
        raise EdgePowerError("sigma must be >= 0 and n >= 1")
    if method == "paper-formula":
        half = Z95 * math.sqrt(sigma / n)
    elif method == "wald":
        half = Z95 * math.sqrt(pi_hat * (1.0 - pi_hat) / n)
    else:
        raise EdgePowerError(f"unknown CI method {method!r}")
    return max(0.0, pi_hat - half), min(1.0, pi_hat + half)


CI_METHODS = ("paper-formula", "wald")


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    checkpoints: tuple[tuple[int, float], ...]
    mean_tvd: tuple[float, ...]
    final_tvd: float
    pi_theory: np.ndarray
    pi_mc: np.ndarray
    sigma: np.ndarray
    ci: dict = field(default_factory=dict)
    replica_tvd: np.ndarray | None = None
    replicas: int = 1
    seed: int = 0
    generator: str = _rng.GENERATOR_NAME
    replica_occupancy: np.ndarray | None = None
    burn_in: int = 0

    @property
    def steps(self) -> int:
        return self.checkpoints[-1][0]


def ci_coverage(report: ConvergenceReport, method: str = "wald") -> np.ndarray:
    """Per-state share of replicas whose final-checkpoint interval contains the analytical value."""
    if report.replica_occupancy is None:
        raise EdgePowerError("report carries no per-replica occupancy")
    n_eff = report.steps - report.burn_in
    occ = report.replica_occupancy
    hits = np.zeros(occ.shape[1])
    for row in occ:
        for i, p in enumerate(row):
            lo, hi = confidence_interval(float(p), float(report.sigma[i]), n_eff, method)
            hits[i] += lo <= report.pi_theory[i] <= hi
    return hits / occ.shape[0]


def _occupancy_at(path: np.ndarray, checkpoints, n: int, burn_in: int) -> np.ndarray:
    out = np.empty((len(checkpoints), n))
    for k, c in enumerate(checkpoints):
        out[k] = np.bincount(path[burn_in:c], minlength=n) / (c - burn_in)
    return out


def convergence_study(
    m,
    profile: DeviceProfile,
    seed: int,
    checkpoints=(1_000, 10_000, 100_000),
    replicas: int = 30,
    initial_state="random",
    burn_in: int = 0,
    n_jobs: int | None = None,
) -> ConvergenceReport:
    """TVD against the analytical steady state at each checkpoint.

    Every replica runs one trajectory up to the largest checkpoint; replica 0
    is the reported trajectory and the spread across replicas gives the
    per-state sigma used by the confidence intervals.
    """
    checkpoints = [int(c) for c in checkpoints]
    if not checkpoints or any(b <= a for a, b in zip(checkpoints, checkpoints[1:])) or checkpoints[0] <= burn_in:
        raise EdgePowerError("checkpoints must be strictly increasing and exceed burn_in")
    if replicas < 1:
        raise EdgePowerError("replicas must be >= 1")
    P = check_transition_matrix(m)
    _check_dims(P, profile)
    pi = steady_state(P).probs
    n = P.shape[0]
    cum = cumulative_rows(P)
    last = checkpoints[-1]
    cfgs = [
        SimulationConfig(steps=last, seed=s, initial_state=initial_state, burn_in=burn_in)
        for s in _rng.replica_seeds(seed, replicas)
    ]
    if n_jobs in (None, 1):
        paths = [sample_path(P, cum, c, last) for c in cfgs]
    else:
        paths = Parallel(n_jobs=n_jobs)(delayed(sample_path)(P, cum, c, last) for c in cfgs)
    occ = np.stack([_occupancy_at(p, checkpoints, n, burn_in) for p in paths])  # replicas x checkpoints x n
    rep_tvd = np.abs(occ - pi).sum(axis=2)
    pi_mc = occ[0, -1]
    sigma = occ[:, -1, :].std(axis=0, ddof=1) if replicas > 1 else np.zeros(n)
    n_eff = last - burn_in
    ci = {
        method: tuple(confidence_interval(float(pi_mc[i]), float(sigma[i]), n_eff, method) for i in range(n))
        for method in CI_METHODS
    }
    return ConvergenceReport(
        checkpoints=tuple((c, float(rep_tvd[0, k])) for k, c in enumerate(checkpoints)),
        mean_tvd=tuple(float(x) for x in rep_tvd.mean(axis=0)),
        final_tvd=float(rep_tvd[0, -1]),
        pi_theory=pi,
        pi_mc=pi_mc,
        sigma=sigma,
        ci=ci,
        replica_tvd=rep_tvd,
        replicas=replicas,
        seed=int(seed),
        replica_occupancy=occ[:, -1, :],
        burn_in=burn_in,
    )


class MonteCarloEstimator(BaseEstimator):
    """Estimate the stationary distribution of a chain by simulation.

    `fit` takes a transition matrix and stores the empirical occupancy in
    `occupancy_`, the run in `run_` and, when the chain has a unique
    stationary distribution, the TVD against it in `tvd_`.
    """

    def __init__(self, steps: int = 100_000, seed: int = 0, initial_state="random", burn_in: int = 0, profile=None):
        self.steps = steps
        self.seed = seed
        self.initial_state = initial_state
        self.burn_in = burn_in
        self.profile = profile

    def fit(self, X, y=None):
        tm = X if isinstance(X, TransitionMatrix) else TransitionMatrix(X)
        profile = self.profile or DeviceProfile("unit", np.zeros(tm.n))
        cfg = SimulationConfig(self.steps, self.seed, self.initial_state, self.burn_in)
        self.run_ = simulate(tm, profile, cfg)
        self.occupancy_ = self.run_.occupancy
        try:
            self.tvd_ = tvd(self.occupancy_, steady_state(tm).probs)
        except EdgePowerError:
            self.tvd_ = None
        return self

    def transform(self, X) -> np.ndarray:
        """Occupancy vector for each matrix in X, simulated with this estimator's settings."""
        if isinstance(X, TransitionMatrix) or np.ndim(X) == 2:
            X = [X]
        return np.stack([clone(self).fit(m).occupancy_ for m in X])
