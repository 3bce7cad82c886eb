"""Power states, transition matrices, device profiles and the exact steady-state solver."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from fractions import Fraction
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    ROW_SUM_TOL,
    DimensionMismatchError,
    InfeasiblePerturbationError,
    NonUniqueStationaryError,
    UnknownStateError,
    as_square_array,
    as_vector,
    check_probability,
    check_transition_matrix,
)

RESIDUAL_TOL = 1e-10


class PowerState(IntEnum):
    OFF = 0
    SLEEP = 1
    IDLE = 2
    ACTIVE = 3
    OVERLOADED = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value) -> "PowerState":
        """Accept an index, a PowerState or a case-insensitive label."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key.isdigit():
                return cls(int(key))
            try:
                return cls[key]
            except KeyError:
                raise UnknownStateError(f"unknown power state {value!r}") from None
        try:
            return cls(int(value))
        except (ValueError, TypeError):
            raise UnknownStateError(f"unknown power state {value!r}") from None


CANONICAL_LABELS = tuple(s.label for s in PowerState)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic matrix; row i is the next-state distribution from state i.

    Construction only checks the shape. Use `validate_matrix` for the
    probabilistic invariants.
    """

    entries: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _frozen(as_square_array(self.entries)))
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != self.n:
                raise DimensionMismatchError(f"{len(labels)} labels for a {self.n}-state matrix")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, key):
        return self.entries[key]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.entries, other.entries)

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(as_vector(self.probs, "probs")))

    def __len__(self):
        return len(self.probs)

    def __getitem__(self, i):
        return self.probs[i]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, StationaryDistribution):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)


@dataclass(frozen=True, eq=False)
class DeviceProfile:
    """Per-state power draw plus per-edge transition latency and energy."""

    name: str
    state_power: np.ndarray
    edge_latency: np.ndarray | None = None
    edge_energy: np.ndarray | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        power = as_vector(self.state_power, "state_power")
        n = len(power)
        if n < 1:
            raise DimensionMismatchError("state_power must not be empty")
        if np.any(power < 0):
            raise ValueError("state_power entries must be >= 0")
        latency = np.zeros((n, n)) if self.edge_latency is None else as_square_array(self.edge_latency, "edge_latency")
        energy = np.zeros((n, n)) if self.edge_energy is None else as_square_array(self.edge_energy, "edge_energy")
        for name, arr in (("edge_latency", latency), ("edge_energy", energy)):
            if arr.shape != (n, n):
                raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {(n, n)}")
            if np.any(arr < 0):
                raise ValueError(f"{name} entries must be >= 0")
            if np.any(np.diag(arr) != 0):
                raise ValueError(f"{name} must be 0 on the diagonal")
        labels = tuple(self.labels) if self.labels is not None else (CANONICAL_LABELS if n == 5 else tuple(f"S{i}" for i in range(n)))
        if len(labels) != n:
            raise DimensionMismatchError(f"{len(labels)} labels for a {n}-state profile")
        object.__setattr__(self, "state_power", _frozen(power))
        object.__setattr__(self, "edge_latency", _frozen(latency))
        object.__setattr__(self, "edge_energy", _frozen(energy))
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_transitions(cls, name, state_power, transition_power, edge_latency, labels=None) -> "DeviceProfile":
        """Build a profile whose edge energy is transition power times latency."""
        tp = as_square_array(transition_power, "transition_power")
        lat = as_square_array(edge_latency, "edge_latency")
        if tp.shape != lat.shape:
            raise DimensionMismatchError("transition_power and edge_latency shapes differ")
        return cls(name, state_power, edge_latency=lat, edge_energy=tp * lat, labels=labels)

    @property
    def n(self) -> int:
        return len(self.state_power)

    def scaled(self, factor: float, name: str | None = None) -> "DeviceProfile":
        """Same profile with state power and edge energy multiplied by `factor`."""
        return DeviceProfile(
            name or f"{self.name}x{factor:g}",
            self.state_power * factor,
            self.edge_latency,
            self.edge_energy * factor,
            self.labels,
        )

    def state_index(self, state) -> int:
        if isinstance(state, str) and not state.strip().isdigit():
            lowered = [lab.lower() for lab in self.labels]
            if state.lower() in lowered:
                return lowered.index(state.lower())
            raise UnknownStateError(f"profile {self.name!r} has no state {state!r}")
        idx = int(state)
        if not 0 <= idx < self.n:
            raise UnknownStateError(f"state index {idx} outside 0..{self.n - 1}")
        return idx


# Reference five-state chain (Off, Sleep, Idle, Active, Overloaded).
REFERENCE_MATRIX = TransitionMatrix(
    [
        [0.80, 0.20, 0.00, 0.00, 0.00],
        [0.10, 0.60, 0.30, 0.00, 0.00],
        [0.00, 0.15, 0.50, 0.30, 0.05],
        [0.00, 0.00, 0.25, 0.60, 0.15],
        [0.00, 0.00, 0.00, 0.20, 0.80],
    ],
    labels=CANONICAL_LABELS,
)

REFERENCE_STATIONARY = tuple(Fraction(k, 89) for k in (5, 10, 20, 28, 26))

# Assumed draw per state in watts; no published figures exist for the five-state model.
DEFAULT_STATE_POWER = (0.0, 2.0, 4.0, 8.0, 12.0)


def default_profile() -> DeviceProfile:
    """Five-state profile with the assumed default draw and free transitions."""
    return DeviceProfile("default", DEFAULT_STATE_POWER, labels=CANONICAL_LABELS)


def raspberry_pi4_profile(state_power: Sequence[float] | None = None) -> DeviceProfile:
    """Four-state Raspberry Pi 4 profile (active, idle, light sleep, deep sleep).

    Only the active -> idle edge (1.5 W for 0.5 s) has a published value; every
    other edge is zero and state power defaults to zero unless supplied.
    """
    n = 4
    power = np.zeros((n, n))
    latency = np.zeros((n, n))
    power[0, 1], latency[0, 1] = 1.5, 0.5
    return DeviceProfile.from_transitions(
        "raspberry-pi-4",
        np.zeros(n) if state_power is None else state_power,
        power,
        latency,
        labels=("Active", "Idle", "Light sleep", "Deep sleep"),
    )


@dataclass(frozen=True)
class Violation:
    row: int
    column: int | None
    kind: str
    value: float

    def __str__(self):
        where = f"row {self.row}" if self.column is None else f"entry ({self.row}, {self.column})"
        return f"{where}: {self.kind} ({self.value:.12g})"


@dataclass(frozen=True)
class MatrixReport:
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "ok"
        return "invalid transition matrix: " + "; ".join(str(v) for v in self.violations)


def validate_matrix(m) -> MatrixReport:
    """Report every entry outside [0, 1] and every row whose sum is not 1."""
    entries = m.entries if isinstance(m, TransitionMatrix) else as_square_array(m)
    violations = []
    for i, row in enumerate(entries):
        for j, p in enumerate(row):
            if not np.isfinite(p) or p < 0.0 or p > 1.0:
                violations.append(Violation(i, j, "entry outside [0, 1]", float(p)))
        s = float(row.sum())
        if not abs(s - 1.0) <= ROW_SUM_TOL:
            violations.append(Violation(i, None, "row sum != 1", s))
    return MatrixReport(tuple(violations))


def steady_state(m) -> StationaryDistribution:
    """Solve pi P = pi with sum(pi) = 1 by a direct LU solve.

    The last balance equation of (P^T - I) pi = 0 is replaced by the
    normalization row. Raises NonUniqueStationaryError when P^T - I has a
    null space of dimension > 1 (more than one closed class).
    """
    P = check_transition_matrix(m)
    n = P.shape[0]
    A = P.T - np.eye(n)
    if n > 1:
        sv = np.linalg.svd(A, compute_uv=False)
        rank = int(np.sum(sv > max(n, 1) * np.finfo(float).eps * 64 * max(sv[0], 1.0)))
        if rank < n - 1:
            raise NonUniqueStationaryError(
                f"chain is reducible: rank(P^T - I) = {rank} < {n - 1}, stationary distribution is not unique"
            )
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi[np.abs(pi) < 1e-300] = 0.0
    if np.any(pi < -1e-12):
        raise NonUniqueStationaryError(f"solver produced negative probabilities {pi}")
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return StationaryDistribution(pi)


def residual(pi, m) -> float:
    """Infinity norm of pi P - pi."""
    p = np.asarray(pi, dtype=float)
    P = np.asarray(m, dtype=float)
    return float(np.max(np.abs(p @ P - p)))


def expected_power(pi, profile: DeviceProfile) -> float:
    p = np.asarray(pi, dtype=float)
    if len(p) != profile.n:
        raise DimensionMismatchError(f"distribution has {len(p)} states, profile {profile.name!r} has {profile.n}")
    return float(p @ profile.state_power)


def transition_energy(profile: DeviceProfile, from_state, to_state) -> float:
    i = profile.state_index(from_state)
    j = profile.state_index(to_state)
    if i == j:
        return 0.0
    return float(profile.edge_energy[i, j])


def perturb_row(m, i: int, j: int, new_value: float) -> TransitionMatrix:
    """Set entry (i, j) and rescale the rest of row i proportionally."""
    tm = m if isinstance(m, TransitionMatrix) else TransitionMatrix(m)
    n = tm.n
    if not (0 <= i < n and 0 <= j < n):
        raise UnknownStateError(f"entry ({i}, {j}) outside a {n}-state matrix")
    new_value = check_probability(new_value, "new_value")
    P = np.array(tm.entries)
    row = P[i]
    rest = row.sum() - row[j]
    if rest <= 0.0:
        if new_value < 1.0:
            raise InfeasiblePerturbationError(
                f"row {i} has no mass outside column {j}; cannot set P[{i},{j}] = {new_value}"
            )
        scale = 0.0
    else:
        scale = (1.0 - new_value) / rest
    row = row * scale
    row[j] = new_value
    P[i] = row
    return TransitionMatrix(P, labels=tm.labels)


class SteadyStateSolver(BaseEstimator):
    """Estimator wrapper around `steady_state`.

    `fit` takes a row-stochastic matrix and stores the stationary distribution
    in `stationary_` and the balance residual in `residual_`.
    """

    def __init__(self, residual_tol: float = RESIDUAL_TOL):
        self.residual_tol = residual_tol

    def fit(self, X, y=None):
        tm = X if isinstance(X, TransitionMatrix) else TransitionMatrix(X)
        pi = steady_state(tm)
        self.stationary_ = pi.probs
        self.residual_ = residual(pi, tm)
        self.n_states_ = tm.n
        if self.residual_ > self.residual_tol:
            raise NonUniqueStationaryError(f"balance residual {self.residual_:.3e} exceeds {self.residual_tol:.1e}")
        return self

    def expected_power(self, profile: DeviceProfile) -> float:
        check_is_fitted(self, "stationary_")
        return expected_power(self.stationary_, profile)
