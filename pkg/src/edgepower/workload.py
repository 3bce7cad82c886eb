"""Workload traces (Poisson arrivals or files) and one-step demand forecasters."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import rng as _rng
from ._validation import EdgePowerError


class TraceParseError(EdgePowerError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ForecastError(EdgePowerError):
    pass


@dataclass(frozen=True, eq=False)
class WorkloadTrace:
    """Tasks arriving per tick."""

    demands: np.ndarray
    source: str = "inline"

    def __post_init__(self):
        d = np.array(self.demands, dtype=np.int64).reshape(-1)
        if np.any(d < 0):
            raise EdgePowerError("demands must be nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "demands", d)

    def __len__(self):
        return len(self.demands)

    def __getitem__(self, t):
        return self.demands[t]

    def __eq__(self, other):
        if not isinstance(other, WorkloadTrace):
            return NotImplemented
        return np.array_equal(self.demands, other.demands)

    @classmethod
    def zeros(cls, ticks: int) -> "WorkloadTrace":
        return cls(np.zeros(ticks, dtype=np.int64), source=f"zeros({ticks})")

    def to_text(self) -> str:
        return "".join(f"{int(d)}\n" for d in self.demands)

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_text())


def generate_poisson(lam: float, ticks: int, seed: int) -> WorkloadTrace:
    if not lam > 0:
        raise EdgePowerError(f"Poisson rate must be > 0, got {lam}")
    if ticks < 0:
        raise EdgePowerError(f"ticks must be >= 0, got {ticks}")
    demands = _rng.generator(seed).poisson(lam, size=int(ticks))
    return WorkloadTrace(demands, source=f"poisson(lambda={lam:g}, seed={seed})")


def parse_trace(text: str, source: str = "inline") -> WorkloadTrace:
    """Parse one nonnegative integer per line. Blank lines are not allowed
    except a trailing newline."""
    values = []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, raw in enumerate(lines, start=1):
        token = raw.strip()
        try:
            value = int(token)
        except ValueError:
            raise TraceParseError(f"expected a nonnegative integer, got {raw!r}", lineno) from None
        if value < 0:
            raise TraceParseError(f"negative demand {value}", lineno)
        values.append(value)
    return WorkloadTrace(np.array(values, dtype=np.int64), source=source)


def load_trace(path) -> WorkloadTrace:
    with open(path) as fh:
        return parse_trace(fh.read(), source=f"file({os.fspath(path)})")


@dataclass
class ExponentialSmoothingForecaster:
    """Predicts the next demand as an exponential moving average of observations."""

    alpha: float = 0.5
    estimate: float = 0.0
    kind: str = field(default="exponential-smoothing", init=False)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ForecastError(f"alpha must be in (0, 1], got {self.alpha}")
        self.estimate = max(0.0, float(self.estimate))

    def step(self, observed, true_next=None) -> float:
        if observed < 0:
            raise ForecastError(f"observed demand must be >= 0, got {observed}")
        self.estimate = max(0.0, self.alpha * observed + (1.0 - self.alpha) * self.estimate)
        return self.estimate


@dataclass
class OracleForecaster:
    """Knows the true next demand and perturbs it with seeded Gaussian noise."""

    noise_sd: float = 0.0
    seed: int | None = None
    rng: np.random.Generator | None = field(default=None, repr=False)
    estimate: float = 0.0
    kind: str = field(default="oracle-with-noise", init=False)

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ForecastError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.rng is None:
            self.rng = _rng.generator(0 if self.seed is None else self.seed)

    def step(self, observed, true_next=None) -> float:
        if observed < 0:
            raise ForecastError(f"observed demand must be >= 0, got {observed}")
        if true_next is None:
            raise ForecastError("oracle forecaster needs the true next demand")
        noise = self.rng.normal(0.0, self.noise_sd) if self.noise_sd > 0 else 0.0
        self.estimate = max(0.0, float(true_next) + noise)
        return self.estimate


Forecaster = ExponentialSmoothingForecaster | OracleForecaster


def forecast_step(f: Forecaster, observed, true_next=None):
    """Advance `f` by one observation; returns (f, predicted demand)."""
    predicted = f.step(observed, true_next)
    return f, predicted


def make_forecaster(kind: str, *, alpha: float = 0.5, noise_sd: float = 0.0, rng=None) -> Forecaster:
    if kind in ("exponential-smoothing", "ema", "smoothing"):
        return ExponentialSmoothingForecaster(alpha=alpha)
    if kind in ("oracle", "oracle-with-noise"):
        return OracleForecaster(noise_sd=noise_sd, rng=rng)
    raise ForecastError(f"unknown forecaster kind {kind!r}")


def expected_tasks(predicted: float) -> int:
    """Round a real-valued forecast to a task count (half rounds up)."""
    return int(math.floor(predicted + 0.5))


class SmoothedDemandEstimator(BaseEstimator):
    """Batch form of the exponential-smoothing forecaster.

    `fit` runs the moving average over a demand history; `predict` returns the
    one-step-ahead forecast for each position of a history (the estimate
    available *before* each observation).
    """

    def __init__(self, alpha: float = 0.5, initial: float = 0.0):
        self.alpha = alpha
        self.initial = initial

    def _path(self, demands) -> np.ndarray:
        f = ExponentialSmoothingForecaster(alpha=self.alpha, estimate=self.initial)
        out = np.empty(len(demands) + 1)
        out[0] = f.estimate
        for t, d in enumerate(demands):
            out[t + 1] = f.step(d)
        return out

    def fit(self, X, y=None):
        demands = np.asarray(X.demands if isinstance(X, WorkloadTrace) else X, dtype=float).reshape(-1)
        self.level_ = float(self._path(demands)[-1])
        return self

    def predict(self, X):
        check_is_fitted(self, "level_")
        demands = np.asarray(X.demands if isinstance(X, WorkloadTrace) else X, dtype=float).reshape(-1)
        f = ExponentialSmoothingForecaster(alpha=self.alpha, estimate=self.level_)
        preds = np.empty(len(demands))
        for t, d in enumerate(demands):
            preds[t] = f.estimate
            f.step(d)
        return preds
