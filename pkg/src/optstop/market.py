"""Multi-asset geometric Brownian motion with a Bermudan max-call payoff.

All assets share ``(r, delta, sigma, x0)`` and are driven by independent
Brownian motions.  Exercise dates are equispaced, ``t_j = j * T / J`` for
``j = 0..J``, and date 0 is an exercise date.

Besides the scalar, state-based operations (:func:`payoff`,
:func:`discounted_payoff`, :func:`step`) the model exposes the vectorised
interface the stopping algorithms use: ``start``, ``cashflow(j, x)``,
``transition(j, x, rng)`` and ``homogeneous``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MarketModel:
    n: int
    r: float
    delta: float
    sigma: float
    x0: float
    T: float
    J: int
    strike: float

    # transition law does not depend on the date
    homogeneous = True

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"asset count n must be a positive integer, got {self.n!r}")
        if int(self.J) != self.J or self.J < 1:
            raise ValueError(f"number of exercise steps J must be >= 1, got {self.J!r}")
        for name in ("sigma", "T", "x0", "strike"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")

    @property
    def dim(self) -> int:
        return self.n

    @property
    def dt(self) -> float:
        return self.T / self.J

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.J + 1) * self.dt

    @property
    def start(self) -> np.ndarray:
        return np.full(self.n, float(self.x0))

    def discount(self, j: int) -> float:
        return math.exp(-self.r * j * self.dt)

    def intrinsic(self, x: np.ndarray) -> np.ndarray:
        """Undiscounted max-call payoff over the last axis of ``x``."""
        return np.maximum(np.max(x, axis=-1) - self.strike, 0.0)

    def cashflow(self, j: int, x: np.ndarray) -> np.ndarray:
        """Discounted payoff f_j evaluated on states ``x`` of shape (..., n)."""
        return self.discount(j) * self.intrinsic(x)

    def step_array(self, x: np.ndarray, dt: float, normals: np.ndarray) -> np.ndarray:
        if not dt > 0:
            raise ValueError(f"dt must be > 0, got {dt!r}")
        drift = (self.r - self.delta - 0.5 * self.sigma**2) * dt
        return x * np.exp(drift + self.sigma * math.sqrt(dt) * normals)

    def transition(self, j: int, x: np.ndarray, rng) -> np.ndarray:
        """Exact one-step transition from date ``j`` to ``j + 1``."""
        return self.step_array(x, self.dt, rng.standard_normal(x.shape))


@dataclass(frozen=True)
class AssetState:
    values: tuple
    time_index: int = 0

    def __post_init__(self):
        values = tuple(float(v) for v in np.atleast_1d(self.values))
        if not all(v > 0 for v in values):
            raise ValueError(f"asset prices must be strictly positive, got {values}")
        if self.time_index < 0:
            raise ValueError("time_index must be nonnegative")
        object.__setattr__(self, "values", values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


def payoff(state: AssetState, model: MarketModel) -> float:
    return float(model.intrinsic(state.as_array()))


def discounted_payoff(state: AssetState, model: MarketModel) -> float:
    return float(model.cashflow(state.time_index, state.as_array()))


def step(state: AssetState, model: MarketModel, dt: float, normals) -> AssetState:
    """Advance every asset by ``dt`` years given caller-supplied standard normals."""
    normals = np.asarray(normals, dtype=float)
    if normals.shape != (len(state.values),):
        raise ValueError(f"expected {len(state.values)} normals, got shape {normals.shape}")
    new = model.step_array(state.as_array(), dt, normals)
    return AssetState(tuple(new), state.time_index + 1)
