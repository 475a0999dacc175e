"""Seeded Wiener driver and Euler-Maruyama simulation of log-prices.

Log-prices follow ``dX = a(t) dt + b(t) dW`` where the drift vector ``a`` and
diffusion matrix ``b`` are piecewise constant over named regimes.  ``b`` has
one row per instrument and one column per Wiener factor; the usual square
case has as many factors as instruments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from cthedge.errors import DomainError, SimulationError

# Times within this relative distance of a regime start count as on it.
_BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class Regime:
    start: float
    drift: np.ndarray
    diffusion: np.ndarray
    name: str = ""


@dataclass(frozen=True)
class DiffusionSpec:
    """Piecewise-constant drift/diffusion over ordered regimes."""

    regimes: tuple

    def __post_init__(self):
        if not self.regimes:
            raise DomainError("a diffusion spec needs at least one regime")
        fixed = []
        for reg in self.regimes:
            drift = np.array(reg.drift, dtype=float).reshape(-1)
            diff = np.array(reg.diffusion, dtype=float)
            if diff.ndim != 2:
                raise DomainError("diffusion must be a 2-d matrix")
            if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diff))):
                raise DomainError(f"regime {reg.name or reg.start}: entries must be finite")
            drift.setflags(write=False)
            diff.setflags(write=False)
            fixed.append(Regime(float(reg.start), drift, diff, reg.name))
        first = fixed[0]
        if first.start != 0.0:
            raise DomainError("first regime must start at t=0")
        for prev, cur in zip(fixed, fixed[1:]):
            if not cur.start > prev.start:
                raise DomainError("regime start times must be strictly increasing")
        for reg in fixed:
            if reg.drift.shape != (first.drift.size,) or reg.diffusion.shape != first.diffusion.shape:
                raise DomainError("all regimes must share the same dimensions")
        if first.diffusion.shape[0] != first.drift.size:
            raise DomainError("diffusion must have one row per instrument")
        object.__setattr__(self, "regimes", tuple(fixed))

    @classmethod
    def constant(cls, drift, diffusion):
        return cls((Regime(0.0, drift, diffusion),))

    @classmethod
    def independent(cls, n, sigma=1.0, drift=0.0):
        """``n`` instruments driven by their own Wiener factor, ``b = diag(sigma)``."""
        drift = np.broadcast_to(np.asarray(drift, dtype=float), (n,))
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
        return cls.constant(drift, np.diag(sig))

    @property
    def n(self):
        return self.regimes[0].drift.size

    @property
    def n_factors(self):
        return self.regimes[0].diffusion.shape[1]

    @property
    def starts(self):
        return np.array([r.start for r in self.regimes])

    def regime_index(self, t):
        t = np.asarray(t, dtype=float)
        slack = _BOUNDARY_RTOL * np.maximum(1.0, np.abs(t))
        return np.searchsorted(self.starts, t + slack, side="right") - 1

    def regime_at(self, t, horizon=None):
        if not math.isfinite(t) or t < 0 or (horizon is not None and t > horizon * (1 + _BOUNDARY_RTOL)):
            raise DomainError(f"time {t!r} is outside the simulated range")
        return self.regimes[int(self.regime_index(t))]


@dataclass(frozen=True)
class SimGrid:
    T: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise DomainError("grid.T must be positive")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DomainError("grid.dt must be positive")
        steps = round(self.T / self.dt)
        if steps < 1 or abs(steps * self.dt - self.T) > 1e-12 * self.T:
            raise DomainError("grid.T must be an integer multiple of grid.dt")

    @property
    def steps(self):
        return round(self.T / self.dt)

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class PathSet:
    """Log-price paths on a uniform grid; row 0 of ``X`` is all zeros."""

    times: np.ndarray
    X: np.ndarray
    dW: np.ndarray

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def steps(self):
        return self.X.shape[0] - 1

    @property
    def dX(self):
        return np.diff(self.X, axis=0)


def wiener_increments(seed, steps, n, dt):
    """``steps x n`` matrix of independent Normal(0, dt) draws for ``seed``."""
    if steps < 1 or n < 1:
        raise DomainError("steps and n must be at least 1")
    if not dt > 0:
        raise DomainError("dt must be positive")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((steps, n)) * math.sqrt(dt)


def coarsen_increments(dW, factor):
    """Sum consecutive blocks of ``factor`` rows (coupled coarser path)."""
    steps, n = dW.shape
    if factor < 1 or steps % factor:
        raise DomainError(f"cannot coarsen {steps} steps by factor {factor}")
    return dW.reshape(steps // factor, factor, n).sum(axis=1)


def simulate(spec: DiffusionSpec, grid: SimGrid, seed: int = 0,
             increments: Optional[np.ndarray] = None) -> PathSet:
    """Euler-Maruyama with left-endpoint regime lookup.

    ``increments`` overrides the seeded Wiener draws, which is how coupled
    paths on nested grids are produced.
    """
    steps = grid.steps
    if increments is None:
        dW = wiener_increments(seed, steps, spec.n_factors, grid.dt)
    else:
        dW = np.asarray(increments, dtype=float)
        if dW.shape != (steps, spec.n_factors):
            raise DomainError(f"increments must have shape {(steps, spec.n_factors)}, got {dW.shape}")
    t_left = np.arange(steps) * grid.dt
    idx = spec.regime_index(t_left)
    dX = np.empty((steps, spec.n))
    for k, reg in enumerate(spec.regimes):
        rows = idx == k
        if rows.any():
            dX[rows] = reg.drift * grid.dt + dW[rows] @ reg.diffusion.T
    X = np.zeros((steps + 1, spec.n))
    np.cumsum(dX, axis=0, out=X[1:])
    bad = ~np.isfinite(X).all(axis=1)
    if bad.any():
        k = int(np.argmax(bad)) - 1
        raise SimulationError(f"non-finite log-price at step {k}", step=k)
    return PathSet(times=grid.times, X=X, dW=dW)


def instrument_volatility(spec: DiffusionSpec, t: float, horizon: Optional[float] = None) -> np.ndarray:
    """Per-instrument volatility: squared row norms of the diffusion at ``t``."""
    b = spec.regime_at(t, horizon).diffusion
    return (b * b).sum(axis=1)


def max_volatility(spec: DiffusionSpec, t: float, horizon: Optional[float] = None) -> float:
    return float(instrument_volatility(spec, t, horizon).max())


def regime_volatility_max(spec: DiffusionSpec) -> np.ndarray:
    """Maximal instrument volatility for each regime, in regime order."""
    return np.array([float((r.diffusion ** 2).sum(axis=1).max()) for r in spec.regimes])
