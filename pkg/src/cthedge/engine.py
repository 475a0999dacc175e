"""Causal aggregation loop.

Each step realizes the gain with the weights held *before* the increment,
updates every regret by ``dX_i - dG``, and only then recomputes the scale
and the weights from the new regret vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np

from cthedge import potential
from cthedge.errors import DomainError
from cthedge.market import PathSet

POLICIES = ("normalhedge", "uniform", "exp_weights")


@dataclass(frozen=True)
class Policy:
    """Aggregation rule: ``normalhedge``, ``uniform`` or ``exp_weights``.

    ``eta=None`` for exp_weights means the default ``sqrt(8 ln N / T)``,
    resolved by :func:`run` once the horizon is known.
    """

    kind: str = "normalhedge"
    eta: Optional[float] = None

    def __post_init__(self):
        if self.kind not in POLICIES:
            raise DomainError(f"unknown policy {self.kind!r}; expected one of {POLICIES}")
        if self.eta is not None:
            if self.kind != "exp_weights":
                raise DomainError("eta only applies to exp_weights")
            if not (math.isfinite(self.eta) and self.eta > 0):
                raise DomainError("exp_weights eta must be positive")

    def resolved(self, n, horizon):
        if self.kind != "exp_weights" or self.eta is not None:
            return self
        eta = math.sqrt(8.0 * math.log(n) / horizon) if n > 1 else 1.0
        return replace(self, eta=eta)


NORMALHEDGE = Policy("normalhedge")


@dataclass(frozen=True)
class HedgeState:
    t: float
    regrets: np.ndarray
    gain: float
    scale: Optional[float]
    weights: np.ndarray

    @property
    def n(self):
        return self.regrets.size


def init_state(n: int) -> HedgeState:
    if n < 1:
        raise DomainError("need at least one instrument")
    return HedgeState(0.0, np.zeros(n), 0.0, None, np.full(n, 1.0 / n))


def _reweigh(regrets, old_weights, policy):
    if policy.kind == "normalhedge":
        c = potential.solve_scale(regrets)
        return c, potential.weights(regrets, c)
    if policy.kind == "uniform":
        return None, old_weights
    if policy.eta is None:
        raise DomainError("exp_weights eta is unresolved; call Policy.resolved first")
    z = np.exp(policy.eta * (regrets - regrets.max()))
    return None, z / z.sum()


def _advance(regrets, w, dX, policy):
    # Offsetting by one component keeps dG exact when all increments agree.
    ref = dX[0]
    dG = float(ref + w @ (dX - ref))
    dR = dX - dG
    new_r = regrets + dR
    c, new_w = _reweigh(new_r, w, policy)
    return new_r, dG, float(w @ dR), c, new_w


def _check_increment(dX, n):
    dX = np.asarray(dX, dtype=float)
    if dX.shape != (n,):
        raise DomainError(f"increment has shape {dX.shape}, expected ({n},)")
    if not np.all(np.isfinite(dX)):
        raise DomainError("increment must be finite")
    return dX


def step(state: HedgeState, dX, policy: Policy = NORMALHEDGE, *, t: Optional[float] = None) -> HedgeState:
    """Advance one increment; ``t`` is the new timestamp (default ``state.t + 1``)."""
    dX = _check_increment(dX, state.n)
    new_r, dG, _, c, new_w = _advance(state.regrets, state.weights, dX, policy)
    return HedgeState(state.t + 1.0 if t is None else float(t), new_r, state.gain + dG, c, new_w)


@dataclass(frozen=True)
class Trajectory:
    """All states of a run, stored column-wise.

    Row ``k`` holds the state at ``times[k]``; ``weights[k]`` are the weights
    applied to increment ``k`` (from ``times[k]`` to ``times[k+1]``).
    ``scales`` is NaN where the scale is undefined.
    """

    times: np.ndarray
    regrets: np.ndarray
    gains: np.ndarray
    scales: np.ndarray
    weights: np.ndarray
    gain_increments: np.ndarray
    balance: np.ndarray
    policy: Policy

    def __len__(self):
        return self.times.size

    @property
    def n(self):
        return self.regrets.shape[1]

    def state(self, k) -> HedgeState:
        c = self.scales[k]
        return HedgeState(float(self.times[k]), self.regrets[k].copy(), float(self.gains[k]),
                          None if math.isnan(c) else float(c), self.weights[k].copy())

    def __iter__(self) -> Iterator[HedgeState]:
        return (self.state(k) for k in range(len(self)))


def run(paths: PathSet, policy: Policy = NORMALHEDGE) -> Trajectory:
    """Fold :func:`step` over every increment of ``paths``."""
    n, steps = paths.n, paths.steps
    policy = policy.resolved(n, float(paths.times[-1]))
    increments = paths.dX
    if not np.all(np.isfinite(increments)):
        raise DomainError("paths contain non-finite increments")

    regrets = np.zeros((steps + 1, n))
    weights = np.empty((steps + 1, n))
    gains = np.zeros(steps + 1)
    scales = np.full(steps + 1, np.nan)
    dG = np.empty(steps)
    balance = np.empty(steps)

    st = init_state(n)
    r, w = st.regrets, st.weights
    weights[0] = w
    for k in range(steps):
        r, dG[k], balance[k], c, w = _advance(r, w, increments[k], policy)
        regrets[k + 1] = r
        weights[k + 1] = w
        gains[k + 1] = gains[k] + dG[k]
        if c is not None:
            scales[k + 1] = c
    return Trajectory(paths.times.copy(), regrets, gains, scales, weights, dG, balance, policy)
