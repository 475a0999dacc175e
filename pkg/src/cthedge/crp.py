"""Constant-rebalanced portfolios as an expanded expert class.

A portfolio ``w`` on the simplex over ``d`` base instruments is treated as an
expert whose log-price increments are ``sum_j w_j dX_j``.  The expanded
diffusion spec follows by the same linear map, so every bound check runs
unchanged on the expanded set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from cthedge.errors import DomainError
from cthedge.market import DiffusionSpec, PathSet, Regime


@dataclass(frozen=True)
class CrpSampleSet:
    """``m`` sampled portfolios followed by the ``d`` vertex portfolios."""

    weights: np.ndarray
    m: int

    @property
    def d(self):
        return self.weights.shape[1]

    @property
    def size(self):
        return self.weights.shape[0]


def sample_simplex(m: int, d: int, seed: int = 0) -> CrpSampleSet:
    """Uniform draws from the simplex via normalized unit exponentials."""
    if m < 1:
        raise DomainError("m must be at least 1")
    if d < 2:
        raise DomainError("d must be at least 2")
    rng = np.random.default_rng(seed)
    g = rng.standard_exponential((m, d))
    w = np.vstack([g / g.sum(axis=1, keepdims=True), np.eye(d)])
    return CrpSampleSet(w, m)


def _check(base_n, crp):
    if base_n != crp.d:
        raise DomainError(f"portfolios span {crp.d} instruments but the base has {base_n}")


def crp_log_paths(base: PathSet, crp: CrpSampleSet) -> PathSet:
    _check(base.n, crp)
    dX = base.dX @ crp.weights.T
    X = np.zeros((base.steps + 1, crp.size))
    np.cumsum(dX, axis=0, out=X[1:])
    return PathSet(times=base.times, X=X, dW=base.dW)


def crp_spec(spec: DiffusionSpec, crp: CrpSampleSet) -> DiffusionSpec:
    """Drift and diffusion of the portfolio experts under ``spec``."""
    _check(spec.n, crp)
    W = crp.weights
    return DiffusionSpec(tuple(
        Regime(r.start, W @ r.drift, W @ r.diffusion, r.name) for r in spec.regimes))


def write_crp_csv(path, crp: CrpSampleSet):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow([f"w_{j + 1}" for j in range(crp.d)])
        for row in crp.weights:
            out.writerow([f"{v:.17g}" for v in row])


def read_crp_csv(path) -> CrpSampleSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    w = np.array([[float(v) for v in row] for row in rows[1:]])
    d = w.shape[1]
    return CrpSampleSet(w, w.shape[0] - d)
