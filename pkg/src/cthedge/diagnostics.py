"""Per-step diagnostics and bound checks for hedging runs.

The deterministic checks (regret bounds, effective volatility factor, the
analytic scale-drift bound, weight conservation) must hold at every step of
every run.  The finite-difference scale drift is a noisy estimate and is
only summarized statistically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from cthedge.engine import Trajectory
from cthedge.errors import DomainError
from cthedge.market import DiffusionSpec, PathSet

#: Absolute slack for inequalities that inherit the scale-solver tolerance.
BOUND_SLACK = 1e-9
#: Absolute slack for the effective-volatility check.
VOL_SLACK = 1e-12
#: Absolute slack for weight conservation checks.
CONSERVATION_TOL = 1e-12

VOL_FACTOR = 4.0
PAPER_VOL_FACTOR = 2.0
DRIFT_FACTOR = 6.0
FD_RELATIVE_SLACK = 0.05


@dataclass(frozen=True)
class EffectiveDiffusion:
    """Diffusion of the regret processes: ``b`` rows and their squared norms ``V``."""

    b: np.ndarray
    V: np.ndarray


def effective_diffusion(bhat, weights) -> EffectiveDiffusion:
    bhat = np.asarray(bhat, dtype=float)
    p = np.asarray(weights, dtype=float)
    if bhat.ndim != 2 or p.shape != (bhat.shape[0],):
        raise DomainError(f"weights of shape {p.shape} do not match diffusion {bhat.shape}")
    b = bhat - p @ bhat
    return EffectiveDiffusion(b, (b * b).sum(axis=1))


@dataclass
class VolatilityReport:
    ok: bool
    paper_constant_ok: bool
    max_ratio: float
    violations: list = field(default_factory=list)


def check_effective_volatility_bound(ed: EffectiveDiffusion, vmax: float, t: Optional[float] = None) -> VolatilityReport:
    """Check ``V_i <= 4 V^M`` and record (without asserting) ``V_i <= 2 V^M``."""
    V = ed.V
    limit = VOL_FACTOR * vmax + VOL_SLACK
    bad = np.flatnonzero(V > limit)
    violations = [{"t": t, "i": int(i), "V": float(V[i]), "vmax": float(vmax)} for i in bad]
    ratio = float(V.max() / vmax) if vmax > 0 else (0.0 if V.max() <= 0 else math.inf)
    return VolatilityReport(
        ok=not violations,
        paper_constant_ok=bool(np.all(V <= PAPER_VOL_FACTOR * vmax + VOL_SLACK)),
        max_ratio=ratio,
        violations=violations,
    )


def regret_bound(c, n):
    """Bound on the regret to the best of ``n`` experts at scale ``c``."""
    if not (c > 0 and math.isfinite(c)):
        raise DomainError("c must be positive")
    if n < 1:
        raise DomainError("n must be at least 1")
    return math.sqrt(2.0 * c * (math.log(n) + 1.0))


def quantile_bound(c, epsilon):
    """Bound on the regret to the top ``epsilon``-quantile at scale ``c``."""
    if not (c > 0 and math.isfinite(c)):
        raise DomainError("c must be positive")
    if not (0 < epsilon <= 1):
        raise DomainError("epsilon must lie in (0, 1]")
    return math.sqrt(2.0 * c * (math.log(1.0 / epsilon) + 1.0))


def quantile_rank(epsilon, n):
    """1-based rank ``floor(epsilon * n)`` of the quantile comparator."""
    if not (0 < epsilon <= 1):
        raise DomainError("epsilon must lie in (0, 1]")
    # Guard against epsilon*n landing a hair below an integer.
    k = int(math.floor(epsilon * n * (1 + 1e-12)))
    if k < 1:
        raise DomainError(
            f"floor(epsilon*N) = floor({epsilon}*{n}) = 0; need epsilon >= 1/N = {1.0 / n:.6g}")
    return k


def quantile_regret(X_t, G_t, epsilon):
    """Gap from the gain ``G_t`` to the ``floor(eps N)``-th highest log-price."""
    x = np.sort(np.asarray(X_t, dtype=float))[::-1]
    k = quantile_rank(epsilon, x.size)
    return float(x[k - 1] - G_t)


def scale_drift_analytic(regrets, c, V, *, paper_display=False):
    """Rate of change of the scale implied by a zero-drift average potential.

    Returns ``None`` when no regret is positive.  ``paper_display`` swaps in
    the c-derivative without its factor 1/2 (halving the result).
    """
    r = np.asarray(regrets, dtype=float)
    V = np.asarray(V, dtype=float)
    if V.shape != r.shape:
        raise DomainError("V must have one entry per expert")
    if not (r > 0).any():
        return None
    if c is None or not c > 0:
        raise DomainError("c must be positive when some regret is positive")
    return float(_analytic_drift_rows(r[None, :], np.array([float(c)]), V[None, :], paper_display)[0])


def potential_ratio(regrets, c):
    """``sum (1+x^2) e^{x^2/2} / sum x^2 e^{x^2/2}`` over ``x = R/sqrt(c) > 0``."""
    r = np.asarray(regrets, dtype=float)
    pos = r > 0
    if not pos.any():
        return None
    x2 = r[pos] ** 2 / c
    w = np.exp(0.5 * (x2 - x2.max()))
    return float(((1.0 + x2) * w).sum() / (x2 * w).sum())


# --- trajectory-level diagnostics -------------------------------------------


def _check_dims(traj: Trajectory, spec: DiffusionSpec):
    if traj.n != spec.n:
        raise DomainError(f"trajectory has {traj.n} experts but the spec has {spec.n} instruments")


def _per_step_vol(traj: Trajectory, spec: DiffusionSpec, chunk=4_000_000):
    """Effective ``V`` for every state plus ``V^M`` at every state time."""
    steps = len(traj)
    idx = spec.regime_index(traj.times)
    V = np.empty((steps, traj.n))
    vmax = np.empty(steps)
    for j, reg in enumerate(spec.regimes):
        rows = np.flatnonzero(idx == j)
        if rows.size == 0:
            continue
        B = reg.diffusion
        vmax[rows] = (B * B).sum(axis=1).max()
        per = max(1, chunk // max(1, B.size))
        for s in range(0, rows.size, per):
            sel = rows[s:s + per]
            mean_row = traj.weights[sel] @ B
            diff = B[None, :, :] - mean_row[:, None, :]
            V[sel] = np.einsum("knm,knm->kn", diff, diff)
    return V, vmax


def _analytic_drift_rows(regrets, scales, V, paper_display=False):
    out = np.full(scales.size, np.nan)
    ok = ~np.isnan(scales)
    if not ok.any():
        return out
    R = regrets[ok]
    c = scales[ok][:, None]
    rp = np.where(R > 0, R, 0.0)
    expo = rp * rp / (2.0 * c)
    expo = expo - expo.max(axis=1, keepdims=True)
    scaled = np.where(R > 0, np.exp(expo), 0.0)
    num = (V[ok] * (1.0 / c + rp * rp / (c * c)) * scaled).sum(axis=1)
    half = 1.0 if paper_display else 0.5
    den = 2.0 * half * ((rp * rp / (c * c)) * scaled).sum(axis=1)
    out[ok] = num / den
    return out


def _kth_highest(X, k):
    n = X.shape[1]
    return np.partition(X, n - k, axis=1)[:, n - k]


@dataclass(frozen=True)
class ScaleDriftRecord:
    t: float
    c_fd: float
    c_analytic: float
    vmax: float
    ratio: Optional[float]


@dataclass
class Verdict:
    name: str
    passed: bool
    checked: int
    violations: int = 0
    first_violation: Optional[dict] = None

    def as_dict(self):
        return {
            "passed": self.passed,
            "checked": self.checked,
            "violations": self.violations,
            "first_violation": self.first_violation,
        }


def _verdict(name, lhs, rhs, times, mask=None, extra=None):
    mask = np.ones(lhs.shape[0], dtype=bool) if mask is None else mask
    bad = mask & ~(lhs <= rhs)
    first = None
    if bad.any():
        k = int(np.argmax(bad))
        first = {"step": k, "t": float(times[k]), "value": float(lhs[k]), "limit": float(rhs[k])}
        if extra:
            first.update(extra(k))
    return Verdict(name, not bad.any(), int(mask.sum()), int(bad.sum()), first)


@dataclass
class DriftReport:
    records: List[ScaleDriftRecord]
    verdict: Verdict
    fd_within_fraction: Optional[float]
    sup_ratio: Optional[float]


@dataclass
class Diagnosis:
    """Per-state diagnostic columns and the verdicts derived from them.

    Every array has one entry per state of the trajectory.  ``c_fd`` is the
    forward difference from state ``k`` to ``k+1`` and is NaN where either
    scale is undefined (and at the final state).
    """

    times: np.ndarray
    scales: np.ndarray
    gains: np.ndarray
    r_max: np.ndarray
    bound_lemma2: np.ndarray
    quantile_regret: Dict[float, np.ndarray]
    quantile_bound: Dict[float, np.ndarray]
    vmax: np.ndarray
    vi_max: np.ndarray
    c_fd: np.ndarray
    c_analytic: np.ndarray
    c_analytic_paper: np.ndarray
    ratio_drift: np.ndarray
    weight_sum_error: np.ndarray
    balance: np.ndarray
    verdicts: Dict[str, Verdict]
    sup_ratios: Dict[str, Optional[float]]
    stats: Dict[str, Optional[float]]


def _nanmax_or_none(a):
    a = a[np.isfinite(a)]
    return float(a.max()) if a.size else None


def diagnose(traj: Trajectory, spec: DiffusionSpec, paths: PathSet,
             quantiles: Sequence[float] = ()) -> Diagnosis:
    """Compute every diagnostic column of ``traj`` and check all bounds."""
    _check_dims(traj, spec)
    if paths.X.shape != traj.regrets.shape:
        raise DomainError("paths and trajectory disagree in shape")
    n = traj.n
    times = traj.times
    scales = traj.scales
    defined = ~np.isnan(scales)
    c0 = np.where(defined, scales, 0.0)

    r_max = traj.regrets.max(axis=1)
    bound = np.sqrt(2.0 * c0 * (math.log(n) + 1.0))

    q_regret, q_bound = {}, {}
    for eps in quantiles:
        k = quantile_rank(eps, n)
        q_regret[eps] = _kth_highest(paths.X, k) - traj.gains
        q_bound[eps] = np.sqrt(2.0 * c0 * (math.log(1.0 / eps) + 1.0))

    V, vmax = _per_step_vol(traj, spec)
    vi_max = V.max(axis=1)

    c_an = _analytic_drift_rows(traj.regrets, scales, V)
    c_an_paper = _analytic_drift_rows(traj.regrets, scales, V, paper_display=True)
    c_fd = np.full(len(traj), np.nan)
    both = defined[:-1] & defined[1:]
    c_fd[:-1][both] = (scales[1:][both] - scales[:-1][both]) / np.diff(times)[both]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(vmax > 0, c_an / vmax, np.nan)
        vol_ratio = np.where(vmax > 0, vi_max / vmax, np.nan)

    weight_err = np.abs(traj.weights.sum(axis=1) - 1.0)

    def at_regret(k):
        return {"c": None if np.isnan(scales[k]) else float(scales[k])}

    verdicts = {
        "lemma2": _verdict("lemma2", r_max, bound + BOUND_SLACK, times, extra=at_regret),
    }
    q_lhs = [q_regret[e] - q_bound[e] for e in quantiles]
    if q_lhs:
        worst = np.max(np.vstack(q_lhs), axis=0)
        verdicts["quantile"] = _verdict("quantile", worst, np.full(len(traj), BOUND_SLACK), times)
    else:
        verdicts["quantile"] = Verdict("quantile", True, 0)
    verdicts["vol_factor4"] = _verdict("vol_factor4", vi_max, VOL_FACTOR * vmax + VOL_SLACK, times)
    verdicts["theorem2_analytic"] = _verdict(
        "theorem2_analytic", np.where(defined, c_an, 0.0), DRIFT_FACTOR * vmax + BOUND_SLACK, times, mask=defined)
    cons = np.concatenate([np.abs(traj.balance), [0.0]])
    verdicts["conservation"] = _verdict(
        "conservation", np.maximum(cons, weight_err), np.full(len(traj), CONSERVATION_TOL), times)

    fd_ok = np.isfinite(c_fd)
    fd_frac = None
    if fd_ok.any():
        fd_frac = float(np.mean(c_fd[fd_ok] <= DRIFT_FACTOR * vmax[fd_ok] * (1 + FD_RELATIVE_SLACK)))

    stats = {
        "paper_vol_constant_holds": bool(np.all(vi_max <= PAPER_VOL_FACTOR * vmax + VOL_SLACK)),
        "fd_within_bound_fraction": fd_frac,
        "drift_fd_mean_abs_error": float(np.mean(np.abs(c_fd[fd_ok] - c_an[fd_ok]))) if fd_ok.any() else None,
        "drift_fd_mean_error": float(np.mean(c_fd[fd_ok] - c_an[fd_ok])) if fd_ok.any() else None,
        "sup_ratio_drift_paper_display": _nanmax_or_none(np.where(vmax > 0, c_an_paper / np.where(vmax > 0, vmax, 1.0), np.nan)),
    }
    return Diagnosis(
        times=times, scales=scales, gains=traj.gains, r_max=r_max, bound_lemma2=bound,
        quantile_regret=q_regret, quantile_bound=q_bound, vmax=vmax, vi_max=vi_max,
        c_fd=c_fd, c_analytic=c_an, c_analytic_paper=c_an_paper, ratio_drift=ratio,
        weight_sum_error=weight_err, balance=traj.balance, verdicts=verdicts,
        sup_ratios={"drift": _nanmax_or_none(ratio), "vol": _nanmax_or_none(vol_ratio)},
        stats=stats,
    )


def verify_scale_drift(traj: Trajectory, spec: DiffusionSpec) -> DriftReport:
    """Records of finite-difference vs analytic scale drift and the bound verdict.

    One record per step at which the scale is defined at both ends.  The
    verdict asserts the analytic drift bound; the finite-difference fraction
    within the bound is informative only.
    """
    _check_dims(traj, spec)
    times, scales = traj.times, traj.scales
    V, vmax = _per_step_vol(traj, spec)
    c_an = _analytic_drift_rows(traj.regrets, scales, V)
    defined = ~np.isnan(scales)
    both = np.flatnonzero(defined[:-1] & defined[1:])
    records = []
    for k in both:
        fd = (scales[k + 1] - scales[k]) / (times[k + 1] - times[k])
        records.append(ScaleDriftRecord(
            float(times[k]), float(fd), float(c_an[k]), float(vmax[k]),
            float(c_an[k] / vmax[k]) if vmax[k] > 0 else None))
    verdict = _verdict("theorem2_analytic", np.where(defined, c_an, 0.0),
                       DRIFT_FACTOR * vmax + BOUND_SLACK, times, mask=defined)
    frac = None
    if records:
        frac = float(np.mean([r.c_fd <= DRIFT_FACTOR * r.vmax * (1 + FD_RELATIVE_SLACK) for r in records]))
    ratios = [r.ratio for r in records if r.ratio is not None]
    return DriftReport(records, verdict, frac, max(ratios) if ratios else None)


def drift_discrepancy(traj: Trajectory, spec: DiffusionSpec) -> Dict[str, Optional[float]]:
    """Three ways of comparing finite-difference and analytic scale drift.

    ``mean_abs``: mean over steps of ``|c_fd - c_analytic|``.
    ``integrated``: ``|mean(c_fd - c_analytic)|``, i.e. the net change of the
    scale against the time integral of the analytic drift.
    ``realized_mean_abs``: like ``mean_abs`` but with the analytic expression
    fed the realized squared regret increments instead of the instantaneous
    variances.
    """
    times, scales = traj.times, traj.scales
    V, _ = _per_step_vol(traj, spec)
    c_an = _analytic_drift_rows(traj.regrets, scales, V)
    dt = np.diff(times)
    realized = np.vstack([np.diff(traj.regrets, axis=0) ** 2 / dt[:, None], np.zeros((1, traj.n))])
    c_real = _analytic_drift_rows(traj.regrets, scales, realized)
    defined = ~np.isnan(scales)
    both = defined[:-1] & defined[1:]
    if not both.any():
        return {"mean_abs": None, "integrated": None, "realized_mean_abs": None, "steps": 0}
    fd = (scales[1:][both] - scales[:-1][both]) / dt[both]
    an = c_an[:-1][both]
    return {
        "mean_abs": float(np.mean(np.abs(fd - an))),
        "integrated": float(abs(np.mean(fd - an))),
        "realized_mean_abs": float(np.mean(np.abs(fd - c_real[:-1][both]))),
        "steps": int(both.sum()),
    }
