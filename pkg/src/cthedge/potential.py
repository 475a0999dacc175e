"""NormalHedge potential, its partial derivatives, and the scale equation.

The potential of an expert with regret ``x`` at scale ``c`` is
``exp(x**2 / (2 c))`` for positive regret and ``1`` otherwise.  The scale
``c`` is chosen so that the average potential over all experts equals ``e``;
weights are proportional to the x-derivative of the potential.

Every function here is pure and accepts either scalars or numpy arrays for
``x``; scalar input gives a Python float back.
"""

from __future__ import annotations

import math

import numpy as np

from cthedge.errors import ContractError, DomainError

E = math.e

#: Exponents above this are evaluated in the log domain.
OVERFLOW_EXPONENT = 700.0

#: Residual tolerance of the scale solver, relative to ``e``.
SCALE_RTOL = 1e-10
#: Relative bracket width at which bisection stops regardless of residual.
BRACKET_RTOL = 1e-14
_MAX_BISECTIONS = 200


def _check_scale(c):
    if not (np.isfinite(c) and c > 0):
        raise DomainError(f"scale c must be a positive finite number, got {c!r}")


def _prepare(x, c):
    _check_scale(c)
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("x must be finite")
    pos = arr > 0
    xp = np.where(pos, arr, 0.0)
    return arr, pos, xp


def _out(x, value):
    if np.ndim(x) == 0:
        return float(value)
    return value


def phi(x, c):
    """Potential ``exp(x^2/2c)`` for ``x > 0``, ``1`` otherwise."""
    arr, pos, xp = _prepare(x, c)
    return _out(x, np.where(pos, np.exp(xp * xp / (2.0 * c)), 1.0))


def phi_x(x, c):
    """First derivative of :func:`phi` in ``x``."""
    arr, pos, xp = _prepare(x, c)
    val = (xp / c) * np.exp(xp * xp / (2.0 * c))
    return _out(x, np.where(pos, val, 0.0))


def phi_xx(x, c):
    """Second derivative of :func:`phi` in ``x`` (taken as 0 at ``x = 0``)."""
    arr, pos, xp = _prepare(x, c)
    val = (1.0 / c + xp * xp / (c * c)) * np.exp(xp * xp / (2.0 * c))
    return _out(x, np.where(pos, val, 0.0))


def phi_c(x, c, *, paper_display=False):
    """Derivative of :func:`phi` in ``c``.

    Returns the true partial ``-(x^2 / 2c^2) exp(x^2/2c)``.  With
    ``paper_display=True`` the variant without the factor 1/2 is returned,
    which is kept only so diagnostics can compare the two.
    """
    arr, pos, xp = _prepare(x, c)
    factor = 1.0 if paper_display else 0.5
    val = -factor * (xp * xp / (c * c)) * np.exp(xp * xp / (2.0 * c))
    return _out(x, np.where(pos, val, 0.0))


def _as_regrets(regrets):
    r = np.asarray(regrets, dtype=float)
    if r.ndim != 1 or r.size < 1:
        raise DomainError("regrets must be a non-empty 1-d vector")
    if not np.all(np.isfinite(r)):
        raise DomainError("regrets must be finite")
    return r


def avg_potential(regrets, c, *, overflow=OVERFLOW_EXPONENT):
    """Mean of ``phi(R_i, c)`` over experts.

    Switches to a log-sum-exp evaluation once the largest exponent exceeds
    ``overflow``; the result may then be ``inf`` if it is not representable.
    """
    r = _as_regrets(regrets)
    _check_scale(c)
    rp = r[r > 0]
    n_flat = r.size - rp.size
    if rp.size == 0:
        return 1.0
    expo = rp * rp / (2.0 * c)
    top = float(expo.max())
    if top <= overflow:
        return float((n_flat + np.exp(expo).sum()) / r.size)
    log_sum = top + math.log(np.exp(expo - top).sum() + n_flat * math.exp(-top))
    log_avg = log_sum - math.log(r.size)
    return math.exp(log_avg) if log_avg < 709.0 else math.inf


def scale_bracket(regrets):
    """Bracket ``[lo, hi]`` guaranteed to contain the scale.

    At ``lo`` the largest expert alone pushes the average to at least ``e``;
    at ``hi`` every expert's potential is at most ``e``.
    """
    r = _as_regrets(regrets)
    top = float(r.max())
    if top <= 0:
        raise DomainError("bracket undefined when no regret is positive")
    sq = top * top
    return sq / (2.0 * (1.0 + math.log(r.size))), sq / 2.0


def solve_scale(regrets):
    """Solve ``mean(phi(R_i, c)) = e`` for ``c`` by bisection.

    Returns ``None`` when no regret is positive, in which case the scale is
    undefined and uniform weights apply.
    """
    r = _as_regrets(regrets)
    rp = r[r > 0]
    if rp.size == 0:
        return None
    n = r.size
    half_sq = 0.5 * rp * rp
    n_flat = n - rp.size
    target = E * n
    tol = SCALE_RTOL * E * n

    top = float(half_sq.max())
    lo = top / (1.0 + math.log(n))
    hi = top
    if n == 1:
        return hi
    mid = 0.5 * (lo + hi)
    for _ in range(_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        resid = n_flat + np.exp(half_sq * (1.0 / mid)).sum() - target
        if abs(resid) <= tol:
            break
        if resid > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= BRACKET_RTOL * hi:
            mid = 0.5 * (lo + hi)
            break
    return float(mid)


def weights(regrets, c):
    """NormalHedge weights ``phi_x(R_i, c) / sum_j phi_x(R_j, c)``.

    ``c=None`` is accepted only when no regret is positive; the weights are
    then uniform.
    """
    r = _as_regrets(regrets)
    pos = r > 0
    if not pos.any():
        return np.full(r.size, 1.0 / r.size)
    if c is None:
        raise ContractError("scale is undefined but some regret is positive")
    _check_scale(c)
    rp = r[pos]
    expo = rp * rp / (2.0 * c)
    # (x/c) factor is common up to x; drop 1/c and subtract the max exponent.
    unnorm = rp * np.exp(expo - expo.max())
    out = np.zeros(r.size)
    out[pos] = unnorm / unnorm.sum()
    return out
