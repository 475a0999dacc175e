"""Continuous-time NormalHedge: simulation, aggregation and bound checks."""

__version__ = "0.1.0"

from cthedge.crp import CrpSampleSet, crp_log_paths, crp_spec, sample_simplex
from cthedge.diagnostics import (
    diagnose,
    effective_diffusion,
    quantile_bound,
    quantile_regret,
    regret_bound,
    scale_drift_analytic,
    verify_scale_drift,
)
from cthedge.engine import HedgeState, Policy, Trajectory, init_state, run, step
from cthedge.market import (
    DiffusionSpec,
    PathSet,
    Regime,
    SimGrid,
    instrument_volatility,
    max_volatility,
    simulate,
    wiener_increments,
)
from cthedge.potential import avg_potential, phi, phi_c, phi_x, phi_xx, solve_scale, weights
