"""Strict JSON run configuration.

Schema (version 1)::

    {
      "version": 1,
      "scenario": {
        "n": 3,
        "regimes": [
          {"start": 0.0, "name": "calm", "drift": 0.0, "sigma": 1.0},
          {"start": 0.5, "drift": [0.1, 0, 0], "diffusion": [[1, 0, 0], ...]}
        ]
      },
      "grid": {"T": 1.0, "dt": 0.001},
      "seed": 0,
      "replicas": 1,
      "policy": {"kind": "normalhedge"},
      "quantiles": [0.05, 0.1],
      "crp": {"m": 500, "seed": 7},
      "output": "out",
      "workers": 1,
      "checks": {"lemma2": true, "quantile": true, "vol_factor4": true,
                 "theorem2_analytic": true, "conservation": true}
    }

Only ``scenario`` and ``grid`` are required.  A regime gives its diffusion
either as a full matrix (``diffusion``, one row per instrument) or as
per-instrument volatilities on the diagonal (``sigma``, scalar or list).
``drift`` is a scalar or a list and defaults to zero.  Unknown keys are
rejected everywhere.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from cthedge.diagnostics import quantile_rank
from cthedge.engine import POLICIES, Policy
from cthedge.errors import ConfigError, DomainError
from cthedge.market import DiffusionSpec, Regime, SimGrid

SCHEMA_VERSION = 1
CHECKS = ("lemma2", "quantile", "vol_factor4", "theorem2_analytic", "conservation")

_TOP_KEYS = {"version", "scenario", "grid", "seed", "replicas", "policy", "quantiles",
             "crp", "output", "workers", "checks"}


@dataclass(frozen=True)
class CrpBlock:
    m: int
    seed: int


@dataclass(frozen=True)
class RunConfig:
    scenario: DiffusionSpec
    grid: SimGrid
    seed: int = 0
    replicas: int = 1
    policy: Policy = field(default_factory=Policy)
    quantiles: Tuple[float, ...] = ()
    crp: Optional[CrpBlock] = None
    output: str = "out"
    workers: int = 1
    checks: dict = field(default_factory=lambda: {c: True for c in CHECKS})
    # canonical JSON of the source document, used for hashing
    canonical: str = ""

    @property
    def n_experts(self):
        return self.scenario.n + self.crp.m if self.crp else self.scenario.n

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical.encode()).hexdigest()

    def replica_seeds(self):
        return [self.seed + r for r in range(self.replicas)]


def _fail(key, msg):
    raise ConfigError(f"{key} {msg}")


def _obj(value, key, allowed, required=()):
    if not isinstance(value, dict):
        _fail(key, "must be an object")
    extra = sorted(set(value) - set(allowed))
    if extra:
        _fail(f"{key}.{extra[0]}" if key else extra[0], "is not a recognized key")
    for req in required:
        if req not in value:
            _fail(f"{key}.{req}" if key else req, "is required")
    return value


def _num(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _fail(key, "must be a finite number")
    return float(value)


def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(key, "must be an integer")
    if minimum is not None and value < minimum:
        _fail(key, f"must be at least {minimum}")
    return value


def _vector(value, key, n):
    if isinstance(value, list):
        if len(value) != n:
            _fail(key, f"must have {n} entries")
        return np.array([_num(v, f"{key}[{i}]") for i, v in enumerate(value)])
    return np.full(n, _num(value, key))


def _regime(doc, key, n):
    _obj(doc, key, {"start", "name", "drift", "sigma", "diffusion"}, ("start",))
    start = _num(doc["start"], f"{key}.start")
    name = doc.get("name", "")
    if not isinstance(name, str):
        _fail(f"{key}.name", "must be a string")
    drift = _vector(doc.get("drift", 0.0), f"{key}.drift", n)
    if ("sigma" in doc) == ("diffusion" in doc):
        _fail(key, "needs exactly one of 'sigma' or 'diffusion'")
    if "sigma" in doc:
        diff = np.diag(_vector(doc["sigma"], f"{key}.sigma", n))
    else:
        rows = doc["diffusion"]
        if not isinstance(rows, list) or len(rows) != n or not all(isinstance(r, list) for r in rows):
            _fail(f"{key}.diffusion", f"must be a list of {n} rows")
        width = len(rows[0])
        if width < 1 or any(len(r) != width for r in rows):
            _fail(f"{key}.diffusion", "rows must be non-empty and of equal length")
        diff = np.array([[_num(v, f"{key}.diffusion[{i}][{j}]") for j, v in enumerate(r)]
                         for i, r in enumerate(rows)])
    return Regime(start, drift, diff, name)


def _scenario(doc):
    _obj(doc, "scenario", {"n", "regimes"}, ("n", "regimes"))
    n = _int(doc["n"], "scenario.n", 1)
    regimes = doc["regimes"]
    if not isinstance(regimes, list) or not regimes:
        _fail("scenario.regimes", "must be a non-empty list")
    parsed = [_regime(r, f"scenario.regimes[{i}]", n) for i, r in enumerate(regimes)]
    try:
        return DiffusionSpec(tuple(parsed))
    except DomainError as exc:
        raise ConfigError(f"scenario {exc}") from None


def _grid(doc):
    _obj(doc, "grid", {"T", "dt"}, ("T", "dt"))
    T = _num(doc["T"], "grid.T")
    dt = _num(doc["dt"], "grid.dt")
    if T <= 0:
        _fail("grid.T", "must be positive")
    if dt <= 0:
        _fail("grid.dt", "must be positive")
    try:
        return SimGrid(T, dt)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _policy(doc):
    _obj(doc, "policy", {"kind", "eta"}, ("kind",))
    kind = doc["kind"]
    if kind not in POLICIES:
        _fail("policy.kind", f"must be one of {', '.join(POLICIES)}")
    eta = doc.get("eta")
    if eta is not None:
        if kind != "exp_weights":
            _fail("policy.eta", "is only allowed for exp_weights")
        eta = _num(eta, "policy.eta")
        if eta <= 0:
            _fail("policy.eta", "must be positive")
    return Policy(kind, eta)


def parse_config(text) -> RunConfig:
    """Parse and validate a JSON configuration document (bytes or str)."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    _obj(doc, "", _TOP_KEYS, ("scenario", "grid"))

    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        _fail("version", f"must be {SCHEMA_VERSION}")
    scenario = _scenario(doc["scenario"])
    grid = _grid(doc["grid"])
    seed = _int(doc.get("seed", 0), "seed", 0)
    replicas = _int(doc.get("replicas", 1), "replicas", 1)
    workers = _int(doc.get("workers", 1), "workers", 1)
    policy = _policy(doc.get("policy", {"kind": "normalhedge"}))

    crp = None
    if "crp" in doc and doc["crp"] is not None:
        block = _obj(doc["crp"], "crp", {"m", "d", "seed"}, ("m",))
        m = _int(block["m"], "crp.m", 1)
        if "d" in block and _int(block["d"], "crp.d", 2) != scenario.n:
            _fail("crp.d", f"must equal scenario.n ({scenario.n})")
        if scenario.n < 2:
            _fail("crp", "needs at least 2 base instruments")
        crp = CrpBlock(m, _int(block.get("seed", seed), "crp.seed", 0))

    n_experts = scenario.n + crp.m if crp else scenario.n
    qs = doc.get("quantiles", [])
    if not isinstance(qs, list):
        _fail("quantiles", "must be a list")
    quantiles = []
    for i, q in enumerate(qs):
        eps = _num(q, f"quantiles[{i}]")
        if not 0 < eps <= 1:
            _fail(f"quantiles[{i}]", "must lie in (0, 1]")
        try:
            quantile_rank(eps, n_experts)
        except DomainError:
            _fail(f"quantiles[{i}]",
                  f"= {eps} violates floor(eps*N) >= 1 for N = {n_experts} experts")
        quantiles.append(eps)
    if len(set(quantiles)) != len(quantiles):
        _fail("quantiles", "must not contain duplicates")

    output = doc.get("output", "out")
    if not isinstance(output, str) or not output:
        _fail("output", "must be a non-empty string")

    checks = {c: True for c in CHECKS}
    for key, val in _obj(doc.get("checks", {}), "checks", CHECKS).items():
        if not isinstance(val, bool):
            _fail(f"checks.{key}", "must be true or false")
        checks[key] = val

    return RunConfig(
        scenario=scenario, grid=grid, seed=seed, replicas=replicas, policy=policy,
        quantiles=tuple(quantiles), crp=crp, output=output, workers=workers, checks=checks,
        canonical=json.dumps(doc, sort_keys=True, separators=(",", ":")),
    )


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())
