"""Random walks inside and across equivalence classes of a network.

Four variants share one stepping loop:

* ``simec``: step along random combinations of null eigenvectors of the
  pullback metric, staying in the class of the start point.
* ``simexp``: step along non-null eigenvectors, leaving the class each step.
* ``simec_1d_leaky``: null steps kept direction-coherent, stopping as soon
  as any piecewise unit changes region (leaky-ReLU style layers).
* ``simec_guarded``: null steps that stop when an entry of the metric jumps
  by more than ``tau`` between consecutive points.

Energy and pseudolength of each segment use the metric at the segment start.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ContractError, NoDirectionError
from .linalg import as_vector
from .metric import (IDENTITY_METRIC, CurveAccumulators, OutputMetric, PullbackMetric,
                     analyze_point, metric_jump, step_increments, suggest_tau)
from .network import NetworkSpec
from .rng import WalkRNG

MODES = ("simec", "simexp", "simec_1d_leaky", "simec_guarded")
MAX_KINK_RESAMPLES = 8
INVARIANCE_CONSTANT = 3.0


class Termination(str, Enum):
    MAX_ITERATIONS = "max_iterations"
    KERNEL_DIM_CHANGED = "kernel_dim_changed"
    REGION_CHANGED = "region_changed"
    METRIC_JUMP = "metric_jump"
    ON_KINK = "on_kink"
    ENERGY_BUDGET_EXCEEDED = "energy_budget_exceeded"


@dataclass
class WalkConfig:
    mode: str = "simec"
    steps: int = 100
    delta: float = 1e-2
    eps: float = 1e-8
    tau: Optional[float] = None
    seed: int = 0
    energy_budget: Optional[float] = None
    initial_direction: Optional[np.ndarray] = None
    relative_eps: bool = False
    check_kernel_dim: bool = True
    region_guard: bool = False
    eig_method: str = "auto"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.steps) < 1:
            raise ContractError("steps must be at least 1")
        self.steps = int(self.steps)
        for name in ("delta", "eps"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ContractError(f"{name} must be finite and positive")
        if self.tau is not None and not (np.isfinite(self.tau) and self.tau > 0):
            raise ContractError("tau must be finite and positive")
        if self.energy_budget is not None and not self.energy_budget >= 0:
            raise ContractError("energy_budget must be non-negative")
        if self.initial_direction is not None:
            v = as_vector(self.initial_direction, "initial_direction")
            if not np.any(v):
                raise ContractError("initial_direction must be nonzero")
            self.initial_direction = v

    def echo(self) -> dict:
        d = asdict(self)
        if self.initial_direction is not None:
            d["initial_direction"] = [float(x) for x in self.initial_direction]
        return d


@dataclass
class WalkResult:
    points: np.ndarray
    outputs: np.ndarray
    energy: float
    pseudolength: float
    termination: Termination
    signatures: list
    kernel_dims: list
    dE: np.ndarray
    dPl: np.ndarray
    config: WalkConfig = field(default_factory=WalkConfig)

    def __len__(self):
        return self.points.shape[0]


def invariance_tolerance(delta: float, eps: float, steps: int, c: float = INVARIANCE_CONSTANT) -> float:
    """Output drift allowed after ``steps`` null steps: ``c * delta * sqrt(eps) * steps``.

    Under the identity output metric a unit null direction ``v`` has
    ``|J v| = sqrt(v.h.v) <= sqrt(eps)``, so one step moves the output by at
    most ``delta * sqrt(eps)`` to first order. The bound is meaningful when
    the second-order term ``delta**2 * curvature`` per step stays below
    ``delta * sqrt(eps)`` (piecewise-linear nets, or small ``delta``); ``c``
    is a safety margin on top of the first-order estimate.
    """
    return c * delta * np.sqrt(eps) * steps


def sample_direction(pm: PullbackMetric, which: str, rng: WalkRNG) -> np.ndarray:
    """Unit vector uniformly distributed on the sphere of the null or non-null eigenspace."""
    if which == "null":
        basis = pm.null_vectors
    elif which == "nonnull":
        basis = pm.nonnull_vectors
    else:
        raise ContractError(f"which must be 'null' or 'nonnull', got {which!r}")
    k = basis.shape[1]
    if k == 0:
        raise NoDirectionError(f"no {which} eigenvectors at this point (kernel dim {pm.kernel_dim})")
    while True:
        v = basis @ rng.normals(k)
        norm = np.linalg.norm(v)
        if norm > 0:
            return v / norm


def _walk(net, p0, cfg: WalkConfig, g, state, *, which, guard_tau=None, coherent=False,
          region_guard=False, v0=None):
    rng = WalkRNG(cfg.seed)

    def analyze(p):
        return analyze_point(net, p, g, cfg.eps, state=state, relative=cfg.relative_eps,
                             strict=False, eig_method=cfg.eig_method)

    p = as_vector(p0, "p0")
    pm = analyze(p)
    points, outputs = [p], [pm.output]
    signatures, kernel_dims = [pm.signature], [pm.kernel_dim]
    dEs, dPls = [0.0], [0.0]
    acc = CurveAccumulators()

    def result(reason):
        return WalkResult(np.array(points), np.array(outputs), acc.energy, acc.pseudolength,
                          reason, signatures, kernel_dims, np.array(dEs), np.array(dPls), cfg)

    if pm.on_kink:
        return result(Termination.ON_KINK)
    available = pm.kernel_dim if which == "null" else pm.nonnull_indices.size
    if available == 0:
        raise NoDirectionError(f"no {which} eigenvectors at the start point")
    kdim0 = pm.kernel_dim
    v_prev = v0

    for _ in range(cfg.steps):
        try:
            for _attempt in range(MAX_KINK_RESAMPLES + 1):
                v = sample_direction(pm, which, rng)
                if coherent and v_prev is not None and float(v @ v_prev) < 0:
                    v = -v
                cand = p + cfg.delta * v
                pm_new = analyze(cand)
                if not pm_new.on_kink:
                    break
            else:
                return result(Termination.ON_KINK)
        except NoDirectionError:
            # the eigenspace we walk along vanished at an accepted point
            return result(Termination.KERNEL_DIM_CHANGED)
        dE, dPl = step_increments(pm.h, v, cfg.delta)
        if guard_tau is not None and metric_jump(pm.h, pm_new.h, guard_tau):
            return result(Termination.METRIC_JUMP)
        if cfg.check_kernel_dim and which == "null" and pm_new.kernel_dim != kdim0:
            return result(Termination.KERNEL_DIM_CHANGED)
        if region_guard and pm_new.signature != pm.signature:
            return result(Termination.REGION_CHANGED)
        if cfg.energy_budget is not None and dE > cfg.energy_budget:
            return result(Termination.ENERGY_BUDGET_EXCEEDED)
        acc.add(dE, dPl)
        p, pm, v_prev = cand, pm_new, v
        points.append(p)
        outputs.append(pm.output)
        signatures.append(pm.signature)
        kernel_dims.append(pm.kernel_dim)
        dEs.append(dE)
        dPls.append(dPl)
    return result(Termination.MAX_ITERATIONS)


def _expect_mode(cfg, mode):
    if cfg.mode != mode:
        raise ContractError(f"config mode is {cfg.mode!r}, expected {mode!r}")


def simec_nd(net: NetworkSpec, p0, cfg: WalkConfig, g: OutputMetric = IDENTITY_METRIC,
             state=None) -> WalkResult:
    """Null-direction random walk approximating the equivalence class of ``p0``.

    Set ``cfg.region_guard`` to also stop when any piecewise unit changes region.
    """
    _expect_mode(cfg, "simec")
    return _walk(net, p0, cfg, g, state, which="null", region_guard=cfg.region_guard)


def simexp_nd(net: NetworkSpec, p0, cfg: WalkConfig, g: OutputMetric = IDENTITY_METRIC,
              state=None) -> WalkResult:
    """Non-null-direction random walk; consecutive points lie in different classes."""
    _expect_mode(cfg, "simexp")
    return _walk(net, p0, cfg, g, state, which="nonnull")


def simec_1d_leaky(net: NetworkSpec, p0, v0=None, cfg: Optional[WalkConfig] = None,
                   g: OutputMetric = IDENTITY_METRIC, state=None) -> WalkResult:
    """Direction-coherent null walk stopping at the first region change.

    Each step flips the sampled null direction when it points against the
    previous one; ``v0`` (or ``cfg.initial_direction``) seeds that rule.
    """
    cfg = cfg or WalkConfig(mode="simec_1d_leaky")
    _expect_mode(cfg, "simec_1d_leaky")
    if v0 is None:
        v0 = cfg.initial_direction
    if v0 is not None:
        v0 = as_vector(v0, "v0")
        if not np.any(v0):
            raise ContractError("v0 must be nonzero")
    return _walk(net, p0, cfg, g, state, which="null", coherent=True, region_guard=True, v0=v0)


def simec_guarded(net: NetworkSpec, p0, cfg: WalkConfig, g: OutputMetric = IDENTITY_METRIC,
                  state=None) -> WalkResult:
    """Null walk that stops before accepting a point where the metric jumps by more than tau."""
    _expect_mode(cfg, "simec_guarded")
    tau = cfg.tau if cfg.tau is not None else suggest_tau(net, cfg.delta)
    return _walk(net, p0, cfg, g, state, which="null", guard_tau=tau, region_guard=cfg.region_guard)


def run_walk(net: NetworkSpec, p0, cfg: WalkConfig, g: OutputMetric = IDENTITY_METRIC,
             state=None) -> WalkResult:
    if cfg.mode == "simec":
        return simec_nd(net, p0, cfg, g, state)
    if cfg.mode == "simexp":
        return simexp_nd(net, p0, cfg, g, state)
    if cfg.mode == "simec_1d_leaky":
        return simec_1d_leaky(net, p0, None, cfg, g, state)
    return simec_guarded(net, p0, cfg, g, state)
