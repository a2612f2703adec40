"""Entropy gradient flow df/dt = grad H_f on the cutoff-M trig-polynomial family.

Explicit Euler steps with an Armijo ascent test: a step of size dt along the
gradient is kept only if the map stays certified expanding and the entropy
rises by at least half the first-order prediction dt ||grad H||^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import map_model as mm
from .entropy_gradient import SobolevMetric, entropy, gradient_vector
from .errors import GradientUnavailable, NotExpanding, SrbFlowError
from .transfer_op import TransferContext, gap_estimate

CONVERGED = "Converged"
MAX_STEPS = "MaxSteps"
EXPANSION_LOST = "ExpansionLost"
STALLED = "Stalled"
GRADIENT_UNAVAILABLE = "GradientUnavailable"

COLUMNS = ("t", "entropy", "grad_norm", "mu_min", "eta_hat", "dt", "accepted")


@dataclass(frozen=True)
class FlowConfig:
    dt0: float | None = None  # None: pick dt so the first-order gain equals the entropy gap
    dt_min: float = 1e-3
    dt_max: float = 1e16
    grad_tol: float = 1e-9
    entropy_tol: float = 1e-5
    max_steps: int = 200


@dataclass(frozen=True)
class FlowRow:
    t: float
    entropy: float
    grad_norm: float
    mu_min: float
    eta_hat: float
    dt: float
    accepted: bool

    def as_tuple(self) -> tuple:
        return (self.t, self.entropy, self.grad_norm, self.mu_min, self.eta_hat, self.dt, int(self.accepted))


@dataclass
class FlowTrace:
    rows: list = field(default_factory=list)
    status: str = ""
    message: str = ""
    final_map: mm.ExpandingMap | None = None
    cutoff: int = 0
    k: int = 0

    @property
    def accepted_rows(self) -> list:
        return [r for r in self.rows if r.accepted]

    @property
    def steps(self) -> int:
        return max(len(self.rows) - 1, 0)

    def column(self, name: str) -> np.ndarray:
        i = COLUMNS.index(name)
        return np.array([r.as_tuple()[i] for r in self.rows], dtype=float)


@dataclass
class _State:
    """A certified map with everything the stepping rule needs."""

    ctx: TransferContext
    entropy: float
    eta: float
    grad: object = None

    @property
    def map(self):
        return self.ctx.map


def _state(ctx: TransferContext, metric: SobolevMetric, tol: float, with_gradient: bool = True) -> _State:
    h = entropy(ctx)
    try:
        eta = gap_estimate(ctx)
        grad = gradient_vector(ctx, metric, tol) if with_gradient else None
    except SrbFlowError as exc:
        raise GradientUnavailable(f"{type(exc).__name__}: {exc}") from exc
    return _State(ctx, h, eta, grad)


@dataclass(frozen=True)
class StepOutcome:
    """Result of one trial step. Iterates as (map, accepted)."""

    map: mm.ExpandingMap
    accepted: bool
    cause: str  # "", "certification" or "ascent"
    mu_min: float
    entropy: float | None
    context: TransferContext | None

    def __iter__(self):
        yield self.map
        yield self.accepted


def _trial(state: _State, dt: float, n: int, margin: float, grad_tol: float = 0.0) -> StepOutcome:
    grad = state.grad
    # below grad_tol the map is numerically stationary; stepping would only add rounding noise
    if dt == 0.0 or grad.field.is_zero or grad.hk_norm < grad_tol:
        return StepOutcome(state.map, True, "", state.ctx.mu_min, state.entropy, state.ctx)
    cand = mm.add_scaled(state.map, dt, grad.field)
    mu, _ = mm.expansion_margin(cand, n)
    if mu < 1.0 + margin:
        return StepOutcome(cand, False, "certification", mu, None, None)
    try:
        ctx = TransferContext(cand, n, margin, seeds=state.ctx.branch_lifts)
        h_new = entropy(ctx)
    except NotExpanding:
        return StepOutcome(cand, False, "certification", mu, None, None)
    except SrbFlowError:
        return StepOutcome(cand, False, "ascent", mu, None, None)
    gain = 0.5 * dt * grad.hk_norm ** 2
    # dt < 0 runs the flow backwards and asks for the mirrored descent condition
    ok = h_new >= state.entropy + gain if dt > 0 else h_new <= state.entropy + gain
    return StepOutcome(cand, ok, "" if ok else "ascent", mu, h_new, ctx)


def flow_step(f: mm.ExpandingMap, metric: SobolevMetric, dt: float, n: int | None = None,
              margin: float = mm.DEFAULT_MARGIN, tol: float = 1e-12,
              grad_tol: float = FlowConfig.grad_tol) -> StepOutcome:
    """One Euler step f + dt grad H_f with the Armijo acceptance test."""
    ctx = TransferContext(f, n, margin)
    state = _state(ctx, metric, tol)
    return _trial(state, dt, ctx.n, margin, grad_tol)


def _row(t, state: _State, mu, dt, accepted) -> FlowRow:
    return FlowRow(t, state.entropy, state.grad.hk_norm, mu, state.eta, dt, accepted)


def _run(f0, metric, config: FlowConfig, n, margin, tol, direction: int) -> FlowTrace:
    n = n or mm.default_grid_size(f0.dim)
    trace = FlowTrace(cutoff=metric.cutoff, k=metric.k, final_map=f0)
    try:
        state = _state(TransferContext(f0, n, margin), metric, tol)
    except NotExpanding as exc:
        trace.status, trace.message = EXPANSION_LOST, str(exc)
        return trace
    except (GradientUnavailable, SrbFlowError) as exc:
        trace.status, trace.message = GRADIENT_UNAVAILABLE, str(exc)
        return trace
    top = math.log(abs(f0.degree))
    t = 0.0
    trace.rows.append(_row(t, state, state.ctx.mu_min, 0.0, True))
    gnorm = state.grad.hk_norm
    if config.dt0 == 0.0:
        trace.status, trace.message = MAX_STEPS, "dt0 = 0: no step taken"
        return trace
    if config.dt0 is not None:
        dt = config.dt0
    elif gnorm > 0:
        dt = max(top - state.entropy, 0.0) / gnorm ** 2
    else:
        dt = config.dt_min
    dt = min(max(abs(dt), config.dt_min), config.dt_max)
    streak = 0
    attempts = 0
    while True:
        if gnorm < config.grad_tol or (direction > 0 and state.entropy >= top - config.entropy_tol):
            trace.status = CONVERGED
            break
        if attempts >= config.max_steps:
            trace.status = MAX_STEPS
            break
        attempts += 1
        out = _trial(state, direction * dt, n, margin)
        if out.accepted:
            try:
                new_state = _state(out.context, metric, tol)
            except GradientUnavailable as exc:
                trace.status, trace.message = GRADIENT_UNAVAILABLE, str(exc)
                trace.final_map = out.map
                break
            t += direction * dt
            state = new_state
            gnorm = state.grad.hk_norm
            trace.rows.append(_row(t, state, out.mu_min, direction * dt, True))
            trace.final_map = state.map
            streak += 1
            if streak >= 3:
                dt = min(2 * dt, config.dt_max)
                streak = 0
            continue
        trace.rows.append(_row(t, state, out.mu_min, direction * dt, False))
        streak = 0
        if dt <= config.dt_min:
            if out.cause == "certification":
                trace.status = EXPANSION_LOST
                trace.message = f"step at dt_min leaves the expanding set (mu_min {out.mu_min:.6g})"
            else:
                trace.status = STALLED
                trace.message = "no admissible step at dt_min"
            break
        dt = max(dt / 2, config.dt_min)
    return trace


def run_flow(f0: mm.ExpandingMap, metric: SobolevMetric, config: FlowConfig = FlowConfig(),
             n: int | None = None, margin: float = mm.DEFAULT_MARGIN, tol: float = 1e-12) -> FlowTrace:
    """Forward gradient ascent; every failure mode ends up as the trace status."""
    return _run(f0, metric, config, n, margin, tol, +1)


def backward_probe(f0: mm.ExpandingMap, metric: SobolevMetric, steps: int,
                   config: FlowConfig = FlowConfig(), n: int | None = None,
                   margin: float = mm.DEFAULT_MARGIN, tol: float = 1e-12) -> FlowTrace:
    """The flow run with negative time steps (entropy descent), capped at ``steps`` trial steps."""
    cfg = FlowConfig(config.dt0, config.dt_min, config.dt_max, config.grad_tol, config.entropy_tol, steps)
    return _run(f0, metric, cfg, n, margin, tol, -1)
