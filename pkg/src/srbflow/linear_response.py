"""Linear response of the SRB density and the finite-difference probes built on it.

Along f_t = f + t g the density derivative is

    xi = d/dt rho_t |_{t=0} = -sum_{n>=0} L^n div[L(g rho)],

a series that converges geometrically on zero-mean functions at the rate of
the spectral gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import map_model as mm
from .errors import SeriesNotConverging, StepTooLarge
from .parallel import pmap
from .transfer_op import (GridField, TransferContext, gap_estimate, srb_density,
                          transfer_t_derivative)

N_MAX = 400
SAFETY = 2.0
WINDOW = 20
# relative size of the round-off plateau the terms settle on, per unit of ||u_0||
ROUND_FLOOR = 1e-14


@dataclass(frozen=True)
class ResponseResult:
    xi: GridField
    terms_used: int
    tail_bound: float
    eta_used: float


@dataclass(frozen=True)
class SeriesResult:
    total: np.ndarray
    terms_used: int
    tail_bound: float
    eta_used: float


def contracted_series(step, u0: np.ndarray, eta: float, tol: float, n_max: int = N_MAX,
                      check_rate: bool = True) -> SeriesResult:
    """sum_{n>=0} u_n with u_{n+1} = step(u_n), stopped adaptively.

    Stops once ||u_n||_inf < tol (1 - eta) / 2, or once the terms reach the
    round-off plateau. The tail bound is SAFETY * eta ||u_last|| / (1 - eta)
    plus the accumulated rounding allowance.
    ``u0`` may carry leading batch axes; norms are then taken over everything.
    With ``check_rate`` the terms must shrink by ((1 + eta)/2)^WINDOW over
    every WINDOW consecutive steps.
    """
    target = tol * (1.0 - eta) / 2.0
    start = float(np.abs(u0).max())
    floor = ROUND_FLOOR * start
    total = np.zeros_like(u0)
    if start == 0.0:
        return SeriesResult(total, 0, 0.0, eta)
    rate = (1.0 + eta) / 2.0
    norms = []
    u = u0
    n = 0
    while True:
        total += u
        norms.append(float(np.abs(u).max()))
        n += 1
        if norms[-1] < max(target, floor):
            break
        if check_rate and n >= WINDOW + 1 and norms[-1] > norms[-1 - WINDOW] * rate ** WINDOW and norms[-1] > floor:
            raise SeriesNotConverging(
                f"terms decayed from {norms[-1 - WINDOW]:.3g} to {norms[-1]:.3g} over {WINDOW} steps; "
                f"expected rate <= {rate:.3f}")
        if n >= n_max:
            break
        u = step(u)
    last = norms[-1]
    tail = SAFETY * eta * last / (1.0 - eta) + floor * n
    if n >= n_max and last >= max(target, floor):
        tail = max(tail, SAFETY * last / (1.0 - eta))
    return SeriesResult(total, n, tail, eta)


def centered_step(ctx: TransferContext, rho: np.ndarray):
    """u -> L u - rho * mean(L u): L restricted to zero-mean fields, round-off drift removed."""
    axes = tuple(range(-ctx.dim, 0))

    def step(u):
        v = ctx.apply(u)
        return v - rho * v.mean(axis=axes, keepdims=True)

    return step


def response_density(ctx: TransferContext, g: mm.VecField, tol: float = 1e-12,
                     n_max: int = N_MAX) -> ResponseResult:
    rho = srb_density(ctx).values
    eta = gap_estimate(ctx)
    u0 = -transfer_t_derivative(ctx, g, GridField(rho)).values  # div L(g rho)
    u0 = u0 - rho * u0.mean()
    series = contracted_series(centered_step(ctx, rho), u0, eta, tol, n_max)
    return ResponseResult(GridField(-series.total), series.terms_used, series.tail_bound, eta)


def response_batch(ctx: TransferContext, fields: list[mm.VecField], tol: float = 1e-12,
                   n_max: int = N_MAX) -> tuple[np.ndarray, SeriesResult]:
    """Responses for several directions at once; returns (xi stacked, series info)."""
    rho = srb_density(ctx).values
    eta = gap_estimate(ctx)
    axes = tuple(range(-ctx.dim, 0))
    u0 = np.stack([-transfer_t_derivative(ctx, g, GridField(rho)).values for g in fields])
    u0 = u0 - rho * u0.mean(axis=axes, keepdims=True)
    series = contracted_series(centered_step(ctx, rho), u0, eta, tol, n_max)
    return -series.total, series


def _density_at(ctx: TransferContext, f: mm.ExpandingMap, tol: float) -> np.ndarray:
    other = TransferContext(f, ctx.n, ctx.margin, seeds=ctx.branch_lifts)
    return srb_density(other, tol).values


def _order(e1: float, e2: float) -> float | None:
    if e1 <= 0.0 or e2 <= 0.0:
        return None
    return math.log2(e1 / e2)


def response_fd_check(ctx: TransferContext, g: mm.VecField, h: float = 1e-3,
                      tol: float = 1e-12) -> tuple[float, float, float | None]:
    """Sup-norm error of the central difference of rho against xi at h and h/2, and log2 of their ratio."""
    if g.is_zero:
        return 0.0, 0.0, None
    xi = response_density(ctx, g, tol).xi.values
    f = ctx.map
    steps = [h, -h, h / 2, -h / 2]
    rhos = pmap(lambda s: _density_at(ctx, mm.add_scaled(f, s, g), tol), steps)
    e1 = float(np.abs((rhos[0] - rhos[1]) / (2 * h) - xi).max())
    e2 = float(np.abs((rhos[2] - rhos[3]) / h - xi).max())
    return e1, e2, _order(e1, e2)


def _mixed_fd(ctx: TransferContext, g1: mm.VecField, g2: mm.VecField, h: float, tol: float) -> np.ndarray:
    f = ctx.map
    signs = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    maps = [mm.add_scaled(mm.add_scaled(f, a * h, g1), b * h, g2) for a, b in signs]
    r = pmap(lambda m: _density_at(ctx, m, tol), maps)
    return (r[0] - r[1] - r[2] + r[3]) / (4 * h * h)


def second_order_probe(ctx: TransferContext, g1: mm.VecField, g2: mm.VecField, h: float = 1e-3,
                       tol: float = 1e-12, richardson: float = 0.2) -> float:
    """||d1 d2 rho||_inf / (||g1||_C3 ||g2||_C3) by a mixed central difference.

    The difference is taken at h and h/2; if the two ratios differ by more
    than ``richardson`` (relative) the step is declared too large. The h/2
    value is returned.
    """
    if g1.is_zero or g2.is_zero:
        return 0.0
    denom = g1.c_norm(3, ctx.n) * g2.c_norm(3, ctx.n)
    r_h = float(np.abs(_mixed_fd(ctx, g1, g2, h, tol)).max()) / denom
    r_h2 = float(np.abs(_mixed_fd(ctx, g1, g2, h / 2, tol)).max()) / denom
    if r_h == 0.0 and r_h2 == 0.0:
        return 0.0
    if abs(r_h - r_h2) > richardson * max(r_h, r_h2):
        raise StepTooLarge(f"mixed difference changed from {r_h:.4g} to {r_h2:.4g} between h and h/2")
    return r_h2


def lipschitz_probe(f1: mm.ExpandingMap, f2: mm.ExpandingMap, g_samples, n: int | None = None,
                    tol: float = 1e-12) -> float:
    """max_g |DH(f1)g - DH(f2)g| / (||f1 - f2||_C3 ||g||_C3)."""
    from .entropy_gradient import gateaux_primal_batch

    g_samples = list(g_samples)
    if any(g.is_zero for g in g_samples):
        raise ValueError("zero directions are excluded: the ratio is undefined")
    n = n or mm.default_grid_size(f1.dim)
    dist = mm.c_distance(f1, f2, 3, n)
    if dist == 0.0:
        return 0.0
    ctx1 = TransferContext(f1, n)
    ctx2 = TransferContext(f2, n, seeds=ctx1.branch_lifts)
    d1 = gateaux_primal_batch(ctx1, g_samples, tol).values
    d2 = gateaux_primal_batch(ctx2, g_samples, tol).values
    norms = np.array([g.c_norm(3, n) for g in g_samples])
    return float(np.max(np.abs(d1 - d2) / (dist * norms)))
