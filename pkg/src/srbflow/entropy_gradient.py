"""SRB entropy, its derivative along perturbations, and the Sobolev gradient.

H(f) = int log Jf rho_f dx. Along f + t g,

    DH(f) g = int tr(Df^{-1} Dg) rho dx + int xi log Jf dx,

with xi the linear response of rho. The second term is computed either by
summing the response series against log Jf (primal form) or by moving every
power of L onto log Jf, which turns L^n into composition with f^n (dual form).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import fourier
from . import map_model as mm
from .errors import CutoffExceeded, DimMismatch, FormsDisagree, PairingCheckFailure
from .linear_response import (_order, contracted_series, centered_step,
                              response_batch)
from .parallel import pmap
from .transfer_op import GridField, TransferContext, gap_estimate, srb_density, transfer_t_derivative

FINE_POINT_CAP = 2 ** 18
PAIRING_SAMPLES = 10
PAIRING_TOL = 1e-9
FORMS_FACTOR = 10.0
# absolute allowance for round-off when comparing the two forms
FORMS_FLOOR = 1e-12


def default_k(dim: int) -> int:
    """Smallest integer k with k > 3 + dim/2."""
    return 4 if dim == 1 else 5


@dataclass(frozen=True)
class SobolevMetric:
    """Fourier form of the H^k inner product on trig-polynomial fields with |m|_inf <= cutoff."""

    dim: int
    k: int | None = None
    cutoff: int = 8

    def __post_init__(self):
        if self.k is None:
            object.__setattr__(self, "k", default_k(self.dim))
        if self.k < 0 or self.cutoff < 0:
            raise ValueError("k and cutoff must be non-negative")

    def weight(self, m) -> float:
        """w_k(m) = sum over |alpha| <= k of prod_j (2 pi m_j)^(2 alpha_j)."""
        m = tuple(m)
        total = 0.0
        for alpha in mm.multi_indices(self.dim, self.k):
            total += math.prod((2 * math.pi * mj) ** (2 * aj) for mj, aj in zip(m, alpha))
        return total

    @cached_property
    def weights(self) -> dict:
        return {m: self.weight(m) for m in mm.canonical_freqs(self.dim, self.cutoff)}


def _check_cutoff(metric: SobolevMetric, u: mm.VecField):
    if u.dim != metric.dim:
        raise DimMismatch(f"field of dim {u.dim} against a metric of dim {metric.dim}")
    if u.cutoff > metric.cutoff:
        raise CutoffExceeded(f"field has frequency {u.cutoff} above the metric cutoff {metric.cutoff}")


def sobolev_inner(metric: SobolevMetric, u: mm.VecField, v: mm.VecField) -> float:
    _check_cutoff(metric, u)
    _check_cutoff(metric, v)
    vd = v.as_dict()
    total = 0.0
    for mode in u.modes:
        other = vd.get((mode.component, mode.freq))
        if other is None:
            continue
        w = metric.weights[mode.freq]
        if any(mode.freq):
            total += 0.5 * w * (mode.cos * other[0] + mode.sin * other[1])
        else:
            total += w * mode.cos * other[0]
    return total


def sobolev_norm(metric: SobolevMetric, u: mm.VecField) -> float:
    return math.sqrt(max(sobolev_inner(metric, u, u), 0.0))


def basis(dim: int, cutoff: int) -> list[tuple[int, tuple, str]]:
    """L2-orthonormal basis labels (component, freq, 'cos' | 'sin')."""
    out = []
    for comp in range(dim):
        for m in mm.canonical_freqs(dim, cutoff):
            out.append((comp, m, "cos"))
            if any(m):
                out.append((comp, m, "sin"))
    return out


def basis_field(dim: int, label) -> mm.VecField:
    comp, m, kind = label
    if not any(m):
        return mm.VecField.from_terms(dim, [(comp, m, 1.0, 0.0)])
    r2 = math.sqrt(2.0)
    a, b = (r2, 0.0) if kind == "cos" else (0.0, r2)
    return mm.VecField.from_terms(dim, [(comp, m, a, b)])


# entropy and its derivative --------------------------------------------------

def entropy(ctx: TransferContext) -> float:
    rho = srb_density(ctx).values
    return float(np.mean(ctx.log_jac * rho))


def _inverse_jacobian(ctx: TransferContext) -> np.ndarray:
    """(Df)^{-1} at the grid nodes, shape (P, dim, dim)."""
    return np.linalg.inv(mm.jacobian(ctx.map, ctx.nodes))


def trace_term(ctx: TransferContext, g: mm.VecField) -> float:
    rho = srb_density(ctx).values.reshape(-1)
    tr = np.einsum("pij,pji->p", _inverse_jacobian(ctx), g.jacobian(ctx.nodes))
    return float(np.mean(tr * rho))


@dataclass(frozen=True)
class GateauxBatch:
    values: np.ndarray
    tail_bound: float
    terms_used: int
    eta_used: float


def _log_jac_spread(ctx: TransferContext, h: float) -> float:
    return float(np.mean(np.abs(ctx.log_jac - h)))


def gateaux_primal_batch(ctx: TransferContext, fields, tol: float = 1e-12) -> GateauxBatch:
    """Primal-form DH(f) g for several directions sharing one series run."""
    fields = list(fields)
    if not fields:
        return GateauxBatch(np.zeros(0), 0.0, 0, 0.0)
    xi, series = response_batch(ctx, fields, tol)
    axes = tuple(range(1, ctx.dim + 1))
    resp = np.mean(xi * ctx.log_jac, axis=axes)
    traces = np.array([trace_term(ctx, g) for g in fields])
    h = entropy(ctx)
    tail = series.tail_bound * _log_jac_spread(ctx, h)
    return GateauxBatch(traces + resp, tail, series.terms_used, series.eta_used)


@dataclass(frozen=True)
class GateauxValues:
    """Both forms of DH(f) g. Iterates as (primal, dual)."""

    primal: float
    dual: float
    tail_primal: float
    tail_dual: float
    terms_used: int

    def __iter__(self):
        yield self.primal
        yield self.dual


def fine_grid_size(n: int, band_u: int, band_psi: int, stretch: float, steps: int) -> int:
    """Smallest power of two >= max(4n, 2 (band_u + stretch^steps band_psi))."""
    need = max(4 * n, 2 * (band_u + stretch ** steps * band_psi))
    return 1 << max(0, math.ceil(math.log2(need)))


def _dual_sum(ctx: TransferContext, u0: np.ndarray, rho: np.ndarray, terms: int) -> tuple[float, float]:
    """sum_{n < terms} int u0 (log Jf o f^n) dx and a round-off allowance for it.

    Terms are integrated by trapezoid quadrature on a grid fine enough for the
    band limit of u0 times log Jf o f^n, with the orbit computed by iterating
    the exact map. Once the fine grid would exceed FINE_POINT_CAP points, the
    remaining powers of L are applied to u0 instead:
    int u0 (psi o f^n) = int (L^(n-m) u0) (psi o f^m).
    """
    f, n, dim = ctx.map, ctx.n, ctx.dim
    if terms == 0 or not np.any(u0):
        return 0.0, 0.0
    band_u = fourier.bandwidth(u0, 1e-15)
    psi_probe = mm.log_jacobian(f, fourier.nodes(dim, 4 * n).reshape(-1, dim)).reshape((4 * n,) * dim)
    band_psi = fourier.bandwidth(psi_probe - psi_probe.mean(), 1e-15) if np.ptp(psi_probe) > 0 else 0
    stretch = mm.max_stretch(f, n)
    m = 0
    while m + 1 < terms and fine_grid_size(n, band_u, band_psi, stretch, m + 1) ** dim <= FINE_POINT_CAP:
        m += 1
    nf = fine_grid_size(n, band_u, band_psi, stretch, m)
    u_fine = fourier.resample(u0, nf)
    pts = fourier.nodes(dim, nf).reshape(-1, dim)
    grad_psi = float(np.abs(np.gradient(psi_probe, 1.0 / (4 * n), axis=0)).max()) if band_psi else 0.0
    u_l1 = float(np.mean(np.abs(u0)))
    total = 0.0
    allowance = 0.0
    psi_m = None
    for k in range(m + 1):
        psi = mm.log_jacobian(f, pts).reshape((nf,) * dim)
        total += float(np.mean(u_fine * psi))
        # orbit round-off grows like stretch^k
        allowance += u_l1 * grad_psi * 4e-16 * stretch ** k
        if k == m:
            psi_m = psi
        else:
            pts = mm.evaluate(f, pts)
    if terms > m + 1:
        psi_coarse = fourier.resample(psi_m, n)
        step = centered_step(ctx, rho)
        v = u0
        for _ in range(terms - m - 1):
            v = step(v)
            total += float(np.mean(v * psi_coarse))
    return total, allowance


def entropy_gateaux(ctx: TransferContext, g: mm.VecField, tol: float = 1e-12,
                    check: bool = True) -> GateauxValues:
    """DH(f) g in primal and dual form with the same truncation index."""
    if g.is_zero:
        return GateauxValues(0.0, 0.0, 0.0, 0.0, 0)
    if g.dim != ctx.dim:
        raise DimMismatch("direction dimension does not match the map")
    rho = srb_density(ctx).values
    eta = gap_estimate(ctx)
    h = entropy(ctx)
    u0 = -transfer_t_derivative(ctx, g, GridField(rho)).values
    u0 = u0 - rho * u0.mean()
    series = contracted_series(centered_step(ctx, rho), u0, eta, tol)
    spread = _log_jac_spread(ctx, h)
    trace = trace_term(ctx, g)
    primal = trace - float(np.mean(series.total * ctx.log_jac))
    tail = series.tail_bound * spread
    dual_sum, allowance = _dual_sum(ctx, u0, rho, series.terms_used)
    dual = trace - dual_sum
    out = GateauxValues(primal, dual, tail, tail + allowance, series.terms_used)
    if check and abs(primal - dual) > FORMS_FACTOR * (out.tail_primal + out.tail_dual) + FORMS_FLOOR:
        raise FormsDisagree(
            f"primal {primal:.15g} and dual {dual:.15g} differ by {abs(primal - dual):.3g}, "
            f"tail bounds {out.tail_primal:.3g} + {out.tail_dual:.3g}")
    return out


def gateaux_fd_check(ctx: TransferContext, g: mm.VecField, h: float = 1e-3,
                     tol: float = 1e-12) -> dict:
    """Central-difference check of DH(f) g at steps h and h/2."""
    if g.is_zero:
        return {"derivative": 0.0, "fd_h": 0.0, "fd_h2": 0.0, "error_h": 0.0, "error_h2": 0.0, "order": None}
    d = entropy_gateaux(ctx, g, tol).primal
    f = ctx.map

    def ent(s):
        return entropy(TransferContext(mm.add_scaled(f, s, g), ctx.n, ctx.margin, seeds=ctx.branch_lifts))

    e = pmap(ent, [h, -h, h / 2, -h / 2])
    fd1 = (e[0] - e[1]) / (2 * h)
    fd2 = (e[2] - e[3]) / h
    err1, err2 = abs(fd1 - d), abs(fd2 - d)
    return {"derivative": d, "fd_h": fd1, "fd_h2": fd2, "error_h": err1, "error_h2": err2,
            "order": _order(err1, err2)}


# gradient ---------------------------------------------------------------------

@dataclass(frozen=True)
class GradientVector:
    field: mm.VecField
    hk_norm: float
    l2_pairing_check: float
    metric: SobolevMetric
    derivatives: dict
    tail_bound: float


def _adjoint_series(ctx: TransferContext, rho: np.ndarray, h: float, eta: float, tol: float):
    """psi = sum_n (L^T restricted)^n (log Jf - H): the adjoint of the response series against log Jf."""
    axes = tuple(range(-ctx.dim, 0))

    def step(p):
        v = ctx.apply_adjoint(p)
        return v - np.mean(rho * v, axis=axes, keepdims=True)

    # composition with f is nearly isometric until spectral truncation bites,
    # so the terms plateau for ~log N / log(stretch) steps before the
    # eigenvalue rate takes over; only the stopping rule applies here
    return contracted_series(step, ctx.log_jac - h, eta, tol, check_rate=False)


def basis_derivatives(ctx: TransferContext, cutoff: int, tol: float = 1e-12) -> tuple[dict, float]:
    """DH(f) e for every L2-orthonormal basis field e with |m|_inf <= cutoff.

    Uses the adjoint of the response series, so one backward sum serves every
    direction: int xi(g) log Jf = sum_k int g_k rho L^T(d_k psi), plus the trace
    term int rho (Df^{-1})_{jk} d_j g_k. Both integrands are then read off
    from FFT coefficients.
    """
    dim, n = ctx.dim, ctx.n
    rho = srb_density(ctx).values
    eta = gap_estimate(ctx)
    h = entropy(ctx)
    series = _adjoint_series(ctx, rho, h, eta, tol)
    psi = series.total
    grid = (n,) * dim
    inv = _inverse_jacobian(ctx).reshape(grid + (dim, dim))
    size = n ** dim
    axes = tuple(range(dim))
    out = {}
    for k in range(dim):
        orders = [0] * dim
        orders[k] = 1
        b = rho * ctx.apply_adjoint(fourier.derivative(psi, orders))
        b_hat = np.fft.fftn(b, axes=axes) / size
        c_hat = [np.fft.fftn(rho * inv[..., j, k], axes=axes) / size for j in range(dim)]
        for m in mm.canonical_freqs(dim, cutoff):
            idx = tuple(mi % n for mi in m)
            if not any(m):
                out[(k, m, "cos")] = float(b_hat[idx].real)
                continue
            bm = b_hat[idx]
            rot = sum(2 * math.pi * m[j] * c_hat[j][idx] for j in range(dim))
            r2 = math.sqrt(2.0)
            out[(k, m, "cos")] = r2 * float(bm.real + rot.imag)
            out[(k, m, "sin")] = r2 * float(-bm.imag + rot.real)
    tail = series.tail_bound * float(np.mean(np.abs(rho))) * 2 * math.pi * cutoff
    return out, tail


def gradient_vector(ctx: TransferContext, metric: SobolevMetric, tol: float = 1e-12,
                    seed: int = 0, samples: int = PAIRING_SAMPLES,
                    pairing_tol: float = PAIRING_TOL) -> GradientVector:
    """Riesz representer of DH(f) in the H^k metric, truncated at the metric cutoff."""
    if metric.dim != ctx.dim:
        raise DimMismatch("metric dimension does not match the map")
    derivs, tail = basis_derivatives(ctx, metric.cutoff, tol)
    terms = []
    for (comp, m, kind), d in derivs.items():
        c = d / metric.weights[m]
        if not any(m):
            terms.append((comp, m, c, 0.0))
        elif kind == "cos":
            terms.append((comp, m, math.sqrt(2.0) * c, 0.0))
        else:
            terms.append((comp, m, 0.0, math.sqrt(2.0) * c))
    grad = mm.VecField.from_terms(ctx.dim, terms)
    labels = basis(ctx.dim, metric.cutoff)
    rng = np.random.default_rng(seed)
    picks = [labels[i] for i in rng.choice(len(labels), size=min(samples, len(labels)), replace=False)]
    fields = [basis_field(ctx.dim, lab) for lab in picks]
    direct = gateaux_primal_batch(ctx, fields, tol).values
    paired = np.array([sobolev_inner(metric, grad, e) for e in fields])
    residual = float(np.abs(paired - direct).max()) if len(fields) else 0.0
    if residual > pairing_tol:
        raise PairingCheckFailure(f"<grad H, e>_Hk differs from DH(e) by {residual:.3g} (limit {pairing_tol:g})")
    return GradientVector(grad, sobolev_norm(metric, grad), residual, metric, derivs, tail)
