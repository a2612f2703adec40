"""Oracle and invariant suites behind the ``verify`` and ``spectral-lab`` commands.

Each suite returns a SuiteResult carrying its largest residual and the limit
it was held to, so the CLI can print a table or JSON.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import map_model as mm
from . import spectral_core as sc
from .entropy_gradient import SobolevMetric, entropy, entropy_gateaux, gateaux_fd_check, gradient_vector
from .errors import SrbFlowError
from .linear_response import lipschitz_probe, response_density, response_fd_check, second_order_probe
from .transfer_op import GridField, TransferContext, duality_residual, gap_estimate, srb_density


@dataclass
class SuiteResult:
    name: str
    passed: bool
    max_residual: float
    limit: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "max_residual": self.max_residual,
                "limit": self.limit, "seconds": round(self.seconds, 3), "detail": self.detail}


def _timed(name, fn) -> SuiteResult:
    start = time.perf_counter()
    try:
        res = fn()
    except SrbFlowError as exc:
        res = SuiteResult(name, False, math.inf, 0.0, {"error": f"{type(exc).__name__}: {exc}"})
    res.name = name
    res.seconds = time.perf_counter() - start
    return res


def random_trig(rng: np.random.Generator, dim: int, n: int, degree: int = 8) -> GridField:
    """Random real trig polynomial of degree <= ``degree`` sampled on the n-grid."""
    g = mm.VecField.random(dim, degree, rng, decay=0.0)
    return GridField(g.on_grid(n)[0])


# transfer operator -----------------------------------------------------------

def duality_suite(f: mm.ExpandingMap, n: int, rng: np.random.Generator, pairs: int = 100,
                  limit: float = 1e-10) -> SuiteResult:
    ctx = TransferContext(f, n)
    worst = 0.0
    for _ in range(pairs):
        phi = random_trig(rng, f.dim, n)
        psi = random_trig(rng, f.dim, n)
        worst = max(worst, duality_residual(ctx, phi, psi))
    return SuiteResult("duality", worst < limit, worst, limit, {"pairs": pairs, "grid_size": n})


def density_suite(ctx: TransferContext, tol: float, limit: float = 1e-10) -> SuiteResult:
    rho = srb_density(ctx, tol)
    fixed = float(np.abs(ctx.apply(rho.values) - rho.values).max())
    integral = abs(rho.integral() - 1.0)
    worst = max(fixed, integral)
    return SuiteResult("density", worst < limit and rho.values.min() >= 0, worst, limit,
                       {"fixed_point_residual": fixed, "integral_error": integral, "min": float(rho.values.min()),
                        "eta_hat": gap_estimate(ctx)})


def reference_suite(limit: float = 1e-12) -> SuiteResult:
    """Linear maps: rho = 1 and H = log|det A|."""
    detail = {}
    worst = 0.0
    for name, a, lim in (("doubling", [[2]], limit), ("tripling", [[3]], limit),
                         ("diag22", [[2, 0], [0, 2]], 1e-10)):
        ctx = TransferContext(mm.ExpandingMap.create(a))
        rho = srb_density(ctx).values
        err = max(float(np.abs(rho - 1).max()), abs(entropy(ctx) - math.log(abs(np.linalg.det(np.array(a))))))
        detail[name] = err
        worst = max(worst, err / lim * limit)
    return SuiteResult("linear_reference", worst < limit, worst, limit, detail)


# response and entropy ----------------------------------------------------------

def unit_sine(dim: int) -> mm.VecField:
    return mm.VecField.sine(dim)


def response_suite(ctx: TransferContext, g: mm.VecField, h: float, tol: float,
                   limit: float = 1e-4, order_range=(1.7, 2.3)) -> SuiteResult:
    res = response_density(ctx, g, tol)
    mean = abs(res.xi.integral())
    e1, e2, order = response_fd_check(ctx, g, h, tol)
    # with a tiny error both differences sit at round-off and the order is noise
    order_ok = order is None or e1 < 1e-9 or order_range[0] <= order <= order_range[1]
    ok = e1 < limit and mean < 1e-11 and order_ok
    return SuiteResult("linear_response", ok, e1, limit,
                       {"error_h": e1, "error_h2": e2, "order": order, "xi_mean": mean,
                        "terms_used": res.terms_used, "tail_bound": res.tail_bound, "eta_hat": res.eta_used})


def gateaux_suite(ctx: TransferContext, g: mm.VecField, h: float, tol: float, limit: float = 1e-5) -> SuiteResult:
    """Both forms against the Richardson-extrapolated central difference (O(h^4))."""
    vals = entropy_gateaux(ctx, g, tol)
    fd = gateaux_fd_check(ctx, g, h, tol)
    extrapolated = (4 * fd["fd_h2"] - fd["fd_h"]) / 3
    forms = abs(vals.primal - vals.dual)
    worst = max(abs(extrapolated - vals.primal), abs(extrapolated - vals.dual))
    return SuiteResult("entropy_derivative", worst < limit, worst, limit,
                       {"primal": vals.primal, "dual": vals.dual, "forms_gap": forms,
                        "tail_bounds": vals.tail_primal + vals.tail_dual, "fd_h": fd["fd_h"],
                        "fd_extrapolated": extrapolated, "order": fd["order"]})


def gradient_suite(ctx: TransferContext, metric: SobolevMetric, tol: float, seed: int,
                   limit: float = 1e-9) -> SuiteResult:
    grad = gradient_vector(ctx, metric, tol, seed=seed)
    return SuiteResult("gradient_riesz", grad.l2_pairing_check < limit, grad.l2_pairing_check, limit,
                       {"hk_norm": grad.hk_norm, "k": metric.k, "cutoff": metric.cutoff})


def upper_bound_suite(ctx: TransferContext, limit: float = 1e-6) -> SuiteResult:
    h = entropy(ctx)
    top = math.log(ctx.map.degree)
    excess = h - top
    return SuiteResult("entropy_upper_bound", excess <= limit, max(excess, 0.0), limit,
                       {"entropy": h, "log_det": top})


def second_order_suite(ctx: TransferContext, rng: np.random.Generator, pairs: int = 10,
                       h: float = 1e-3, tol: float = 1e-12, spread: float = 10.0) -> SuiteResult:
    """Bounded ratios: all finite and within ``spread`` times their median."""
    ratios = []
    for _ in range(pairs):
        g1 = mm.VecField.random(ctx.dim, 2, rng, scale=1.0, decay=1.0)
        g2 = mm.VecField.random(ctx.dim, 2, rng, scale=1.0, decay=1.0)
        ratios.append(second_order_probe(ctx, g1, g2, h, tol))
    ratios = np.array(ratios)
    med = float(np.median(ratios))
    worst = float(ratios.max() / med) if med > 0 else math.inf
    ok = bool(np.all(np.isfinite(ratios))) and worst <= spread
    return SuiteResult("second_order_bound", ok, worst, spread,
                       {"ratios": ratios.tolist(), "median": med})


def lipschitz_suite(f: mm.ExpandingMap, n: int, rng: np.random.Generator, samples: int = 10,
                    radii=(1e-3, 1e-4), factor: float = 3.0, tol: float = 1e-12) -> SuiteResult:
    gs = [mm.VecField.random(f.dim, 3, rng) for _ in range(samples)]
    direction = unit_sine(f.dim)
    ratios = [lipschitz_probe(f, mm.add_scaled(f, r, direction), gs, n, tol) for r in radii]
    spread = max(ratios) / min(ratios) if min(ratios) > 0 else math.inf
    return SuiteResult("lipschitz", spread < factor, spread, factor,
                       {"radii": list(radii), "ratios": ratios})


# spectral lab ------------------------------------------------------------------

def _central(fn, h):
    return (fn(h) - fn(-h)) / (2 * h)


def spectral_lab(seed: int = 0, matrices: int = 50, families: int = 20, max_dim: int = 16,
                 invariant_limit: float = 1e-10, derivative_limit: float = 1e-6,
                 mixed_limit: float = 1e-4) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    inv_worst, eig_worst, dp_worst, ppp_worst = 0.0, 0.0, 0.0, 0.0
    h = 1e-5
    for _ in range(matrices):
        dim = int(rng.integers(2, max_dim + 1))
        eta = 0.5
        mat, v, lam = sc.random_gapped(rng, dim, eta)
        g = sc.spectral_split(mat, eta)
        r = g.invariant_residuals()
        inv_worst = max(inv_worst, r["idempotent"], r["commute"], r["rank_ratio"], r["sum"])
        vinv = np.linalg.inv(v)
        p_eig = np.outer(v[:, 0], vinv[0])
        eig_worst = max(eig_worst, float(np.abs(g.proj - p_eig).max()))
        d = rng.standard_normal((dim, dim))
        d *= 0.1 / np.linalg.norm(d, 2)
        fam = sc.OperatorFamily(mat, (d,), ((-0.01, 0.01),), eta)
        fd = _central(lambda s: sc.spectral_split(fam.at([s]), eta).proj, h)
        dp_worst = max(dp_worst, float(np.abs(fd - sc.projection_derivative(fam, [0.0], 0)).max()))
        ppp = sc.projection_derivative_times_p(fam, [0.0], 0, series_len=120)
        ppp_worst = max(ppp_worst, float(np.abs(fd @ g.proj - ppp).max()))
    mixed_worst, mixed_full_worst = 0.0, 0.0
    hm = 1e-3
    for _ in range(families):
        dim = int(rng.integers(3, max_dim + 1))
        fam = sc.random_stochastic_family(rng, dim)

        def p_at(a, b):
            return sc.spectral_split(fam.at([a, b]), fam.eta).proj

        mixed = (p_at(hm, hm) - p_at(hm, -hm) - p_at(-hm, hm) + p_at(-hm, -hm)) / (4 * hm * hm)
        p0 = p_at(0.0, 0.0)
        mixed_worst = max(mixed_worst, float(np.abs(mixed @ p0 - sc.mixed_projection_derivative(fam, [0, 0], 0, 1)).max()))
        mixed_full_worst = max(mixed_full_worst,
                               float(np.abs(mixed - sc.mixed_projection_full(fam, [0, 0], 0, 1)).max()))
    return [
        SuiteResult("projection_invariants", inv_worst < invariant_limit, inv_worst, invariant_limit,
                    {"matrices": matrices}),
        SuiteResult("contour_vs_eigendecomposition", eig_worst < invariant_limit, eig_worst, invariant_limit,
                    {"matrices": matrices}),
        SuiteResult("projection_derivative", dp_worst < derivative_limit, dp_worst, derivative_limit,
                    {"step": h}),
        SuiteResult("projection_derivative_times_p", ppp_worst < derivative_limit, ppp_worst, derivative_limit,
                    {"step": h}),
        SuiteResult("mixed_projection_derivative", mixed_worst < mixed_limit, mixed_worst, mixed_limit,
                    {"families": families, "step": hm, "full_formula_residual": mixed_full_worst}),
    ]


def run_spectral_lab(seed: int = 0) -> list[SuiteResult]:
    start = time.perf_counter()
    try:
        out = spectral_lab(seed)
    except SrbFlowError as exc:
        out = [SuiteResult("spectral_lab", False, math.inf, 0.0, {"error": f"{type(exc).__name__}: {exc}"})]
    spent = time.perf_counter() - start
    for r in out:
        r.seconds = spent / len(out)
    return out


# umbrella ------------------------------------------------------------------------

def run_all(cfg) -> list[SuiteResult]:
    """Every suite, on the configured map where a map is involved."""
    f, num = cfg.map, cfg.numerics
    n, tol, h = num.grid_size, num.tol, num.fd_step
    rng = np.random.default_rng(cfg.seed)
    results = [
        _timed("duality", lambda: duality_suite(f, n, rng)),
        _timed("linear_reference", reference_suite),
    ]
    try:
        ctx = TransferContext(f, n, num.margin)
    except SrbFlowError as exc:
        results.append(SuiteResult("certification", False, math.inf, 0.0, {"error": f"{type(exc).__name__}: {exc}"}))
        return results + run_spectral_lab(cfg.seed)
    g = unit_sine(f.dim)
    results += [
        _timed("density", lambda: density_suite(ctx, tol)),
        _timed("entropy_upper_bound", lambda: upper_bound_suite(ctx)),
        _timed("linear_response", lambda: response_suite(ctx, g, h, tol)),
        _timed("entropy_derivative", lambda: gateaux_suite(ctx, g, h, tol)),
        _timed("gradient_riesz", lambda: gradient_suite(ctx, cfg.metric, tol, cfg.seed)),
        _timed("second_order_bound", lambda: second_order_suite(ctx, rng, tol=tol)),
        _timed("lipschitz", lambda: lipschitz_suite(f, n, rng, tol=tol)),
    ]
    return results + run_spectral_lab(cfg.seed)


__all__ = ["SuiteResult", "run_all", "run_spectral_lab", "spectral_lab"]
