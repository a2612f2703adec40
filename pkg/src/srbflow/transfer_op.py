"""Collocation discretization of the transfer operator of an expanding map.

(L phi)(x) = sum over preimages y of x of phi(y) / Jf(y). Values at off-grid
preimages come from trigonometric interpolation, so for band-limited phi the
discrete operator reproduces the exact one at the nodes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from . import fourier
from . import map_model as mm
from .errors import GapEstimateUnstable, GridMismatch, NegativeDensity, NoConvergence

DENSE_LIMIT = 4096  # grid nodes; above this the operator is applied matrix-free


@dataclass(frozen=True, eq=False)
class GridField:
    """Real 1-periodic function sampled at x_j = j / N (values shape (N,)*dim)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2) or len(set(v.shape)) != 1:
            raise GridMismatch(f"grid values must be (N,) or (N, N), got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_function(cls, fn, dim: int, n: int) -> "GridField":
        pts = fourier.nodes(dim, n)
        return cls(fn(pts))

    @classmethod
    def constant(cls, c: float, dim: int, n: int) -> "GridField":
        return cls(np.full((n,) * dim, float(c)))

    def integral(self) -> float:
        return float(self.values.mean())

    def sup(self) -> float:
        return float(np.abs(self.values).max())

    def derivative(self, orders) -> "GridField":
        return GridField(fourier.derivative(self.values, orders))

    def at(self, points) -> np.ndarray:
        return fourier.interpolate(self.values, points)


class TransferContext:
    """Transfer operator of one map on one grid, with its inverse-branch table.

    Immutable after construction except for the cached density and the
    set-once gap estimate.
    """

    def __init__(self, f: mm.ExpandingMap, n: int | None = None, margin: float = mm.DEFAULT_MARGIN,
                 seeds: np.ndarray | None = None, certify: bool = True):
        self.map = f
        self.n = n or mm.default_grid_size(f.dim)
        self.dim = f.dim
        self.margin = margin
        self.mu_min = mm.certify_expanding(f, self.n, margin) if certify else mm.expansion_margin(f, self.n)[0]
        self.nodes = fourier.nodes(self.dim, self.n).reshape(-1, self.dim)
        lifted = self._lifted_branches(seeds)
        self.branch_lifts = lifted
        self.branches = np.mod(lifted, 1.0)
        jac = np.abs(np.linalg.det(mm.jacobian(f, self.branches)))
        self.weights = 1.0 / jac
        self.log_jac = mm.log_jacobian(f, self.nodes).reshape((self.n,) * self.dim)
        self._matrix = self._assemble() if self.n ** self.dim <= DENSE_LIMIT else None
        self._lock = threading.Lock()
        self._rho: dict[float, tuple[GridField, int]] = {}
        self._eta_hat: float | None = None

    def _lifted_branches(self, seeds):
        f = self.map
        y = mm.branch_points(f, self.nodes, seeds=seeds)
        # recover the lifts so perturbed maps can be seeded branch-by-branch
        q = mm.coset_representatives(f.linear)
        target = self.nodes[:, None, :] + q[None, :, :]
        shift = np.round(target - mm.lift(f, y))
        return y + shift @ np.linalg.inv(f.A).T

    def perturbed(self, g: mm.VecField, t: float, certify: bool = True) -> "TransferContext":
        """Context for f + t g, with Newton seeded from this context's branches."""
        return TransferContext(mm.add_scaled(self.map, t, g), self.n, self.margin,
                               seeds=self.branch_lifts, certify=certify)

    def _assemble(self) -> np.ndarray:
        n, dim = self.n, self.dim
        size = n ** dim
        mat = np.zeros((size, size))
        for b in range(self.branches.shape[1]):
            y = self.branches[:, b, :]
            w = self.weights[:, b]
            if dim == 1:
                mat += w[:, None] * fourier.interp_matrix(y[:, 0], n)
            else:
                e1 = fourier.interp_matrix(y[:, 0], n)
                e2 = fourier.interp_matrix(y[:, 1], n)
                mat += (w[:, None, None] * e1[:, :, None] * e2[:, None, :]).reshape(size, size)
        return mat

    @property
    def matrix(self) -> np.ndarray:
        """Dense collocation matrix (assembled on demand for large grids)."""
        if self._matrix is None:
            self._matrix = self._assemble()
        return self._matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Apply L to grid values of shape (..., N, ..., N); batch axes lead."""
        grid = (self.n,) * self.dim
        if values.shape[-self.dim:] != grid:
            raise GridMismatch(f"field grid {values.shape[-self.dim:]} does not match context grid {grid}")
        batch = values.shape[:-self.dim]
        flat = values.reshape(-1, self.n ** self.dim)
        if self._matrix is not None:
            out = flat @ self._matrix.T
        else:
            out = np.stack([self._apply_matrix_free(v.reshape(grid)) for v in flat])
        return out.reshape(batch + grid)

    def _apply_matrix_free(self, phi: np.ndarray) -> np.ndarray:
        out = np.zeros(self.nodes.shape[0])
        for b in range(self.branches.shape[1]):
            out += self.weights[:, b] * fourier.interpolate(phi, self.branches[:, b, :])
        return out

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        """Apply the transpose of L (adjoint for the grid-mean pairing); same layout as ``apply``."""
        grid = (self.n,) * self.dim
        if values.shape[-self.dim:] != grid:
            raise GridMismatch(f"field grid {values.shape[-self.dim:]} does not match context grid {grid}")
        batch = values.shape[:-self.dim]
        flat = values.reshape(-1, self.n ** self.dim)
        if self._matrix is not None:
            out = flat @ self._matrix
        else:
            out = np.stack([self._adjoint_matrix_free(v) for v in flat])
        return out.reshape(batch + grid)

    def _adjoint_matrix_free(self, psi: np.ndarray) -> np.ndarray:
        n = self.n
        out = np.zeros((n,) * self.dim)
        chunk = 4096
        for b in range(self.branches.shape[1]):
            wpsi = self.weights[:, b] * psi
            for s in range(0, wpsi.size, chunk):
                y = self.branches[s:s + chunk, b, :]
                e1 = fourier.interp_matrix(y[:, 0], n)
                if self.dim == 1:
                    out += e1.T @ wpsi[s:s + chunk]
                else:
                    e2 = fourier.interp_matrix(y[:, 1], n)
                    out += np.einsum("pa,p,pb->ab", e1, wpsi[s:s + chunk], e2)
        return out.reshape(-1)

    def check_grid(self, phi: GridField):
        if phi.dim != self.dim or phi.n != self.n:
            raise GridMismatch(f"field on {phi.n}^{phi.dim} grid, context on {self.n}^{self.dim}")

    @property
    def eta_hat(self) -> float | None:
        return self._eta_hat


def transfer_apply(ctx: TransferContext, phi: GridField) -> GridField:
    ctx.check_grid(phi)
    return GridField(ctx.apply(phi.values))


def compose(ctx: TransferContext, psi: GridField) -> GridField:
    """psi o f at the grid nodes, psi evaluated by spectral interpolation."""
    ctx.check_grid(psi)
    img = mm.evaluate(ctx.map, ctx.nodes)
    return GridField(psi.at(img).reshape((ctx.n,) * ctx.dim))


def duality_residual(ctx: TransferContext, phi: GridField, psi: GridField) -> float:
    """|<L phi, psi> - <phi, psi o f>| with grid-mean inner products."""
    left = float(np.mean(transfer_apply(ctx, phi).values * psi.values))
    right = float(np.mean(phi.values * compose(ctx, psi).values))
    return abs(left - right)


def srb_density(ctx: TransferContext, tol: float = 1e-12, max_iter: int = 2000) -> GridField:
    """Invariant density by power iteration from the constant function."""
    with ctx._lock:
        if tol in ctx._rho:
            return ctx._rho[tol][0]
    rho = np.ones((ctx.n,) * ctx.dim)
    for it in range(1, max_iter + 1):
        nxt = ctx.apply(rho)
        diff = np.abs(nxt - rho).max()
        rho = nxt
        if diff < tol:
            break
    else:
        raise NoConvergence(f"power iteration did not reach {tol:g} in {max_iter} iterations")
    rho = rho / rho.mean()
    if rho.min() < 0:
        raise NegativeDensity(f"density minimum {rho.min():.3g} < 0; increase the grid size")
    field_ = GridField(rho)
    with ctx._lock:
        ctx._rho.setdefault(tol, (field_, it))
    return ctx._rho[tol][0]


def density_iterations(ctx: TransferContext, tol: float = 1e-12) -> int:
    srb_density(ctx, tol)
    return ctx._rho[tol][1]


GAP_WINDOW = (10, 30)
GAP_FLOOR = 1e-13


def _gap_ratios(ctx: TransferContext, rho: np.ndarray) -> list[tuple[int, float]]:
    u = np.sin(2 * np.pi * fourier.nodes(ctx.dim, ctx.n)[..., 0])
    u = u - rho * u.mean()
    floor = GAP_FLOOR * np.abs(u).max()
    norms = [np.abs(u).max()]
    ratios = []
    for n in range(1, GAP_WINDOW[1] + 2):
        u = ctx.apply(u) - rho * u.mean()
        norms.append(np.abs(u).max())
        if norms[-1] <= floor:
            break
        ratios.append((n - 1, norms[-1] / norms[-2]))
    return ratios


def gap_estimate(ctx: TransferContext) -> float:
    """Empirical decay rate of L on zero-mean fields, stored in the context.

    Median of successive sup-norm ratios over iterations 10..30. When the
    iterates collapse to round-off before iteration 10 (operators that are
    nearly nilpotent on smooth data, e.g. linear maps), the last few ratios
    above the floor are used instead, and 0 is returned if none remain.
    """
    if ctx._eta_hat is not None:
        return ctx._eta_hat
    rho = srb_density(ctx).values
    ratios = _gap_ratios(ctx, rho)
    lo, hi = GAP_WINDOW
    window = [r for n, r in ratios if lo <= n <= hi]
    if len(window) < 3:
        window = [r for _, r in ratios[-5:]]
    if not window:
        eta = 0.0
    else:
        if max(window) - min(window) > 0.2:
            raise GapEstimateUnstable(f"decay ratios vary over [{min(window):.3f}, {max(window):.3f}]")
        eta = float(np.median(window))
    if eta >= 1.0:
        raise GapEstimateUnstable(f"no contraction observed (ratio {eta:.3f})")
    with ctx._lock:
        if ctx._eta_hat is None:
            ctx._eta_hat = eta
    return ctx._eta_hat


def _field_components(g: mm.VecField, n: int) -> np.ndarray:
    return g.on_grid(n)


def transfer_t_derivative(ctx: TransferContext, g: mm.VecField, phi: GridField) -> GridField:
    """(d/dt L_{f+tg}) phi at t = 0, i.e. -div[L(phi g)]."""
    ctx.check_grid(phi)
    if g.dim != ctx.dim:
        raise GridMismatch("direction dimension does not match the context")
    comps = _field_components(g, ctx.n)
    prods = np.stack([fourier.dealiased_product(phi.values, comps[k]) for k in range(ctx.dim)])
    return GridField(-fourier.divergence(ctx.apply(prods)))


def transfer_t_second_derivative(ctx: TransferContext, gi: mm.VecField, gj: mm.VecField,
                                 phi: GridField) -> GridField:
    """sum_{k,l} d^2/dx_k dx_l [L(phi gi^k gj^l)], built to be exactly symmetric in (gi, gj)."""
    ctx.check_grid(phi)
    n, dim = ctx.n, ctx.dim
    fine = lambda v: fourier.resample(v, 2 * n)
    a = [fine(c) for c in _field_components(gi, n)]
    b = [fine(c) for c in _field_components(gj, n)]
    ph = fine(phi.values)
    out = np.zeros((n,) * dim)
    for k in range(dim):
        for l in range(k, dim):
            if k == l:
                inner = a[k] * b[k]
            else:
                inner = a[k] * b[l] + a[l] * b[k]
            prod = fourier.resample(ph * inner, n)
            orders = [0] * dim
            orders[k] += 1
            orders[l] += 1
            out += fourier.derivative(ctx.apply(prod), orders)
    return GridField(out)
