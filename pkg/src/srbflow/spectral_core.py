"""Finite-dimensional lab for spectral-gap perturbation theory.

A matrix L with a (1, eta) spectral gap splits as L = P + N, P the rank-one
spectral projection at eigenvalue 1 (computed as a contour integral of the
resolvent) and N with spectral radius <= eta. For parametrised families
L_t = base + sum_i t_i D_i the module evaluates closed forms for the first and
mixed second t-derivatives of P.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GapViolation, QuadratureDivergence, SingularResolvent

CONTOUR_NODES = 64
CONTOUR_TOL = 1e-12
MAX_CONTOUR_NODES = 8192
COND_LIMIT = 1e13


@dataclass(frozen=True, eq=False)
class GappedOperator:
    matrix: np.ndarray
    eta: float
    proj: np.ndarray
    nil: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def eigenvalue(self) -> float:
        """The isolated eigenvalue enclosed by the contour (1 for pinned families)."""
        return float(np.trace(self.matrix @ self.proj))

    def invariant_residuals(self) -> dict:
        p, n = self.proj, self.nil
        sv = np.linalg.svd(p, compute_uv=False)
        return {
            "idempotent": float(np.abs(p @ p - p).max()),
            "commute": float(np.abs(p @ n).max() + np.abs(n @ p).max()),
            "sum": float(np.abs(self.matrix - p - n).max()),
            "rank_ratio": float(sv[1] / sv[0]) if len(sv) > 1 else 0.0,
            "nil_radius": float(np.abs(np.linalg.eigvals(n)).max()),
        }


@dataclass(frozen=True, eq=False)
class OperatorFamily:
    """L_t = base + sum_i t_i directions[i] (+ optional curvature terms).

    ``second`` maps an index pair (i, j), i <= j, to the constant matrix
    d_i d_j L; absent pairs are zero, which is exact for affine families.
    """

    base: np.ndarray
    directions: tuple
    box: tuple
    eta: float
    second: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        object.__setattr__(self, "directions", tuple(np.asarray(d, dtype=float) for d in self.directions))
        object.__setattr__(self, "box", tuple(tuple(map(float, b)) for b in self.box))
        if len(self.box) != len(self.directions):
            raise ValueError("one parameter interval per direction is required")

    @property
    def n_params(self) -> int:
        return len(self.directions)

    def _curv(self, i: int, j: int):
        return self.second.get((min(i, j), max(i, j)))

    def at(self, t: Sequence[float]) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.base.copy()
        for ti, d in zip(t, self.directions):
            out += ti * d
        for (i, j), s in self.second.items():
            out += (t[i] * t[j] * (0.5 if i == j else 1.0)) * np.asarray(s)
        return out

    def d_dt(self, t, i: int) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = self.directions[i].copy()
        for j in range(self.n_params):
            s = self._curv(i, j)
            if s is not None:
                out += t[j] * np.asarray(s)
        return out

    def d2_dt(self, i: int, j: int) -> np.ndarray:
        s = self._curv(i, j)
        return np.zeros_like(self.base) if s is None else np.asarray(s, dtype=float)

    def certify(self, samples: int = 5) -> None:
        """Check the gap at a grid of sample points in the parameter box."""
        axes = [np.linspace(lo, hi, samples) for lo, hi in self.box]
        for t in np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.n_params):
            check_gap(self.at(t), self.eta)


def check_gap(mat: np.ndarray, eta: float) -> None:
    """Raise GapViolation unless L has one simple eigenvalue near 1 and the rest in |z| <= eta.

    "Near 1" means within a quarter of the contour diameter, so the eigenvalue
    sits well inside the contour. Families that move the eigenvalue off 1 are
    accepted so that finite-difference oracles can be evaluated around t = 0.
    """
    ev = np.linalg.eigvals(mat)
    near_one = np.abs(ev - 1.0) < 0.5 * (1.0 - eta)
    if near_one.sum() != 1:
        raise GapViolation(f"eigenvalue 1 is not simple or missing ({near_one.sum()} eigenvalues near 1)")
    if abs(ev[near_one][0] - 1.0) > 0.25 * (1.0 - eta):
        raise GapViolation(f"leading eigenvalue {ev[near_one][0]} is too far from 1")
    rest = np.abs(ev[~near_one])
    if rest.size and rest.max() > eta + 1e-12:
        raise GapViolation(f"eigenvalue of modulus {rest.max():.6g} outside the eta={eta} disc")


def resolvent(mat: np.ndarray, z: complex) -> np.ndarray:
    """(z I - L)^{-1}."""
    a = z * np.eye(mat.shape[0]) - mat
    if np.linalg.cond(a) > COND_LIMIT:
        raise SingularResolvent(f"z={z} is (numerically) in the spectrum")
    return np.linalg.solve(a, np.eye(mat.shape[0], dtype=complex))


def _contour_sum(mat: np.ndarray, radius: float, m: int, offset: int, stride: int) -> np.ndarray:
    """sum over nodes k = offset, offset+stride, ... < m of r e^{i theta_k} R(1 + r e^{i theta_k})."""
    dim = mat.shape[0]
    theta = 2 * np.pi * np.arange(offset, m, stride) / m
    w = radius * np.exp(1j * theta)
    a = (1.0 + w)[:, None, None] * np.eye(dim) - mat[None]
    res = np.linalg.solve(a, np.broadcast_to(np.eye(dim, dtype=complex), a.shape))
    return np.tensordot(w, res, axes=(0, 0))


def spectral_split(mat, eta: float, nodes: int = CONTOUR_NODES, tol: float = CONTOUR_TOL) -> GappedOperator:
    """P by trapezoid quadrature of (1/2 pi i) contour-integral R(z) dz, N = L - P.

    The contour is the circle of radius (1 - eta)/2 about 1; node count doubles
    until successive projections differ by less than ``tol``.
    """
    mat = np.asarray(mat, dtype=float)
    check_gap(mat, eta)
    radius = 0.5 * (1.0 - eta)
    m = nodes
    total = _contour_sum(mat, radius, m, 0, 1)
    proj = (total / m).real
    while True:
        if 2 * m > MAX_CONTOUR_NODES:
            raise QuadratureDivergence(f"contour quadrature not converged at {m} nodes")
        # the 2m-point rule reuses the m existing nodes (odd indices are new)
        total = total + _contour_sum(mat, radius, 2 * m, 1, 2)
        m *= 2
        new = (total / m).real
        diff = np.abs(new - proj).max()
        proj = new
        if diff < tol:
            break
    return GappedOperator(mat, float(eta), proj, mat - proj)


def q_operators(g: GappedOperator) -> tuple[np.ndarray, np.ndarray]:
    """Q0 = (I - N)^{-1}(I - P), Q1 = -(I - N)^{-2}(I - P).

    I is scaled by the enclosed eigenvalue, which is exactly 1 for families
    with a pinned leading eigenvalue.
    """
    eye = np.eye(g.dim)
    a = g.eigenvalue * eye - g.nil
    if np.linalg.cond(a) > COND_LIMIT:
        raise SingularResolvent("I - N is numerically singular")
    q0 = np.linalg.solve(a, eye - g.proj)
    q1 = -np.linalg.solve(a, q0)
    return q0, q1


def _split_at(fam: OperatorFamily, t) -> tuple[GappedOperator, np.ndarray, np.ndarray]:
    g = spectral_split(fam.at(t), fam.eta)
    q0, q1 = q_operators(g)
    return g, q0, q1


def projection_derivative(fam: OperatorFamily, t, i: int) -> np.ndarray:
    """d_i P_t = P (d_i L) Q0 + Q0 (d_i L) P."""
    g, q0, _ = _split_at(fam, t)
    d = fam.d_dt(t, i)
    p = g.proj
    return p @ d @ q0 + q0 @ d @ p


def projection_derivative_times_p(fam: OperatorFamily, t, i: int, series_len: int) -> np.ndarray:
    """(d_i P) P as the truncated series sum_{n < series_len} N^n (D - P D) P."""
    g, _, _ = _split_at(fam, t)
    p, nil = g.proj, g.nil
    d = fam.d_dt(t, i)
    term = (d - p @ d) @ p
    out = np.zeros_like(term)
    for _ in range(series_len):
        out += term
        term = nil @ term
    return out


def mixed_projection_derivative(fam: OperatorFamily, t, i: int, j: int) -> np.ndarray:
    """(d_i d_j P) P from P, Q0, Q1 and the first and second t-derivatives of L."""
    g, q0, q1 = _split_at(fam, t)
    p = g.proj
    di, dj, dij = fam.d_dt(t, i), fam.d_dt(t, j), fam.d2_dt(i, j)

    def ordered(a, b):
        return q0 @ a @ q0 @ b @ p + p @ a @ q1 @ b @ p + q1 @ a @ p @ b @ p

    return ordered(di, dj) + ordered(dj, di) + q0 @ dij @ p


def mixed_projection_full(fam: OperatorFamily, t, i: int, j: int) -> np.ndarray:
    """d_i d_j P itself (residue of R dL R dL R + R dL R dL R + R d2L R at z = 1)."""
    g, q0, q1 = _split_at(fam, t)
    p = g.proj
    di, dj, dij = fam.d_dt(t, i), fam.d_dt(t, j), fam.d2_dt(i, j)

    def ordered(a, b):
        return (p @ a @ q0 @ b @ q0 + q0 @ a @ p @ b @ q0 + q0 @ a @ q0 @ b @ p
                + p @ a @ p @ b @ q1 + p @ a @ q1 @ b @ p + q1 @ a @ p @ b @ p)

    return ordered(di, dj) + ordered(dj, di) + p @ dij @ q0 + q0 @ dij @ p


# random constructions used by the lab suite and the CLI ----------------------

def random_gapped(rng: np.random.Generator, dim: int, eta: float = 0.5, cond_max: float = 50.0):
    """V diag(1, lambda_2, ...) V^{-1} with |lambda_k| <= 0.8 eta and cond(V) <= cond_max."""
    while True:
        v = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
        if np.linalg.cond(v) <= cond_max:
            break
    lam = np.empty(dim)
    lam[0] = 1.0
    lam[1:] = rng.uniform(-0.8 * eta, 0.8 * eta, dim - 1)
    return v @ np.diag(lam) @ np.linalg.inv(v), v, lam


def random_stochastic_family(rng: np.random.Generator, dim: int, n_params: int = 2,
                             eta: float = 0.6, radius: float = 0.3, step: float = 0.05) -> OperatorFamily:
    """Affine family whose matrices all have column sums 1 (eigenvalue 1 pinned).

    base = r 1^T + Pi X Pi with Pi = I - r 1^T, spectral radius of Pi X Pi
    scaled to ``radius``; directions Pi Y have zero column sums and are scaled
    so the gap survives on the parameter box [-step, step]^n_params.
    """
    ones = np.ones(dim)
    r = rng.uniform(0.5, 1.5, dim)
    r /= r.sum()
    pi = np.eye(dim) - np.outer(r, ones)
    x = pi @ rng.standard_normal((dim, dim)) @ pi
    x *= radius / max(np.abs(np.linalg.eigvals(x)).max(), 1e-12)
    base = np.outer(r, ones) + x
    dirs = []
    for _ in range(n_params):
        y = pi @ rng.standard_normal((dim, dim))
        dirs.append(y / np.linalg.norm(y, 2))
    fam = OperatorFamily(base, tuple(dirs), tuple((-step, step) for _ in range(n_params)), eta)
    return fam
