"""Smooth expanding endomorphisms of T^1 and T^2.

A map is stored through its lift F(x) = A x + g(x), with A an integer matrix
whose eigenvalues lie outside the unit circle and g a trigonometric polynomial
vector field (1-periodic in every coordinate).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import fourier
from .errors import BranchNewtonFailure, DegenerateJacobian, DimMismatch, NotExpanding

TWO_PI = 2.0 * np.pi

DEFAULT_MARGIN = 0.05
NEWTON_MAX_ITER = 50
BRANCH_RESIDUAL_TOL = 1e-12
BRANCH_COLLISION_TOL = 1e-9


def default_grid_size(dim: int) -> int:
    return 256 if dim == 1 else 64


def _canonical_freq(freq: Sequence[int]) -> tuple[tuple[int, ...], int]:
    """Return (m, s) with m = s * freq and the first nonzero entry of m positive."""
    freq = tuple(int(v) for v in freq)
    for v in freq:
        if v != 0:
            return (freq, 1) if v > 0 else (tuple(-u for u in freq), -1)
    return freq, 1


@dataclass(frozen=True)
class Mode:
    """One term a*cos(2 pi m.x) + b*sin(2 pi m.x) of component ``component``.

    ``component`` is zero-based here; the JSON schema uses one-based ``i``.
    """

    component: int
    freq: tuple[int, ...]
    cos: float
    sin: float


@dataclass(frozen=True)
class VecField:
    """Trigonometric-polynomial vector field g = (g_1, ..., g_dim) on T^dim.

    Modes are kept in canonical form: frequencies in the half-space whose first
    nonzero entry is positive, one entry per (component, frequency), zero-frequency
    modes carry only a cosine (constant) coefficient.
    """

    dim: int
    modes: tuple[Mode, ...] = ()
    _arrays: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DimMismatch(f"dim must be 1 or 2, got {self.dim}")
        merged: dict[tuple[int, tuple[int, ...]], list[float]] = {}
        for mode in self.modes:
            if not 0 <= mode.component < self.dim:
                raise DimMismatch(f"component {mode.component} out of range for dim {self.dim}")
            if len(mode.freq) != self.dim:
                raise DimMismatch(f"frequency {mode.freq} has wrong length for dim {self.dim}")
            freq, sign = _canonical_freq(mode.freq)
            key = (mode.component, freq)
            acc = merged.setdefault(key, [0.0, 0.0])
            acc[0] += float(mode.cos)
            if any(freq):
                acc[1] += sign * float(mode.sin)
        canon = tuple(
            Mode(c, m, a, b) for (c, m), (a, b) in sorted(merged.items()) if a != 0.0 or b != 0.0
        )
        object.__setattr__(self, "modes", canon)
        object.__setattr__(self, "_arrays", self._coefficient_table(canon) if canon else None)

    def _coefficient_table(self, canon) -> tuple:
        """Complex coefficients c with g_i(x) = Re sum_m c[i, m] exp(2 pi i m.x), m in [-K, K]^dim."""
        k = max(max((abs(v) for v in m.freq), default=0) for m in canon)
        table = np.zeros((self.dim,) + (2 * k + 1,) * self.dim, dtype=complex)
        for m in canon:
            table[(m.component,) + tuple(v + k for v in m.freq)] += m.cos - 1j * m.sin
        return k, table

    # construction -----------------------------------------------------------
    @classmethod
    def zero(cls, dim: int) -> "VecField":
        return cls(dim)

    @classmethod
    def from_terms(cls, dim: int, terms: Iterable[tuple]) -> "VecField":
        """Build from (component, freq, cos, sin) tuples."""
        return cls(dim, tuple(Mode(int(c), tuple(m), float(a), float(b)) for c, m, a, b in terms))

    @classmethod
    def sine(cls, dim: int = 1, amplitude: float = 1.0, component: int = 0, freq=None) -> "VecField":
        freq = (1,) + (0,) * (dim - 1) if freq is None else tuple(freq)
        return cls.from_terms(dim, [(component, freq, 0.0, amplitude)])

    @classmethod
    def random(cls, dim: int, cutoff: int, rng: np.random.Generator, scale: float = 1.0,
               decay: float = 1.0) -> "VecField":
        """Random field over every canonical mode up to ``cutoff``.

        Coefficients are uniform in [-scale, scale] divided by (1 + |m|)^decay.
        """
        terms = []
        for comp in range(dim):
            for m in canonical_freqs(dim, cutoff):
                damp = scale / (1.0 + max(abs(v) for v in m)) ** decay
                a = rng.uniform(-damp, damp)
                b = rng.uniform(-damp, damp) if any(m) else 0.0
                terms.append((comp, m, a, b))
        return cls.from_terms(dim, terms)

    # algebra --------------------------------------------------------------
    def __add__(self, other: "VecField") -> "VecField":
        if not isinstance(other, VecField):
            return NotImplemented
        if other.dim != self.dim:
            raise DimMismatch(f"cannot add fields of dim {self.dim} and {other.dim}")
        return VecField(self.dim, self.modes + other.modes)

    def __mul__(self, s: float) -> "VecField":
        s = float(s)
        return VecField(self.dim, tuple(Mode(m.component, m.freq, s * m.cos, s * m.sin) for m in self.modes))

    __rmul__ = __mul__

    def __neg__(self) -> "VecField":
        return self * -1.0

    def __sub__(self, other: "VecField") -> "VecField":
        return self + (-other)

    def as_dict(self) -> dict:
        return {(m.component, m.freq): (m.cos, m.sin) for m in self.modes}

    @property
    def cutoff(self) -> int:
        if not self.modes:
            return 0
        return max(max((abs(v) for v in m.freq), default=0) for m in self.modes)

    @property
    def is_zero(self) -> bool:
        return not self.modes

    # evaluation -------------------------------------------------------------
    def derivative(self, x, alpha) -> np.ndarray:
        """Partial derivative of multi-index ``alpha`` at points x (..., dim)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.dim,))
        if self._arrays is None:
            return out
        k, table = self._arrays
        freqs = np.arange(-k, k + 1)
        coef = table
        for j, a in enumerate(alpha):
            if a:
                shape = [1] * (self.dim + 1)
                shape[j + 1] = -1
                coef = coef * ((2j * np.pi * freqs) ** a).reshape(shape)
        pts = x.reshape(-1, self.dim)
        waves = [np.exp(2j * np.pi * pts[:, j:j + 1] * freqs) for j in range(self.dim)]
        flat = out.reshape(-1, self.dim)
        for i in range(self.dim):
            if self.dim == 1:
                flat[:, i] = (waves[0] @ coef[i]).real
            else:
                flat[:, i] = np.einsum("pa,pa->p", waves[0] @ coef[i], waves[1]).real
        return out

    def __call__(self, x) -> np.ndarray:
        return self.derivative(x, (0,) * self.dim)

    def jacobian(self, x) -> np.ndarray:
        """Dg(x) with entry [i, j] = d g_i / d x_j; shape (..., dim, dim)."""
        cols = []
        for j in range(self.dim):
            alpha = [0] * self.dim
            alpha[j] = 1
            cols.append(self.derivative(x, alpha))
        return np.stack(cols, axis=-1)

    def on_grid(self, n: int) -> np.ndarray:
        """Components sampled on the n-point grid, shape (dim, n, ..., n)."""
        vals = self(fourier.nodes(self.dim, n))
        return np.moveaxis(vals, -1, 0)

    def c_norm(self, r: int = 3, n: int = 64) -> float:
        """max over components and |alpha| <= r of sup |d^alpha g_i| on the grid."""
        pts = fourier.nodes(self.dim, n)
        best = 0.0
        for alpha in multi_indices(self.dim, r):
            best = max(best, float(np.abs(self.derivative(pts, alpha)).max()))
        return best

    # serialization ----------------------------------------------------------
    def to_json(self) -> list[dict]:
        return [
            {"i": m.component + 1, "m": list(m.freq), "cos": m.cos, "sin": m.sin}
            for m in self.modes
        ]

    @classmethod
    def from_json(cls, dim: int, items: list[dict]) -> "VecField":
        return cls.from_terms(
            dim,
            [(int(d["i"]) - 1, tuple(d["m"]), d.get("cos", 0.0), d.get("sin", 0.0)) for d in items],
        )


def multi_indices(dim: int, order: int):
    """All multi-indices alpha with |alpha| <= order."""
    for alpha in itertools.product(range(order + 1), repeat=dim):
        if sum(alpha) <= order:
            yield alpha


def canonical_freqs(dim: int, cutoff: int) -> list[tuple[int, ...]]:
    """Frequencies with |m|_inf <= cutoff whose first nonzero entry is positive (plus 0)."""
    out = []
    for m in itertools.product(range(-cutoff, cutoff + 1), repeat=dim):
        if _canonical_freq(m)[1] == 1:
            out.append(tuple(m))
    return sorted(out, key=lambda m: (max(abs(v) for v in m), m))


@dataclass(frozen=True)
class ExpandingMap:
    """Torus endomorphism with lift F(x) = A x + g(x)."""

    linear: tuple[tuple[int, ...], ...]
    perturbation: VecField

    def __post_init__(self):
        a = np.array(self.linear, dtype=np.int64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (1, 2):
            raise DimMismatch(f"linear part must be a 1x1 or 2x2 integer matrix, got shape {a.shape}")
        object.__setattr__(self, "linear", tuple(tuple(int(v) for v in row) for row in a))
        if self.perturbation.dim != a.shape[0]:
            raise DimMismatch("perturbation dimension does not match linear part")
        moduli = np.abs(np.linalg.eigvals(a.astype(float)))
        if moduli.min() <= 1.0:
            raise NotExpanding(None, moduli.min(), 1.0)

    @classmethod
    def create(cls, A, modes=()) -> "ExpandingMap":
        a = np.atleast_2d(np.asarray(A, dtype=np.int64))
        dim = a.shape[0]
        g = modes if isinstance(modes, VecField) else VecField.from_terms(dim, modes)
        return cls(tuple(map(tuple, a)), g)

    @property
    def dim(self) -> int:
        return len(self.linear)

    @property
    def A(self) -> np.ndarray:
        return np.array(self.linear, dtype=float)

    @property
    def degree(self) -> int:
        return int(round(abs(np.linalg.det(np.array(self.linear, dtype=float)))))

    @property
    def is_linear(self) -> bool:
        return self.perturbation.is_zero

    def to_json(self) -> dict:
        return {"dim": self.dim, "A": [list(r) for r in self.linear], "modes": self.perturbation.to_json()}

    @classmethod
    def from_json(cls, doc: dict) -> "ExpandingMap":
        dim = int(doc["dim"])
        return cls.create(doc["A"], VecField.from_json(dim, doc.get("modes", [])))


def lift(f: ExpandingMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x @ f.A.T + f.perturbation(x)


def evaluate(f: ExpandingMap, x) -> np.ndarray:
    """f(x) reduced mod 1 componentwise; x has shape (dim,) or (..., dim)."""
    return np.mod(lift(f, x), 1.0)


def jacobian(f: ExpandingMap, x) -> np.ndarray:
    return f.A + f.perturbation.jacobian(x)


def log_jacobian(f: ExpandingMap, x) -> np.ndarray:
    det = np.linalg.det(jacobian(f, x))
    if np.any(np.abs(det) < 1e-12):
        raise DegenerateJacobian("|det Df| < 1e-12 at some evaluation point")
    return np.log(np.abs(det))


def expansion_margin(f: ExpandingMap, grid_size: int | None = None) -> tuple[float, np.ndarray]:
    """(min smallest singular value of Df over the grid, point where attained)."""
    n = grid_size or default_grid_size(f.dim)
    pts = fourier.nodes(f.dim, n).reshape(-1, f.dim)
    sv = np.linalg.svd(jacobian(f, pts), compute_uv=False)[:, -1]
    j = int(np.argmin(sv))
    return float(sv[j]), pts[j]


def max_stretch(f: ExpandingMap, grid_size: int | None = None) -> float:
    n = grid_size or default_grid_size(f.dim)
    pts = fourier.nodes(f.dim, n).reshape(-1, f.dim)
    return float(np.linalg.svd(jacobian(f, pts), compute_uv=False)[:, 0].max())


def certify_expanding(f: ExpandingMap, grid_size: int | None = None, margin: float = DEFAULT_MARGIN) -> float:
    """Return mu_min; raise NotExpanding if it is below 1 + margin."""
    mu, where = expansion_margin(f, grid_size)
    if mu < 1.0 + margin:
        raise NotExpanding(where, mu, 1.0 + margin)
    return mu


def coset_representatives(A) -> np.ndarray:
    """Integer vectors q, one per class of Z^d / A Z^d, with A^{-1} q in [0, 1)^d."""
    a = np.array(A, dtype=np.int64)
    dim = a.shape[0]
    det = int(round(np.linalg.det(a.astype(float))))
    if dim == 1:
        adj = np.array([[1]])
    else:
        adj = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]])
    corners = np.array(list(itertools.product((0, 1), repeat=dim))) @ a.T
    lo, hi = corners.min(axis=0), corners.max(axis=0)
    sign = 1 if det > 0 else -1
    reps = []
    for q in itertools.product(*[range(int(l), int(h) + 1) for l, h in zip(lo, hi)]):
        v = sign * (adj @ np.array(q))
        if np.all(v >= 0) and np.all(v < abs(det)):
            reps.append(q)
    reps = np.array(reps, dtype=float)
    assert len(reps) == abs(det)
    return reps


def _torus_dist(a, b):
    d = np.abs(a - b) % 1.0
    return np.max(np.minimum(d, 1.0 - d), axis=-1)


def branch_points(f: ExpandingMap, x, seeds=None, check=True) -> np.ndarray:
    """All preimages of every point in x; returns shape (P, deg, dim) in [0,1)^dim.

    Newton's method on the lift solves F(y) = x + q for each coset
    representative q, seeded at A^{-1}(x + q) or at ``seeds`` (lifted points from
    a nearby map with the same linear part, same layout as the output).
    """
    x = np.asarray(x, dtype=float).reshape(-1, f.dim)
    q = coset_representatives(f.linear)
    target = x[:, None, :] + q[None, :, :]
    y = target @ np.linalg.inv(f.A).T if seeds is None else np.array(seeds, dtype=float)
    for _ in range(NEWTON_MAX_ITER):
        r = lift(f, y) - target
        step = np.linalg.solve(jacobian(f, y), r[..., None])[..., 0]
        y = y - step
        if np.max(np.abs(step)) < 1e-14:
            break
    else:
        raise BranchNewtonFailure(f"Newton did not converge in {NEWTON_MAX_ITER} iterations")
    y = np.mod(y, 1.0)
    if check:
        resid = _torus_dist(evaluate(f, y), x[:, None, :])
        if resid.max() > BRANCH_RESIDUAL_TOL:
            raise BranchNewtonFailure(f"branch residual {resid.max():.3g} exceeds {BRANCH_RESIDUAL_TOL}")
        d = y.shape[1]
        for i in range(d):
            for j in range(i + 1, d):
                if _torus_dist(y[:, i], y[:, j]).min() < BRANCH_COLLISION_TOL:
                    raise BranchNewtonFailure("two inverse branches collided")
    return y


def inverse_branches(f: ExpandingMap, x) -> list[np.ndarray]:
    """The |det A| preimages of a single point x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return list(branch_points(f, x[None, :])[0])


def add_scaled(f: ExpandingMap, t: float, g: VecField) -> ExpandingMap:
    """f + t g (same linear part); the result is not re-certified."""
    if g.dim != f.dim:
        raise DimMismatch(f"map has dim {f.dim} but direction has dim {g.dim}")
    return ExpandingMap(f.linear, f.perturbation + t * g)


def c_distance(f1: ExpandingMap, f2: ExpandingMap, r: int = 3, n: int = 64) -> float:
    """C^r distance between two maps with the same linear part."""
    if f1.linear != f2.linear:
        raise DimMismatch("maps with different linear parts are not C^r-close")
    return (f1.perturbation - f2.perturbation).c_norm(r, n)
