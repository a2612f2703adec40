"""Fourier collocation primitives on the unit torus [0, 1)^d.

Grids are uniform with N nodes per axis, x_j = j / N, N even. Interpolation uses
the symmetric-Nyquist trigonometric interpolant, so real data stays real.
"""

from __future__ import annotations

import numpy as np


def nodes(dim: int, n: int) -> np.ndarray:
    """Grid nodes as an array of shape (n,)*dim + (dim,)."""
    axis = np.arange(n) / n
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack(mesh, axis=-1)


def wavenumbers(n: int) -> np.ndarray:
    return np.fft.fftfreq(n, 1.0 / n)


def derivative(values: np.ndarray, orders) -> np.ndarray:
    """Spectral partial derivative of a periodic grid function.

    ``orders`` gives the derivative order along each grid axis. The Nyquist
    mode is dropped for odd orders.
    """
    orders = tuple(int(o) for o in orders)
    if all(o == 0 for o in orders):
        return np.array(values, dtype=float, copy=True)
    spec = np.fft.fftn(values, axes=range(len(orders)))
    for axis, order in enumerate(orders):
        if order == 0:
            continue
        n = values.shape[axis]
        k = wavenumbers(n)
        mult = (2j * np.pi * k) ** order
        if order % 2 == 1:
            mult[n // 2] = 0.0
        shape = [1] * spec.ndim
        shape[axis] = n
        spec = spec * mult.reshape(shape)
    return np.fft.ifftn(spec, axes=range(len(orders))).real


def divergence(components: np.ndarray) -> np.ndarray:
    """Divergence of a vector field given as an array (dim, N, ..., N)."""
    dim = components.shape[0]
    out = np.zeros(components.shape[1:])
    for k in range(dim):
        orders = [0] * dim
        orders[k] = 1
        out += derivative(components[k], orders)
    return out


def periodic_sinc(d: np.ndarray, n: int) -> np.ndarray:
    """Cardinal function of the N-point trigonometric interpolant."""
    s = np.sin(np.pi * d)
    tiny = np.abs(s) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sin(np.pi * n * d) / (n * np.tan(np.pi * d))
    # d is an integer there; the cardinal function equals 1 at every integer
    out[tiny] = 1.0
    return out


def interp_matrix(points: np.ndarray, n: int) -> np.ndarray:
    """Matrix E with E @ values = interpolant at ``points`` (1-D)."""
    x = np.arange(n) / n
    return periodic_sinc(np.asarray(points)[:, None] - x[None, :], n)


def interpolate(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``values`` at ``points``.

    ``points`` has shape (P, dim); returns shape (P,).
    """
    dim = values.ndim
    points = np.asarray(points, dtype=float).reshape(-1, dim)
    n = values.shape[0]
    if dim == 1:
        return interp_matrix(points[:, 0], n) @ values
    out = np.empty(points.shape[0])
    chunk = 4096
    for s in range(0, points.shape[0], chunk):
        p = points[s:s + chunk]
        e1 = interp_matrix(p[:, 0], n)
        e2 = interp_matrix(p[:, 1], n)
        out[s:s + chunk] = np.einsum("pa,ab,pb->p", e1, values, e2)
    return out


def _resample_axis(spec: np.ndarray, axis: int, m: int) -> np.ndarray:
    n = spec.shape[axis]
    if m == n:
        return spec
    spec = np.moveaxis(spec, axis, 0)
    out = np.zeros((m,) + spec.shape[1:], dtype=complex)
    if m > n:
        h = n // 2
        out[:h] = spec[:h]
        out[m - h + 1:] = spec[h + 1:]
        out[h] = 0.5 * spec[h]
        out[m - h] = 0.5 * spec[h]
    else:
        h = m // 2
        out[:h] = spec[:h]
        out[h + 1:] = spec[n - h + 1:]
        out[h] = spec[h] + spec[n - h]
    return np.moveaxis(out, 0, axis)


def resample(values: np.ndarray, m: int) -> np.ndarray:
    """Band-limited resampling of a grid function onto an m-point grid per axis.

    Refinement is exact zero-padding; coarsening keeps |k| < m/2 and folds the
    +/- m/2 pair into the new Nyquist mode.
    """
    dim = values.ndim
    n = values.shape[0]
    spec = np.fft.fftn(values)
    for axis in range(dim):
        spec = _resample_axis(spec, axis, m)
    return np.fft.ifftn(spec).real * (m / n) ** dim


def dealiased_product(*factors: np.ndarray) -> np.ndarray:
    """Pointwise product formed on a 2x finer grid and truncated back.

    Exact (no aliasing into retained modes) for up to three band-limited factors.
    """
    n = factors[0].shape[0]
    fine = [resample(f, 2 * n) for f in factors]
    prod = fine[0]
    for f in fine[1:]:
        prod = prod * f
    return resample(prod, n)


def bandwidth(values: np.ndarray, rel: float = 1e-15) -> int:
    """Largest |k| (max over axes) carrying a coefficient above rel * max."""
    spec = np.abs(np.fft.fftn(values))
    top = spec.max()
    if top == 0.0:
        return 0
    n = values.shape[0]
    k = np.abs(wavenumbers(n))
    mesh = np.meshgrid(*([k] * values.ndim), indexing="ij")
    kmax = np.max(np.stack(mesh), axis=0)
    significant = spec > rel * top
    return int(kmax[significant].max())
