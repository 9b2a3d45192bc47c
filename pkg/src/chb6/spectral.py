"""Periodic pseudospectral toolkit.

Fields are plain numpy arrays on a uniform tensor grid over the torus.
Scalars have shape ``grid.shape``; vector fields have shape
``(dim,) + grid.shape``.  Transforms are real-to-complex (``rfftn``), so
spectral coefficients are stored with Hermitian symmetry in the last axis.

Every differential multiplier is zero on the Nyquist planes.  With that
convention first derivatives are exactly skew-adjoint, every even multiplier
is exactly self-adjoint in the nodal Euclidean inner product, and
``div(grad f) == lap(f)`` holds to round-off for arbitrary input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
import scipy.fft as sfft

MAX_POINTS = 2**22


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on a box of side lengths ``lengths``."""

    sizes: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        lengths = tuple(float(x) for x in self.lengths)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "lengths", lengths)
        if len(sizes) not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {len(sizes)}")
        if len(lengths) != len(sizes):
            raise ValueError("sizes and lengths must have the same length")
        for n in sizes:
            if n < 4 or n % 2:
                raise ValueError(f"grid sizes must be even and >= 4, got {n}")
        if any(x <= 0 for x in lengths):
            raise ValueError("domain lengths must be positive")
        if int(np.prod(sizes)) > MAX_POINTS:
            raise ValueError(f"grid has {np.prod(sizes)} points, budget is {MAX_POINTS}")

    @classmethod
    def square(cls, n: int, dim: int = 2, length: float = 2 * np.pi) -> GridSpec:
        return cls((n,) * dim, (length,) * dim)

    @property
    def dim(self) -> int:
        return len(self.sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def vshape(self) -> tuple[int, ...]:
        return (self.dim,) + self.sizes

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    @property
    def cell_volume(self) -> float:
        return float(np.prod([L / n for L, n in zip(self.lengths, self.sizes)]))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.sizes[:-1] + (self.sizes[-1] // 2 + 1,)

    def coordinates(self) -> list[np.ndarray]:
        """Nodal coordinates, one broadcastable array per axis."""
        xs = []
        for i, (n, L) in enumerate(zip(self.sizes, self.lengths)):
            shape = [1] * self.dim
            shape[i] = n
            xs.append((np.arange(n) * (L / n)).reshape(shape))
        return xs

    # -- wavenumbers ------------------------------------------------------

    @cached_property
    def _mode_index(self) -> list[np.ndarray]:
        idx = []
        for i, n in enumerate(self.sizes):
            m = np.fft.rfftfreq(n, 1.0 / n) if i == self.dim - 1 else np.fft.fftfreq(n, 1.0 / n)
            shape = [1] * self.dim
            shape[i] = m.size
            idx.append(m.reshape(shape))
        return idx

    @cached_property
    def nyquist_free(self) -> np.ndarray:
        """Boolean mask, False on every Nyquist plane."""
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m, n in zip(self._mode_index, self.sizes):
            mask &= np.abs(m) != n // 2
        return mask

    @cached_property
    def k(self) -> list[np.ndarray]:
        """Angular wavenumbers per axis (Nyquist zeroed), broadcast to full spectral shape."""
        out = []
        for m, L in zip(self._mode_index, self.lengths):
            kk = np.broadcast_to(m * (2 * np.pi / L), self.spectral_shape).copy()
            kk[~self.nyquist_free] = 0.0
            out.append(kk)
        return out

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(kk**2 for kk in self.k)

    @cached_property
    def inv_k2(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        mask = np.ones(self.spectral_shape, dtype=bool)
        for m, n in zip(self._mode_index, self.sizes):
            mask &= np.abs(m) < n / 3.0
        return mask

    # -- transforms -------------------------------------------------------

    def fft(self, a: np.ndarray) -> np.ndarray:
        """Forward transform over the trailing ``dim`` axes."""
        axes = tuple(range(a.ndim - self.dim, a.ndim))
        return sfft.rfftn(a, axes=axes)

    def ifft(self, ah: np.ndarray) -> np.ndarray:
        axes = tuple(range(ah.ndim - self.dim, ah.ndim))
        return sfft.irfftn(ah, s=self.sizes, axes=axes)

    def apply_multiplier(self, a: np.ndarray, mult: np.ndarray) -> np.ndarray:
        return self.ifft(self.fft(a) * mult)


@dataclass
class SpectralField:
    """A real scalar field on a grid with an on-demand coefficient view."""

    grid: GridSpec
    values: np.ndarray
    _hat: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def coefficients(self) -> np.ndarray:
        if self._hat is None:
            self._hat = self.grid.fft(self.values)
        return self._hat

    def mean(self) -> float:
        return float(self.values.mean())


@dataclass
class SpectralVectorField:
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.vshape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.vshape}")

    @property
    def components(self) -> list[SpectralField]:
        return [SpectralField(self.grid, c) for c in self.values]


# -- differential operators ----------------------------------------------


def polyharmonic_apply(grid: GridSpec, a: np.ndarray, order: int = 1, sign: int = 1) -> np.ndarray:
    """Return ``sign * lap^order a`` via the multiplier ``(-|k|^2)^order``."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order}")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    return grid.apply_multiplier(a, sign * (-grid.k2) ** order)


def laplacian(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    return grid.apply_multiplier(a, -grid.k2)


def gradient(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    ah = grid.fft(a)
    return np.stack([grid.ifft(1j * kk * ah) for kk in grid.k])


def divergence(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    vh = grid.fft(v)
    return grid.ifft(sum(1j * kk * vh[i] for i, kk in enumerate(grid.k)))


def dealias(grid: GridSpec, a: np.ndarray) -> np.ndarray:
    """2/3-rule truncation; works on scalar or vector arrays."""
    return grid.apply_multiplier(a, grid.dealias_mask)


def leray_hat(grid: GridSpec, vh: np.ndarray) -> np.ndarray:
    """Leray projection on coefficients; the mean mode is kept, Nyquist planes dropped."""
    kdotv = sum(kk * vh[i] for i, kk in enumerate(grid.k)) * grid.inv_k2
    out = np.stack([vh[i] - grid.k[i] * kdotv for i in range(grid.dim)])
    out *= grid.nyquist_free
    return out


def leray_project(grid: GridSpec, v: np.ndarray) -> np.ndarray:
    if grid.dim < 2:
        raise ValueError("Leray projection needs dim >= 2")
    return grid.ifft(leray_hat(grid, grid.fft(v)))


# -- inner products --------------------------------------------------------

Norm = Literal["L2", "H1"]


def inner_product(grid: GridSpec, a: np.ndarray, b: np.ndarray, norm: Norm = "L2") -> float:
    """Quadrature inner product over the torus; vector fields sum components."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.shape[-grid.dim:] != grid.shape:
        raise ValueError("field does not live on this grid")
    val = float(np.sum(a * b)) * grid.cell_volume
    if norm == "L2":
        return val
    if norm == "H1":
        ga = gradient(grid, a) if a.shape == grid.shape else np.concatenate([gradient(grid, c) for c in a])
        gb = gradient(grid, b) if b.shape == grid.shape else np.concatenate([gradient(grid, c) for c in b])
        return val + float(np.sum(ga * gb)) * grid.cell_volume
    raise ValueError(f"unknown norm {norm!r}")


def spectral_inner(grid: GridSpec, a: np.ndarray, b: np.ndarray) -> float:
    """L2 inner product computed from rfft coefficients (Parseval)."""
    ah, bh = grid.fft(a), grid.fft(b)
    n_last = grid.sizes[-1]
    weight = np.full(grid.spectral_shape[-1], 2.0)
    weight[0] = 1.0
    if n_last % 2 == 0:
        weight[-1] = 1.0
    s = np.sum(np.real(ah * np.conj(bh)) * weight)
    return float(s) * grid.volume / grid.npoints**2


def norm(grid: GridSpec, a: np.ndarray) -> float:
    return float(np.sqrt(max(inner_product(grid, a, a), 0.0)))


def smooth_random_field(
    grid: GridSpec,
    rng: np.random.Generator,
    *,
    components: int | None = None,
    decay: float = 4.0,
    amplitude: float = 1.0,
    zero_mean: bool = False,
) -> np.ndarray:
    """Band-limited random field: Gaussian coefficients damped like ``(1+|k|^2)^(-decay/2)``.

    The result is dealiased and scaled to unit RMS times ``amplitude``.
    """
    shape = grid.shape if components is None else (components,) + grid.shape
    white = rng.standard_normal(shape)
    mult = (1.0 + grid.k2) ** (-decay / 2) * grid.dealias_mask
    if zero_mean:
        mult = mult * (grid.k2 > 0)
    a = grid.apply_multiplier(white, mult)
    rms = np.sqrt(np.mean(a**2))
    return a * (amplitude / rms) if rms > 0 else a
