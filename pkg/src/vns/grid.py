"""Periodic torus grids, spectral fields and norm evaluators.

All fields live on the torus [0, 2*pi)^d sampled on a uniform grid with
``n`` points per axis.  Spectral coefficients are normalized against the
normalized Lebesgue measure (total measure 1), so that

    mean(|v|^2) = sum_k |a_k|^2,    a_k = FFT(v)_k / n^d.

Real-to-complex transforms (``rfftn``) are used throughout; the last axis
stores only non-negative wavenumbers, and Parseval sums carry a
multiplicity of 2 on the interior columns of that axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TorusGrid",
    "TorusField",
    "leray_project",
    "heat_semigroup",
    "sobolev_norm",
    "grad_linf",
    "l2_norm",
    "write_field",
    "read_field",
]

FIELD_MAGIC = b"VNSF"
FIELD_VERSION = 1


@dataclass(frozen=True)
class TorusGrid:
    """Uniform grid on the 2*pi-periodic torus of dimension 2 or 3."""

    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two, got {self.n}")

    period = 2.0 * np.pi

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def h(self):
        """Grid spacing in physical units."""
        return self.period / self.n

    @property
    def cell_volume(self):
        """Cell volume against the normalized measure, (2*pi/n)^d / (2*pi)^d."""
        return float(self.n) ** (-self.dim)

    @property
    def diameter(self):
        """Largest geodesic distance on the torus."""
        return np.pi * np.sqrt(self.dim)

    @cached_property
    def coords(self):
        """Node coordinates, shape (dim, n, ..., n)."""
        x = np.arange(self.n) * self.h
        return np.array(np.meshgrid(*([x] * self.dim), indexing="ij"))

    @cached_property
    def spectral_shape(self):
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @cached_property
    def wavenumbers(self):
        """Integer wavenumbers on the rfft layout, shape (dim, *spectral_shape).

        Each axis covers -n/2+1, ..., n/2 (the Nyquist mode counted positive).
        """
        full = np.fft.fftfreq(self.n, 1.0 / self.n)
        full[self.n // 2] = self.n // 2
        half = np.fft.rfftfreq(self.n, 1.0 / self.n)
        axes = [full] * (self.dim - 1) + [half]
        return np.array(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def k2(self):
        """|k|^2 on the rfft layout."""
        return np.sum(self.wavenumbers**2, axis=0)

    @cached_property
    def deriv_wavenumbers(self):
        """Wavenumbers used for odd derivatives: the Nyquist entry is zeroed."""
        k = self.wavenumbers.copy()
        k[np.abs(k) == self.n // 2] = 0.0
        return k

    @cached_property
    def multiplicity(self):
        """Parseval weights for the half-spectrum layout."""
        m = np.full(self.spectral_shape, 2.0)
        m[..., 0] = 1.0
        m[..., -1] = 1.0
        return m

    @cached_property
    def dealias_mask(self):
        """2/3-rule mask: keep modes with every |k_i| <= n/3."""
        keep = np.all(np.abs(self.wavenumbers) <= self.n / 3.0, axis=0)
        return keep.astype(float)

    # transforms on raw arrays; leading axes are components
    def fft(self, values):
        axes = tuple(range(-self.dim, 0))
        return np.fft.rfftn(values, axes=axes) / self.n**self.dim

    def ifft(self, coeffs):
        axes = tuple(range(-self.dim, 0))
        return np.fft.irfftn(coeffs * self.n**self.dim, s=self.shape, axes=axes)

    def mean_square_hat(self, coeffs):
        """Sum over modes and components of |a_k|^2 (normalized Parseval)."""
        return float(np.sum(self.multiplicity * np.abs(coeffs) ** 2))


class TorusField:
    """Real scalar or vector field sampled on a TorusGrid.

    ``values`` has shape ``(components, n, ..., n)``.  The spectral
    coefficients are computed lazily and cached.
    """

    def __init__(self, grid, values, div_free=False):
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape:
            values = values[None]
        if values.shape[1:] != grid.shape or values.shape[0] not in (1, grid.dim):
            raise ValueError(
                f"values of shape {values.shape} do not fit grid {grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values
        self.div_free = bool(div_free)
        self._hat = None
        if self.div_free:
            self._check_divergence()

    @classmethod
    def from_spectrum(cls, grid, coeffs, div_free=False):
        field = cls(grid, grid.ifft(coeffs), div_free=False)
        field._hat = np.array(coeffs, dtype=complex)
        field.div_free = div_free
        return field

    @classmethod
    def from_function(cls, grid, func, div_free=False):
        """Sample ``func(*coords)`` returning a scalar array or a d-sequence."""
        out = func(*grid.coords)
        vals = np.asarray(out, dtype=float)
        if vals.ndim == grid.dim:
            vals = vals[None]
        vals = np.broadcast_to(vals, (vals.shape[0],) + grid.shape).copy()
        return cls(grid, vals, div_free=div_free)

    @classmethod
    def zeros(cls, grid, components=1):
        return cls(grid, np.zeros((components,) + grid.shape))

    @property
    def components(self):
        return self.values.shape[0]

    @property
    def is_vector(self):
        return self.components == self.grid.dim and self.components > 1

    def spectrum(self):
        if self._hat is None:
            self._hat = self.grid.fft(self.values)
        return self._hat

    def mean(self):
        return self.values.reshape(self.components, -1).mean(axis=1)

    def divergence_max(self):
        k = self.grid.deriv_wavenumbers
        div = np.sum(1j * k * self.spectrum(), axis=0)
        return float(np.max(np.abs(div)))

    def _check_divergence(self):
        scale = max(float(np.max(np.abs(self.values))), 1.0)
        if self.divergence_max() > 1e-10 * scale:
            raise ValueError("field flagged divergence-free has nonzero divergence")

    def copy(self):
        out = TorusField(self.grid, self.values.copy())
        out.div_free = self.div_free
        return out

    def __repr__(self):
        return (
            f"TorusField(dim={self.grid.dim}, n={self.grid.n}, "
            f"components={self.components})"
        )


def _require_finite(v):
    if not np.all(np.isfinite(v.values)):
        raise ValueError("non-finite field values")


def leray_project_hat(grid, vhat):
    """Leray projection of rfft coefficients, shape (dim, *spectral_shape)."""
    k = grid.deriv_wavenumbers
    kk = np.sum(k * k, axis=0)
    kk[kk == 0] = 1.0
    kdotv = np.sum(k * vhat, axis=0)
    return vhat - k * (kdotv / kk)


def leray_project(v):
    """Orthogonal projection of a vector field onto divergence-free fields.

    The mean mode is preserved.

    Examples
    --------
    >>> g = TorusGrid(2, 16)
    >>> v = TorusField.from_function(g, lambda x, y: (np.sin(x), 0 * y))
    >>> float(np.abs(leray_project(v).values).max()) < 1e-14
    True
    """
    _require_finite(v)
    if v.components != v.grid.dim:
        raise ValueError("leray_project needs a vector field")
    return TorusField.from_spectrum(
        v.grid, leray_project_hat(v.grid, v.spectrum()), div_free=True
    )


def heat_semigroup(v, t):
    """Apply exp(t * Laplacian) mode by mode."""
    if t < 0:
        raise ValueError("heat semigroup time must be non-negative")
    _require_finite(v)
    out = v.spectrum() * np.exp(-v.grid.k2 * t)
    return TorusField.from_spectrum(v.grid, out, div_free=v.div_free)


def sobolev_norm_hat(grid, coeffs, s, homogeneous=True):
    k2 = grid.k2
    if homogeneous:
        weight = np.zeros_like(k2)
        nz = k2 > 0
        weight[nz] = k2[nz] ** s
    else:
        weight = (1.0 + k2) ** s
    return float(np.sqrt(np.sum(grid.multiplicity * weight * np.abs(coeffs) ** 2)))


def sobolev_norm(v, s, homogeneous=True):
    """Sobolev norm (sum_k w(k)^{2s} |a_k|^2)^{1/2} in the normalized convention.

    ``homogeneous=True`` uses w(k) = |k| and drops k = 0; otherwise
    w(k) = (1 + |k|^2)^{1/2}.
    """
    return sobolev_norm_hat(v.grid, v.spectrum(), s, homogeneous)


def gradient_values(grid, coeffs):
    """Spectral gradient; returns shape (components, dim, n, ..., n)."""
    k = grid.deriv_wavenumbers
    ghat = 1j * k[None] * coeffs[:, None]
    return grid.ifft(ghat)


def grad_linf(v):
    """Max over nodes of the Frobenius norm of the spectral gradient."""
    g = gradient_values(v.grid, v.spectrum())
    frob = np.sqrt(np.sum(g**2, axis=(0, 1)))
    return float(frob.max())


def l2_norm(v):
    """L2 norm against the normalized measure."""
    return float(np.sqrt(np.mean(np.sum(v.values**2, axis=0))))


def write_field(path, field):
    """Write a field snapshot in the versioned little-endian VNSF format."""
    g = field.grid
    header = FIELD_MAGIC + struct.pack("<4I", FIELD_VERSION, g.dim, g.n, field.components)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_field(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FIELD_MAGIC:
            raise ValueError(f"{path}: not a field snapshot")
        version, dim, n, comps = struct.unpack("<4I", fh.read(16))
        if version != FIELD_VERSION:
            raise ValueError(f"{path}: unsupported field format version {version}")
        grid = TorusGrid(dim, n)
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = comps * n**dim
    if data.size != expected:
        raise ValueError(f"{path}: truncated snapshot ({data.size} of {expected} values)")
    return TorusField(grid, data.reshape((comps,) + grid.shape).astype(float))
