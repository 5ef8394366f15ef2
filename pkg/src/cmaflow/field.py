"""Periodic grid fields on the flat torus and spectral complex calculus.

The torus is C^n / (Z + iZ)^n with the Euclidean Kähler form, so covariant
derivatives are ordinary partials and

    d/dz_j    = (d/dx_j - i d/dy_j) / 2
    d/dzbar_j = (d/dx_j + i d/dy_j) / 2.

Grid arrays have shape ``(N,) * 2n`` with axis order ``(x1, y1, ..., xn, yn)``.
All derivatives are products of first-order Fourier multipliers whose
Nyquist entry is zeroed, which keeps every multiplier odd in the wavenumber
and makes discrete identities such as mean(det g) = 1 hold exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "TorusGeometry",
    "ScalarField",
    "ComplexTensorField",
    "FieldError",
    "complex_derivative",
    "mixed_derivative",
    "gradient",
    "hessian",
    "holomorphic_hessian",
    "third_mixed",
    "grad_norm_sq",
    "flat_laplacian",
    "fourier_truncate",
    "random_rough_field",
    "trig_field",
    "finite_difference_derivative",
    "solve_flat",
    "flat_kernel_part",
]


class FieldError(ValueError):
    """Invalid field data or operation arguments."""


@dataclass(frozen=True)
class TorusGeometry:
    """Uniform grid on the unit flat torus of complex dimension ``n``."""

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise FieldError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.N < 4 or self.N & (self.N - 1):
            raise FieldError(f"N must be a power of two >= 4, got {self.N}")

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.ndim

    @property
    def spacing(self) -> float:
        return 1.0 / self.N

    @property
    def volume(self) -> float:
        return 1.0

    @property
    def size(self) -> int:
        return self.N ** self.ndim

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays ``[x1, y1, ..., xn, yn]``."""
        x = np.arange(self.N) / self.N
        out = []
        for ax in range(self.ndim):
            shp = [1] * self.ndim
            shp[ax] = self.N
            out.append(x.reshape(shp))
        return out


@lru_cache(maxsize=32)
def _wavenumbers(geom: TorusGeometry) -> tuple[np.ndarray, ...]:
    # angular wavenumbers 2*pi*k per axis, Nyquist entry zeroed
    k = 2 * np.pi * sfft.fftfreq(geom.N, d=1.0 / geom.N)
    k[geom.N // 2] = 0.0
    out = []
    for ax in range(geom.ndim):
        shp = [1] * geom.ndim
        shp[ax] = geom.N
        out.append(k.reshape(shp))
    return tuple(out)


@lru_cache(maxsize=64)
def _multiplier(geom: TorusGeometry, j: int, conjugate: bool) -> np.ndarray:
    kx, ky = _wavenumbers(geom)[2 * j], _wavenumbers(geom)[2 * j + 1]
    # d/dz -> (i kx + ky)/2, d/dzbar -> (i kx - ky)/2
    if conjugate:
        return 0.5 * (1j * kx - ky)
    return 0.5 * (1j * kx + ky)


@lru_cache(maxsize=16)
def _half_diag_symbol(geom: TorusGeometry, j: int) -> np.ndarray:
    # d_j dbar_j on the rfftn half spectrum (last axis truncated)
    sym = (_multiplier(geom, j, False) * _multiplier(geom, j, True)).real
    sym = np.broadcast_to(sym, geom.shape)
    return np.ascontiguousarray(sym[..., : geom.N // 2 + 1])


@lru_cache(maxsize=8)
def _flat_laplacian_symbol(geom: TorusGeometry) -> np.ndarray:
    # symbol of sum_j d_j dbar_j, broadcast to the full grid
    sym = np.zeros(geom.shape)
    for j in range(geom.n):
        sym = sym + (_multiplier(geom, j, False) * _multiplier(geom, j, True)).real
    return sym


def _check_finite(values: np.ndarray, what: str = "field"):
    ok = np.isfinite(values)
    if not ok.all():
        idx = tuple(int(i) for i in np.argwhere(~ok)[0])
        raise FieldError(f"non-finite {what} value {values[idx]!r} at grid index {idx}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real-valued periodic grid function."""

    geometry: TorusGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape != self.geometry.shape:
            raise FieldError(f"values shape {v.shape} does not match grid {self.geometry.shape}")
        _check_finite(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, geometry: TorusGeometry, c: float) -> "ScalarField":
        return cls(geometry, np.full(geometry.shape, float(c)))

    @classmethod
    def zeros(cls, geometry: TorusGeometry) -> "ScalarField":
        return cls.constant(geometry, 0.0)

    def _wrap(self, values) -> "ScalarField":
        return ScalarField(self.geometry, values)

    def _other(self, other):
        if isinstance(other, ScalarField):
            if other.geometry != self.geometry:
                raise FieldError("geometry mismatch")
            return other.values
        return other

    def __add__(self, other):
        return self._wrap(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._wrap(self.values - self._other(other))

    def __rsub__(self, other):
        return self._wrap(self._other(other) - self.values)

    def __mul__(self, other):
        return self._wrap(self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.values)

    def sup(self) -> float:
        return float(self.values.max())

    def inf(self) -> float:
        return float(self.values.min())

    def sup_abs(self) -> float:
        return float(np.abs(self.values).max())

    def mean(self) -> float:
        # fixed-order pairwise summation; bit-reproducible
        return float(self.values.mean())


@dataclass(frozen=True, eq=False)
class ComplexTensorField:
    """Complex tensor-valued grid function.

    ``kinds`` holds one letter per index, ``"h"`` for holomorphic and ``"a"``
    for antiholomorphic; the component axes trail the grid axes.
    """

    geometry: TorusGeometry
    kinds: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        kinds = tuple(self.kinds)
        if any(k not in ("h", "a") for k in kinds):
            raise FieldError(f"index kinds must be 'h' or 'a', got {kinds}")
        d = np.array(self.data, dtype=np.complex128, copy=True)
        expected = self.geometry.shape + (self.geometry.n,) * len(kinds)
        if d.shape != expected:
            raise FieldError(f"tensor shape {d.shape} != expected {expected}")
        d.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "data", d)

    @property
    def rank(self) -> int:
        return len(self.kinds)

    def component(self, *idx: int) -> np.ndarray:
        return self.data[(Ellipsis,) + idx]

    def hermitian_defect(self) -> float:
        """sup |a_ij - conj(a_ji)| for a rank-2 field."""
        if self.rank != 2:
            raise FieldError("hermitian_defect needs a rank-2 tensor")
        return float(np.abs(self.data - np.conj(np.swapaxes(self.data, -1, -2))).max())

    def sup_abs(self) -> float:
        return float(np.abs(self.data).max())


def _spectrum(f: ScalarField) -> np.ndarray:
    return sfft.fftn(f.values)


def _apply(geom: TorusGeometry, fhat: np.ndarray, ops: Sequence[tuple[int, bool]]) -> np.ndarray:
    sym = 1.0
    for j, conj in ops:
        sym = sym * _multiplier(geom, j, conj)
    return sfft.ifftn(fhat * sym)


def mixed_derivative(f: ScalarField, ops: Sequence[tuple[int, bool]]) -> np.ndarray:
    """Apply a sequence of ``(axis, conjugate)`` complex derivatives to ``f``.

    Returns the complex grid array. Derivatives commute exactly since they
    are Fourier multipliers.
    """
    for j, _ in ops:
        if not 0 <= j < f.geometry.n:
            raise FieldError(f"complex axis {j} out of range for n={f.geometry.n}")
    return _apply(f.geometry, _spectrum(f), ops)


def complex_derivative(f: ScalarField, axis: int, conjugate: bool = False) -> ComplexTensorField:
    """d f / d z_axis (or d f / d zbar_axis) as a rank-0 complex field."""
    return ComplexTensorField(f.geometry, (), mixed_derivative(f, [(axis, conjugate)]))


def gradient(f: ScalarField) -> ComplexTensorField:
    """Holomorphic gradient ``f_i``; the antiholomorphic one is its conjugate."""
    geom = f.geometry
    fhat = _spectrum(f)
    data = np.stack([_apply(geom, fhat, [(i, False)]) for i in range(geom.n)], axis=-1)
    return ComplexTensorField(geom, ("h",), data)


def hessian(f: ScalarField) -> ComplexTensorField:
    """Complex Hessian ``f_{i jbar} = d_i dbar_j f``, Hermitian pointwise."""
    geom = f.geometry
    n = geom.n
    data = np.empty(geom.shape + (n, n), dtype=np.complex128)
    rhat = sfft.rfftn(f.values)
    for i in range(n):
        # real even symbol, so the half spectrum suffices
        data[..., i, i] = sfft.irfftn(rhat * _half_diag_symbol(geom, i), s=geom.shape)
    if n > 1:
        fhat = _spectrum(f)
    for i in range(n):
        for j in range(i + 1, n):
            v = _apply(geom, fhat, [(i, False), (j, True)])
            data[..., i, j] = v
            data[..., j, i] = np.conj(v)
    return ComplexTensorField(geom, ("h", "a"), data)


def holomorphic_hessian(f: ScalarField) -> ComplexTensorField:
    """Pure holomorphic second derivatives ``f_{ij} = d_i d_j f``."""
    geom = f.geometry
    n = geom.n
    fhat = _spectrum(f)
    data = np.empty(geom.shape + (n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(i, n):
            v = _apply(geom, fhat, [(i, False), (j, False)])
            data[..., i, j] = v
            data[..., j, i] = v
    return ComplexTensorField(geom, ("h", "h"), data)


def third_mixed(f: ScalarField) -> ComplexTensorField:
    """Third derivatives ``f_{i jbar k} = d_k d_i dbar_j f``, symmetric in (i, k)."""
    geom = f.geometry
    n = geom.n
    fhat = _spectrum(f)
    data = np.empty(geom.shape + (n, n, n), dtype=np.complex128)
    for i in range(n):
        for k in range(i, n):
            for j in range(n):
                v = _apply(geom, fhat, [(i, False), (j, True), (k, False)])
                data[..., i, j, k] = v
                data[..., k, j, i] = v
    return ComplexTensorField(geom, ("h", "a", "h"), data)


def grad_norm_sq(f: ScalarField) -> ScalarField:
    """``|grad f|^2_omega = sum_i |f_i|^2`` for the identity background metric."""
    g = gradient(f).data
    return ScalarField(f.geometry, np.sum(g.real ** 2 + g.imag ** 2, axis=-1))


def flat_laplacian(f: ScalarField) -> ScalarField:
    """``Delta_g f = sum_i f_{i ibar}`` (a quarter of the real Laplacian)."""
    sym = _flat_laplacian_symbol(f.geometry)
    return ScalarField(f.geometry, sfft.ifftn(_spectrum(f) * sym).real)


def solve_flat(geom: TorusGeometry, rhs: np.ndarray, shift: float = 0.0) -> np.ndarray:
    """Solve ``(Delta_g - shift) u = rhs`` spectrally.

    With ``shift == 0`` the mean of ``rhs`` is ignored and ``u`` has mean
    zero (pseudo-inverse on the constants).
    """
    sym = _flat_laplacian_symbol(geom) - shift
    rhat = sfft.fftn(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        uhat = np.where(sym != 0.0, rhat / np.where(sym != 0.0, sym, 1.0), 0.0)
    return sfft.ifftn(uhat).real


def flat_kernel_part(geom: TorusGeometry, f: np.ndarray) -> np.ndarray:
    """Component of ``f`` in modes annihilated by every derivative.

    These are the constant and the modes whose wavenumber components are all
    0 or Nyquist; no potential correction can change them.
    """
    mask = _flat_laplacian_symbol(geom) == 0.0
    return sfft.ifftn(sfft.fftn(f) * mask).real


@lru_cache(maxsize=32)
def _integer_modes(geom: TorusGeometry) -> np.ndarray:
    k = sfft.fftfreq(geom.N, d=1.0 / geom.N).astype(int)
    grids = np.meshgrid(*([k] * geom.ndim), indexing="ij")
    return np.max(np.abs(np.stack(grids)), axis=0)


def fourier_truncate(f: ScalarField, K: int) -> ScalarField:
    """Keep the Fourier modes with ``max_axis |k| <= K`` (mean included)."""
    N = f.geometry.N
    if not 0 <= K <= N // 2:
        raise FieldError(f"cutoff K={K} outside [0, {N // 2}]")
    if K == N // 2:
        return f
    mask = _integer_modes(f.geometry) <= K
    return ScalarField(f.geometry, sfft.ifftn(_spectrum(f) * mask).real)


def trig_field(geom: TorusGeometry, modes, const: float = 0.0) -> ScalarField:
    """Sum of ``amp * cos(2 pi k.x + phase)`` terms plus a constant.

    ``modes`` is a sequence of ``(amp, k)`` or ``(amp, k, phase)`` with ``k``
    an integer vector of length ``2n`` in axis order (x1, y1, ...).
    """
    xs = geom.coords()
    out = np.full(geom.shape, float(const))
    for mode in modes:
        amp, k = mode[0], mode[1]
        phase = mode[2] if len(mode) > 2 else 0.0
        if len(k) != geom.ndim:
            raise FieldError(f"wavevector {k} has wrong length for n={geom.n}")
        theta = phase + sum(2 * np.pi * kk * x for kk, x in zip(k, xs))
        out = out + amp * np.cos(theta)
    return ScalarField(geom, out)


def random_rough_field(geom: TorusGeometry, seed: int, alpha: float, scale: float = 1.0) -> ScalarField:
    """Random Fourier series with coefficient std ``|k|^-(n + alpha)``.

    Coefficients are drawn in dyadic shells ``2^(L-1) <= max|k| < 2^L``, each
    shell from its own generator keyed by ``(seed, L)``. A coarser grid
    therefore samples the Fourier truncation of the finer-grid field: the
    fields at different ``N`` are one continuum datum resolved to different
    bandwidths. Mean and Nyquist modes are zero.
    """
    if not 0.0 < alpha < 1.0:
        raise FieldError(f"Hoelder exponent alpha must lie in (0, 1), got {alpha}")
    d = geom.ndim
    N = geom.N
    spec = np.zeros(geom.shape, dtype=np.complex128)
    kint = sfft.fftfreq(N, d=1.0 / N).astype(int)
    kvec = np.meshgrid(*([kint] * d), indexing="ij")
    kmax = np.max(np.abs(np.stack(kvec)), axis=0)
    knorm = np.sqrt(sum(kk.astype(float) ** 2 for kk in kvec))
    L = 1
    while 2 ** (L - 1) < N // 2:
        M = 2 ** (L + 1)
        rng = np.random.default_rng([int(seed), L])
        z = rng.standard_normal((M,) * d) + 1j * rng.standard_normal((M,) * d)
        sel = (kmax >= 2 ** (L - 1)) & (kmax < 2 ** L) & (kmax < N // 2)
        idx = tuple(kk[sel] % M for kk in kvec)
        neg = tuple((-kk[sel]) % M for kk in kvec)
        coef = 0.5 * (z[idx] + np.conj(z[neg]))
        spec[sel] = coef * knorm[sel] ** (-(geom.n + alpha))
        L += 1
    vals = sfft.ifftn(spec).real * geom.size
    return ScalarField(geom, scale * vals)


def finite_difference_derivative(f: ScalarField, axis: int, conjugate: bool = False) -> np.ndarray:
    """Second-order centred-difference d/dz_axis; a test oracle only."""
    h = f.geometry.spacing
    v = f.values
    dx = (np.roll(v, -1, axis=2 * axis) - np.roll(v, 1, axis=2 * axis)) / (2 * h)
    dy = (np.roll(v, -1, axis=2 * axis + 1) - np.roll(v, 1, axis=2 * axis + 1)) / (2 * h)
    return 0.5 * (dx + 1j * dy) if conjugate else 0.5 * (dx - 1j * dy)
