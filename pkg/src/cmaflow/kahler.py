"""Pointwise Kähler metric algebra for ``g_phi = g + i dd^c phi`` and the
nonlinearity ``F(s, z) = a s + b sin(s) + h(z)``.

Metrics are stored as an ``(..., n, n)`` complex array ``G`` with
``G[..., i, j] = (g_phi)_{i jbar}``. With ``P = G^{-1}`` the contraction
``g^{i jbar} A_{i jbar}`` is ``tr(P A)``. Closed forms are used for n <= 2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field import (
    ComplexTensorField,
    FieldError,
    ScalarField,
    TorusGeometry,
    gradient,
    hessian,
    trig_field,
)

__all__ = [
    "ConeExitError",
    "MetricField",
    "NonlinearityF",
    "PD_FLOOR",
    "metric_from_potential",
    "metric_from_matrix",
    "det_ratio",
    "traces",
    "min_eigenvalue",
    "laplacian_wrt",
    "ricci",
    "eval_F",
    "hermitian_eigenvalues",
]

PD_FLOOR = 1e-8


class ConeExitError(FieldError):
    """The potential left the omega-psh cone on this grid."""

    def __init__(self, min_eig: float, index: tuple[int, ...], floor: float):
        self.min_eig = min_eig
        self.index = index
        self.floor = floor
        super().__init__(
            f"metric not positive definite: min eigenvalue {min_eig:.6g} <= floor {floor:g} "
            f"at grid index {index}"
        )


def _det(G: np.ndarray) -> np.ndarray:
    if G.shape[-1] == 1:
        return G[..., 0, 0].real
    return (G[..., 0, 0] * G[..., 1, 1] - G[..., 0, 1] * G[..., 1, 0]).real


def _inverse(G: np.ndarray) -> np.ndarray:
    if G.shape[-1] == 1:
        return 1.0 / G
    det = _det(G)[..., None, None]
    inv = np.empty_like(G)
    inv[..., 0, 0] = G[..., 1, 1]
    inv[..., 1, 1] = G[..., 0, 0]
    inv[..., 0, 1] = -G[..., 0, 1]
    inv[..., 1, 0] = -G[..., 1, 0]
    return inv / det


def hermitian_eigenvalues(G: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of Hermitian 1x1 or 2x2 matrices, shape ``(..., n)``."""
    if G.shape[-1] == 1:
        return G[..., 0, :].real
    a, d = G[..., 0, 0].real, G[..., 1, 1].real
    c = np.abs(G[..., 0, 1])
    mid = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), c)
    return np.stack([mid - rad, mid + rad], axis=-1)


@dataclass(frozen=True, eq=False)
class MetricField:
    """Hermitian metric ``(g_phi)_{i jbar}`` on the grid with cached inverse."""

    geometry: TorusGeometry
    h: ComplexTensorField
    min_eig: float
    _inv: np.ndarray = field(repr=False)
    _det: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        return self.h.data

    @property
    def inverse(self) -> np.ndarray:
        return self._inv

    @property
    def det(self) -> np.ndarray:
        return self._det


def metric_from_matrix(geom: TorusGeometry, G: np.ndarray, floor: float = PD_FLOOR) -> MetricField:
    """Wrap a Hermitian matrix field, enforcing positivity above ``floor``."""
    eig = hermitian_eigenvalues(G)[..., 0]
    pos = int(np.argmin(eig))
    lam = float(eig.flat[pos])
    if not lam > floor:
        raise ConeExitError(lam, tuple(int(i) for i in np.unravel_index(pos, eig.shape)), floor)
    tens = ComplexTensorField(geom, ("h", "a"), G)
    return MetricField(geom, tens, lam, _inverse(tens.data), _det(tens.data))


def metric_from_potential(phi: ScalarField, floor: float = PD_FLOOR) -> MetricField:
    """``delta_{ij} + phi_{i jbar}``; raises :class:`ConeExitError` if not positive."""
    H = hessian(phi).data
    n = phi.geometry.n
    G = H + np.eye(n)
    return metric_from_matrix(phi.geometry, G, floor)


def det_ratio(m: MetricField) -> ScalarField:
    """``(omega + i dd^c phi)^n / omega^n = det g_phi``."""
    return ScalarField(m.geometry, m.det)


def traces(m: MetricField) -> tuple[ScalarField, ScalarField]:
    """``(tr_g g_phi, tr_{g_phi} g)``."""
    G, P = m.matrix, m.inverse
    tr = np.trace(G, axis1=-2, axis2=-1).real
    trinv = np.trace(P, axis1=-2, axis2=-1).real
    return ScalarField(m.geometry, tr), ScalarField(m.geometry, trinv)


def min_eigenvalue(m: MetricField | np.ndarray) -> float:
    """Smallest eigenvalue over all grid points."""
    G = m.matrix if isinstance(m, MetricField) else np.asarray(m)
    return float(hermitian_eigenvalues(G)[..., 0].min())


def contract(P: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``g^{i jbar} A_{i jbar} = tr(P A)`` pointwise."""
    return np.einsum("...ij,...ji->...", P, A)


def laplacian_wrt(m: MetricField, f: ScalarField) -> ScalarField:
    """``Delta_phi f = g_phi^{i jbar} f_{i jbar}``."""
    return ScalarField(m.geometry, contract(m.inverse, hessian(f).data).real)


def ricci(m: MetricField) -> tuple[ComplexTensorField, ScalarField]:
    """Ricci form ``-d_i dbar_j log det g_phi`` and its ``g_phi``-norm.

    The norm is ``sqrt(tr(P R P R))``, real and nonnegative for Hermitian R.
    """
    logdet = ScalarField(m.geometry, np.log(m.det))
    R = -hessian(logdet).data
    P = m.inverse
    PR = P @ R
    nrm2 = np.einsum("...ij,...ji->...", PR, PR).real
    return (
        ComplexTensorField(m.geometry, ("h", "a"), R),
        ScalarField(m.geometry, np.sqrt(np.maximum(nrm2, 0.0))),
    )


@dataclass(frozen=True)
class NonlinearityF:
    """``F(s, z) = a s + b sin(s) + h(z)``.

    ``h`` is ``const`` plus cosine ``modes`` (see :func:`trig_field`), plus
    an optional grid-sampled trigonometric polynomial ``h_grid`` tied to a
    single geometry. Every derivative is exact; ``F'`` does not depend on z.
    """

    a: float = 0.0
    b: float = 0.0
    const: float = 0.0
    modes: tuple = ()
    h_grid: ScalarField | None = field(default=None, compare=False)

    def __post_init__(self):
        modes = tuple(
            (float(m[0]), tuple(int(k) for k in m[1]), float(m[2]) if len(m) > 2 else 0.0)
            for m in self.modes
        )
        object.__setattr__(self, "modes", modes)

    @classmethod
    def from_dict(cls, d: dict) -> "NonlinearityF":
        allowed = {"a", "b", "const", "modes"}
        extra = set(d) - allowed
        if extra:
            raise ValueError(f"unknown nonlinearity keys {sorted(extra)}")
        return cls(
            a=float(d.get("a", 0.0)),
            b=float(d.get("b", 0.0)),
            const=float(d.get("const", 0.0)),
            modes=tuple(tuple(m) for m in d.get("modes", ())),
        )

    def to_dict(self) -> dict:
        out = {"a": self.a, "b": self.b, "const": self.const,
               "modes": [[m[0], list(m[1]), m[2]] for m in self.modes]}
        if self.h_grid is not None:
            out["h_grid"] = "grid-sampled"
        return out

    def with_h_grid(self, h: ScalarField) -> "NonlinearityF":
        return NonlinearityF(self.a, self.b, self.const, self.modes, h)

    def _check_geom(self, geom: TorusGeometry):
        if self.h_grid is not None and self.h_grid.geometry != geom:
            raise FieldError("grid-sampled h lives on a different geometry")

    # z-dependence
    def h(self, geom: TorusGeometry) -> np.ndarray:
        self._check_geom(geom)
        out = trig_field(geom, self.modes, self.const).values
        if self.h_grid is not None:
            out = out + self.h_grid.values
        return out

    def h_grad(self, geom: TorusGeometry) -> np.ndarray:
        """``d h / d z_i``, shape ``(..., n)``."""
        self._check_geom(geom)
        xs = geom.coords()
        out = np.zeros(geom.shape + (geom.n,), dtype=np.complex128)
        for amp, k, phase in self.modes:
            theta = phase + sum(2 * np.pi * kk * x for kk, x in zip(k, xs))
            for i in range(geom.n):
                out[..., i] += -amp * np.sin(theta) * np.pi * (k[2 * i] - 1j * k[2 * i + 1])
        if self.h_grid is not None:
            out = out + gradient(self.h_grid).data
        return out

    def h_hess(self, geom: TorusGeometry) -> np.ndarray:
        """``h_{i jbar}``, shape ``(..., n, n)``."""
        self._check_geom(geom)
        xs = geom.coords()
        out = np.zeros(geom.shape + (geom.n, geom.n), dtype=np.complex128)
        for amp, k, phase in self.modes:
            theta = phase + sum(2 * np.pi * kk * x for kk, x in zip(k, xs))
            for i in range(geom.n):
                for j in range(geom.n):
                    wi = np.pi * (k[2 * i] - 1j * k[2 * i + 1])
                    wj = np.pi * (k[2 * j] + 1j * k[2 * j + 1])
                    out[..., i, j] += -amp * np.cos(theta) * wi * wj
        if self.h_grid is not None:
            out = out + hessian(self.h_grid).data
        return out

    def h_range(self, geom: TorusGeometry) -> tuple[float, float]:
        h = self.h(geom)
        return float(h.min()), float(h.max())

    # s-dependence
    def base(self, s):
        if self.b == 0.0:
            return self.a * s
        return self.a * s + self.b * np.sin(s)

    def dF(self, s):
        return self.a + self.b * np.cos(s)

    def d2F(self, s):
        return -self.b * np.sin(s)

    def upper(self, s: float, geom: TorusGeometry) -> float:
        """``sup_z F(s, z)``."""
        return float(self.base(s)) + self.h_range(geom)[1]

    def lower(self, s: float, geom: TorusGeometry) -> float:
        """``inf_z F(s, z)``."""
        return float(self.base(s)) + self.h_range(geom)[0]

    def kappa(self, lo: float, hi: float) -> float:
        """``sup |F'(s)|`` for ``s`` in ``[lo, hi]``."""
        pts = [lo, hi]
        if self.b != 0.0:
            k0, k1 = int(np.ceil(lo / np.pi)), int(np.floor(hi / np.pi))
            pts.extend(np.pi * k for k in range(k0, k1 + 1))
        return float(max(abs(self.dF(p)) for p in pts))

    def is_monotone(self, lo: float, hi: float) -> bool:
        """``F' >= 0`` on ``[lo, hi]``."""
        if self.b == 0.0:
            return self.a >= 0.0
        return self.a - abs(self.b) >= 0.0 or all(
            self.dF(p) >= 0.0 for p in np.linspace(lo, hi, 257)
        )


_MODES = ("F", "dF", "d2F", "grad_z", "hess_z", "grad_z_dF")


def eval_F(F: NonlinearityF, s: ScalarField, mode: str = "F"):
    """Evaluate F or one of its derivatives at ``(s(p), z_p)``.

    Scalar modes return :class:`ScalarField`; ``grad_z`` (``d_i F``),
    ``hess_z`` (``F_{i jbar}``) and ``grad_z_dF`` (``F'_i``, zero for this
    family) return :class:`ComplexTensorField`.
    """
    geom = s.geometry
    v = s.values
    if mode == "F":
        return ScalarField(geom, F.base(v) + F.h(geom))
    if mode == "dF":
        return ScalarField(geom, np.broadcast_to(F.dF(v), geom.shape))
    if mode == "d2F":
        return ScalarField(geom, np.broadcast_to(F.d2F(v), geom.shape))
    if mode == "grad_z":
        return ComplexTensorField(geom, ("h",), F.h_grad(geom))
    if mode == "hess_z":
        return ComplexTensorField(geom, ("h", "a"), F.h_hess(geom))
    if mode == "grad_z_dF":
        return ComplexTensorField(geom, ("h",), np.zeros(geom.shape + (geom.n,)))
    raise ValueError(f"unknown evaluation mode {mode!r}; expected one of {_MODES}")
