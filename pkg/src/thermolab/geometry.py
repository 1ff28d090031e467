"""Chart-based Riemannian geometry for conformally flat model manifolds.

Every shipped model carries a metric of the form ``g = exp(2 f(x)) * delta`` on a
single chart, with the conformal exponent ``f`` known in closed form together with
its gradient and Hessian.  Christoffel symbols and curvature are assembled from the
metric and its first and second coordinate derivatives, so nothing below assumes
conformality except the metric evaluator itself.

Array conventions: points are ``(..., n)`` arrays, and index positions follow the
usual component notation, e.g. ``christoffel(m, x)[..., i, j, k]`` is
``Gamma^i_{jk}`` and ``riemann(m, x)[..., i, j, k, l]`` is ``R^i_{jkl}`` with
``R(d_k, d_l) d_j = R^i_{jkl} d_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import octagon as _oct


class GeometryError(ValueError):
    pass


class DomainError(GeometryError):
    """A point lies outside the chart domain of the model."""


class DegeneratePlaneError(GeometryError):
    """Two vectors do not span a 2-plane."""


class UnsupportedModelError(GeometryError):
    pass


# ---------------------------------------------------------------------------
# conformal exponents


class ConformalExponent:
    """Scalar ``f`` with analytic gradient and Hessian."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def params(self) -> dict:
        return {}


class ZeroExponent(ConformalExponent):
    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad(self, x):
        return np.zeros(np.shape(x))

    def hess(self, x):
        n = np.shape(x)[-1]
        return np.zeros(np.shape(x)[:-1] + (n, n))


@dataclass(frozen=True)
class FourierTerm:
    amplitude: float
    wavevector: tuple[int, ...]
    phase: float = 0.0


class FourierExponent(ConformalExponent):
    """``f(x) = sum_j a_j cos(2 pi k_j . x + c_j)`` with integer wavevectors."""

    def __init__(self, terms: Sequence[FourierTerm]):
        self.terms = tuple(terms)
        self._a = np.array([t.amplitude for t in self.terms], dtype=float)
        self._k = 2 * np.pi * np.array([t.wavevector for t in self.terms], dtype=float)
        self._c = np.array([t.phase for t in self.terms], dtype=float)

    def _arg(self, x):
        return np.asarray(x) @ self._k.T + self._c

    def value(self, x):
        return np.cos(self._arg(x)) @ self._a

    def grad(self, x):
        return -(np.sin(self._arg(x)) * self._a) @ self._k

    def hess(self, x):
        w = np.cos(self._arg(x)) * self._a
        return -np.einsum("...t,ti,tj->...ij", w, self._k, self._k)

    def params(self):
        return {"terms": [dict(amplitude=t.amplitude, wavevector=list(t.wavevector),
                               phase=t.phase) for t in self.terms]}


class DiskExponent(ConformalExponent):
    """Poincare ball: ``g = 4 (1 - |x|^2)^-2 delta``, curvature -1."""

    def value(self, x):
        r2 = np.sum(np.square(x), axis=-1)
        return math.log(2.0) - np.log1p(-r2)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return 2.0 * x / (1.0 - r2)[..., None]

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        q = 1.0 / (1.0 - np.sum(x * x, axis=-1))
        return (2.0 * q[..., None, None] * np.eye(n)
                + 4.0 * (q * q)[..., None, None] * x[..., :, None] * x[..., None, :])


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ManifoldModel:
    """A closed (or, for the bare disk, open) model manifold on a single chart.

    ``kind`` is one of ``"torus"``, ``"disk"`` or ``"octagon"``.  Tori use the
    unit cube ``[0, 1)^n`` with integer translations as transitions; the octagon
    model is the genus-2 quotient of the Poincare disk by the opposite-side
    pairings of the regular octagon with interior angles pi/4.
    """

    name: str
    dim: int
    kind: str
    exponent: ConformalExponent = field(compare=False)

    # -- metric ------------------------------------------------------------
    def conformal(self, x):
        """Return ``(f, df, ddf)`` at ``x``."""
        x = self.check_domain(x)
        return self.exponent.value(x), self.exponent.grad(x), self.exponent.hess(x)

    def metric(self, x):
        x = self.check_domain(x)
        e2f = np.exp(2.0 * self.exponent.value(x))
        return e2f[..., None, None] * np.eye(self.dim)

    def inverse_metric(self, x):
        x = self.check_domain(x)
        e2f = np.exp(-2.0 * self.exponent.value(x))
        return e2f[..., None, None] * np.eye(self.dim)

    def metric_derivatives(self, x):
        """Return ``g_ij``, ``d_k g_ij`` and ``d_k d_l g_ij`` (index order ijk, ijkl)."""
        f, df, ddf = self.conformal(x)
        n = self.dim
        e2f = np.exp(2.0 * f)
        eye = np.eye(n)
        g = e2f[..., None, None] * eye
        dg = 2.0 * (e2f[..., None] * df)[..., None, None, :] * eye[:, :, None]
        dd = 4.0 * df[..., :, None] * df[..., None, :] + 2.0 * ddf
        ddg = (e2f[..., None, None] * dd)[..., None, None, :, :] * eye[:, :, None, None]
        return g, dg, ddg

    def inner(self, x, a, b):
        e2f = np.exp(2.0 * self.exponent.value(self.check_domain(x)))
        return e2f * np.sum(np.asarray(a) * np.asarray(b), axis=-1)

    def norm(self, x, a):
        return np.sqrt(self.inner(x, a, a))

    def lower(self, x, a):
        return np.exp(2.0 * self.exponent.value(x))[..., None] * a

    def raise_index(self, x, a):
        return np.exp(-2.0 * self.exponent.value(x))[..., None] * a

    # -- chart domain and transitions --------------------------------------
    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise DomainError(f"{self.name}: expected coordinates of length {self.dim}, got {x.shape[-1]}")
        if not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: non-finite coordinates")
        if self.kind in ("disk", "octagon"):
            if np.any(np.sum(x * x, axis=-1) >= 1.0):
                raise DomainError(f"{self.name}: point outside the unit disk")
        return x

    def normalize(self, x):
        """Map chart points into the fundamental domain (positions only)."""
        x = self.check_domain(x)
        if self.kind == "torus":
            return np.mod(x, 1.0)
        if self.kind == "octagon":
            z = x[..., 0] + 1j * x[..., 1]
            z, _ = _oct.reduce_points(z)
            return np.stack([z.real, z.imag], axis=-1)
        return x

    def in_fundamental_domain(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "torus":
            return np.all((x >= 0.0) & (x < 1.0), axis=-1)
        if self.kind == "octagon":
            return _oct.in_domain(x[..., 0] + 1j * x[..., 1])
        return np.sum(x * x, axis=-1) < 1.0

    @property
    def compact(self) -> bool:
        return self.kind in ("torus", "octagon")

    def volume(self, resolution: int = 64) -> float:
        """Riemannian volume of the model (analytic where known)."""
        if self.kind == "octagon":
            return 4.0 * math.pi  # Gauss-Bonnet, genus 2, K = -1
        if self.kind == "disk":
            return math.inf
        if isinstance(self.exponent, ZeroExponent):
            return 1.0
        # periodic integrand: the trapezoid rule is spectrally accurate
        grid = (np.arange(resolution) + 0.5) / resolution
        mesh = np.stack(np.meshgrid(*([grid] * self.dim), indexing="ij"), axis=-1)
        return float(np.mean(np.exp(self.dim * self.exponent.value(mesh))))

    # -- sampling ------------------------------------------------------------
    def sample_points(self, rng: np.random.Generator, size: int):
        """Points distributed by Riemannian volume on the fundamental domain."""
        out = np.empty((0, self.dim))
        if self.kind == "torus":
            fmax = _max_on_grid(self.exponent, self.dim)
            while len(out) < size:
                x = rng.random((2 * size, self.dim))
                acc = rng.random(2 * size) < np.exp(self.dim * (self.exponent.value(x) - fmax))
                out = np.concatenate([out, x[acc]])
            return out[:size]
        if self.kind == "octagon":
            R = _oct.CIRCUMRADIUS_EUCLID
            dmax = (1.0 - R * R) ** -2
            while len(out) < size:
                r = R * np.sqrt(rng.random(4 * size))
                a = 2 * np.pi * rng.random(4 * size)
                z = r * np.exp(1j * a)
                keep = _oct.in_domain(z) & (rng.random(4 * size) * dmax < (1 - r * r) ** -2)
                z = z[keep]
                out = np.concatenate([out, np.stack([z.real, z.imag], axis=-1)])
            return out[:size]
        raise UnsupportedModelError(f"{self.name}: no finite volume to sample from")

    def sample_unit_vectors(self, rng: np.random.Generator, x):
        """Uniform unit tangent vectors at the points ``x``."""
        x = np.asarray(x, dtype=float)
        u = rng.standard_normal(x.shape)
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        return u * np.exp(-self.exponent.value(x))[..., None]

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim, "kind": self.kind, **self.exponent.params()}


def _max_on_grid(exponent, n, res=48):
    grid = np.arange(res) / res
    mesh = np.stack(np.meshgrid(*([grid] * n), indexing="ij"), axis=-1)
    # small safety margin over the grid maximum
    return float(np.max(exponent.value(mesh))) + 0.05


def flat_torus(dim: int = 2) -> ManifoldModel:
    return ManifoldModel(f"flat_torus{dim}", dim, "torus", ZeroExponent())


def conformal_torus(dim: int = 2, terms: Sequence[FourierTerm] | None = None) -> ManifoldModel:
    if terms is None:
        terms = [FourierTerm(0.1, (1,) + (0,) * (dim - 1))]
    for t in terms:
        if len(t.wavevector) != dim:
            raise GeometryError("wavevector length must equal the dimension")
    return ManifoldModel(f"conformal_torus{dim}", dim, "torus", FourierExponent(terms))


def poincare_disk() -> ManifoldModel:
    return ManifoldModel("poincare_disk", 2, "disk", DiskExponent())


def octagon_surface() -> ManifoldModel:
    return ManifoldModel("octagon", 2, "octagon", DiskExponent())


# ---------------------------------------------------------------------------
# connection and curvature


@dataclass(frozen=True)
class ChartPoint:
    coords: np.ndarray
    model: ManifoldModel

    def __post_init__(self):
        object.__setattr__(self, "coords", self.model.normalize(np.asarray(self.coords, float)))


def _coords(x):
    return x.coords if isinstance(x, ChartPoint) else np.asarray(x, dtype=float)


def christoffel(m: ManifoldModel, x):
    """Levi-Civita symbols ``Gamma^i_{jk}``."""
    x = _coords(x)
    g, dg, _ = m.metric_derivatives(x)
    ginv = np.linalg.inv(g)
    # lowered: Gamma_{ljk} = (d_j g_lk + d_k g_lj - d_l g_jk) / 2
    low = 0.5 * (np.einsum("...lkj->...ljk", dg) + dg - np.einsum("...jkl->...ljk", dg))
    return np.einsum("...il,...ljk->...ijk", ginv, low)


def christoffel_derivative(m: ManifoldModel, x):
    """``d_m Gamma^i_{jk}`` with the derivative index last."""
    x = _coords(x)
    g, dg, ddg = m.metric_derivatives(x)
    ginv = np.linalg.inv(g)
    low = 0.5 * (np.einsum("...lkj->...ljk", dg) + dg - np.einsum("...jkl->...ljk", dg))
    dlow = 0.5 * (np.einsum("...lkjm->...ljkm", ddg) + ddg - np.einsum("...jklm->...ljkm", ddg))
    dginv = -np.einsum("...ia,...abm,...bl->...ilm", ginv, dg, ginv)
    return (np.einsum("...ilm,...ljk->...ijkm", dginv, low)
            + np.einsum("...il,...ljkm->...ijkm", ginv, dlow))


def riemann(m: ManifoldModel, x):
    """``R^i_{jkl}`` with ``R(d_k, d_l) d_j = R^i_{jkl} d_i``."""
    x = _coords(x)
    G = christoffel(m, x)
    dG = christoffel_derivative(m, x)
    # d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + Gamma^i_{kp} Gamma^p_{lj} - Gamma^i_{lp} Gamma^p_{kj}
    t1 = np.einsum("...iljk->...ijkl", dG)
    t2 = np.einsum("...ikjl->...ijkl", dG)
    t3 = np.einsum("...ikp,...plj->...ijkl", G, G)
    t4 = np.einsum("...ilp,...pkj->...ijkl", G, G)
    return t1 - t2 + t3 - t4


def gaussian_curvature(m: ManifoldModel, x):
    """Closed form ``K = -exp(-2f) * laplacian(f)`` for conformal surfaces."""
    if m.dim != 2:
        raise UnsupportedModelError("Gaussian curvature is defined for surfaces")
    f, _, ddf = m.conformal(_coords(x))
    return -np.exp(-2.0 * f) * (ddf[..., 0, 0] + ddf[..., 1, 1])


@dataclass(frozen=True)
class TwoPlane:
    """A g-orthonormal pair spanning a 2-plane at ``base``."""

    model: ManifoldModel
    base: np.ndarray
    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        m = self.model
        base = m.check_domain(np.asarray(self.base, float))
        xi = np.asarray(self.xi, float)
        eta = np.asarray(self.eta, float)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)
        a, b, c = m.inner(base, xi, xi), m.inner(base, eta, eta), m.inner(base, xi, eta)
        if np.any(np.abs(a * b - c * c) < 1e-14):
            raise DegeneratePlaneError("xi and eta are linearly dependent")
        if np.any(np.abs(a - 1) > 1e-10) or np.any(np.abs(b - 1) > 1e-10) or np.any(np.abs(c) > 1e-10):
            raise GeometryError("TwoPlane requires a g-orthonormal pair; use TwoPlane.span")

    @classmethod
    def span(cls, m: ManifoldModel, base, a, b) -> "TwoPlane":
        """Gram-Schmidt the pair ``(a, b)`` in the metric at ``base``."""
        base = np.asarray(base, float)
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        na = m.norm(base, a)
        if np.any(na < 1e-14):
            raise DegeneratePlaneError("zero vector")
        xi = a / na[..., None]
        b0 = m.norm(base, b)
        b = b - m.inner(base, b, xi)[..., None] * xi
        nb = m.norm(base, b)
        if np.any(nb <= 1e-10 * b0):
            raise DegeneratePlaneError("xi and eta are linearly dependent")
        return cls(m, base, xi, b / nb[..., None])

    def rotated(self, angle) -> "TwoPlane":
        c, s = np.cos(angle), np.sin(angle)
        c = np.asarray(c)[..., None]
        s = np.asarray(s)[..., None]
        return TwoPlane(self.model, self.base, c * self.xi + s * self.eta, -s * self.xi + c * self.eta)


def sectional_curvature(m: ManifoldModel, sigma: TwoPlane):
    """``K(sigma) = <R(xi, eta) eta, xi>`` for an orthonormal pair."""
    R = riemann(m, sigma.base)
    g = m.metric(sigma.base)
    return np.einsum("...ip,...p,...ijkl,...j,...k,...l->...", g, sigma.xi, R,
                     sigma.eta, sigma.xi, sigma.eta)
