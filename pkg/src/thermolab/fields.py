"""External forcing: fields with and without potentials, Lorentz forces, and
velocity-dependent surface fields built from holomorphic sections.

An :class:`ExternalField` is stored through its dual 1-form: ``theta(x)`` returns
the covector components ``theta_i`` and ``dtheta(x)[..., i, j]`` the partial
derivative ``d_j theta_i``.  The vector field is ``E^i = g^{ij} theta_j``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import octagon as _oct
from .geometry import (DomainError, GeometryError, ManifoldModel, UnsupportedModelError,
                       christoffel)


class FieldConstructionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# smooth bumps


def bump(s):
    """``exp(1 - 1/(1-s))`` on ``s < 1``, zero beyond; returns value, d/ds, d2/ds2."""
    s = np.asarray(s, dtype=float)
    inside = s < 1.0
    q = np.where(inside, 1.0 / np.where(inside, 1.0 - s, 1.0), 0.0)
    b = np.where(inside, np.exp(1.0 - q), 0.0)
    db = -b * q * q
    ddb = b * (q ** 4 - 2.0 * q ** 3)
    return b, db, ddb


def _bump_mass():
    t = np.linspace(-1.0, 1.0, 4001)
    b, _, _ = bump(t * t)
    return float(np.trapezoid(b, t))


_BUMP_MASS = _bump_mass()


# ---------------------------------------------------------------------------
# potentials


class Potential:
    """Scalar ``U`` with analytic gradient and Hessian."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


class ZeroPotential(Potential):
    def value(self, x):
        return np.zeros(np.shape(x)[:-1])

    def grad(self, x):
        return np.zeros(np.shape(x))

    def hess(self, x):
        n = np.shape(x)[-1]
        return np.zeros(np.shape(x)[:-1] + (n, n))


@dataclass(frozen=True)
class FourierPotential(Potential):
    """``U = amplitude * sin(2 pi k.x + phase)``."""

    amplitude: float
    wavevector: tuple[int, ...]
    phase: float = 0.0

    def _arg(self, x):
        k = 2 * np.pi * np.asarray(self.wavevector, float)
        return np.asarray(x) @ k + self.phase, k

    def value(self, x):
        a, _ = self._arg(x)
        return self.amplitude * np.sin(a)

    def grad(self, x):
        a, k = self._arg(x)
        return self.amplitude * np.cos(a)[..., None] * k

    def hess(self, x):
        a, k = self._arg(x)
        return -self.amplitude * np.sin(a)[..., None, None] * np.outer(k, k)

    def describe(self):
        return {"kind": "fourier_potential", "amplitude": self.amplitude,
                "wavevector": list(self.wavevector), "phase": self.phase}


@dataclass(frozen=True)
class BumpPotential(Potential):
    """``U = amplitude * bump(|x - c|^2 / radius^2)``; equals ``amplitude`` at ``c``."""

    amplitude: float
    radius: float
    center: tuple[float, ...] = (0.0, 0.0)

    def _s(self, x):
        d = np.asarray(x, float) - np.asarray(self.center, float)
        return np.sum(d * d, axis=-1) / self.radius ** 2, d

    def value(self, x):
        s, _ = self._s(x)
        return self.amplitude * bump(s)[0]

    def grad(self, x):
        s, d = self._s(x)
        _, db, _ = bump(s)
        return self.amplitude * db[..., None] * (2.0 / self.radius ** 2) * d

    def hess(self, x):
        s, d = self._s(x)
        _, db, ddb = bump(s)
        c = 2.0 / self.radius ** 2
        n = d.shape[-1]
        return self.amplitude * (ddb[..., None, None] * c * c * d[..., :, None] * d[..., None, :]
                                 + db[..., None, None] * c * np.eye(n))

    def describe(self):
        return {"kind": "bump_potential", "amplitude": self.amplitude,
                "radius": self.radius, "center": list(self.center)}


class CallablePotential(Potential):
    """Wrap a plain scalar callable; derivatives by central differences."""

    def __init__(self, fn: Callable, step: float = 1e-4):
        self.fn = fn
        self.step = step

    def value(self, x):
        return np.asarray(self.fn(np.asarray(x, float)), float)

    def grad(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        h = self.step
        out = np.empty(x.shape)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            out[..., i] = (self.value(x + e) - self.value(x - e)) / (2 * h)
        return out

    def hess(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        h = self.step
        out = np.empty(x.shape + (n,))
        for j in range(n):
            e = np.zeros(n)
            e[j] = h
            out[..., :, j] = (self.grad(x + e) - self.grad(x - e)) / (2 * h)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    def describe(self):
        return {"kind": "callable_potential"}


# ---------------------------------------------------------------------------
# 1-form terms


class FormTerm:
    """One additive contribution to theta with analytic derivatives."""

    def theta(self, x):
        raise NotImplementedError

    def dtheta(self, x):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": type(self).__name__}


@dataclass(frozen=True)
class GradientTerm(FormTerm):
    """``theta = -dU`` so that ``E = -grad U``."""

    potential: Potential

    def theta(self, x):
        return -self.potential.grad(x)

    def dtheta(self, x):
        return -self.potential.hess(x)

    def describe(self):
        return {"kind": "gradient", "potential": self.potential.describe()}


@dataclass(frozen=True)
class ConstantForm(FormTerm):
    coefficients: tuple[float, ...]

    def theta(self, x):
        return np.broadcast_to(np.asarray(self.coefficients, float), np.shape(x)).copy()

    def dtheta(self, x):
        n = np.shape(x)[-1]
        return np.zeros(np.shape(x)[:-1] + (n, n))

    def describe(self):
        return {"kind": "constant_form", "coefficients": list(self.coefficients)}


@dataclass(frozen=True)
class SinusoidalForm(FormTerm):
    """``theta = a * sin(2 pi k.x + phase)``; not closed unless ``a`` is parallel to ``k``."""

    amplitudes: tuple[float, ...]
    wavevector: tuple[int, ...]
    phase: float = 0.0

    def _arg(self, x):
        k = 2 * np.pi * np.asarray(self.wavevector, float)
        return np.asarray(x) @ k + self.phase, k

    def theta(self, x):
        a, _ = self._arg(x)
        return np.sin(a)[..., None] * np.asarray(self.amplitudes, float)

    def dtheta(self, x):
        a, k = self._arg(x)
        return np.cos(a)[..., None, None] * np.outer(np.asarray(self.amplitudes, float), k)

    def describe(self):
        return {"kind": "sinusoidal_form", "amplitudes": list(self.amplitudes),
                "wavevector": list(self.wavevector), "phase": self.phase}


@dataclass(frozen=True)
class BumpForm(FormTerm):
    """``theta = bump(|x - c|^2 / radius^2) * a`` with a constant covector ``a``."""

    amplitudes: tuple[float, ...]
    radius: float
    center: tuple[float, ...] = (0.0, 0.0)

    def _s(self, x):
        d = np.asarray(x, float) - np.asarray(self.center, float)
        return np.sum(d * d, axis=-1) / self.radius ** 2, d

    def theta(self, x):
        s, _ = self._s(x)
        return bump(s)[0][..., None] * np.asarray(self.amplitudes, float)

    def dtheta(self, x):
        s, d = self._s(x)
        _, db, _ = bump(s)
        ds = (2.0 / self.radius ** 2) * d
        return db[..., None, None] * np.asarray(self.amplitudes, float)[:, None] * ds[..., None, :]

    def describe(self):
        return {"kind": "bump_form", "amplitudes": list(self.amplitudes),
                "radius": self.radius, "center": list(self.center)}


def axis_distance(z_xy, angle: float):
    """Signed hyperbolic distance to the diameter at ``angle`` with gradient and Hessian."""
    x = np.asarray(z_xy, float)
    c, s = math.cos(angle), math.sin(angle)
    Mrot = np.array([[c, s], [-s, c]])
    ab = x @ Mrot.T
    a, b = ab[..., 0], ab[..., 1]
    D = 1.0 - a * a - b * b
    q = 2.0 * b / D
    qa = 4.0 * a * b / D ** 2
    qb = 2.0 / D + 4.0 * b * b / D ** 2
    qaa = 4.0 * b / D ** 2 + 16.0 * a * a * b / D ** 3
    qab = 4.0 * a / D ** 2 + 16.0 * a * b * b / D ** 3
    qbb = 12.0 * b / D ** 2 + 16.0 * b ** 3 / D ** 3
    r = np.sqrt(1.0 + q * q)
    d = np.arcsinh(q)
    gq = np.stack([qa, qb], axis=-1)
    Hq = np.stack([np.stack([qaa, qab], -1), np.stack([qab, qbb], -1)], -2)
    gd = gq / r[..., None]
    Hd = Hq / r[..., None, None] - (q / r ** 3)[..., None, None] * gq[..., :, None] * gq[..., None, :]
    return d, gd @ Mrot, np.einsum("ai,...ab,bj->...ij", Mrot, Hd, Mrot)


@dataclass(frozen=True)
class CollarForm(FormTerm):
    """Closed, non-exact form supported in a collar around the axis of a pairing.

    ``theta = period * psi'(d) dd`` where ``d`` is the signed distance to the axis
    of generator ``generator`` and ``psi`` a smooth step over ``|d| < width``.
    Every loop crossing the axis once picks up ``+-period``.
    """

    period: float = 1.0
    width: float = 0.5
    generator: int = 0

    def _profile(self, d):
        w = self.width
        s = (d / w) ** 2
        b, db, _ = bump(s)
        p1 = b / (w * _BUMP_MASS)
        p2 = db * 2.0 * d / (w ** 3 * _BUMP_MASS)
        return p1, p2

    def theta(self, x):
        d, gd, _ = axis_distance(x, float(_oct.SIDE_ANGLES[self.generator % 4]))
        p1, _ = self._profile(d)
        return self.period * p1[..., None] * gd

    def dtheta(self, x):
        d, gd, Hd = axis_distance(x, float(_oct.SIDE_ANGLES[self.generator % 4]))
        p1, p2 = self._profile(d)
        return self.period * (p2[..., None, None] * gd[..., :, None] * gd[..., None, :]
                              + p1[..., None, None] * Hd)

    def describe(self):
        return {"kind": "collar_form", "period": self.period, "width": self.width,
                "generator": self.generator}


# ---------------------------------------------------------------------------
# external fields


@dataclass(frozen=True)
class ExternalField:
    model: ManifoldModel
    terms: tuple[FormTerm, ...]
    scale: float = 1.0
    potential: Potential | None = None
    name: str = "field"

    def theta(self, x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape)
        for t in self.terms:
            out = out + t.theta(x)
        return self.scale * out

    def dtheta(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        out = np.zeros(x.shape + (n,))
        for t in self.terms:
            out = out + t.dtheta(x)
        return self.scale * out

    def potential_value(self, x):
        if self.potential is None:
            raise FieldConstructionError(f"{self.name} has no potential")
        return self.scale * self.potential.value(x)

    def vector(self, x):
        return self.model.raise_index(x, self.theta(x))

    def covariant_derivative(self, x):
        """``nabla_j E^i`` as ``[..., i, j]``."""
        x = np.asarray(x, float)
        f, df, _ = self.model.conformal(x)
        th = self.theta(x)
        e = np.exp(-2.0 * f)[..., None, None]
        dE = e * (self.dtheta(x) - 2.0 * th[..., :, None] * df[..., None, :])
        E = self.model.raise_index(x, th)
        return dE + np.einsum("...ijk,...k->...ij", christoffel(self.model, x), E)

    def theta_of(self, x, v):
        """``theta_x(v) = <E(x), v>``."""
        return np.sum(self.theta(x) * np.asarray(v), axis=-1)

    def scaled(self, s: float) -> "ExternalField":
        return ExternalField(self.model, self.terms, self.scale * s, self.potential, self.name)

    def __add__(self, other: "ExternalField") -> "ExternalField":
        if other.model is not self.model:
            raise FieldConstructionError("fields live on different models")
        if self.scale != 1.0 or other.scale != 1.0:
            raise FieldConstructionError("add unscaled fields, then scale")
        pot = None
        if self.potential is not None and other.potential is not None:
            pot = _SumPotential(self.potential, other.potential)
        return ExternalField(self.model, self.terms + other.terms, 1.0, pot,
                             f"{self.name}+{other.name}")

    @property
    def is_gradient(self) -> bool:
        return self.potential is not None

    def one_form(self) -> "OneForm":
        return OneForm(self)

    def describe(self) -> dict:
        return {"name": self.name, "scale": self.scale, "terms": [t.describe() for t in self.terms],
                "gradient": self.is_gradient}


@dataclass(frozen=True)
class _SumPotential(Potential):
    a: Potential
    b: Potential

    def value(self, x):
        return self.a.value(x) + self.b.value(x)

    def grad(self, x):
        return self.a.grad(x) + self.b.grad(x)

    def hess(self, x):
        return self.a.hess(x) + self.b.hess(x)


def zero_field(m: ManifoldModel) -> ExternalField:
    return ExternalField(m, (), 1.0, ZeroPotential(), "zero")


# -- equivariance ---------------------------------------------------------------


def _boundary_pairs(m: ManifoldModel, n: int = 25):
    """Pairs ``(x, x')`` of chart points identified by the model transition."""
    t = np.linspace(-0.95, 0.95, n)
    if m.kind == "torus":
        rng = np.random.default_rng(12345)
        pairs = []
        for i in range(m.dim):
            x = rng.random((n, m.dim))
            x[:, i] = 0.0
            y = x.copy()
            y[:, i] = 1.0
            pairs.append((x, y, None))
        return pairs
    if m.kind == "octagon":
        pairs = []
        for k in range(_oct.N_SIDES):
            z = _oct.side_points((k + 4) % _oct.N_SIDES, t)
            gz = _oct.apply(_oct.GENERATORS[k], z)
            pairs.append((np.stack([z.real, z.imag], -1), np.stack([gz.real, gz.imag], -1),
                          _oct.derivative(_oct.GENERATORS[k], z)))
        return pairs
    return []


def check_potential_equivariance(m: ManifoldModel, U: Potential, tol: float = 1e-10) -> float:
    worst = 0.0
    for x, y, _ in _boundary_pairs(m):
        worst = max(worst, float(np.max(np.abs(U.value(x) - U.value(y)))))
    if worst > tol:
        raise FieldConstructionError(f"potential is not invariant under the {m.name} transitions "
                                     f"(mismatch {worst:.3e})")
    return worst


def check_form_equivariance(m: ManifoldModel, terms: Sequence[FormTerm], tol: float = 1e-10) -> float:
    def th(x):
        out = np.zeros(np.shape(x))
        for t in terms:
            out = out + t.theta(x)
        return out

    worst = 0.0
    for x, y, gp in _boundary_pairs(m):
        a, b = th(x), th(y)
        if gp is None:
            err = np.abs(a - b)
        else:
            # pullback: theta_c(g z) g'(z) = theta_c(z) with theta_c = theta_1 - i theta_2
            ca = a[..., 0] - 1j * a[..., 1]
            cb = b[..., 0] - 1j * b[..., 1]
            err = np.abs(cb * gp - ca)
        worst = max(worst, float(np.max(err)))
    if worst > tol:
        raise FieldConstructionError(f"1-form is not equivariant under the {m.name} transitions "
                                     f"(mismatch {worst:.3e})")
    return worst


# -- constructors -----------------------------------------------------------------


def field_from_potential(m: ManifoldModel, U: Potential | Callable, name: str = "gradient") -> ExternalField:
    """``E = -grad U``; ``U`` must be invariant under the model transitions."""
    if not isinstance(U, Potential):
        U = CallablePotential(U)
    check_potential_equivariance(m, U)
    return ExternalField(m, (GradientTerm(U),), 1.0, U, name)


def field_from_form(m: ManifoldModel, terms: Sequence[FormTerm], name: str = "form") -> ExternalField:
    terms = tuple(terms)
    check_form_equivariance(m, terms)
    return ExternalField(m, terms, 1.0, None, name)


def closed_nonexact_form(m: ManifoldModel, periods: Sequence[float],
                         perturbation: Potential | None = None) -> ExternalField:
    """Constant form with prescribed periods on the coordinate cycles of a torus,
    plus an optional exact perturbation ``-dW``."""
    if m.kind != "torus":
        raise UnsupportedModelError("closed_nonexact_form needs a torus model")
    periods = tuple(float(p) for p in periods)
    if len(periods) != m.dim:
        raise FieldConstructionError("one period per generating cycle")
    terms: list[FormTerm] = [ConstantForm(periods)]
    if perturbation is not None:
        check_potential_equivariance(m, perturbation)
        terms.append(GradientTerm(perturbation))
    pot = None
    if all(p == 0.0 for p in periods):
        pot = perturbation if perturbation is not None else ZeroPotential()
    return ExternalField(m, tuple(terms), 1.0, pot, "closed_form")


def collar_form(m: ManifoldModel, period: float = 1.0, width: float = 0.5,
                generator: int = 0) -> ExternalField:
    if m.kind != "octagon":
        raise UnsupportedModelError("collar forms are built on the octagon surface")
    return field_from_form(m, [CollarForm(period, width, generator)], "collar")


# ---------------------------------------------------------------------------
# 1-forms as functions on the tangent bundle


@dataclass(frozen=True)
class OneForm:
    field: ExternalField

    def __call__(self, x, v):
        return self.field.theta_of(x, v)

    def exterior_derivative_residual(self, h: float = 1e-3, n: int = 12, seed: int = 0) -> float:
        """Largest finite-difference ``|d theta|`` over sample points."""
        m = self.field.model
        rng = np.random.default_rng(seed)
        if m.compact:
            x = m.sample_points(rng, n)
        else:
            x = rng.uniform(-0.5, 0.5, (n, m.dim))
        worst = 0.0
        for i in range(m.dim):
            for j in range(i + 1, m.dim):
                ei = np.zeros(m.dim)
                ej = np.zeros(m.dim)
                ei[i] = h
                ej[j] = h
                dj_ti = (self.field.theta(x + ej)[:, i] - self.field.theta(x - ej)[:, i]) / (2 * h)
                di_tj = (self.field.theta(x + ei)[:, j] - self.field.theta(x - ei)[:, j]) / (2 * h)
                worst = max(worst, float(np.max(np.abs(dj_ti - di_tj))))
        return worst

    def is_closed(self, h: float = 1e-3, floor: float = 1e-8) -> bool:
        """Closed when the residual is at roundoff level or shrinks like ``h^2``."""
        r1 = self.exterior_derivative_residual(h)
        if r1 < floor * max(1.0, abs(self.field.scale)):
            return True
        r2 = self.exterior_derivative_residual(h / 2)
        return r2 < 0.35 * r1

    def line_integral(self, path: Callable, n: int = 2048) -> float:
        """Integrate along a closed chart path ``path(t)``, ``t`` in [0, 1)."""
        t = np.arange(n) / n
        x = path(t)
        dx = (path(t + 1e-6) - path(t - 1e-6)) / 2e-6
        return float(np.mean(np.sum(self.field.theta(x) * dx, axis=-1)))


# ---------------------------------------------------------------------------
# Lorentz forces


@dataclass(frozen=True)
class LorentzForce:
    """Magnetic force from a closed 2-form ``Omega``: ``<F_x(v), w> = Omega_x(v, w)``.

    On surfaces only uniform intensities are shipped, ``Omega = b * area``, which
    gives ``F_x(v) = b * iv``.  In higher dimensions ``two_form(x)`` returns the
    antisymmetric components ``Omega_ij``.
    """

    model: ManifoldModel
    intensity: float = 0.0
    two_form: Callable | None = None

    def __post_init__(self):
        if self.two_form is not None and self.intensity != 0.0:
            raise FieldConstructionError("give either an intensity or a two_form")
        if self.model.dim == 2 and self.two_form is not None:
            raise FieldConstructionError("surfaces use a uniform intensity")

    def omega(self, x):
        x = np.asarray(x, float)
        n = self.model.dim
        if self.two_form is not None:
            return np.asarray(self.two_form(x), float)
        if n == 2:
            area = np.exp(2.0 * self.model.exponent.value(x))
            J = np.array([[0.0, 1.0], [-1.0, 0.0]])
            return self.intensity * area[..., None, None] * J
        return np.zeros(x.shape + (n,))

    def apply(self, x, v):
        """``F_x(v)`` in coordinates."""
        x = np.asarray(x, float)
        Ov = np.einsum("...jk,...j->...k", self.omega(x), v)
        return self.model.raise_index(x, Ov)

    def closedness_residual(self, h: float = 1e-3, n: int = 8, seed: int = 0) -> float:
        m = self.model
        if m.dim == 2 or self.two_form is None:
            return 0.0
        rng = np.random.default_rng(seed)
        x = rng.random((n, m.dim)) if m.kind == "torus" else rng.uniform(-0.4, 0.4, (n, m.dim))
        worst = 0.0

        def d(i, a, b):
            e = np.zeros(m.dim)
            e[i] = h
            return (self.omega(x + e)[:, a, b] - self.omega(x - e)[:, a, b]) / (2 * h)

        for i in range(m.dim):
            for j in range(i + 1, m.dim):
                for k in range(j + 1, m.dim):
                    r = d(i, j, k) - d(j, i, k) + d(k, i, j)
                    worst = max(worst, float(np.max(np.abs(r))))
        return worst

    @property
    def active(self) -> bool:
        return self.two_form is not None or self.intensity != 0.0


# ---------------------------------------------------------------------------
# velocity-dependent surface fields


@dataclass(frozen=True)
class GeneralizedField:
    """``lambda(x, phi)`` on the unit tangent bundle of a surface.

    ``phi`` is the angle of the unit vector in the conformal chart frame.  The
    callables return arrays broadcast against ``phi``; ``grad_x`` has a trailing
    axis of length 2.
    """

    model: ManifoldModel
    value: Callable
    grad_x: Callable
    dphi: Callable
    mode: int | None = None
    name: str = "lambda"
    section: "HolomorphicSection | None" = None
    section_scale: float = 1.0

    def __call__(self, x, phi):
        return self.value(x, phi)

    def scaled(self, s: float) -> "GeneralizedField":
        return GeneralizedField(self.model, lambda x, p: s * self.value(x, p),
                                lambda x, p: s * self.grad_x(x, p),
                                lambda x, p: s * self.dphi(x, p), self.mode, self.name,
                                self.section, s * self.section_scale)


def gaussian_lambda(E: ExternalField) -> GeneralizedField:
    """``lambda(x, v) = <E(x), iv>`` for a Gaussian field on a surface."""
    m = E.model
    if m.dim != 2:
        raise UnsupportedModelError("generalized fields live on surfaces")

    def value(x, phi):
        x = np.asarray(x, float)
        th = E.theta(x)
        ef = np.exp(-m.exponent.value(x))
        return ef * (-th[..., 0] * np.sin(phi) + th[..., 1] * np.cos(phi))

    def grad_x(x, phi):
        x = np.asarray(x, float)
        th, dth = E.theta(x), E.dtheta(x)
        ef = np.exp(-m.exponent.value(x))
        df = m.exponent.grad(x)
        s, c = np.sin(phi)[..., None], np.cos(phi)[..., None]
        lam = (-th[..., 0:1] * s + th[..., 1:2] * c)
        dlam = -dth[..., 0, :] * s + dth[..., 1, :] * c
        return ef[..., None] * (dlam - df * lam)

    def dphi(x, phi):
        x = np.asarray(x, float)
        th = E.theta(x)
        ef = np.exp(-m.exponent.value(x))
        return ef * (-th[..., 0] * np.cos(phi) - th[..., 1] * np.sin(phi))

    return GeneralizedField(m, value, grad_x, dphi, 1, f"gaussian({E.name})")


@dataclass(frozen=True)
class HolomorphicSection:
    """``q = h(z) dz^k`` viewed as a function on the unit tangent bundle.

    ``coefficients`` are the complex polynomial coefficients of ``h`` (constant
    term first).  On tori only constants are doubly periodic; the octagon has no
    shipped automorphic forms.
    """

    model: ManifoldModel
    k: int
    coefficients: tuple[complex, ...] = (1.0,)

    def __post_init__(self):
        if self.model.dim != 2:
            raise UnsupportedModelError("holomorphic sections live on surfaces")
        if self.k < 1:
            raise FieldConstructionError("k must be a positive integer")
        if self.model.kind == "octagon":
            raise UnsupportedModelError("no automorphic k-differentials are shipped for the octagon")
        if self.model.kind == "torus" and any(c != 0 for c in self.coefficients[1:]):
            raise FieldConstructionError("on a torus h(z) must be constant")

    def _h(self, x):
        z = x[..., 0] + 1j * x[..., 1]
        h = np.zeros(z.shape, complex)
        dh = np.zeros(z.shape, complex)
        for j, c in enumerate(self.coefficients):
            h = h + c * z ** j
            if j:
                dh = dh + j * c * z ** (j - 1)
        return h, dh

    def as_function(self, x, phi):
        """``q(x, e^{i phi}) = h(z) exp(-k f) exp(i k phi)``."""
        x = np.asarray(x, float)
        h, _ = self._h(x)
        f = self.model.exponent.value(x)
        return h * np.exp(-self.k * f + 1j * self.k * np.asarray(phi))

    def grad_x(self, x, phi):
        x = np.asarray(x, float)
        h, dh = self._h(x)
        q = self.as_function(x, phi)
        df = self.model.exponent.grad(x)
        ratio = np.where(h != 0, dh / np.where(h != 0, h, 1.0), 0.0)
        # d/dx h = h', d/dy h = i h' (holomorphic)
        gx = q * (ratio - self.k * df[..., 0])
        gy = q * (1j * ratio - self.k * df[..., 1])
        # where h vanishes the log-derivative trick fails; use h' directly
        base = np.exp(-self.k * self.model.exponent.value(x) + 1j * self.k * np.asarray(phi))
        gx = np.where(h != 0, gx, dh * base)
        gy = np.where(h != 0, gy, 1j * dh * base)
        return np.stack([gx, gy], axis=-1)


def lambda_from_section(q: HolomorphicSection, m: ManifoldModel | None = None) -> GeneralizedField:
    """``lambda = Re(q)`` as a generalized thermostat field."""
    m = q.model if m is None else m
    if m.dim != 2:
        raise UnsupportedModelError("lambda_from_section needs a surface")
    if m is not q.model:
        raise FieldConstructionError("section belongs to a different model")
    return GeneralizedField(
        m,
        lambda x, phi: np.real(q.as_function(x, phi)),
        lambda x, phi: np.real(q.grad_x(x, phi)),
        lambda x, phi: np.real(1j * q.k * q.as_function(x, phi)),
        q.k,
        f"Re(q_{q.k})",
        q,
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldConfig:
    """Everything that forces the flow: ``s * E``, a Lorentz force, a generalized lambda."""

    external: ExternalField | None = None
    scale: float = 1.0
    lorentz: LorentzForce | None = None
    generalized: GeneralizedField | None = None

    def __post_init__(self):
        if self.generalized is not None and self.generalized.model.dim != 2:
            raise UnsupportedModelError("generalized fields require a surface")

    @property
    def effective_external(self) -> ExternalField | None:
        if self.external is None or self.scale == 0.0:
            return None
        return self.external.scaled(self.scale)

    def with_scale(self, s: float) -> "FieldConfig":
        return FieldConfig(self.external, s, self.lorentz, self.generalized)

    @property
    def preserves_liouville(self) -> bool:
        return self.effective_external is None and self.generalized is None
