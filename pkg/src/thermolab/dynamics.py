"""Thermostat flows on the unit sphere bundle.

States are stored as flat arrays so that whole ensembles advance together:

* surfaces: ``(x, y, phi)`` where ``phi`` is the angle of the unit vector in the
  conformal frame, ``v = exp(-f) (cos phi, sin phi)``;
* dimension ``n >= 3``: ``(x, v)`` with the coordinate velocity ``v`` kept at unit
  length by renormalization after every step.

All shipped models are conformally flat, ``g = exp(2f) delta``, which gives the
Christoffel contraction ``Gamma(v, v) = 2 (df.v) v - |v|^2 df`` in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import octagon as _oct
from .fields import FieldConfig, OneForm
from .geometry import DomainError, ManifoldModel, UnsupportedModelError, gaussian_curvature


class IntegratorError(RuntimeError):
    """Raised when the unit-speed constraint drifts beyond the configured bound."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoOrbitFound(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    scheme: str = "rk4"
    renormalize: bool = True
    max_transitions: int = 64
    drift_tol: float = 1e-6  # allowed speed drift per unit time before renormalization

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("integrator step must be positive")
        if self.scheme != "rk4":
            raise ValueError(f"unknown scheme {self.scheme!r}")


# ---------------------------------------------------------------------------
# phase points


@dataclass(frozen=True)
class PhasePoint:
    """A unit tangent vector ``v`` at the chart point ``x``."""

    model: ManifoldModel
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = self.model.check_domain(np.asarray(self.x, float))
        v = np.asarray(self.v, float)
        if abs(float(self.model.norm(x, v)) - 1.0) > 1e-10:
            raise ValueError("phase point velocity must have unit length")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_angle(cls, m: ManifoldModel, x, phi: float) -> "PhasePoint":
        if m.dim != 2:
            raise UnsupportedModelError("angle coordinates exist only on surfaces")
        x = np.asarray(x, float)
        ef = math.exp(-float(m.exponent.value(x)))
        return cls(m, x, ef * np.array([math.cos(phi), math.sin(phi)]))

    @classmethod
    def from_direction(cls, m: ManifoldModel, x, direction) -> "PhasePoint":
        x = np.asarray(x, float)
        d = np.asarray(direction, float)
        return cls(m, x, d / float(m.norm(x, d)))

    @property
    def phi(self) -> float:
        return float(math.atan2(self.v[1], self.v[0]))

    def state(self) -> np.ndarray:
        return to_state(self.model, self.x, self.v)

    def flipped(self) -> "PhasePoint":
        return PhasePoint(self.model, self.x, -self.v)


def state_dim(m: ManifoldModel) -> int:
    return 3 if m.dim == 2 else 2 * m.dim


def to_state(m: ManifoldModel, x, v):
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    if m.dim == 2:
        return np.concatenate([x, np.arctan2(v[..., 1], v[..., 0])[..., None]], axis=-1)
    return np.concatenate([x, v], axis=-1)


def positions(m: ManifoldModel, S):
    return S[..., : m.dim]


def velocities(m: ManifoldModel, S):
    """Coordinate velocity ``v`` of each state."""
    if m.dim == 2:
        ef = np.exp(-m.exponent.value(S[..., :2]))
        return ef[..., None] * np.stack([np.cos(S[..., 2]), np.sin(S[..., 2])], axis=-1)
    return S[..., m.dim:]


def from_state(m: ManifoldModel, S) -> PhasePoint:
    S = np.asarray(S, float)
    return PhasePoint(m, positions(m, S).copy(), velocities(m, S).copy())


def sample_liouville(m: ManifoldModel, rng: np.random.Generator, size: int):
    """States distributed by the Liouville measure on SM."""
    x = m.sample_points(rng, size)
    if m.dim == 2:
        phi = 2 * np.pi * rng.random(size)
        return np.concatenate([x, phi[:, None]], axis=-1)
    return np.concatenate([x, m.sample_unit_vectors(rng, x)], axis=-1)


# ---------------------------------------------------------------------------
# the vector field


@dataclass
class _Aux:
    """Per-state quantities integrated alongside the flow."""

    theta_v: np.ndarray  # theta_x(v) of the unscaled external field (0 if none)
    divergence: np.ndarray


def _surface_terms(m, fc: FieldConfig, x, phi, need_jac=False):
    f = m.exponent.value(x)
    df = m.exponent.grad(x)
    a = np.exp(-f)
    c, s = np.cos(phi), np.sin(phi)
    E = fc.external
    sc = fc.scale if E is not None else 0.0
    if E is not None:
        th = E.theta(x)
    else:
        th = np.zeros_like(x)
    w = df + sc * th
    P = -w[..., 0] * s + w[..., 1] * c
    rate = a * P
    if fc.lorentz is not None and fc.lorentz.active:
        rate = rate + fc.lorentz.intensity
    lam_phi = 0.0
    if fc.generalized is not None:
        rate = rate + fc.generalized.value(x, phi)
        lam_phi = fc.generalized.dphi(x, phi)
    theta_v = a * (th[..., 0] * c + th[..., 1] * s)
    div = -sc * theta_v + lam_phi
    out = dict(f=f, df=df, a=a, c=c, s=s, th=th, w=w, P=P, rate=rate, theta_v=theta_v,
               div=np.broadcast_to(div, np.shape(phi)), lam_phi=lam_phi, sc=sc)
    if need_jac:
        ddf = m.exponent.hess(x)
        dw = ddf + (sc * E.dtheta(x) if E is not None else 0.0)
        out["dw"] = dw
    return out


def phase_velocity(m: ManifoldModel, fc: FieldConfig, S, aux=False):
    """Time derivative of the state array ``S``."""
    S = np.asarray(S, float)
    if m.dim == 2:
        x, phi = S[..., :2], S[..., 2]
        t = _surface_terms(m, fc, x, phi)
        dS = np.stack([t["a"] * t["c"], t["a"] * t["s"], t["rate"]], axis=-1)
        if aux:
            return dS, _Aux(t["theta_v"], t["div"])
        return dS
    if fc.generalized is not None:
        raise UnsupportedModelError("generalized thermostats are defined on surfaces only")
    n = m.dim
    x, v = S[..., :n], S[..., n:]
    f = m.exponent.value(x)
    df = m.exponent.grad(x)
    dfv = np.sum(df * v, axis=-1)
    vv = np.sum(v * v, axis=-1)
    acc = -(2.0 * dfv[..., None] * v - vv[..., None] * df)
    theta_v = np.zeros(S.shape[:-1])
    E = fc.external
    if E is not None and fc.scale != 0.0:
        th = E.theta(x)
        theta_v = np.sum(th * v, axis=-1)
        Evec = np.exp(-2.0 * f)[..., None] * th
        acc = acc + fc.scale * (Evec - theta_v[..., None] * v)
    if fc.lorentz is not None and fc.lorentz.active:
        acc = acc + fc.lorentz.apply(x, v)
    dS = np.concatenate([v, acc], axis=-1)
    if aux:
        sc = fc.scale if E is not None else 0.0
        return dS, _Aux(theta_v, -(n - 1) * sc * theta_v)
    return dS


def covariant_acceleration(m: ManifoldModel, fc: FieldConfig, p: PhasePoint):
    """``Dv/dt`` at ``p``: ``sE - s<E,v>v + F(v)`` or ``lambda iv`` on surfaces."""
    x, v = p.x, p.v
    acc = np.zeros(m.dim)
    E = fc.external
    if E is not None and fc.scale != 0.0:
        Ev = E.vector(x)
        acc = acc + fc.scale * (Ev - float(E.theta_of(x, v)) * v)
    if fc.lorentz is not None and fc.lorentz.active:
        acc = acc + fc.lorentz.apply(x, v)
    if fc.generalized is not None:
        if m.dim != 2:
            raise UnsupportedModelError("generalized thermostats are defined on surfaces only")
        iv = np.array([-v[1], v[0]])
        acc = acc + float(fc.generalized.value(x, p.phi)) * iv
    return acc


def thermostat_vector_field(m: ManifoldModel, fc: FieldConfig, p: PhasePoint):
    """Phase velocity ``(xdot, vdot)`` in chart coordinates at the phase point ``p``.

    The base velocity is ``v``; ``vdot`` is the coordinate derivative, i.e. the
    covariant acceleration minus the Christoffel term.
    """
    if fc.generalized is not None and m.dim != 2:
        raise UnsupportedModelError("generalized thermostats are defined on surfaces only")
    x, v = p.x, p.v
    df = m.exponent.grad(x)
    gam = 2.0 * float(df @ v) * v - float(v @ v) * df
    return v.copy(), covariant_acceleration(m, fc, p) - gam


def divergence_along(m: ManifoldModel, fc: FieldConfig, p: PhasePoint) -> float:
    """Divergence of the generator with respect to the Liouville measure."""
    _, a = phase_velocity(m, fc, p.state()[None, :], aux=True)
    return float(a.divergence[0])


# ---------------------------------------------------------------------------
# tangent dynamics (surfaces)


def surface_jacobian(m: ManifoldModel, fc: FieldConfig, S):
    """``d(phase_velocity)/dS`` for surface states, shape ``(..., 3, 3)``."""
    x, phi = S[..., :2], S[..., 2]
    t = _surface_terms(m, fc, x, phi, need_jac=True)
    a, c, s, df = t["a"], t["c"], t["s"], t["df"]
    J = np.zeros(S.shape + (3,))
    J[..., 0, 0:2] = -(a * c)[..., None] * df
    J[..., 1, 0:2] = -(a * s)[..., None] * df
    J[..., 0, 2] = -a * s
    J[..., 1, 2] = a * c
    dc = np.stack([-s, c], axis=-1)
    dwdc = np.einsum("...ij,...i->...j", t["dw"], dc)
    J[..., 2, 0:2] = a[..., None] * (-t["P"][..., None] * df + dwdc)
    J[..., 2, 2] = -a * (t["w"][..., 0] * c + t["w"][..., 1] * s)
    if fc.generalized is not None:
        J[..., 2, 0:2] += fc.generalized.grad_x(x, phi)
        J[..., 2, 2] += fc.generalized.dphi(x, phi)
    return J


def sasaki_weight(m: ManifoldModel, S):
    """Matrix taking surface state perturbations to an orthonormal Sasaki frame.

    Its determinant is the Liouville density ``exp(2f)``.
    """
    x = S[..., :2]
    ef = np.exp(m.exponent.value(x))
    df = m.exponent.grad(x)
    W = np.zeros(S.shape[:-1] + (3, 3))
    W[..., 0, 0] = ef
    W[..., 1, 1] = ef
    W[..., 2, 0] = -df[..., 1]
    W[..., 2, 1] = df[..., 0]
    W[..., 2, 2] = 1.0
    return W


# ---------------------------------------------------------------------------
# transitions


def apply_transitions(m: ManifoldModel, S, D=None, max_steps: int = 64):
    """Bring states back to the fundamental domain; transport tangent columns ``D``.

    Returns ``(S, D, moved)`` where ``moved`` flags states that changed chart.
    """
    S = np.array(S, float, copy=True)
    if m.kind == "torus":
        x = S[..., : m.dim]
        moved = np.any((x < 0.0) | (x >= 1.0), axis=-1)
        S[..., : m.dim] = np.mod(x, 1.0)
        if m.dim == 2:
            S[..., 2] = np.mod(S[..., 2], 2 * np.pi)
        return S, D, moved
    if m.kind == "disk":
        if np.any(np.sum(S[..., :2] ** 2, axis=-1) >= 1.0):
            raise DomainError("trajectory left the Poincare disk")
        S[..., 2] = np.mod(S[..., 2], 2 * np.pi)
        return S, D, np.zeros(S.shape[:-1], bool)
    z = S[..., 0] + 1j * S[..., 1]
    _, moved = _oct.side_violation(z)
    if np.any(np.abs(z) >= 1.0):
        raise DomainError("trajectory left the Poincare disk")
    if moved.any():
        idx = np.nonzero(moved)
        zr, M = _oct.reduce_points(z[idx], max_steps)
        gp = _oct.derivative(M, z[idx])
        S[idx + (0,)] = zr.real
        S[idx + (1,)] = zr.imag
        S[idx + (2,)] = S[idx + (2,)] + np.angle(gp)
        if D is not None:
            slope = _oct.log_derivative_slope(M, z[idx])
            Dm = D[idx]
            dz = Dm[..., 0, :] + 1j * Dm[..., 1, :]
            dz2 = gp[..., None] * dz
            Dn = np.empty_like(Dm)
            Dn[..., 0, :] = dz2.real
            Dn[..., 1, :] = dz2.imag
            Dn[..., 2, :] = Dm[..., 2, :] + np.imag(slope[..., None] * dz)
            D = D.copy()
            D[idx] = Dn
    S[..., 2] = np.mod(S[..., 2], 2 * np.pi)
    return S, D, moved


def _renormalize(m, S, h, cfg: IntegratorConfig):
    if m.dim == 2 or not cfg.renormalize:
        return S
    n = m.dim
    x, v = S[..., :n], S[..., n:]
    speed = np.exp(m.exponent.value(x)) * np.linalg.norm(v, axis=-1)
    drift = np.max(np.abs(speed - 1.0)) if speed.size else 0.0
    if drift > cfg.drift_tol * abs(h):
        raise IntegratorError("unit-speed drift exceeds bound; reduce the step",
                              {"drift": float(drift), "step": h})
    S = S.copy()
    S[..., n:] = v / speed[..., None]
    return S


# ---------------------------------------------------------------------------
# stepping


def rk4_step(m, fc, S, h, cfg: IntegratorConfig | None = None, with_aux=False):
    """One RK4 step; returns the new state and optionally step integrals of aux data."""
    cfg = cfg or IntegratorConfig(step=abs(h))
    k1, a1 = phase_velocity(m, fc, S, aux=True)
    k2, a2 = phase_velocity(m, fc, S + 0.5 * h * k1, aux=True)
    k3, a3 = phase_velocity(m, fc, S + 0.5 * h * k2, aux=True)
    k4, a4 = phase_velocity(m, fc, S + h * k3, aux=True)
    Sn = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    Sn = _renormalize(m, Sn, h, cfg)
    Sn, _, _ = apply_transitions(m, Sn, max_steps=cfg.max_transitions)
    if not with_aux:
        return Sn
    th = (h / 6.0) * (a1.theta_v + 2 * a2.theta_v + 2 * a3.theta_v + a4.theta_v)
    dv = (h / 6.0) * (a1.divergence + 2 * a2.divergence + 2 * a3.divergence + a4.divergence)
    return Sn, th, dv


def rk4_step_tangent(m, fc, S, D, h, cfg: IntegratorConfig | None = None):
    """RK4 step for a surface state and its tangent columns ``D`` (shape ``(..., 3, k)``).

    Returns ``(S, D, int theta(v) dt, int div dt)`` over the step.
    """
    cfg = cfg or IntegratorConfig(step=abs(h))

    def rhs(S_, D_):
        dS, a = phase_velocity(m, fc, S_, aux=True)
        return dS, surface_jacobian(m, fc, S_) @ D_, a

    k1, l1, a1 = rhs(S, D)
    k2, l2, a2 = rhs(S + 0.5 * h * k1, D + 0.5 * h * l1)
    k3, l3, a3 = rhs(S + 0.5 * h * k2, D + 0.5 * h * l2)
    k4, l4, a4 = rhs(S + h * k3, D + h * l3)
    Sn = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    Dn = D + (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
    Sn, Dn, _ = apply_transitions(m, Sn, Dn, max_steps=cfg.max_transitions)
    th = (h / 6.0) * (a1.theta_v + 2 * a2.theta_v + 2 * a3.theta_v + a4.theta_v)
    dv = (h / 6.0) * (a1.divergence + 2 * a2.divergence + 2 * a3.divergence + a4.divergence)
    return Sn, Dn, th, dv


def advance(m, fc, S, T, cfg: IntegratorConfig, backward=False):
    """Advance states by time ``T`` (fixed steps, last step shortened)."""
    n_steps = int(math.ceil(T / cfg.step - 1e-9)) if T > 0 else 0
    if n_steps == 0:
        return np.array(S, float, copy=True)
    h = T / n_steps
    h = -h if backward else h
    for _ in range(n_steps):
        S = rk4_step(m, fc, S, h, cfg)
    return S


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    model: ManifoldModel
    times: np.ndarray
    states: np.ndarray
    theta: np.ndarray
    lam: np.ndarray

    def point(self, i: int) -> PhasePoint:
        return from_state(self.model, self.states[i])

    @property
    def final(self) -> PhasePoint:
        return self.point(-1)

    def speed_error(self) -> float:
        v = velocities(self.model, self.states)
        return float(np.max(np.abs(self.model.norm(positions(self.model, self.states), v) - 1.0)))

    def columns(self) -> list[str]:
        n = self.model.dim
        cols = ["t"] + [f"x{i + 1}" for i in range(n)]
        cols += ["phi"] if n == 2 else [f"v{i + 1}" for i in range(n)]
        return cols + ["theta", "lambda"]

    def to_csv(self, path, stride: int = 1):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\r\n")
            w.writerow(self.columns())
            for i in range(0, len(self.times), stride):
                row = [self.times[i], *self.states[i], self.theta[i], self.lam[i]]
                w.writerow([repr(float(r)) for r in row])


def flow(m: ManifoldModel, fc: FieldConfig, p0: PhasePoint, T: float,
         cfg: IntegratorConfig | None = None, stride: int = 1, backward: bool = False) -> Trajectory:
    """Integrate one trajectory for time ``T`` and record every ``stride``-th step."""
    if T < 0:
        raise ValueError("T must be non-negative; use backward=True to reverse time")
    if fc.generalized is not None and m.dim != 2:
        raise UnsupportedModelError("generalized thermostats are defined on surfaces only")
    cfg = cfg or IntegratorConfig()
    n_steps = int(math.ceil(T / cfg.step - 1e-9)) if T > 0 else 0
    h = T / n_steps if n_steps else 0.0
    h = -h if backward else h
    S = p0.state()[None, :]
    S, _, _ = apply_transitions(m, S)
    times, states = [0.0], [S[0].copy()]
    for i in range(1, n_steps + 1):
        S = rk4_step(m, fc, S, h, cfg)
        if i % stride == 0 or i == n_steps:
            times.append(i * h)
            states.append(S[0].copy())
    states = np.array(states)
    theta, lam = observe_theta_lambda(m, fc, states)
    return Trajectory(m, np.array(times), states, theta, lam)


def observe_theta_lambda(m, fc: FieldConfig, states):
    x = positions(m, states)
    v = velocities(m, states)
    theta = fc.external.theta_of(x, v) if fc.external is not None else np.zeros(len(states))
    if fc.generalized is not None:
        lam = fc.generalized.value(x, states[..., 2])
    else:
        lam = np.zeros(len(states))
    return np.asarray(theta, float), np.asarray(lam, float)


def state_distance(m: ManifoldModel, S1, S2):
    """Chart distance between states, wrapping tori and angles."""
    d = np.asarray(S1, float) - np.asarray(S2, float)
    if m.kind == "torus":
        d[..., : m.dim] = (d[..., : m.dim] + 0.5) % 1.0 - 0.5
    if m.dim == 2:
        d[..., 2] = (d[..., 2] + np.pi) % (2 * np.pi) - np.pi
    return np.linalg.norm(d, axis=-1)


def reversibility_residual(m, fc, p: PhasePoint, T: float, cfg: IntegratorConfig | None = None) -> float:
    """Compare ``flip(flow_T(flip p))`` with the backward flow of ``p``."""
    cfg = cfg or IntegratorConfig()
    fwd = flow(m, fc, p.flipped(), T, cfg, stride=10 ** 9).final.flipped()
    bwd = flow(m, fc, p, T, cfg, stride=10 ** 9, backward=True).final
    return float(state_distance(m, fwd.state(), bwd.state()))


# ---------------------------------------------------------------------------
# surface operators


class SurfaceOperators:
    """The frame operators on SM of a surface acting on functions ``u(x, phi)``.

    ``u`` is a vectorized callable (``x`` of shape ``(..., 2)``, ``phi`` of shape
    ``(...)``).  Angle derivatives are spectral on a uniform grid of ``n_fiber``
    points; base derivatives use central differences of step ``step``.
    """

    def __init__(self, model: ManifoldModel, step: float = 1e-3, n_fiber: int = 256):
        if model.dim != 2:
            raise UnsupportedModelError("surface operators need a surface")
        self.model = model
        self.step = step
        self.n_fiber = n_fiber
        self.grid = 2 * np.pi * np.arange(n_fiber) / n_fiber
        self.freqs = np.fft.fftfreq(n_fiber, 1.0 / n_fiber)

    # -- fiber analysis --------------------------------------------------------
    def _grid_values(self, u, x):
        x = np.asarray(x, float)
        return u(x[..., None, :], np.broadcast_to(self.grid, x.shape[:-1] + (self.n_fiber,)))

    def modes(self, u, x):
        """Fiber Fourier coefficients ``u_k(x)`` with ``u = sum_k u_k exp(i k phi)``."""
        return np.fft.fft(self._grid_values(u, x), axis=-1) / self.n_fiber

    def _synth(self, coeffs, phi):
        phase = np.exp(1j * np.asarray(phi)[..., None] * self.freqs)
        return np.sum(coeffs * phase, axis=-1)

    def V(self, u):
        def Vu(x, phi):
            vals = self._grid_values(u, x)
            c = np.fft.fft(vals, axis=-1) / self.n_fiber
            out = self._synth(1j * self.freqs * c, phi)
            return out if np.iscomplexobj(vals) else out.real
        return Vu

    def _dx(self, u, x, phi, i):
        e = np.zeros(2)
        e[i] = self.step
        return (u(x + e, phi) - u(x - e, phi)) / (2 * self.step)

    def G(self, u):
        m = self.model
        Vu = self.V(u)

        def Gu(x, phi):
            x = np.asarray(x, float)
            a = np.exp(-m.exponent.value(x))
            df = m.exponent.grad(x)
            c, s = np.cos(phi), np.sin(phi)
            return a * (c * self._dx(u, x, phi, 0) + s * self._dx(u, x, phi, 1)
                        + (df[..., 1] * c - df[..., 0] * s) * Vu(x, phi))
        return Gu

    def H(self, u):
        m = self.model
        Vu = self.V(u)

        def Hu(x, phi):
            x = np.asarray(x, float)
            a = np.exp(-m.exponent.value(x))
            df = m.exponent.grad(x)
            c, s = np.cos(phi), np.sin(phi)
            return a * (-s * self._dx(u, x, phi, 0) + c * self._dx(u, x, phi, 1)
                        - (df[..., 1] * s + df[..., 0] * c) * Vu(x, phi))
        return Hu

    def G_lambda(self, u, lam: Callable):
        Gu, Vu = self.G(u), self.V(u)
        return lambda x, phi: Gu(x, phi) + lam(x, phi) * Vu(x, phi)

    def eta_minus(self, u):
        Gu, Hu = self.G(u), self.H(u)
        return lambda x, phi: 0.5 * (Gu(x, phi) + 1j * Hu(x, phi))

    def eta_plus(self, u):
        Gu, Hu = self.G(u), self.H(u)
        return lambda x, phi: 0.5 * (Gu(x, phi) - 1j * Hu(x, phi))

    def curvature(self, x):
        return gaussian_curvature(self.model, x)

    def bracket_residuals(self, u, x, phi):
        """Residuals of ``[V,G] = H``, ``[V,H] = -G`` and ``[G,H] = K V`` at points."""
        G, H, V = self.G, self.H, self.V
        K = self.curvature(x)
        r1 = V(G(u))(x, phi) - G(V(u))(x, phi) - H(u)(x, phi)
        r2 = V(H(u))(x, phi) - H(V(u))(x, phi) + G(u)(x, phi)
        r3 = G(H(u))(x, phi) - H(G(u))(x, phi) - K * V(u)(x, phi)
        return np.abs(r1), np.abs(r2), np.abs(r3)

    def mode_leakage(self, w, x, keep: int):
        """Largest fiber-mode amplitude of ``w`` outside mode ``keep``."""
        c = self.modes(w, x)
        mask = self.freqs != keep
        return float(np.max(np.abs(c[..., mask]))), float(np.max(np.abs(c[..., ~mask])))


# ---------------------------------------------------------------------------
# closed orbits


@dataclass
class ClosedOrbit:
    start: np.ndarray  # surface state on the orbit
    period: float
    holonomy: float
    iterations: int
    residual: float
    segments: np.ndarray = field(repr=False, default=None)


def _segment(m, fc, S0, tau, n_steps, theta_form):
    """Integrate ``S0`` for time ``tau``; return end state, its tangent map, velocity and int theta."""
    S = np.array(S0, float)[None, :]
    D = np.eye(3)[None]
    h = tau / n_steps
    hol = 0.0
    for _ in range(n_steps):
        if theta_form is None:
            S, D, th, _ = rk4_step_tangent(m, fc, S, D, h)
        else:
            S0_ = S
            S, D, _, _ = rk4_step_tangent(m, fc, S, D, h)
            th = _form_step_integral(m, fc, theta_form, S0_, h)
        hol += float(th[0]) if np.ndim(th) else float(th)
    return S[0], D[0], phase_velocity(m, fc, S)[0], hol


def _form_step_integral(m, fc, theta_form: OneForm, S, h):
    """RK4-weighted integral of ``theta_form`` along one step from ``S``."""
    vals = []
    k = np.zeros_like(S)
    for c in (0.0, 0.5, 0.5, 1.0):
        St = S + c * h * k
        k = phase_velocity(m, fc, St)
        vals.append(theta_form(positions(m, St), velocities(m, St)))
    return (h / 6.0) * (vals[0] + 2 * vals[1] + 2 * vals[2] + vals[3])


def _wrap_diff(m, a, b):
    d = a - b
    if m.kind == "torus":
        d[:2] = (d[:2] + 0.5) % 1.0 - 0.5
    d[2] = (d[2] + np.pi) % (2 * np.pi) - np.pi
    return d


def closed_orbit_holonomy(m: ManifoldModel, fc: FieldConfig, seed_loop, theta: OneForm | None = None,
                          n_segments: int = 4, step: float = 1e-2, tol: float = 1e-9,
                          max_iter: int = 50, return_orbit: bool = False):
    """Refine a seed loop to a periodic orbit and integrate ``theta`` around it.

    ``seed_loop`` is ``(state, period)``: a surface state close to a periodic
    orbit and an approximate period.  The orbit is found by multiple shooting:
    ``n_segments`` starting states and the period are corrected by least-squares
    Newton steps until the matching residual drops below ``tol``.  The phase is
    fixed by keeping the first node on the hyperplane through the seed
    orthogonal to the seed velocity.
    """
    if m.dim != 2:
        raise UnsupportedModelError("closed-orbit shooting is implemented for surfaces")
    S_seed, T = np.array(seed_loop[0], float), float(seed_loop[1])
    tau = T / n_segments
    nodes = [S_seed]
    for _ in range(n_segments - 1):
        nodes.append(advance(m, fc, nodes[-1][None, :], tau, IntegratorConfig(step=step))[0])
    nodes = np.array(nodes)
    normal = phase_velocity(m, fc, S_seed[None, :])[0]
    normal = normal / np.linalg.norm(normal)
    n_unknown = 3 * n_segments + 1
    for it in range(max_iter + 1):
        tau = T / n_segments
        steps = max(1, int(math.ceil(tau / step)))
        F = np.zeros(n_unknown)
        J = np.zeros((n_unknown, n_unknown))
        ends = []
        for j in range(n_segments):
            end, Dj, vel, _ = _segment(m, fc, nodes[j], tau, steps, None)
            ends.append(end)
            nxt = (j + 1) % n_segments
            F[3 * j:3 * j + 3] = _wrap_diff(m, end, nodes[nxt])
            J[3 * j:3 * j + 3, 3 * j:3 * j + 3] += Dj
            J[3 * j:3 * j + 3, 3 * nxt:3 * nxt + 3] -= np.eye(3)
            J[3 * j:3 * j + 3, -1] = vel / n_segments
        F[-1] = float(_wrap_diff(m, nodes[0].copy(), S_seed) @ normal)
        J[-1, 0:3] = normal
        res = float(np.max(np.abs(F)))
        if res < tol:
            hol = 0.0
            for j in range(n_segments):
                _, _, _, h_j = _segment(m, fc, nodes[j], tau, steps, theta if theta is not None else _theta_of(fc))
                hol += h_j
            orbit = ClosedOrbit(nodes[0].copy(), T, hol, it, res, nodes.copy())
            return orbit if return_orbit else hol
        if it == max_iter:
            break
        delta = np.linalg.lstsq(J, -F, rcond=None)[0]
        nodes = nodes + delta[:-1].reshape(n_segments, 3)
        T = T + delta[-1]
        nodes, _, _ = apply_transitions(m, nodes)
    raise NoOrbitFound(f"shooting did not converge in {max_iter} iterations (residual {res:.2e})")


def _theta_of(fc: FieldConfig) -> OneForm:
    if fc.external is None:
        raise ValueError("no 1-form given and the field configuration has no external field")
    return fc.external.one_form()


def axis_seed(m: ManifoldModel, generator: int = 0, offset: float = 0.2):
    """Seed for the closed geodesic along the axis of an octagon side pairing."""
    if m.kind != "octagon":
        raise UnsupportedModelError("axis seeds exist on the octagon surface")
    ang = float(_oct.SIDE_ANGLES[generator])
    r = math.tanh(offset / 2)
    S = np.array([r * math.cos(ang), r * math.sin(ang), ang])
    return S, 2 * _oct.INRADIUS
