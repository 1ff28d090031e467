"""Calculus of semibasic tensor fields and numerical checks of the Pestov machinery.

A semibasic tensor field is a callable ``T(x, y)`` on the tangent bundle minus
the zero section.  Its value is an array whose trailing axes are tensor
components, contravariant indices first and covariant ones after.  Horizontal,
vertical and modified horizontal derivatives are formed by central differences
in ``x`` and ``y``.  Each derivative appends one covariant index and returns a
new field, so derivatives nest freely.  All callables are vectorized over
leading batch axes.

Every identity check returns a residual that is zero in exact arithmetic.  With
central differences it is either exactly zero, because the stencils commute, or
``O(h^2)``.  :func:`refine` tells the two cases apart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import positions, rk4_step, to_state, velocities
from .fields import ExternalField, FieldConfig, GeneralizedField, HolomorphicSection
from .geometry import (DomainError, ManifoldModel, UnsupportedModelError, christoffel,
                       gaussian_curvature, riemann)

DEFAULT_STEP = 1e-3
EXACT_FLOOR = 1e-8
RATIO_BAND = (3.5, 4.5)
_LETTERS = "abcdefgh"


class ContractError(ValueError):
    pass


# ---------------------------------------------------------------------------
# semibasic fields


@dataclass(frozen=True)
class Semibasic:
    """``T(x, y)`` with ``upper`` contravariant then ``lower`` covariant indices."""

    fn: Callable
    upper: int = 0
    lower: int = 0
    degree: float | None = None  # declared homogeneity in y
    name: str = ""

    @property
    def rank(self) -> int:
        return self.upper + self.lower

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        n = x.shape[-1]
        batch = np.broadcast_shapes(x.shape[:-1], y.shape[:-1])
        return np.broadcast_to(np.asarray(self.fn(x, y), float), batch + (n,) * self.rank)


def semibasic_function(fn: Callable, degree: float, name: str = "u") -> Semibasic:
    """A scalar function on TM minus the zero section, homogeneous of ``degree`` in y."""
    return Semibasic(fn, 0, 0, degree, name)


def semibasic_vector_field(fn: Callable, degree: float, name: str = "V") -> Semibasic:
    """A semibasic vector field ``V^i(x, y)`` homogeneous of ``degree`` in y."""
    return Semibasic(fn, 1, 0, degree, name)


def check_homogeneity(T: Semibasic, x, y, factors=(0.5, 2.0), tol: float = 1e-9) -> float:
    """Largest relative violation of ``T(x, c y) = c^deg T(x, y)``; raises above ``tol``."""
    if T.degree is None:
        raise ContractError(f"{T.name or 'field'} has no declared degree")
    base = T(x, y)
    scale = max(1.0, float(np.max(np.abs(base))))
    worst = 0.0
    for c in factors:
        worst = max(worst, float(np.max(np.abs(T(x, c * np.asarray(y)) - c ** T.degree * base))) / scale)
    if worst > tol:
        raise ContractError(f"{T.name or 'field'} is not homogeneous of degree {T.degree} "
                            f"(violation {worst:.2e})")
    return worst


def _check_y(y):
    if np.any(np.linalg.norm(y, axis=-1) == 0.0):
        raise DomainError("semibasic fields are not defined on the zero section")


# ---------------------------------------------------------------------------
# the calculus


def _connection_terms(G, T, upper, lower):
    """``sum_upper Gamma^a_{kp} T^{..p..} - sum_lower Gamma^p_{kb} T_{..p..}``, new index last."""
    rank = upper + lower
    comps = _LETTERS[:rank]
    out = 0.0
    for j in range(rank):
        src = comps[:j] + "p" + comps[j + 1:]
        if j < upper:
            out = out + np.einsum(f"...{comps[j]}kp,...{src}->...{comps}k", G, T)
        else:
            out = out - np.einsum(f"...pk{comps[j]},...{src}->...{comps}k", G, T)
    return out


class SemibasicCalculus:
    """Derivatives of semibasic fields for a model and an external field.

    ``step`` is the central-difference step in ``x`` and ``vstep`` (default
    ``step``) the one in ``y``.
    """

    def __init__(self, model: ManifoldModel, field: ExternalField | None = None,
                 step: float = DEFAULT_STEP, vstep: float | None = None):
        self.model = model
        self.field = field
        self.step = float(step)
        self.vstep = float(step if vstep is None else vstep)
        self.n = model.dim

    # -- analytic ingredients ------------------------------------------------
    def metric(self, x):
        return self.model.metric(x)

    def inner(self, x, a, b):
        return np.exp(2.0 * self.model.exponent.value(x)) * np.sum(a * b, axis=-1)

    def E_form(self, x):
        """Covariant components ``E_j``."""
        x = np.asarray(x, float)
        return np.zeros(x.shape) if self.field is None else self.field.theta(x)

    def E_vector(self, x):
        x = np.asarray(x, float)
        return np.zeros(x.shape) if self.field is None else self.field.vector(x)

    def E_derivative(self, x):
        """``E^i_{,k}`` (covariant derivative) as ``[..., i, k]``."""
        x = np.asarray(x, float)
        if self.field is None:
            return np.zeros(x.shape + (self.n,))
        return self.field.covariant_derivative(x)

    def Y(self, x, y):
        """``Y^i_j = y_j E^i - E_j y^i`` as ``[..., i, j]``."""
        y_low = self.model.lower(x, y)
        return (self.E_vector(x)[..., :, None] * y_low[..., None, :]
                - y[..., :, None] * self.E_form(x)[..., None, :])

    def Y_horizontal(self, x, y):
        """``Y^i_{j|k} = y_j E^i_{,k} - E_{j,k} y^i`` as ``[..., i, j, k]``."""
        dE = self.E_derivative(x)
        dE_low = np.einsum("...ji,...ik->...jk", self.metric(x), dE)
        y_low = self.model.lower(x, y)
        return (y_low[..., None, :, None] * dE[..., :, None, :]
                - y[..., :, None, None] * dE_low[..., None, :, :])

    def Y_vertical(self, x, y):
        """``Y^i_{j.k} = g_{jk} E^i - E_j delta^i_k`` as ``[..., i, j, k]``."""
        g = self.metric(x)
        E = self.E_vector(x)
        Ef = self.E_form(x)
        eye = np.eye(self.n)
        return E[..., :, None, None] * g[..., None, :, :] - Ef[..., None, :, None] * eye[:, None, :]

    def curvature(self, x, y):
        """``R^i_{lk}`` of the horizontal commutator ``u_{|l|k} - u_{|k|l} = R^i_{lk} u_{.i}``."""
        return np.einsum("...j,...ijlk->...ilk", y, riemann(self.model, x))

    def modified_curvature(self, x, y):
        """``R~^i_{lk}`` of the modified commutator, assembled from the Y derivatives."""
        Y = self.Y(x, y)
        Yh = self.Y_horizontal(x, y)
        Yv = self.Y_vertical(x, y)
        return (self.curvature(x, y) + Yh - np.swapaxes(Yh, -1, -2)
                + np.einsum("...jk,...ilj->...ilk", Y, Yv)
                - np.einsum("...jl,...ikj->...ilk", Y, Yv))

    # -- finite-difference derivatives ---------------------------------------
    def _partials(self, T: Semibasic, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        _check_y(y)
        hx, hy = self.step, self.vstep
        dx, dy = [], []
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = hx
            dx.append((T(x + e, y) - T(x - e, y)) / (2 * hx))
            e[k] = hy
            dy.append((T(x, y + e) - T(x, y - e)) / (2 * hy))
        return np.stack(dx, axis=-1), np.stack(dy, axis=-1)

    def _horizontal(self, T, x, y, dx, dy):
        G = christoffel(self.model, x)
        Gy = np.einsum("...pkq,...q->...pk", G, y)
        out = dx - np.einsum("...Cp,...pk->...Ck", _flat(dy, T.rank), Gy).reshape(dx.shape)
        if T.rank:
            out = out + _connection_terms(G, T(x, y), T.upper, T.lower)
        return out

    def vertical(self, T: Semibasic) -> Semibasic:
        """``T_{.k}``: derivative in ``y``."""
        def fn(x, y):
            return self._partials_y(T, x, y)
        deg = None if T.degree is None else T.degree - 1
        return Semibasic(fn, T.upper, T.lower + 1, deg, f"v({T.name})")

    def _partials_y(self, T, x, y):
        y = np.asarray(y, float)
        _check_y(y)
        out = []
        for k in range(self.n):
            e = np.zeros(self.n)
            e[k] = self.vstep
            out.append((T(x, y + e) - T(x, y - e)) / (2 * self.vstep))
        return np.stack(out, axis=-1)

    def horizontal(self, T: Semibasic) -> Semibasic:
        """``T_{|k}``: horizontal derivative."""
        def fn(x, y):
            dx, dy = self._partials(T, x, y)
            return self._horizontal(T, np.asarray(x, float), np.asarray(y, float), dx, dy)
        return Semibasic(fn, T.upper, T.lower + 1, T.degree, f"h({T.name})")

    def modified(self, T: Semibasic) -> Semibasic:
        """``T_{:k} = T_{|k} + T_{.j} Y^j_k``."""
        def fn(x, y):
            x = np.asarray(x, float)
            y = np.asarray(y, float)
            dx, dy = self._partials(T, x, y)
            h = self._horizontal(T, x, y, dx, dy)
            corr = np.einsum("...Cj,...jk->...Ck", _flat(dy, T.rank), self.Y(x, y))
            return h + corr.reshape(h.shape)
        return Semibasic(fn, T.upper, T.lower + 1, T.degree, f"m({T.name})")

    def X(self, T: Semibasic) -> Semibasic:
        """``X T = y^k T_{:k}``."""
        mT = self.modified(T)

        def fn(x, y):
            return np.sum(mT(x, y) * _expand(np.asarray(y, float), T.rank), axis=-1)
        deg = None if T.degree is None else T.degree + 1
        return Semibasic(fn, T.upper, T.lower, deg, f"X({T.name})")

    def raised(self, T: Semibasic) -> Semibasic:
        """Raise the last covariant index of ``T`` with the inverse metric (it becomes contravariant)."""
        if T.lower != 1 or T.upper != 0:
            raise ContractError("raised() expects a covector field")

        def fn(x, y):
            x = np.asarray(x, float)
            return np.exp(-2.0 * self.model.exponent.value(x))[..., None] * T(x, y)
        return Semibasic(fn, 1, 0, T.degree, f"raise({T.name})")

    def divergence(self, V: Semibasic, kind: str) -> Semibasic:
        """``V^i_{|i}``, ``V^i_{.i}`` or ``V^i_{:i}`` for ``kind`` in ``h``, ``v``, ``m``."""
        if V.upper != 1 or V.lower != 0:
            raise ContractError("divergence expects a vector field")
        D = {"h": self.horizontal, "v": self.vertical, "m": self.modified}[kind](V)

        def fn(x, y):
            return np.trace(D(x, y), axis1=-2, axis2=-1)
        return Semibasic(fn, 0, 0, None, f"div{kind}({V.name})")


def _flat(a, rank):
    """Collapse the component axes of ``a`` (rank comps + one derivative axis)."""
    n = a.shape[-1]
    batch = a.shape[: a.ndim - rank - 1]
    return a.reshape(batch + (n ** rank if rank else 1, n))


def _expand(y, rank):
    return y.reshape(y.shape[:-1] + (1,) * rank + y.shape[-1:])


def _as_field(u) -> Semibasic:
    if isinstance(u, Semibasic):
        return u
    if callable(u):
        return Semibasic(u)
    raise ContractError("expected a semibasic field or a callable u(x, y)")


# ---------------------------------------------------------------------------
# point operations


def h_derivative(u, x, y, model: ManifoldModel, field: ExternalField | None = None,
                 step: float = DEFAULT_STEP):
    """``u_{|k} = d u/dx^k - Gamma^p_{kq} y^q d u/dy^p`` as a covector."""
    return SemibasicCalculus(model, field, step).horizontal(_as_field(u))(x, y)


def v_derivative(u, x, y, model: ManifoldModel, field: ExternalField | None = None,
                 step: float = DEFAULT_STEP):
    """``u_{.k} = d u/dy^k``."""
    return SemibasicCalculus(model, field, step).vertical(_as_field(u))(x, y)


def m_derivative(u, x, y, model: ManifoldModel, field: ExternalField | None = None,
                 step: float = DEFAULT_STEP):
    """``u_{:k} = u_{|k} + Y^j_k u_{.j}``."""
    return SemibasicCalculus(model, field, step).modified(_as_field(u))(x, y)


def X_operator(u, x, y, model: ManifoldModel, field: ExternalField | None = None,
               step: float = DEFAULT_STEP):
    """``X u = y^i u_{:i}``; on unit vectors this is the thermostat generator."""
    return SemibasicCalculus(model, field, step).X(_as_field(u))(x, y)


def flow_derivative(u, x, y, model: ManifoldModel, field: ExternalField | None = None,
                    step: float = DEFAULT_STEP):
    """Central difference of ``u`` along the thermostat flow through unit vectors ``(x, y)``."""
    u = _as_field(u)
    fc = FieldConfig(external=field)
    S = to_state(model, np.asarray(x, float), np.asarray(y, float))
    out = []
    for h in (step, -step):
        Sn = rk4_step(model, fc, S, h)
        out.append(u(positions(model, Sn), velocities(model, Sn)))
    return (out[0] - out[1]) / (2 * step)


# ---------------------------------------------------------------------------
# identity residuals


COMMUTATIONS = ("vv", "hv", "hh", "mv", "mm")


def verify_commutation(u, which: str, x, y, model: ManifoldModel, field: ExternalField | None = None,
                       step: float = DEFAULT_STEP):
    """Pointwise residual (max over index pairs) of a commutation formula for scalar ``u``."""
    if which not in COMMUTATIONS:
        raise ValueError(f"unknown commutation {which!r}; choose from {COMMUTATIONS}")
    c = SemibasicCalculus(model, field, step)
    u = _as_field(u)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    uv = c.vertical(u)
    if which == "vv":
        A = c.vertical(uv)(x, y)
        diff = A - np.swapaxes(A, -1, -2)
    elif which == "hv":
        # u_{|l.k} - u_{.k|l}
        diff = c.vertical(c.horizontal(u))(x, y) - np.swapaxes(c.horizontal(uv)(x, y), -1, -2)
    elif which == "hh":
        A = c.horizontal(c.horizontal(u))(x, y)
        diff = A - np.swapaxes(A, -1, -2) - np.einsum("...ilk,...i->...lk", c.curvature(x, y), uv(x, y))
    elif which == "mv":
        Yv = c.Y_vertical(x, y)  # [i, l, k] = g_lk E^i - E_l delta^i_k
        diff = (c.vertical(c.modified(u))(x, y) - np.swapaxes(c.modified(uv)(x, y), -1, -2)
                - np.einsum("...ilk,...i->...lk", Yv, uv(x, y)))
    else:
        A = c.modified(c.modified(u))(x, y)
        diff = (A - np.swapaxes(A, -1, -2)
                - np.einsum("...ilk,...i->...lk", c.modified_curvature(x, y), uv(x, y)))
    return np.max(np.abs(diff), axis=(-2, -1))


def curvature_form(model: ManifoldModel, x, y, Z):
    """``<R(Z, y) y, Z>``: the sectional term of the Jacobi operator."""
    R = riemann(model, x)
    g = model.metric(x)
    return np.einsum("...ip,...p,...ijkl,...j,...k,...l->...", g, Z, R, y, Z, y)


def modified_curvature_form(model: ManifoldModel, field: ExternalField | None, x, y, Z):
    """``<R~_y(Z), Z> = <R(Z, y) y, Z> - <nabla_Z E, Z> + <E, Z>^2`` for unit ``y`` and ``Z`` orthogonal to ``y``.

    This is the contraction ``R~^i_{lk} Z^l y^k Z_i`` of the tensor that makes the
    modified commutation formula hold.
    """
    c = SemibasicCalculus(model, field)
    dE = c.E_derivative(x)
    dEZ = np.einsum("...ik,...k->...i", dE, Z)
    EZ = c.inner(x, c.E_vector(x), Z)
    return curvature_form(model, x, y, Z) - c.inner(x, dEZ, Z) + EZ ** 2


def verify_rnabla(model: ManifoldModel, field: ExternalField | None, x, y, Z):
    """Full ``R~^i_{lk} Z^l y^k Z_i`` against the contracted form, for ``Z`` orthogonal to ``y``."""
    c = SemibasicCalculus(model, field)
    x = np.asarray(x, float)
    Zlow = model.lower(x, Z)
    full = np.einsum("...ilk,...l,...k,...i->...", c.modified_curvature(x, y), Z, y, Zlow)
    return np.abs(full - modified_curvature_form(model, field, x, y, Z))


def _require_unit_degree0(u: Semibasic, model, x, y):
    if u.degree != 0:
        raise ContractError("the identity needs u homogeneous of degree 0 in y")
    speed = model.norm(x, y)
    if np.any(np.abs(speed - 1.0) > 1e-9):
        raise ContractError("points must be unit vectors")


def pestov_terms(u, model: ManifoldModel, field: ExternalField | None, x, y, step: float = DEFAULT_STEP):
    """Left side and the seven right-side terms of the pointwise Pestov identity."""
    u = _as_field(u)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    _require_unit_degree0(u, model, x, y)
    c = SemibasicCalculus(model, field, step)
    n = model.dim
    uv, um = c.vertical(u), c.modified(u)
    Xu = c.X(u)
    Z, M = c.raised(uv), c.raised(um)
    inv = np.exp(-2.0 * model.exponent.value(x))

    def pair(x_, y_):
        return np.exp(-2.0 * model.exponent.value(x_)) * np.sum(uv(x_, y_) * um(x_, y_), axis=-1)

    XZ = Semibasic(lambda x_, y_: Xu(x_, y_)[..., None] * Z(x_, y_), 1, 0)
    XM = Semibasic(lambda x_, y_: Xu(x_, y_)[..., None] * M(x_, y_), 1, 0)
    um_v, uv_v = um(x, y), uv(x, y)
    Xu_v, Z_v = Xu(x, y), Z(x, y)
    Ey = c.inner(x, c.E_vector(x), y)
    EZ = c.inner(x, c.E_vector(x), Z_v)
    lhs = 2.0 * inv * np.sum(um_v * c.vertical(Xu)(x, y), axis=-1)
    terms = {
        "modified_gradient": inv * np.sum(um_v * um_v, axis=-1),
        "X_pairing": c.X(Semibasic(pair))(x, y),
        "modified_divergence": -c.divergence(XZ, "m")(x, y),
        "vertical_divergence": c.divergence(XM, "v")(x, y),
        "curvature": -modified_curvature_form(model, field, x, y, Z_v),
        "field_along_y": -Ey * inv * np.sum(uv_v * um_v, axis=-1),
        "field_along_gradient": -(n - 1) * Xu_v * EZ,
    }
    return lhs, terms


def verify_pestov_pointwise(u, model: ManifoldModel, field: ExternalField | None, x, y,
                            step: float = DEFAULT_STEP):
    """``|LHS - RHS|`` of the pointwise Pestov identity for a degree-0 function."""
    lhs, terms = pestov_terms(u, model, field, x, y, step)
    return np.abs(lhs - sum(terms.values()))


def verify_xnf(u, model: ManifoldModel, field: ExternalField | None, x, y, step: float = DEFAULT_STEP):
    """Residual norm of ``X(grad_v u) = grad_v(X u) - grad_m u - <E, grad_v u> y + <E, y> grad_v u``."""
    u = _as_field(u)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    _require_unit_degree0(u, model, x, y)
    c = SemibasicCalculus(model, field, step)
    Z = c.raised(c.vertical(u))
    lhs = c.X(Z)(x, y)
    Zv = Z(x, y)
    E = c.E_vector(x)
    rhs = (c.raised(c.vertical(c.X(u)))(x, y) - c.raised(c.modified(u))(x, y)
           - c.inner(x, E, Zv)[..., None] * y + c.inner(x, E, y)[..., None] * Zv)
    return model.norm(x, lhs - rhs)


# ---------------------------------------------------------------------------
# refinement


@dataclass
class IdentityCheck:
    identity: str
    model: str
    field: str
    steps: tuple
    residuals: tuple  # RMS residual over the sample points at each step
    ratio: float | None
    passed: bool
    exact: bool
    point_residuals: np.ndarray | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {"identity": self.identity, "model": self.model, "field": self.field,
                "step": self.steps[-1], "residual": self.residuals[-1],
                "coarse_residual": self.residuals[0],
                "refinement_ratio": self.ratio if self.ratio is not None else float("nan"),
                "passed": self.passed}


def refine(residual_at: Callable[[float], np.ndarray], steps: Sequence[float],
           floor: float = EXACT_FLOOR, band=RATIO_BAND, order: int = 2):
    """Evaluate a residual at decreasing steps and classify its behaviour.

    Returns ``(rms residuals, ratio, exact, passed)``.  ``exact`` means every
    residual is below ``floor``.  Otherwise the coarse-to-fine ratio of the last
    halving must fall in ``band`` (scaled from ``2^order``).
    """
    res = [float(np.sqrt(np.mean(np.square(residual_at(h))))) for h in steps]
    exact = all(r < floor for r in res)
    ratio = None
    passed = exact
    if len(res) >= 2 and res[-1] > 0:
        halvings = np.log2(steps[-2] / steps[-1])
        ratio = float(res[-2] / res[-1]) ** (1.0 / halvings) if halvings != 1 else float(res[-2] / res[-1])
        lo, hi = band
        scale = 2.0 ** order / 4.0
        passed = exact or (lo * scale <= ratio <= hi * scale)
    return tuple(res), ratio, exact, passed


# ---------------------------------------------------------------------------
# random band-limited test fields


def _direction(y):
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def _speed(model, x, y):
    return np.exp(model.exponent.value(x)) * np.linalg.norm(y, axis=-1)


def random_function(model: ManifoldModel, rng: np.random.Generator, degree: float = 0.0,
                    n_terms: int = 4, max_freq: int = 2, max_mode: int = 2) -> Semibasic:
    """A band-limited function of ``(x, direction of y)`` times ``|y|^degree``.

    Base frequencies are integers so the function is periodic on tori.
    """
    n = model.dim
    k = rng.integers(-max_freq, max_freq + 1, size=(n_terms, n))
    k[np.all(k == 0, axis=1), 0] = 1
    amp = rng.normal(size=n_terms) / np.sqrt(n_terms)
    ph = rng.uniform(0, 2 * np.pi, size=n_terms)
    if n == 2:
        modes = rng.integers(-max_mode, max_mode + 1, size=n_terms)
        ph2 = rng.uniform(0, 2 * np.pi, size=n_terms)
    else:
        b = rng.normal(size=(n_terms, n))
        C = rng.normal(size=(n_terms, n, n))

    def fn(x, y):
        arg = 2 * np.pi * np.tensordot(x, k.T, axes=1) + ph  # (..., terms)
        if n == 2:
            phi = np.arctan2(y[..., 1], y[..., 0])
            fib = np.cos(modes * phi[..., None] + ph2)
        else:
            w = _direction(y)
            fib = 1.0 + w @ b.T + np.einsum("...i,tij,...j->...t", w, C, w)
        val = np.sum(amp * np.cos(arg) * fib, axis=-1)
        return val * _speed(model, x, y) ** degree if degree else val
    return semibasic_function(fn, degree, "random")


def random_vector_field(model: ManifoldModel, rng: np.random.Generator, degree: float = 0.0,
                        n_terms: int = 3, max_freq: int = 1) -> Semibasic:
    """A band-limited semibasic vector field homogeneous of ``degree``."""
    comps = [random_function(model, rng, 0.0, n_terms, max_freq, 1) for _ in range(model.dim)]

    def fn(x, y):
        v = np.stack([c(x, y) for c in comps], axis=-1)
        return v * (_speed(model, x, y) ** degree)[..., None] if degree else v
    return semibasic_vector_field(fn, degree, "random")


def lifted_function(model: ManifoldModel, phi: Callable, name: str = "lift") -> Semibasic:
    """``u = phi o pi``: a function of the base point only."""
    return semibasic_function(lambda x, y: phi(x) * np.ones(np.shape(y)[:-1]), 0, name)


def random_points(model: ManifoldModel, rng: np.random.Generator, size: int):
    """Base points and unit vectors for pointwise checks (kept away from the disk boundary)."""
    if model.kind in ("disk", "octagon"):
        r = 0.5 * np.sqrt(rng.uniform(size=size))
        a = rng.uniform(0, 2 * np.pi, size=size)
        x = np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
    else:
        x = rng.uniform(size=(size, model.dim))
    w = _direction(rng.normal(size=(size, model.dim)))
    y = w * np.exp(-model.exponent.value(x))[..., None]
    return x, y


# ---------------------------------------------------------------------------
# the pointwise suite


POINTWISE_IDENTITIES = ("vv", "hv", "hh", "mv", "mm", "rnabla", "x-n-f", "pre-pestov")


def identity_suite(model: ManifoldModel, field: ExternalField | None = None, n_points: int = 20,
                   seed: int = 0, steps: Sequence[float] = (1e-2, 5e-3),
                   identities: Sequence[str] = POINTWISE_IDENTITIES) -> list[IdentityCheck]:
    """Refinement study of the pointwise identities at random points with a random ``u``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    x, y = random_points(model, rng, n_points)
    u = random_function(model, rng, 0.0)
    fname = "none" if field is None else field.name
    out = []
    for ident in identities:
        if ident in COMMUTATIONS:
            def r(h, ident=ident):
                return verify_commutation(u, ident, x, y, model, field, h)
        elif ident == "x-n-f":
            def r(h):
                return verify_xnf(u, model, field, x, y, h)
        elif ident == "pre-pestov":
            def r(h):
                return verify_pestov_pointwise(u, model, field, x, y, h)
        elif ident == "rnabla":
            # Z = vertical gradient of u, orthogonal to y up to O(h^2)
            def r(h):
                c = SemibasicCalculus(model, field, h)
                Z = c.raised(c.vertical(u))(x, y)
                return verify_rnabla(model, field, x, y, Z) + np.abs(
                    _rnabla_from_commutator(u, model, field, x, y, h))
        else:
            raise ValueError(f"unknown identity {ident!r}")
        res, ratio, exact, ok = refine(r, steps)
        pts = r(steps[-1])
        out.append(IdentityCheck(ident, model.name, fname, tuple(steps), res, ratio, ok, exact, pts))
    return out


def _rnabla_from_commutator(u, model, field, x, y, h):
    """Second code path: ``<R~_y Z, Z>`` from the finite-difference modified commutator.

    ``y^k Z^l (u_{:l:k} - u_{:k:l})`` equals ``<R~_y(Z), Z>`` with
    ``Z = grad_v u``; compare it to the contracted closed form.
    """
    c = SemibasicCalculus(model, field, h)
    u = _as_field(u)
    A = c.modified(c.modified(u))(x, y)
    Z = c.raised(c.vertical(u))(x, y)
    comm = np.einsum("...lk,...l,...k->...", A - np.swapaxes(A, -1, -2), Z, y)
    return comm - modified_curvature_form(model, field, x, y, Z)


# ---------------------------------------------------------------------------
# quadrature on SM for torus models


def _sm_grid(model: ManifoldModel, N: int, fiber: Sequence[int]):
    """Product grid on SM: points ``(x, y)`` with normalized Liouville weights."""
    if model.kind != "torus":
        raise UnsupportedModelError(f"{model.name}: no uniform product grid on SM")
    n = model.dim
    g1 = np.arange(N) / N
    X = np.stack(np.meshgrid(*([g1] * n), indexing="ij"), axis=-1).reshape(-1, n)
    if n == 2:
        M = fiber[0]
        phi = 2 * np.pi * np.arange(M) / M
        W = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        wf = np.full(M, 1.0 / M)
    else:
        nt, nphi = fiber
        ct, wt = np.polynomial.legendre.leggauss(nt)
        ph = 2 * np.pi * np.arange(nphi) / nphi
        st = np.sqrt(1 - ct ** 2)
        W = np.stack([st[:, None] * np.cos(ph), st[:, None] * np.sin(ph),
                      np.broadcast_to(ct[:, None], (nt, nphi))], axis=-1).reshape(-1, 3)
        wf = (wt[:, None] * np.full(nphi, 1.0 / nphi)).ravel() / 2.0
    f = model.exponent.value(X)
    wx = np.exp(n * f)
    x = np.repeat(X, len(wf), axis=0)
    y = np.tile(W, (len(X), 1)) * np.exp(-np.repeat(f, len(wf)))[:, None]
    w = np.outer(wx, wf).ravel()
    return x, y, w / w.sum()


def _tiled_sum(fn, x, y, w, tile=1 << 15):
    """``sum w * fn(x, y)`` over fixed tiles in a fixed order."""
    total = 0.0
    for a in range(0, len(w), tile):
        total += float(np.sum(w[a:a + tile] * fn(x[a:a + tile], y[a:a + tile])))
    return total


def quadrature_divergence(m: ManifoldModel, field: ExternalField | None, V: Semibasic, which: str,
                          N: int = 32, fiber: Sequence[int] | None = None) -> float:
    """Integral divergence identity residual on an ``N^n`` base grid.

    ``which`` is ``divh`` (integral vanishes), ``divv`` (equals
    ``(deg + n - 1) int <V, y>``) or ``divm`` (equals
    ``(deg + n) int <E, y><V, y> - (deg + 1) int <V, E>``).  Derivatives use central
    differences of step ``1/N`` so the residual decays like ``N^-2``.
    """
    if which not in ("divh", "divv", "divm"):
        raise ValueError("which must be divh, divv or divm")
    if V.degree is None:
        raise ContractError("V needs a declared degree")
    n = m.dim
    fiber = fiber or ((16,) if n == 2 else (6, 12))
    x, y, w = _sm_grid(m, N, fiber)
    c = SemibasicCalculus(m, field, 1.0 / N)
    div = c.divergence(V, which[-1])
    lam = V.degree
    lhs = _tiled_sum(div, x, y, w)
    if which == "divh":
        rhs = 0.0
    elif which == "divv":
        rhs = (lam + n - 1) * _tiled_sum(lambda a, b: c.inner(a, V(a, b), b), x, y, w)
    else:
        def g(a, b):
            E = c.E_vector(a)
            return ((lam + n) * c.inner(a, E, b) * c.inner(a, V(a, b), b)
                    - (lam + 1) * c.inner(a, V(a, b), E))
        rhs = _tiled_sum(g, x, y, w)
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# surface identities on a grid


class _SurfaceGrid:
    """Uniform ``N x N x M`` grid on SM of a torus surface with discrete frame operators."""

    def __init__(self, m: ManifoldModel, N: int, M: int):
        if m.kind != "torus" or m.dim != 2:
            raise UnsupportedModelError(f"{m.name}: surface grid identities need a torus surface")
        self.m, self.N, self.M = m, N, M
        g = np.arange(N) / N
        self.x = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)[:, :, None, :]
        self.phi = (2 * np.pi * np.arange(M) / M)[None, None, :]
        xf = self.x[..., 0, :]
        self.f = m.exponent.value(xf)[..., None]
        self.df = m.exponent.grad(xf)[:, :, None, :]
        self.K = gaussian_curvature(m, xf)[..., None]
        w = np.exp(2 * self.f) * np.ones((1, 1, M))
        self.w = w / w.sum()
        self.freqs = np.fft.fftfreq(M, 1.0 / M)
        self.c, self.s = np.cos(self.phi), np.sin(self.phi)

    def evaluate(self, fn):
        x = np.broadcast_to(self.x, (self.N, self.N, self.M, 2))
        phi = np.broadcast_to(self.phi, (self.N, self.N, self.M))
        return np.asarray(fn(x, phi), float)

    def D(self, a, axis):
        return (np.roll(a, -1, axis=axis) - np.roll(a, 1, axis=axis)) * (self.N / 2.0)

    def V(self, a):
        return np.real(np.fft.ifft(1j * self.freqs * np.fft.fft(a, axis=-1), axis=-1))

    def G(self, a):
        fx, fy = self.df[..., 0], self.df[..., 1]
        c, s = self.c, self.s
        return np.exp(-self.f) * (c * self.D(a, 0) + s * self.D(a, 1) + (fy * c - fx * s) * self.V(a))

    def H(self, a):
        fx, fy = self.df[..., 0], self.df[..., 1]
        c, s = self.c, self.s
        return np.exp(-self.f) * (-s * self.D(a, 0) + c * self.D(a, 1) - (fy * s + fx * c) * self.V(a))

    def integral(self, a):
        return float(np.sum(self.w * a))


def surface_identity_terms(m: ManifoldModel, lam: GeneralizedField | None, u: Callable,
                           N: int = 64, M: int = 16):
    """The four integrals of the surface Pestov identity for ``G_lambda = G + lambda V``."""
    grid = _SurfaceGrid(m, N, M)
    U = grid.evaluate(u)
    L = np.zeros_like(U) if lam is None else grid.evaluate(lam.value)
    Vu, Hu = grid.V(U), grid.H(U)
    Glu = grid.G(U) + L * Vu
    return {
        "cross": 2.0 * grid.integral(Hu * grid.V(Glu)),
        "generator": grid.integral(Glu ** 2),
        "horizontal": grid.integral(Hu ** 2),
        "curvature": grid.integral((grid.K - grid.H(L) + L ** 2) * Vu ** 2),
    }


def verify_surface_identity(m: ManifoldModel, lam: GeneralizedField | None, u: Callable,
                            N: int = 64, M: int = 16) -> float:
    """Residual of ``2<Hu, V G_l u> = |G_l u|^2 + |Hu|^2 - <(K - H(l) + l^2) Vu, Vu>``."""
    t = surface_identity_terms(m, lam, u, N, M)
    return abs(t["cross"] - t["generator"] - t["horizontal"] + t["curvature"])


def random_surface_function(rng: np.random.Generator, n_terms: int = 4, max_freq: int = 1,
                            max_mode: int = 2) -> Callable:
    """Band-limited ``u(x, phi)`` periodic on the unit torus."""
    k = rng.integers(-max_freq, max_freq + 1, size=(n_terms, 2))
    k[np.all(k == 0, axis=1), 0] = 1
    modes = rng.integers(-max_mode, max_mode + 1, size=n_terms)
    amp = rng.normal(size=n_terms) / np.sqrt(n_terms)
    ph = rng.uniform(0, 2 * np.pi, size=n_terms)

    def u(x, phi):
        arg = 2 * np.pi * np.tensordot(x, k.T, axes=1) + modes * np.asarray(phi)[..., None] + ph
        return np.sum(amp * np.cos(arg), axis=-1)
    return u


# ---------------------------------------------------------------------------
# holomorphic sections


def holomorphic_residual(q: HolomorphicSection, x, phi, step: float = DEFAULT_STEP, n_fiber: int = 64):
    """``|G p + H V p / k|`` for ``p = Re q`` at the given points."""
    from .dynamics import SurfaceOperators

    ops = SurfaceOperators(q.model, step, n_fiber)
    p = lambda x_, f_: np.real(q.as_function(x_, f_))  # noqa: E731
    r = ops.G(p)(x, phi) + ops.H(ops.V(p))(x, phi) / q.k
    return np.abs(r)


def eta_minus_leakage(m: ManifoldModel, w: Callable, x, mode: int, step: float = DEFAULT_STEP,
                      n_fiber: int = 64):
    """Largest fiber-mode amplitude of ``eta_- w`` outside mode ``mode - 1``.

    ``w`` should contain only fiber mode ``mode``; ``eta_-`` lowers it by one.
    Returns ``(leakage, retained amplitude)``.
    """
    from .dynamics import SurfaceOperators

    ops = SurfaceOperators(m, step, n_fiber)
    return ops.mode_leakage(ops.eta_minus(w), x, mode - 1)


def refinement_orders(residuals: Sequence[float], sizes: Sequence[float]) -> np.ndarray:
    """Observed orders ``log(r_i / r_{i+1}) / log(h_i / h_{i+1})`` for grid spacings ``h``."""
    r = np.asarray(residuals, float)
    s = np.asarray(sizes, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(r[:-1] / r[1:]) / np.log(s[:-1] / s[1:])
