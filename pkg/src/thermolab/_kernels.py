"""Compiled ensemble stepping for surface thermostats.

The shipped conformal exponents and 1-form terms are packed into small float
tables and evaluated by numba-compiled loops.  Configurations that cannot be
packed (user callables, general Lorentz forms) fall back to the numpy path in
``dynamics``; both paths implement the same equations and are cross-checked in
the test suite.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import octagon as _oct
from .fields import (BumpForm, BumpPotential, CollarForm, ConstantForm, FieldConfig, FourierPotential,
                     GradientTerm, HolomorphicSection, SinusoidalForm, ZeroPotential, _BUMP_MASS)
from .geometry import DiskExponent, DomainError, FourierExponent, ManifoldModel, ZeroExponent

KIND_CODES = {"torus": 0, "disk": 1, "octagon": 2}
GRAD_FOURIER, GRAD_BUMP, CONST, SINUS, BUMPFORM, COLLAR = 1, 2, 3, 4, 5, 6
NPAR = 8


class NotCompilable(Exception):
    pass


def pack_exponent(m: ManifoldModel):
    e = m.exponent
    if isinstance(e, ZeroExponent):
        return 0, np.zeros((0, 4))
    if isinstance(e, DiskExponent):
        return 2, np.zeros((0, 4))
    if isinstance(e, FourierExponent):
        rows = [[t.amplitude, 2 * np.pi * t.wavevector[0], 2 * np.pi * t.wavevector[1], t.phase]
                for t in e.terms]
        return 1, np.array(rows, float).reshape(-1, 4)
    raise NotCompilable(type(e).__name__)


def _pack_term(t):
    row = np.zeros(NPAR + 1)
    if isinstance(t, GradientTerm):
        U = t.potential
        if isinstance(U, ZeroPotential):
            return None
        if isinstance(U, FourierPotential):
            k = 2 * np.pi * np.asarray(U.wavevector, float)
            row[:6] = [GRAD_FOURIER, U.amplitude, k[0], k[1], U.phase, 0.0]
            return row
        if isinstance(U, BumpPotential):
            row[:6] = [GRAD_BUMP, U.amplitude, U.radius, U.center[0], U.center[1], 0.0]
            return row
        raise NotCompilable(type(U).__name__)
    if isinstance(t, ConstantForm):
        row[:3] = [CONST, t.coefficients[0], t.coefficients[1]]
        return row
    if isinstance(t, SinusoidalForm):
        k = 2 * np.pi * np.asarray(t.wavevector, float)
        row[:7] = [SINUS, t.amplitudes[0], t.amplitudes[1], k[0], k[1], t.phase, 0.0]
        return row
    if isinstance(t, BumpForm):
        row[:7] = [BUMPFORM, t.amplitudes[0], t.amplitudes[1], t.radius, t.center[0], t.center[1], 0.0]
        return row
    if isinstance(t, CollarForm):
        row[:5] = [COLLAR, t.period, t.width, float(_oct.SIDE_ANGLES[t.generator % 4]), _BUMP_MASS]
        return row
    raise NotCompilable(type(t).__name__)


def pack_field(fc: FieldConfig):
    rows = []
    if fc.external is not None:
        for t in fc.external.terms:
            r = _pack_term(t)
            if r is not None:
                r = r.copy()
                rows.append(r)
        field_scale = fc.external.scale
    else:
        field_scale = 1.0
    terms = np.array(rows, float).reshape(-1, NPAR + 1)
    if fc.lorentz is not None and fc.lorentz.two_form is not None:
        raise NotCompilable("general Lorentz form")
    b = fc.lorentz.intensity if fc.lorentz is not None else 0.0
    sec_k, coefs, lam_scale = 0, np.zeros(0, complex), 0.0
    g = fc.generalized
    if g is not None:
        src = getattr(g, "section", None)
        if not isinstance(src, HolomorphicSection):
            raise NotCompilable("generalized field without a packed section")
        sec_k = src.k
        coefs = np.asarray(src.coefficients, complex)
        lam_scale = g.section_scale
    scale = fc.scale if fc.external is not None else 0.0
    return terms, field_scale, scale, b, sec_k, coefs, lam_scale


@njit(cache=True)
def _bump(s):
    if s >= 1.0:
        return 0.0, 0.0, 0.0
    q = 1.0 / (1.0 - s)
    b = math.exp(1.0 - q)
    return b, -b * q * q, b * (q ** 4 - 2.0 * q ** 3)


@njit(cache=True)
def _exponent(code, P, x, y):
    if code == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if code == 2:
        q = 1.0 / (1.0 - x * x - y * y)
        f = math.log(2.0 * q)
        return (f, 2.0 * x * q, 2.0 * y * q, 2.0 * q + 4.0 * x * x * q * q,
                4.0 * x * y * q * q, 2.0 * q + 4.0 * y * y * q * q)
    f = fx = fy = fxx = fxy = fyy = 0.0
    for j in range(P.shape[0]):
        a, k0, k1, c = P[j, 0], P[j, 1], P[j, 2], P[j, 3]
        arg = k0 * x + k1 * y + c
        ca, sa = math.cos(arg), math.sin(arg)
        f += a * ca
        fx -= a * sa * k0
        fy -= a * sa * k1
        fxx -= a * ca * k0 * k0
        fxy -= a * ca * k0 * k1
        fyy -= a * ca * k1 * k1
    return f, fx, fy, fxx, fxy, fyy


@njit(cache=True)
def _form(T, x, y):
    """theta and d_j theta_i summed over packed terms."""
    t0 = t1 = 0.0
    d00 = d01 = d10 = d11 = 0.0
    for j in range(T.shape[0]):
        kind = int(T[j, 0])
        p = T[j]
        if kind == GRAD_FOURIER:
            A, k0, k1, c = p[1], p[2], p[3], p[4]
            arg = k0 * x + k1 * y + c
            ca, sa = math.cos(arg), math.sin(arg)
            t0 -= A * ca * k0
            t1 -= A * ca * k1
            d00 += A * sa * k0 * k0
            d01 += A * sa * k0 * k1
            d10 += A * sa * k1 * k0
            d11 += A * sa * k1 * k1
        elif kind == GRAD_BUMP:
            A, r, c0, c1 = p[1], p[2], p[3], p[4]
            dx, dy = x - c0, y - c1
            s = (dx * dx + dy * dy) / (r * r)
            b, db, ddb = _bump(s)
            cc = 2.0 / (r * r)
            t0 -= A * db * cc * dx
            t1 -= A * db * cc * dy
            d00 -= A * (ddb * cc * cc * dx * dx + db * cc)
            d01 -= A * ddb * cc * cc * dx * dy
            d10 -= A * ddb * cc * cc * dx * dy
            d11 -= A * (ddb * cc * cc * dy * dy + db * cc)
        elif kind == CONST:
            t0 += p[1]
            t1 += p[2]
        elif kind == SINUS:
            a0, a1, k0, k1, c = p[1], p[2], p[3], p[4], p[5]
            arg = k0 * x + k1 * y + c
            ca, sa = math.cos(arg), math.sin(arg)
            t0 += sa * a0
            t1 += sa * a1
            d00 += ca * a0 * k0
            d01 += ca * a0 * k1
            d10 += ca * a1 * k0
            d11 += ca * a1 * k1
        elif kind == BUMPFORM:
            a0, a1, r, c0, c1 = p[1], p[2], p[3], p[4], p[5]
            dx, dy = x - c0, y - c1
            s = (dx * dx + dy * dy) / (r * r)
            b, db, ddb = _bump(s)
            cc = 2.0 / (r * r)
            t0 += b * a0
            t1 += b * a1
            d00 += a0 * db * cc * dx
            d01 += a0 * db * cc * dy
            d10 += a1 * db * cc * dx
            d11 += a1 * db * cc * dy
        elif kind == COLLAR:
            P, w, ang, mass = p[1], p[2], p[3], p[4]
            co, si = math.cos(ang), math.sin(ang)
            a = co * x + si * y
            bb = -si * x + co * y
            D = 1.0 - a * a - bb * bb
            q = 2.0 * bb / D
            qa = 4.0 * a * bb / (D * D)
            qb = 2.0 / D + 4.0 * bb * bb / (D * D)
            qaa = 4.0 * bb / (D * D) + 16.0 * a * a * bb / D ** 3
            qab = 4.0 * a / (D * D) + 16.0 * a * bb * bb / D ** 3
            qbb = 12.0 * bb / (D * D) + 16.0 * bb ** 3 / D ** 3
            rr = math.sqrt(1.0 + q * q)
            d = math.asinh(q)
            ga, gb = qa / rr, qb / rr
            k3 = q / rr ** 3
            haa = qaa / rr - k3 * qa * qa
            hab = qab / rr - k3 * qa * qb
            hbb = qbb / rr - k3 * qb * qb
            # rotate back to chart coordinates
            gx = ga * co - gb * si
            gy = ga * si + gb * co
            hxx = co * co * haa - 2 * co * si * hab + si * si * hbb
            hxy = co * si * haa + (co * co - si * si) * hab - co * si * hbb
            hyy = si * si * haa + 2 * co * si * hab + co * co * hbb
            s = (d / w) ** 2
            b, db, ddb = _bump(s)
            p1 = b / (w * mass)
            p2 = db * 2.0 * d / (w ** 3 * mass)
            t0 += P * p1 * gx
            t1 += P * p1 * gy
            d00 += P * (p2 * gx * gx + p1 * hxx)
            d01 += P * (p2 * gx * gy + p1 * hxy)
            d10 += P * (p2 * gy * gx + p1 * hxy)
            d11 += P * (p2 * gy * gy + p1 * hyy)
    return t0, t1, d00, d01, d10, d11


@njit(cache=True)
def _section(k, coefs, f, fx, fy, x, y, phi):
    """Re q, its x/y derivatives and phi derivative for q = h(z) exp(-k f + i k phi)."""
    z = complex(x, y)
    h = 0j
    dh = 0j
    zp = 1.0 + 0j
    for j in range(coefs.shape[0]):
        if j > 0:
            dh += j * coefs[j] * zp
            zp = zp * z
        h += coefs[j] * zp
    B = math.exp(-k * f) * complex(math.cos(k * phi), math.sin(k * phi))
    q = h * B
    qx = (dh - k * fx * h) * B
    qy = (1j * dh - k * fy * h) * B
    qphi = 1j * k * q
    return q.real, qx.real, qy.real, qphi.real


@njit(cache=True)
def _rhs(x, y, phi, ecode, EP, T, fscale, scale, b, sec_k, coefs, lam_scale, want_jac, J):
    f, fx, fy, fxx, fxy, fyy = _exponent(ecode, EP, x, y)
    t0, t1, d00, d01, d10, d11 = _form(T, x, y)
    t0 *= fscale
    t1 *= fscale
    a = math.exp(-f)
    c, s = math.cos(phi), math.sin(phi)
    w0 = fx + scale * t0
    w1 = fy + scale * t1
    P = -w0 * s + w1 * c
    rate = a * P + b
    theta_v = a * (t0 * c + t1 * s)
    div = -scale * theta_v
    lam = lx = ly = lp = 0.0
    if sec_k > 0:
        lam, lx, ly, lp = _section(sec_k, coefs, f, fx, fy, x, y, phi)
        lam *= lam_scale
        lx *= lam_scale
        ly *= lam_scale
        lp *= lam_scale
        rate += lam
        div += lp
    if want_jac:
        sf = scale * fscale
        dw00 = fxx + sf * d00
        dw01 = fxy + sf * d01
        dw10 = fxy + sf * d10
        dw11 = fyy + sf * d11
        J[0, 0] = -a * c * fx
        J[0, 1] = -a * c * fy
        J[0, 2] = -a * s
        J[1, 0] = -a * s * fx
        J[1, 1] = -a * s * fy
        J[1, 2] = a * c
        J[2, 0] = a * (-P * fx + (-s * dw00 + c * dw10)) + lx
        J[2, 1] = a * (-P * fy + (-s * dw01 + c * dw11)) + ly
        J[2, 2] = -a * (w0 * c + w1 * s) + lp
    return a * c, a * s, rate, theta_v, div


@njit(cache=True)
def _reduce(S, D, i, want_tan, kind, centers, radius, gens, band):
    """Octagon reduction of state i (in place); torus wrap; disk check."""
    if kind == 0:
        S[i, 0] -= math.floor(S[i, 0])
        S[i, 1] -= math.floor(S[i, 1])
        if S[i, 0] >= 1.0:
            S[i, 0] = 0.0
        if S[i, 1] >= 1.0:
            S[i, 1] = 0.0
        return 0
    if S[i, 0] ** 2 + S[i, 1] ** 2 >= 1.0:
        return -1
    if kind == 1:
        return 0
    for _ in range(64):
        z = complex(S[i, 0], S[i, 1])
        side = -1
        for k in range(8):
            if abs(z - centers[k]) < radius - band:
                side = k
                break
        if side < 0:
            return 0
        g = (side + 4) % 8
        A, B, C, Dd = gens[g, 0, 0], gens[g, 0, 1], gens[g, 1, 0], gens[g, 1, 1]
        den = C * z + Dd
        gp = 1.0 / (den * den)
        slope = -2.0 * C / den
        zn = (A * z + B) / den
        S[i, 0] = zn.real
        S[i, 1] = zn.imag
        S[i, 2] += math.atan2(gp.imag, gp.real)
        if want_tan:
            for col in range(D.shape[2]):
                dz = complex(D[i, 0, col], D[i, 1, col])
                dz2 = gp * dz
                D[i, 0, col] = dz2.real
                D[i, 1, col] = dz2.imag
                D[i, 2, col] += (slope * dz).imag
    return -2


@njit(cache=True, nogil=True)
def surface_advance(S, D, want_tan, n_steps, h, kind, ecode, EP, T, fscale, scale, b,
                    sec_k, coefs, lam_scale, centers, radius, gens, band, acc_theta, acc_div):
    """Advance every state ``n_steps`` RK4 steps in place.

    Returns 0 on success, -1 if a state left the disk, -2 if reduction failed.
    """
    J = np.zeros((3, 3))
    K1 = np.zeros((3, 3))
    K2 = np.zeros((3, 3))
    K3 = np.zeros((3, 3))
    K4 = np.zeros((3, 3))
    Dt = np.zeros((3, 3))
    for i in range(S.shape[0]):
        x, y, p = S[i, 0], S[i, 1], S[i, 2]
        for _ in range(n_steps):
            a1, b1, c1, th1, dv1 = _rhs(x, y, p, ecode, EP, T, fscale, scale, b, sec_k, coefs,
                                        lam_scale, want_tan, J)
            if want_tan:
                K1[:, :] = J @ D[i]
                Dt[:, :] = D[i] + 0.5 * h * K1
            a2, b2, c2, th2, dv2 = _rhs(x + 0.5 * h * a1, y + 0.5 * h * b1, p + 0.5 * h * c1, ecode, EP,
                                        T, fscale, scale, b, sec_k, coefs, lam_scale, want_tan, J)
            if want_tan:
                K2[:, :] = J @ Dt
                Dt[:, :] = D[i] + 0.5 * h * K2
            a3, b3, c3, th3, dv3 = _rhs(x + 0.5 * h * a2, y + 0.5 * h * b2, p + 0.5 * h * c2, ecode, EP,
                                        T, fscale, scale, b, sec_k, coefs, lam_scale, want_tan, J)
            if want_tan:
                K3[:, :] = J @ Dt
                Dt[:, :] = D[i] + h * K3
            a4, b4, c4, th4, dv4 = _rhs(x + h * a3, y + h * b3, p + h * c3, ecode, EP,
                                        T, fscale, scale, b, sec_k, coefs, lam_scale, want_tan, J)
            if want_tan:
                K4[:, :] = J @ Dt
                D[i] += (h / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
            x += (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            y += (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            p += (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
            acc_theta[i] += (h / 6.0) * (th1 + 2.0 * th2 + 2.0 * th3 + th4)
            acc_div[i] += (h / 6.0) * (dv1 + 2.0 * dv2 + 2.0 * dv3 + dv4)
            S[i, 0], S[i, 1], S[i, 2] = x, y, p
            st = _reduce(S, D, i, want_tan, kind, centers, radius, gens, band)
            if st == -1:
                return -1
            if st == -2:
                return -2
            x, y, p = S[i, 0], S[i, 1], S[i, 2]
        p = p % (2.0 * math.pi)
        S[i, 2] = p
    return 0


class CompiledSurfaceFlow:
    """Packed tables for a surface model and field configuration."""

    def __init__(self, m: ManifoldModel, fc: FieldConfig):
        if m.dim != 2:
            raise NotCompilable("compiled kernels cover surfaces")
        self.model = m
        self.kind = KIND_CODES[m.kind]
        self.ecode, self.EP = pack_exponent(m)
        (self.T, self.fscale, self.scale, self.b, self.sec_k, self.coefs,
         self.lam_scale) = pack_field(fc)
        self.centers = np.asarray(_oct.SIDE_CENTERS, complex)
        self.gens = np.asarray(_oct.GENERATORS, complex)

    def advance(self, S, n_steps, h, D=None, acc_theta=None, acc_div=None):
        N = S.shape[0]
        want = D is not None
        Dw = D if want else np.zeros((N, 3, 3))
        at = acc_theta if acc_theta is not None else np.zeros(N)
        ad = acc_div if acc_div is not None else np.zeros(N)
        st = surface_advance(S, Dw, want, n_steps, h, self.kind, self.ecode, self.EP, self.T, self.fscale,
                             self.scale, self.b, self.sec_k, self.coefs, self.lam_scale, self.centers,
                             _oct.SIDE_RADIUS, self.gens, _oct.BOUNDARY_BAND, at, ad)
        if st == -1:
            raise DomainError("trajectory left the Poincare disk")
        if st == -2:
            raise RuntimeError("octagon reduction did not terminate")
        return S


def try_compile(m: ManifoldModel, fc: FieldConfig):
    try:
        return CompiledSurfaceFlow(m, fc)
    except NotCompilable:
        return None
