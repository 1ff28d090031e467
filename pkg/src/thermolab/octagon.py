"""The regular hyperbolic octagon and its opposite-side pairings.

The octagon is centred at 0 in the Poincare disk with interior angles pi/4, so the
eight vertices close up to a single cone point of angle 2 pi and the quotient is a
closed genus-2 surface (the Bolza surface).  Side ``k`` is the geodesic orthogonal
to the ray at angle ``k pi / 4`` at hyperbolic distance ``INRADIUS`` from 0.

Pairing ``A_k`` (k = 0..7) is the hyperbolic translation by ``2 * INRADIUS``
along the diameter at angle ``k pi / 4``; it carries side ``k + 4`` onto side
``k`` and ``A_{k+4} = A_k^{-1}``.  A point beyond side ``k`` is pulled back by
``A_{k+4}``.  Since side ``k`` is the bisector of 0 and ``A_k(0)``, each pull back
strictly decreases the distance to the centre, so reduction terminates.

Maps are stored as SU(1,1) matrices ``[[a, b], [conj(b), conj(a)]]`` acting by
``z -> (a z + b) / (conj(b) z + conj(a))``.
"""

from __future__ import annotations

import math

import numpy as np

N_SIDES = 8
INTERIOR_ANGLE = math.pi / 4
INRADIUS = math.acosh(1.0 / math.tan(math.pi / 8))  # cosh r = cot(pi/8)
CIRCUMRADIUS = math.acosh(1.0 / math.tan(math.pi / 8) ** 2)
INRADIUS_EUCLID = math.tanh(INRADIUS / 2)
CIRCUMRADIUS_EUCLID = math.tanh(CIRCUMRADIUS / 2)
BOUNDARY_BAND = 1e-12

SIDE_ANGLES = np.arange(N_SIDES) * (math.pi / 4)
# side k lies on the circle |z - c_k| = r, orthogonal to the unit circle
_t = INRADIUS_EUCLID
SIDE_RADIUS = 0.5 * (1.0 / _t - _t)
SIDE_CENTERS = 0.5 * (1.0 / _t + _t) * np.exp(1j * SIDE_ANGLES)


def translation(angle: float, distance: float) -> np.ndarray:
    ch, sh = math.cosh(distance / 2), math.sinh(distance / 2)
    return np.array([[ch, sh * np.exp(1j * angle)], [sh * np.exp(-1j * angle), ch]], dtype=complex)


GENERATORS = np.array([translation(a, 2 * INRADIUS) for a in SIDE_ANGLES])
GENERATOR_NAMES = ("a1", "b1", "a2", "b2", "a1^-1", "b1^-1", "a2^-1", "b2^-1")


def inverse_index(k: int) -> int:
    return (k + 4) % N_SIDES


def apply(M, z):
    M = np.asarray(M)
    return (M[..., 0, 0] * z + M[..., 0, 1]) / (M[..., 1, 0] * z + M[..., 1, 1])


def derivative(M, z):
    """Complex derivative of the Mobius map (det M = 1)."""
    M = np.asarray(M)
    return 1.0 / (M[..., 1, 0] * z + M[..., 1, 1]) ** 2


def log_derivative_slope(M, z):
    """``g''(z) / g'(z)`` for the Mobius map."""
    M = np.asarray(M)
    return -2.0 * M[..., 1, 0] / (M[..., 1, 0] * z + M[..., 1, 1])


def compose(A, B):
    return np.einsum("...ij,...jk->...ik", A, B)


def side_violation(z):
    """``(k, mask)`` for the first side each point lies strictly beyond."""
    z = np.asarray(z, dtype=complex)
    beyond = np.abs(z[..., None] - SIDE_CENTERS) < SIDE_RADIUS - BOUNDARY_BAND
    any_ = beyond.any(axis=-1)
    first = np.argmax(beyond, axis=-1)
    return first, any_


def in_domain(z):
    _, beyond = side_violation(z)
    return ~beyond & (np.abs(z) < 1.0)


def reduce_points(z, max_steps: int = 64):
    """Pull points back into the octagon.

    Returns the reduced points and the accumulated SU(1,1) matrices ``M`` with
    ``reduced = M(z)``.
    """
    z = np.array(z, dtype=complex, copy=True)
    M = np.broadcast_to(np.eye(2, dtype=complex), z.shape + (2, 2)).copy()
    for _ in range(max_steps):
        k, beyond = side_violation(z)
        if not beyond.any():
            return z, M
        idx = np.nonzero(beyond)
        pull = GENERATORS[(k[idx] + 4) % N_SIDES]
        z[idx] = apply(pull, z[idx])
        M[idx] = compose(pull, M[idx])
    raise RuntimeError("octagon reduction did not terminate")


def vertices():
    ang = SIDE_ANGLES + math.pi / 8
    return CIRCUMRADIUS_EUCLID * np.exp(1j * ang)


def side_points(k: int, t):
    """Points on side ``k`` parametrised by ``t`` in (-1, 1) between its vertices."""
    v = vertices()
    a, b = v[(k - 1) % N_SIDES], v[k]
    c = SIDE_CENTERS[k]
    th0, th1 = np.angle(a - c), np.angle(b - c)
    d = (th1 - th0 + np.pi) % (2 * np.pi) - np.pi
    th = th0 + 0.5 * (np.asarray(t) + 1.0) * d
    return c + SIDE_RADIUS * np.exp(1j * th)


def hyperbolic_distance(z, w):
    z = np.asarray(z, dtype=complex)
    w = np.asarray(w, dtype=complex)
    num = 2 * np.abs(z - w) ** 2
    den = (1 - np.abs(z) ** 2) * (1 - np.abs(w) ** 2)
    return np.arccosh(1 + num / den)
