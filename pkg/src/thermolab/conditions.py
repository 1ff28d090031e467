"""Curvature criteria for hyperbolicity of Gaussian thermostats.

For a g-orthonormal pair ``(xi, eta)`` spanning a plane ``sigma`` and an
external field ``E``:

* ``k(sigma)   = K(sigma) - div_sigma E - |E|^2 + 5/4 |E_sigma|^2``
* ``K_w(sigma) = k(sigma) - 1/4 |E_sigma|^2`` (Weyl sectional curvature)
* ``k_1(sigma) = K(sigma) - div_sigma E - |E|^2 + (1 + (n/2 - 1)^2) |E_sigma|^2``

with ``div_sigma E = <nabla_xi E, xi> + <nabla_eta E, eta>`` and ``E_sigma`` the
orthogonal projection of ``E`` onto ``sigma``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import ExternalField
from .geometry import ManifoldModel, TwoPlane, sectional_curvature

TAGS = ("k", "Kw", "k1")
MARGIN = 1e-3
_BLOCK = 256


@dataclass
class CriterionReport:
    tag: str
    supremum: float
    argmax_point: np.ndarray
    argmax_plane: tuple  # (xi, eta)
    n_points: int
    n_planes: int
    seed: int
    margin: float = MARGIN

    @property
    def verdict(self) -> str:
        return "negative" if self.supremum < -self.margin else "non-negative"

    def to_dict(self) -> dict:
        return {"criterion": self.tag, "supremum": self.supremum, "verdict": self.verdict,
                "argmax_point": self.argmax_point.tolist(),
                "argmax_plane": [np.asarray(v).tolist() for v in self.argmax_plane],
                "n_points": self.n_points, "n_planes": self.n_planes, "seed": self.seed,
                "margin": self.margin}


def criterion_parts(m: ManifoldModel, field: ExternalField | None, sigma: TwoPlane) -> dict:
    """``K``, ``div_sigma E``, ``|E|^2`` and ``|E_sigma|^2`` on the plane(s)."""
    x, xi, eta = sigma.base, sigma.xi, sigma.eta
    K = sectional_curvature(m, sigma)
    if field is None:
        z = np.zeros(np.shape(K))
        return {"K": K, "div": z, "E2": z, "Es2": z}
    E = field.vector(x)
    dE = field.covariant_derivative(x)  # [..., i, k] = nabla_k E^i
    div = (m.inner(x, np.einsum("...ik,...k->...i", dE, xi), xi)
           + m.inner(x, np.einsum("...ik,...k->...i", dE, eta), eta))
    a, b = m.inner(x, E, xi), m.inner(x, E, eta)
    return {"K": K, "div": div, "E2": m.inner(x, E, E), "Es2": a * a + b * b}


def _combine(parts: dict, tag: str, n: int):
    base = parts["K"] - parts["div"] - parts["E2"]
    if tag == "k":
        return base + 1.25 * parts["Es2"]
    if tag == "Kw":
        return base + parts["Es2"]
    if tag == "k1":
        return base + (1.0 + (n / 2.0 - 1.0) ** 2) * parts["Es2"]
    raise ValueError(f"unknown criterion {tag!r}; choose from {TAGS}")


def evaluate_criterion(m: ManifoldModel, field: ExternalField | None, sigma: TwoPlane, tag: str = "k"):
    """Value of criterion ``tag`` on the plane ``sigma`` (vectorized over its base points)."""
    if tag not in TAGS:
        raise ValueError(f"unknown criterion {tag!r}; choose from {TAGS}")
    return _combine(criterion_parts(m, field, sigma), tag, m.dim)


def _block_points(m: ManifoldModel, seed: int, b: int):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0, b))))
    if m.kind == "disk":
        r = 0.9 * np.sqrt(rng.random(_BLOCK))
        a = 2 * np.pi * rng.random(_BLOCK)
        return np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
    return m.sample_points(rng, _BLOCK)


def _block_pairs(m: ManifoldModel, seed: int, b: int, j: int):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(1, b, j))))
    return rng.standard_normal((_BLOCK, 2, m.dim))


def random_planes(m: ManifoldModel, x, gauss) -> TwoPlane:
    """Orthonormalize Gaussian pairs ``gauss[..., 0, :]``, ``gauss[..., 1, :]`` at ``x``."""
    return TwoPlane.span(m, x, gauss[..., 0, :], gauss[..., 1, :])


def scan_criterion(m: ManifoldModel, field: ExternalField | None, tag: str = "k", n_points: int = 1000,
                   n_planes: int = 8, seed: int = 0, margin: float = MARGIN) -> CriterionReport:
    """Supremum of a criterion over random points and random planes.

    Point ``i`` and plane ``j`` depend only on ``(seed, i, j)``, so a larger scan
    always contains a smaller one and its supremum can only grow.
    """
    if n_points < 1 or n_planes < 1:
        raise ValueError("sample counts must be positive")
    best = -np.inf
    arg = None
    n_blocks = -(-n_points // _BLOCK)
    for b in range(n_blocks):
        take = min(_BLOCK, n_points - b * _BLOCK)
        x = _block_points(m, seed, b)[:take]
        for j in range(n_planes):
            sigma = random_planes(m, x, _block_pairs(m, seed, b, j)[:take])
            vals = evaluate_criterion(m, field, sigma, tag)
            i = int(np.argmax(vals))
            if vals[i] > best:
                best = float(vals[i])
                arg = (x[i].copy(), (sigma.xi[i].copy(), sigma.eta[i].copy()))
    return CriterionReport(tag, best, arg[0], arg[1], n_points, n_planes, seed, margin)
