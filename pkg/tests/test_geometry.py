import math

import numpy as np
import pytest

from thermolab.geometry import (DegeneratePlaneError, DomainError, FourierTerm, GeometryError, TwoPlane,
                                christoffel, conformal_torus, flat_torus, gaussian_curvature, octagon_surface,
                                poincare_disk, riemann, sectional_curvature)

RNG = np.random.default_rng(1)


def torus3():
    return conformal_torus(3, [FourierTerm(0.12, (1, 0, 1), 0.3), FourierTerm(-0.08, (0, 1, 1), 1.1)])


def torus2():
    return conformal_torus(2, [FourierTerm(0.15, (1, 1), 0.2), FourierTerm(0.07, (0, 2), 0.0)])


def fd_exponent(m, x, h=1e-4):
    """Gradient and Hessian of the conformal exponent by central differences of its values."""
    n = m.dim
    f = m.exponent.value
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    E = np.eye(n) * h
    for i in range(n):
        grad[i] = (f(x + E[i]) - f(x - E[i])) / (2 * h)
        for j in range(n):
            hess[i, j] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j])
                          + f(x - E[i] - E[j])) / (4 * h * h)
    return grad, hess


def fd_metric_christoffel(m, x, h=1e-5):
    n = m.dim
    dg = np.zeros((n, n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        dg[:, :, k] = (m.metric(x + e) - m.metric(x - e)) / (2 * h)
    ginv = np.linalg.inv(m.metric(x))
    low = 0.5 * (np.einsum("lkj->ljk", dg) + dg - np.einsum("jkl->ljk", dg))
    return np.einsum("il,ljk->ijk", ginv, low)


@pytest.mark.parametrize("make", [flat_torus, torus2, torus3, poincare_disk])
def test_christoffel_matches_metric_differences(make):
    m = make() if make is not flat_torus else flat_torus(3)
    x = np.full(m.dim, 0.21) + 0.1 * np.arange(m.dim) if m.kind == "torus" else np.array([0.2, -0.3])
    assert np.allclose(christoffel(m, x), fd_metric_christoffel(m, x), atol=1e-8)


def test_flat_torus_has_no_curvature():
    for n in (2, 3):
        x = RNG.random((5, n))
        assert np.all(christoffel(flat_torus(n), x) == 0)
        assert np.all(riemann(flat_torus(n), x) == 0)


def test_disk_and_octagon_have_curvature_minus_one():
    for m in (poincare_disk(), octagon_surface()):
        x = np.array([[0.0, 0.0], [0.3, -0.2], [-0.1, 0.35]])
        assert np.allclose(gaussian_curvature(m, x), -1.0, atol=1e-12)
        sigma = TwoPlane.span(m, x, RNG.standard_normal((3, 2)), RNG.standard_normal((3, 2)))
        assert np.allclose(sectional_curvature(m, sigma), -1.0, atol=1e-12)


def test_surface_sectional_curvature_matches_laplacian_oracle():
    m = torus2()
    for x in RNG.random((6, 2)):
        grad, hess = fd_exponent(m, x)
        K = -math.exp(-2 * m.exponent.value(x)) * np.trace(hess)
        sigma = TwoPlane.span(m, x, np.array([1.0, 0.3]), np.array([-0.2, 1.0]))
        assert sectional_curvature(m, sigma) == pytest.approx(K, rel=1e-5)  # difference-oracle accuracy


def test_sectional_curvature_three_dimensional_conformal_oracle():
    # for g = exp(2f) delta and Euclidean-orthonormal e1, e2:
    # K = exp(-2f) (-f_11 - f_22 + f_1^2 + f_2^2 - |grad f|^2)
    m = torus3()
    for x in RNG.random((6, 3)):
        grad, hess = fd_exponent(m, x)
        q, _ = np.linalg.qr(RNG.standard_normal((3, 2)))
        e1, e2 = q[:, 0], q[:, 1]
        K = math.exp(-2 * m.exponent.value(x)) * (-e1 @ hess @ e1 - e2 @ hess @ e2 + (e1 @ grad) ** 2
                                                  + (e2 @ grad) ** 2 - grad @ grad)
        sigma = TwoPlane.span(m, x, e1, e2)
        assert sectional_curvature(m, sigma) == pytest.approx(K, rel=1e-5)  # difference-oracle accuracy


def test_riemann_symmetries():
    m = torus3()
    x = RNG.random(3)
    R = riemann(m, x)
    Rlow = np.einsum("ip,pjkl->ijkl", m.metric(x), R)
    assert np.allclose(Rlow, -np.swapaxes(Rlow, 2, 3), atol=1e-12)
    assert np.allclose(Rlow, -np.swapaxes(Rlow, 0, 1), atol=1e-12)
    assert np.allclose(Rlow, np.einsum("ijkl->klij", Rlow), atol=1e-12)
    bianchi = R + np.einsum("ijkl->iklj", R) + np.einsum("ijkl->iljk", R)
    assert np.allclose(bianchi, 0, atol=1e-12)


def test_sectional_curvature_independent_of_basis():
    m = torus3()
    x = RNG.random(3)
    sigma = TwoPlane.span(m, x, RNG.standard_normal(3), RNG.standard_normal(3))
    K = sectional_curvature(m, sigma)
    for a in (0.3, 1.2, 2.5):
        assert sectional_curvature(m, sigma.rotated(a)) == pytest.approx(K, abs=1e-12)


def test_two_plane_errors():
    m = flat_torus(2)
    with pytest.raises(DegeneratePlaneError):
        TwoPlane.span(m, [0.1, 0.1], [1.0, 0.0], [2.0, 0.0])
    with pytest.raises(GeometryError):
        TwoPlane(m, np.array([0.1, 0.1]), np.array([1.0, 0.0]), np.array([1.0, 1.0]))


def test_domain_checks():
    with pytest.raises(DomainError):
        poincare_disk().check_domain(np.array([0.9, 0.9]))
    with pytest.raises(DomainError):
        flat_torus(2).check_domain(np.array([0.1, 0.2, 0.3]))
    with pytest.raises(DomainError):
        flat_torus(2).check_domain(np.array([np.nan, 0.2]))


def test_volumes():
    assert octagon_surface().volume() == pytest.approx(4 * math.pi)
    assert flat_torus(3).volume() == 1.0
    m = conformal_torus(2, [FourierTerm(0.2, (1, 0))])
    # mean of exp(2 * 0.2 cos(2 pi x)) is the modified Bessel value I0(0.4)
    assert m.volume() == pytest.approx(np.i0(0.4), rel=1e-12)


def test_volume_sampling_is_in_domain():
    rng = np.random.default_rng(4)
    m = octagon_surface()
    x = m.sample_points(rng, 500)
    assert np.all(m.in_fundamental_domain(x))
    v = m.sample_unit_vectors(rng, x)
    assert np.allclose(m.norm(x, v), 1.0)
