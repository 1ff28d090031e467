import math
from functools import reduce

import numpy as np
import pytest

from thermolab import octagon as oc
from thermolab.geometry import octagon_surface


def test_interior_angle_closes_up():
    # 8 vertices meeting at one cone point need angle sum 2 pi
    assert 8 * oc.INTERIOR_ANGLE == pytest.approx(2 * math.pi)
    # Gauss-Bonnet for a geodesic octagon: area = 6 pi - sum of angles = 4 pi
    assert 6 * math.pi - 8 * oc.INTERIOR_ANGLE == pytest.approx(octagon_surface().volume())


def test_vertices_lie_on_adjacent_sides():
    v = oc.vertices()
    for k in range(8):
        for vk in (v[k], v[(k - 1) % 8]):
            assert abs(abs(vk - oc.SIDE_CENTERS[k]) - oc.SIDE_RADIUS) < 1e-12


def test_interior_angle_at_vertex():
    # angle between the two side circles at their common vertex
    v = oc.vertices()[0]
    n0 = v - oc.SIDE_CENTERS[0]
    n1 = v - oc.SIDE_CENTERS[1]
    between = math.acos((n0.real * n1.real + n0.imag * n1.imag) / (abs(n0) * abs(n1)))
    assert math.pi - between == pytest.approx(oc.INTERIOR_ANGLE, abs=1e-12)


def test_generators_are_su11_and_paired():
    for k in range(8):
        A = oc.GENERATORS[k]
        assert np.linalg.det(A) == pytest.approx(1.0)
        assert np.allclose(oc.compose(A, oc.GENERATORS[oc.inverse_index(k)]), np.eye(2), atol=1e-12)


def test_pairings_map_opposite_side_onto_side():
    t = np.linspace(-0.95, 0.95, 21)
    for k in range(8):
        src = oc.side_points((k + 4) % 8, t)
        img = oc.apply(oc.GENERATORS[k], src)
        assert np.allclose(np.abs(img - oc.SIDE_CENTERS[k]), oc.SIDE_RADIUS, atol=1e-10)


def test_pairings_are_hyperbolic_isometries():
    rng = np.random.default_rng(0)
    z = 0.5 * (rng.random(10) - 0.5) + 0.5j * (rng.random(10) - 0.5)
    w = 0.5 * (rng.random(10) - 0.5) + 0.5j * (rng.random(10) - 0.5)
    for A in oc.GENERATORS:
        assert np.allclose(oc.hyperbolic_distance(oc.apply(A, z), oc.apply(A, w)),
                           oc.hyperbolic_distance(z, w), atol=1e-10)


def test_translation_length():
    for A in oc.GENERATORS:
        assert oc.hyperbolic_distance(0.0, oc.apply(A, 0.0)) == pytest.approx(2 * oc.INRADIUS)


def test_surface_group_relation():
    word = [0, 5, 2, 7, 4, 1, 6, 3]
    M = reduce(oc.compose, [oc.GENERATORS[k] for k in word])
    # equal to the identity up to the sign ambiguity of SU(1,1)
    assert np.allclose(M, np.eye(2), atol=1e-10) or np.allclose(M, -np.eye(2), atol=1e-10)


def test_reduction_lands_in_domain_and_is_consistent():
    rng = np.random.default_rng(3)
    r = 0.97 * np.sqrt(rng.random(400))
    z = r * np.exp(2j * np.pi * rng.random(400))
    red, M = oc.reduce_points(z)
    assert np.all(oc.in_domain(red) | (np.abs(np.abs(red[..., None] - oc.SIDE_CENTERS) - oc.SIDE_RADIUS)
                                        < 1e-9).any(axis=-1))
    assert np.allclose(oc.apply(M, z), red, atol=1e-9)


def test_derivative_matches_difference_quotient():
    A = oc.GENERATORS[2]
    z = 0.1 + 0.2j
    h = 1e-6
    fd = (oc.apply(A, z + h) - oc.apply(A, z - h)) / (2 * h)
    assert abs(oc.derivative(A, z) - fd) < 1e-8
    fd2 = (oc.derivative(A, z + h) - oc.derivative(A, z - h)) / (2 * h)
    assert abs(oc.log_derivative_slope(A, z) - fd2 / oc.derivative(A, z)) < 1e-7


def test_normalize_is_idempotent_on_model():
    m = octagon_surface()
    x = np.array([[0.55, 0.1], [-0.2, 0.62], [0.1, -0.05]])
    y = m.normalize(x)
    assert np.allclose(m.normalize(y), y)
    assert np.all(m.in_fundamental_domain(y))
