import math

import numpy as np
import pytest

from thermolab import octagon as oc
from thermolab._kernels import CompiledSurfaceFlow
from thermolab.dynamics import (IntegratorConfig, PhasePoint, SurfaceOperators, advance, axis_seed,
                                closed_orbit_holonomy, divergence_along, flow, phase_velocity,
                                reversibility_residual, rk4_step_tangent, sample_liouville,
                                surface_jacobian)
from thermolab.fields import (FieldConfig, HolomorphicSection, LorentzForce, SinusoidalForm, field_from_form,
                              lambda_from_section)
from thermolab.geometry import FourierTerm, UnsupportedModelError, conformal_torus, flat_torus, octagon_surface, \
    poincare_disk
from thermolab.scenarios import shipped_gradient_field, shipped_nongradient_field


def ctorus(dim=2):
    if dim == 2:
        return conformal_torus(2, [FourierTerm(0.15, (1, 1), 0.2)])
    return conformal_torus(3, [FourierTerm(0.1, (1, 0, 1), 0.3)])


def sine_field(m):
    amp = (0.3, -0.2) if m.dim == 2 else (0.3, -0.2, 0.1)
    k = (1, 0) if m.dim == 2 else (1, 0, 1)
    return field_from_form(m, [SinusoidalForm(amp, k, 0.4)])


def test_flat_geodesics_are_straight_lines():
    m = flat_torus(2)
    p = PhasePoint.from_angle(m, [0.1, 0.2], 0.7)
    tr = flow(m, FieldConfig(), p, 3.0, IntegratorConfig(step=0.01))
    expect = (np.array([0.1, 0.2]) + 3.0 * np.array([math.cos(0.7), math.sin(0.7)])) % 1.0
    assert np.allclose(tr.final.x, expect, atol=1e-12)


def test_disk_geodesic_through_origin_has_unit_speed_in_distance():
    m = poincare_disk()
    p = PhasePoint.from_angle(m, [0.0, 0.0], 0.3)
    tr = flow(m, FieldConfig(), p, 1.5, IntegratorConfig(step=1e-3))
    z = complex(*tr.final.x)
    assert oc.hyperbolic_distance(0.0, z) == pytest.approx(1.5, abs=1e-10)
    assert math.atan2(z.imag, z.real) == pytest.approx(0.3, abs=1e-10)


def test_flat_magnetic_orbits_are_circles():
    m = flat_torus(2)
    b = 0.5
    fc = FieldConfig(lorentz=LorentzForce(m, b))
    p = PhasePoint.from_angle(m, [0.3, 0.3], 0.0)
    period = 2 * math.pi / b
    tr = flow(m, fc, p, period, IntegratorConfig(step=1e-3))
    assert np.allclose(tr.final.x, [0.3, 0.3], atol=1e-9)
    half = flow(m, fc, p, period / 2, IntegratorConfig(step=1e-3))
    # diameter 2 / b, traversed on the torus of side 1
    d = np.array([0.3, 0.3 + 2.0 / b]) % 1.0
    assert np.allclose(half.final.x, d, atol=1e-9)


@pytest.mark.parametrize("dim", [2, 3])
def test_speed_is_preserved(dim):
    m = ctorus(dim)
    fc = FieldConfig(external=sine_field(m), scale=0.5)
    rng = np.random.default_rng(0)
    S = sample_liouville(m, rng, 1)[0]
    x = S[:dim]
    v = S[dim:] if dim == 3 else np.exp(-m.exponent.value(x)) * np.array([math.cos(S[2]), math.sin(S[2])])
    tr = flow(m, fc, PhasePoint(m, x, v), 5.0, IntegratorConfig(step=5e-3))
    assert tr.speed_error() < 1e-9


def test_rk4_is_fourth_order():
    m = ctorus()
    fc = FieldConfig(external=sine_field(m), scale=0.7)
    p = PhasePoint.from_angle(m, [0.2, 0.4], 1.0)
    ref = flow(m, fc, p, 1.0, IntegratorConfig(step=1e-3)).final.state()
    errs = [np.linalg.norm(flow(m, fc, p, 1.0, IntegratorConfig(step=h)).final.state() - ref) for h in (0.1, 0.05)]
    assert 12 < errs[0] / errs[1] < 20


def test_gaussian_thermostat_is_reversible():
    m = ctorus()
    fc = FieldConfig(external=sine_field(m), scale=0.5)
    p = PhasePoint.from_angle(m, [0.2, 0.4], 1.0)
    assert reversibility_residual(m, fc, p, 2.0, IntegratorConfig(step=1e-3)) < 1e-9


def liouville_divergence_fd(m, fc, S, h=1e-5):
    """(1/rho) d_i (rho X^i) with rho = exp(2 f) in (x, y, phi) coordinates."""
    div = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        rho = lambda s: math.exp(2 * float(m.exponent.value(s[:2])))
        Xp = phase_velocity(m, fc, (S + e)[None])[0, i] * rho(S + e)
        Xm = phase_velocity(m, fc, (S - e)[None])[0, i] * rho(S - e)
        div += (Xp - Xm) / (2 * h)
    return div / rho(S)


@pytest.mark.parametrize("which", ["external", "magnetic", "generalized"])
def test_divergence_matches_liouville_difference(which):
    m = ctorus()
    if which == "external":
        fc = FieldConfig(external=sine_field(m), scale=0.6)
    elif which == "magnetic":
        fc = FieldConfig(lorentz=LorentzForce(m, 0.4))
    else:
        fc = FieldConfig(generalized=lambda_from_section(HolomorphicSection(m, 2)).scaled(0.3))
    S = np.array([0.23, 0.61, 1.3])
    p = PhasePoint.from_angle(m, S[:2], S[2])
    assert divergence_along(m, fc, p) == pytest.approx(liouville_divergence_fd(m, fc, S), abs=1e-8)


def test_divergence_is_minus_n_minus_one_theta_in_dimension_three():
    m = ctorus(3)
    E = sine_field(m)
    fc = FieldConfig(external=E, scale=0.4)
    x = np.array([0.2, 0.5, 0.7])
    p = PhasePoint.from_direction(m, x, [0.3, -0.5, 0.8])
    assert divergence_along(m, fc, p) == pytest.approx(-2 * 0.4 * float(E.theta_of(x, p.v)))


def test_surface_jacobian_matches_differences():
    m = ctorus()
    fc = FieldConfig(external=sine_field(m), scale=0.6, lorentz=LorentzForce(m, 0.2))
    S = np.array([[0.23, 0.61, 1.3]])
    J = surface_jacobian(m, fc, S)[0]
    h = 1e-6
    fd = np.stack([(phase_velocity(m, fc, S + h * e)[0] - phase_velocity(m, fc, S - h * e)[0]) / (2 * h)
                   for e in np.eye(3)], axis=-1)
    assert np.allclose(J, fd, atol=1e-7)


@pytest.mark.parametrize("case", ["torus", "octagon-collar", "octagon-magnetic", "section"])
def test_compiled_kernel_matches_numpy_path(case):
    if case == "torus":
        m = ctorus()
        fc = FieldConfig(external=sine_field(m), scale=0.5)
    elif case == "octagon-collar":
        m = octagon_surface()
        fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.3)
    elif case == "octagon-magnetic":
        m = octagon_surface()
        fc = FieldConfig(external=shipped_gradient_field(m), scale=0.3, lorentz=LorentzForce(m, 0.25))
    else:
        m = flat_torus(2)
        fc = FieldConfig(generalized=lambda_from_section(HolomorphicSection(m, 2)).scaled(0.3))
    rng = np.random.default_rng(5)
    S = sample_liouville(m, rng, 4)
    D = np.broadcast_to(np.eye(3), (4, 3, 3)).copy()
    S1, D1 = S.copy(), D.copy()
    at, ad = np.zeros(4), np.zeros(4)
    CompiledSurfaceFlow(m, fc).advance(S1, 200, 0.01, D1, at, ad)
    S2, D2 = S.copy(), D.copy()
    at2, ad2 = np.zeros(4), np.zeros(4)
    for _ in range(200):
        S2, D2, th, dv = rk4_step_tangent(m, fc, S2, D2, 0.01)
        at2 += th
        ad2 += dv
    assert np.allclose(S1, S2, atol=1e-10)
    assert np.allclose(D1, D2, atol=1e-8)
    assert np.allclose(ad, ad2, atol=1e-10)


def test_octagon_trajectories_stay_in_domain():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.2)
    S = sample_liouville(m, np.random.default_rng(2), 16)
    S = advance(m, fc, S, 20.0, IntegratorConfig(step=0.02))
    assert np.all(m.in_fundamental_domain(S[:, :2]))


def test_axis_orbit_is_closed_with_period_twice_the_inradius():
    m = octagon_surface()
    orbit = closed_orbit_holonomy(m, FieldConfig(external=shipped_gradient_field(m), scale=0.0),
                                  axis_seed(m, 2), return_orbit=True)
    assert orbit.period == pytest.approx(2 * oc.INRADIUS, abs=1e-8)


def test_holonomy_of_collar_form_around_crossing_orbit():
    m = octagon_surface()
    E = shipped_nongradient_field(m)
    # the geodesic along the axis of pairing 2 crosses the collar of pairing 0 once
    hol = closed_orbit_holonomy(m, FieldConfig(external=E, scale=0.0), axis_seed(m, 2))
    assert abs(hol) == pytest.approx(0.5, abs=1e-6)


def test_holonomy_of_gradient_vanishes_on_thermostat_orbit():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_gradient_field(m), scale=0.1)
    orbit = closed_orbit_holonomy(m, fc, axis_seed(m, 0), return_orbit=True)
    assert abs(orbit.holonomy) < 1e-6
    assert orbit.residual < 1e-9


def test_surface_operator_brackets():
    m = ctorus()
    u = lambda x, phi: np.sin(2 * np.pi * x[..., 0]) * np.cos(phi) + np.cos(2 * np.pi * x[..., 1]) * np.sin(2 * phi)
    x = np.array([[0.3, 0.1], [0.7, 0.45]])
    phi = np.array([0.4, 2.0])
    coarse = [np.max(r) for r in SurfaceOperators(m, step=1e-2, n_fiber=32).bracket_residuals(u, x, phi)]
    fine = [np.max(r) for r in SurfaceOperators(m, step=5e-3, n_fiber=32).bracket_residuals(u, x, phi)]
    # [V,G] = H and [V,H] = -G hold to roundoff; [G,H] = KV converges at second order
    assert max(fine[:2]) < 1e-10
    assert 3.5 < coarse[2] / fine[2] < 4.5


def test_surface_only_features_are_rejected_in_dimension_three():
    m = ctorus(3)
    with pytest.raises(UnsupportedModelError):
        PhasePoint.from_angle(m, [0.1, 0.1, 0.1], 0.2)
    with pytest.raises(UnsupportedModelError):
        SurfaceOperators(m)
