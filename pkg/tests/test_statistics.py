import numpy as np
import pytest

from thermolab.ensemble import EnsembleConfig
from thermolab.dynamics import IntegratorConfig, advance, positions, velocities
from thermolab.fields import BumpPotential, FieldConfig
from thermolab.geometry import octagon_surface
from thermolab.statistics import (InsufficientLengthError, acf_from_series, entropy_curve, fit_curve,
                                  flow_derivative_observable, magnetic_scaling, segment_variance, select_window, theta_observable, variance,
                                  variance_from_acf)
from thermolab.scenarios import shipped_nongradient_field


def ar1(a, n, members, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros((members, n))
    x[:, 0] = rng.standard_normal(members) / np.sqrt(1 - a * a)
    noise = rng.standard_normal((members, n))
    for t in range(1, n):
        x[:, t] = a * x[:, t - 1] + noise[:, t]
    return x


def test_autocovariance_of_ar1():
    a, dt = 0.8, 0.1
    x = ar1(a, 20000, 20, 0)
    acf = acf_from_series(x, dt, max_lag=5.0)
    s2 = 1 / (1 - a * a)
    assert np.allclose(acf.rho[:6], s2 * a ** np.arange(6), rtol=0.05)


def test_variance_of_ar1_matches_closed_form():
    a, dt = 0.8, 0.1
    x = ar1(a, 20000, 20, 1)
    est = variance_from_acf(acf_from_series(x, dt, max_lag=5.0), x, dt)
    # long-run variance of the time integral per unit time: dt * s^2 (1 + a) / (1 - a)
    exact = dt * (1 / (1 - a * a)) * (1 + a) / (1 - a)
    assert est.value == pytest.approx(exact, rel=0.05)
    assert est.segment_value == pytest.approx(exact, rel=0.1)
    assert est.converged
    assert abs(est.value - exact) < 4 * est.std_error + est.band


def test_segment_variance_of_white_noise():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((10, 50000))
    dt = 0.1
    assert segment_variance(x, dt, 5.0) == pytest.approx(dt, rel=0.05)
    with pytest.raises(InsufficientLengthError):
        segment_variance(x[:, :10], dt, 5.0)


def test_select_window_on_decaying_sequence():
    rng = np.random.default_rng(3)
    rho = 0.9 ** np.arange(200) + 1e-3 * rng.standard_normal(200)
    idx, floor, found = select_window(rho)
    assert found
    assert floor == pytest.approx(np.sqrt(np.mean(rho[100:] ** 2)))
    # first lag starting five consecutive values below twice the floor
    below = np.abs(rho) < 2 * floor
    assert below[idx:idx + 5].all()
    assert not any(below[i:i + 5].all() for i in range(1, idx))
    assert 0.9 ** idx < 4 * floor


def test_constant_series_has_zero_variance():
    est = variance_from_acf(acf_from_series(np.ones((3, 500)), 0.1, 2.0))
    assert est.value == 0.0


def test_run_length_guard():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.0)
    with pytest.raises(InsufficientLengthError):
        variance(m, fc, theta_observable(fc), T=100.0, max_lag=20.0)


def test_fit_curve_recovers_polynomial():
    s = np.array([-0.4, -0.2, 0.0, 0.2, 0.4])
    e = 0.1 * s + 0.7 * s ** 2
    coef, cov = fit_curve(s, e, np.full(5, 1e-3))
    assert coef == pytest.approx([0.1, 0.7], abs=1e-12)
    coef4, _ = fit_curve(s, e - 0.3 * s ** 4, np.full(5, 1e-3), degree=4)
    assert coef4 == pytest.approx([0.1, 0.7, 0.0, -0.3], abs=1e-9)


def test_entropy_curve_grid_checks():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m))
    with pytest.raises(ValueError):
        entropy_curve(m, fc, [0.0, 0.1, 0.2], T=10.0)
    with pytest.raises(ValueError):
        entropy_curve(m, fc, [-0.1, 0.1], T=10.0)


def test_entropy_curve_small_run_is_even():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m))
    cur = entropy_curve(m, fc, [-0.4, 0.0, 0.4], T=200.0, cfg=EnsembleConfig(members=8, seed=1))
    assert cur.e[1] == 0.0
    assert cur.e[0] > 0 and cur.e[2] > 0
    assert cur.second_derivative > 0


def test_magnetic_scaling_law():
    assert magnetic_scaling(0.0) == 1.0
    assert magnetic_scaling(0.5) == pytest.approx(0.75 ** 1.5)
    assert magnetic_scaling(0.5, 0.5) == pytest.approx(np.sqrt(0.75))
    with pytest.raises(ValueError):
        magnetic_scaling(1.0)


def test_flow_derivative_observable_matches_trajectory_differences():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.2)
    B = BumpPotential(1.0, 0.5, (0.1, 0.0))
    u = lambda S: B.value(S[..., :2]) * np.cos(S[..., 2])
    F = flow_derivative_observable(m, fc, u)
    S = np.array([[0.05, 0.02, 0.7], [0.2, -0.1, 2.1]])
    h = 1e-3
    fwd = advance(m, fc, S, h, IntegratorConfig(step=h / 4))
    bwd = advance(m, fc, S, h, IntegratorConfig(step=h / 4), backward=True)
    fd = (u(fwd) - u(bwd)) / (2 * h)
    assert np.allclose(F(positions(m, S), velocities(m, S)), fd, atol=1e-5)


def test_coboundary_has_no_variance_but_theta_does():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.2)
    B = BumpPotential(1.0, 0.3, (0.2, 0.1))
    F = flow_derivative_observable(m, fc, lambda S: B.value(S[..., :2]) * np.cos(S[..., 2]))
    cfg = EnsembleConfig(members=8, seed=3, burn_in=10.0)
    cob = variance(m, fc, F, T=500.0, max_lag=5.0, cfg=cfg)
    th = variance(m, fc, theta_observable(fc), T=500.0, max_lag=5.0, cfg=cfg)
    assert abs(cob.value) < max(cob.band, 3 * cob.std_error)
    assert th.value > th.band and th.value > 10 * th.std_error
