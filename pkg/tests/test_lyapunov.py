import numpy as np
import pytest

from thermolab.ensemble import EnsembleConfig, initial_states, run_ensemble
from thermolab.fields import FieldConfig, LorentzForce, SinusoidalForm, field_from_form
from thermolab.geometry import FourierTerm, conformal_torus, flat_torus, octagon_surface
from thermolab.lyapunov import (_batch_means, blocks_needed, entropy_production, lyapunov_and_entropy,
                                lyapunov_spectrum)
from thermolab.scenarios import shipped_nongradient_field


def test_blocks_needed_divides_run():
    cfg = EnsembleConfig(members=8, step=0.02)
    b = blocks_needed(100.0, cfg)
    assert b * cfg.members >= 20
    assert int(round(100.0 / 0.02)) % b == 0


def test_batch_means_matches_direct_computation():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((4, 6)) * 2.0
    value, se, nb = _batch_means(vals, 2.0)
    b = (vals / 2.0).ravel()
    assert value == pytest.approx(b.mean())
    assert se == pytest.approx(b.std(ddof=1) / np.sqrt(24))
    assert nb == 24


def test_member_streams_do_not_depend_on_ensemble_size():
    m = octagon_surface()
    a = initial_states(m, EnsembleConfig(members=3, seed=11))
    b = initial_states(m, EnsembleConfig(members=6, seed=11))
    assert np.array_equal(a, b[:3])
    c = initial_states(m, EnsembleConfig(members=3, seed=12))
    assert not np.array_equal(a, c)


def test_threads_do_not_change_results():
    m = octagon_surface()
    fc = FieldConfig(external=shipped_nongradient_field(m), scale=0.2)
    r1 = lyapunov_spectrum(m, fc, T=20.0, cfg=EnsembleConfig(members=6, chunk_size=2, seed=3, burn_in=1.0))
    r2 = lyapunov_spectrum(m, fc, T=20.0, cfg=EnsembleConfig(members=6, chunk_size=2, seed=3, burn_in=1.0,
                                                             threads=3))
    assert np.array_equal(r1.exponents, r2.exponents)


def test_zero_field_entropy_is_exactly_zero():
    for m in (octagon_surface(), flat_torus(3)):
        est = entropy_production(m, FieldConfig(), T=10.0, cfg=EnsembleConfig(members=2, burn_in=0.0))
        assert est.value == 0.0
        assert est.std_error > 0


def test_magnetic_field_preserves_volume():
    m = octagon_surface()
    est = entropy_production(m, FieldConfig(lorentz=LorentzForce(m, 0.4)), T=10.0,
                             cfg=EnsembleConfig(members=2, burn_in=0.0))
    assert est.value == 0.0


def test_octagon_geodesic_exponents_short_run():
    res = lyapunov_spectrum(octagon_surface(), FieldConfig(), T=200.0, cfg=EnsembleConfig(members=4, seed=1))
    assert np.allclose(res.exponents, [1.0, 0.0, -1.0], atol=0.03)
    assert abs(res.total) < 1e-6


def test_flat_torus_exponents_vanish():
    for n in (2, 3):
        res = lyapunov_spectrum(flat_torus(n), FieldConfig(), T=50.0,
                                cfg=EnsembleConfig(members=2, burn_in=0.0, step=0.05))
        # shear growth is linear in time, so exponents decay like log(T) / T
        assert np.max(np.abs(res.exponents)) < 0.1
        assert len(res.exponents) == 2 * n - 1


def test_three_dimensional_geodesic_spectrum_is_symmetric():
    m = conformal_torus(3, [FourierTerm(0.12, (1, 1, 0)), FourierTerm(0.08, (0, 1, 1), 0.5)])
    res = lyapunov_spectrum(m, FieldConfig(), T=40.0, cfg=EnsembleConfig(members=2, burn_in=0.0, step=0.01))
    assert res.exponents == pytest.approx(-res.exponents[::-1], abs=0.05)
    assert abs(res.total) < 1e-4


def test_sum_of_exponents_is_minus_entropy_production():
    m = conformal_torus(2, [FourierTerm(0.15, (1, 1), 0.2)])
    E = field_from_form(m, [SinusoidalForm((0.3, -0.2), (1, 0), 0.4)])
    lyap, est = lyapunov_and_entropy(m, FieldConfig(external=E, scale=0.8), 100.0,
                                     EnsembleConfig(members=4, burn_in=5.0, seed=2))
    assert lyap.total + est.value == pytest.approx(0.0, abs=0.05 * abs(est.value) + 1e-3)
    assert np.isfinite(lyap.total_std_error)
