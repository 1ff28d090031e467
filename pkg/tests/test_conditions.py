import numpy as np
import pytest

from thermolab.conditions import criterion_parts, evaluate_criterion, random_planes, scan_criterion
from thermolab.fields import ConstantForm, SinusoidalForm, closed_nonexact_form, field_from_form
from thermolab.geometry import FourierTerm, TwoPlane, conformal_torus, flat_torus, octagon_surface
from thermolab.scenarios import shipped_gradient_field, shipped_nongradient_field


def ctorus(dim):
    return conformal_torus(dim, [FourierTerm(0.15, (1,) * dim, 0.2)])


def sine_field(m):
    amp = (0.3, -0.2) if m.dim == 2 else (0.3, -0.2, 0.1)
    k = (1, 0) if m.dim == 2 else (1, 0, 1)
    return field_from_form(m, [SinusoidalForm(amp, k, 0.4)])


def planes(m, n, seed):
    rng = np.random.default_rng(seed)
    x = rng.random((n, m.dim))
    return random_planes(m, x, rng.standard_normal((n, 2, m.dim)))


@pytest.mark.parametrize("dim", [2, 3])
def test_weyl_relation(dim):
    m = ctorus(dim)
    E = sine_field(m)
    sigma = planes(m, 200, dim)
    parts = criterion_parts(m, E, sigma)
    diff = evaluate_criterion(m, E, sigma, "k") - evaluate_criterion(m, E, sigma, "Kw")
    assert np.allclose(diff, 0.25 * parts["Es2"], atol=1e-12)


def test_dimension_coincidences():
    m2, m3 = ctorus(2), ctorus(3)
    s2, s3 = planes(m2, 200, 0), planes(m3, 200, 1)
    E2, E3 = sine_field(m2), sine_field(m3)
    assert np.allclose(evaluate_criterion(m2, E2, s2, "k1"), evaluate_criterion(m2, E2, s2, "Kw"), atol=1e-12)
    assert np.allclose(evaluate_criterion(m3, E3, s3, "k1"), evaluate_criterion(m3, E3, s3, "k"), atol=1e-12)


def test_constant_field_on_flat_torus():
    m = flat_torus(2)
    E = closed_nonexact_form(m, (1.0, 0.0))
    sigma = TwoPlane.span(m, [0.3, 0.4], [1.0, 0.2], [0.0, 1.0])
    # K = 0, no divergence, |E|^2 = 1 and E lies in the plane
    assert evaluate_criterion(m, E, sigma, "k") == pytest.approx(0.25)
    assert evaluate_criterion(m, E, sigma, "Kw") == pytest.approx(0.0)


def test_constant_field_in_three_dimensions_projects():
    m = flat_torus(3)
    E = field_from_form(m, [ConstantForm((0.0, 0.0, 2.0))])
    sigma = TwoPlane.span(m, [0.1, 0.1, 0.1], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    # E orthogonal to the plane: k = -|E|^2
    assert evaluate_criterion(m, E, sigma, "k") == pytest.approx(-4.0)


def test_divergence_part_matches_differences():
    m = ctorus(2)
    E = sine_field(m)
    x = np.array([0.31, 0.62])
    sigma = TwoPlane.span(m, x, [1.0, 0.0], [0.0, 1.0])
    # on a surface div_sigma E is the full divergence (1/sqrt g) d_i (sqrt g E^i)
    h = 1e-6
    vol = lambda p: np.exp(2 * m.exponent.value(p))
    div = sum((vol(x + e) * E.vector(x + e)[i] - vol(x - e) * E.vector(x - e)[i]) / (2 * h)
              for i, e in enumerate(np.eye(2) * h)) / vol(x)
    assert criterion_parts(m, E, sigma)["div"] == pytest.approx(div, abs=1e-7)


def test_zero_field_reduces_to_sectional_curvature():
    m = octagon_surface()
    rep = scan_criterion(m, None, "k", 300, 2, seed=0)
    assert rep.supremum == pytest.approx(-1.0)
    assert rep.verdict == "negative"


def test_scan_supersets_are_monotone():
    m = octagon_surface()
    E = shipped_nongradient_field(m).scaled(0.4)
    small = scan_criterion(m, E, "k", 300, 2, seed=5)
    big = scan_criterion(m, E, "k", 900, 4, seed=5)
    assert big.supremum >= small.supremum
    again = scan_criterion(m, E, "k", 300, 2, seed=5)
    assert again.supremum == small.supremum
    assert np.array_equal(again.argmax_point, small.argmax_point)


def test_shipped_fields_satisfy_criterion_at_shipped_scales():
    m = octagon_surface()
    assert scan_criterion(m, shipped_gradient_field(m).scaled(0.1), "k", 1000, 4).verdict == "negative"
    assert scan_criterion(m, shipped_nongradient_field(m).scaled(0.2), "k", 1000, 4).verdict == "negative"


def test_argument_errors():
    m = flat_torus(2)
    with pytest.raises(ValueError):
        scan_criterion(m, None, "q")
    with pytest.raises(ValueError):
        scan_criterion(m, None, "k", 0)


def test_report_serializes():
    rep = scan_criterion(flat_torus(2), None, "Kw", 10, 1)
    d = rep.to_dict()
    assert d["verdict"] == "non-negative" and d["supremum"] == 0.0
    assert len(d["argmax_plane"]) == 2
