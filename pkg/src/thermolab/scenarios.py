"""Shipped fields and named experiment bundles.

Each scenario takes a settings dict (``T``, ``members``, ``seed`` ...), runs one
experiment and returns ``(tables, summary, converged)``.  ``tables`` maps a file
stem to a list of row dicts and ``summary`` is a JSON-ready dict.  The command
line and the acceptance tests both call these functions.
"""

from __future__ import annotations

import numpy as np

from .conditions import scan_criterion
from .dynamics import axis_seed, closed_orbit_holonomy
from .ensemble import EnsembleConfig
from .fields import BumpPotential, FieldConfig, LorentzForce, collar_form, field_from_potential
from .geometry import ManifoldModel, octagon_surface
from .lyapunov import entropy_production, lyapunov_and_entropy, lyapunov_spectrum
from .statistics import entropy_curve, magnetic_scaling, theta_observable, variance

# shipped octagon potential: |E| stays below 0.75 in the hyperbolic metric at scale 1
GRADIENT_AMPLITUDE = 0.5
GRADIENT_RADIUS = 0.6
COLLAR_PERIOD = 0.5
COLLAR_WIDTH = 0.6


def shipped_gradient_field(m: ManifoldModel | None = None):
    """``E = -grad U`` for a compactly supported bump ``U`` centred in the octagon."""
    m = m or octagon_surface()
    return field_from_potential(m, BumpPotential(GRADIENT_AMPLITUDE, GRADIENT_RADIUS, (0.0, 0.0)),
                                "shipped-gradient")


def shipped_nongradient_field(m: ManifoldModel | None = None):
    """A closed, non-exact collar form on the octagon (period 0.5, width 0.6)."""
    m = m or octagon_surface()
    return collar_form(m, COLLAR_PERIOD, COLLAR_WIDTH, 0)


def _cfg(settings: dict, **over) -> EnsembleConfig:
    keys = ("members", "burn_in", "step", "seed", "threads", "chunk_size")
    kw = {k: settings[k] for k in keys if k in settings}
    kw.update(over)
    return EnsembleConfig(**kw)


def _sym_grid(s_max: float, n: int):
    pos = [s_max * (i + 1) / n for i in range(n)]
    return [-s for s in reversed(pos)] + [0.0] + pos


# ---------------------------------------------------------------------------
# scenarios


def geodesic_lyapunov(settings: dict):
    """Lyapunov spectrum of the octagon geodesic flow (expected +1, 0, -1)."""
    m = octagon_surface()
    res = lyapunov_spectrum(m, FieldConfig(), T=settings.get("T", 1250.0), cfg=_cfg(settings))
    expected = np.array([1.0, 0.0, -1.0])
    rows = [{"index": i, "exponent": float(e), "std_error": float(se), "expected": float(x)}
            for i, (e, se, x) in enumerate(zip(res.exponents, res.std_error, expected))]
    summary = {"lyapunov": res.to_dict(),
               "max_relative_error_of_nonzero": float(np.max(np.abs(res.exponents[[0, 2]] - expected[[0, 2]])))}
    return {"exponents": rows}, summary, res.converged


def magnetic_scaling_scenario(settings: dict):
    """Top exponent and theta variance under uniform magnetic fields of several intensities."""
    m = octagon_surface()
    E = shipped_nongradient_field(m)
    T = settings.get("T", 1250.0)
    T_var = settings.get("T_variance", 2000.0)
    rows = []
    base_var = None
    converged = True
    for i, b in enumerate(settings.get("intensities", [0.0, 0.25, 0.5])):
        fc = FieldConfig(external=E, scale=0.0, lorentz=LorentzForce(m, b) if b else None)
        lyap = lyapunov_spectrum(m, fc, T=T, cfg=_cfg(settings, seed=settings.get("seed", 0) + i))
        var = variance(m, fc, theta_observable(fc), T=T_var, max_lag=settings.get("max_lag", 20.0),
                       cfg=_cfg(settings, seed=settings.get("seed", 0) + 100 + i))
        if b == 0.0:
            base_var = var.value
        converged &= lyap.converged and var.converged
        rows.append({"intensity": b, "top_exponent": float(lyap.exponents[0]),
                     "top_std_error": float(lyap.std_error[0]),
                     "predicted_top": float(np.sqrt(1 - b * b)), "variance": var.value,
                     "variance_std_error": var.std_error, "variance_band": var.band})
    for r in rows:
        ratio = r["variance"] / base_var if base_var else float("nan")
        r["variance_ratio"] = ratio
        r["predicted_ratio_stated"] = magnetic_scaling(r["intensity"], 1.5)
        r["predicted_ratio_time_change"] = magnetic_scaling(r["intensity"], 0.5)
    return {"magnetic": rows}, {"rows": rows}, converged


def gradient_null(settings: dict):
    """Entropy production and closed-orbit holonomy for a gradient field (both vanish)."""
    m = octagon_surface()
    s = settings.get("s", 0.1)
    E = shipped_gradient_field(m)
    fc = FieldConfig(external=E, scale=s)
    est = entropy_production(m, fc, T=settings.get("T", 2000.0), cfg=_cfg(settings))
    orbit = closed_orbit_holonomy(m, fc, axis_seed(m, 0), return_orbit=True)
    summary = {"entropy": est.to_dict(), "ratio_to_error": abs(est.value) / est.std_error,
               "holonomy": orbit.holonomy, "orbit_period": orbit.period}
    rows = [{"s": s, "entropy_production": est.value, "std_error": est.std_error,
             "holonomy": orbit.holonomy, "period": orbit.period}]
    return {"gradient_null": rows}, summary, est.consistent


def theorem_a(settings: dict):
    """``e(s)`` on a symmetric grid, its quadratic fit and ``(n - 1)^2 Var(theta)``."""
    m = octagon_surface()
    E = shipped_nongradient_field(m)
    grid = settings.get("s_grid") or _sym_grid(settings.get("s_max", 0.4), settings.get("n_s", 4))
    curve = entropy_curve(m, FieldConfig(external=E), grid, T=settings.get("T", 10000.0),
                          cfg=_cfg(settings), degree=settings.get("degree", 2))
    fc0 = FieldConfig(external=E, scale=0.0)
    var = variance(m, fc0, theta_observable(fc0), T=settings.get("T_variance", 5000.0),
                   max_lag=settings.get("max_lag", 20.0),
                   cfg=_cfg(settings, seed=settings.get("seed", 0) + 1000))
    n = m.dim
    predicted = (n - 1) ** 2 * var.value
    predicted_err = (n - 1) ** 2 * var.std_error
    fitted, fitted_err = curve.second_derivative, curve.second_derivative_error
    table = [{"s": s, "e": e, "std_error": er} for s, e, er in curve.table()]
    comparison = [{"fitted_second_derivative": fitted, "fitted_error": fitted_err,
                   "predicted": predicted, "predicted_error": predicted_err,
                   "relative_difference": (fitted - predicted) / predicted,
                   "fitted_first_derivative": curve.first_derivative,
                   "first_derivative_error": curve.first_derivative_error}]
    converged = var.converged and all(est is None or est.consistent for est in curve.estimates)
    summary = {"variance": var.to_dict(), "comparison": comparison[0],
               "coefficients": curve.coefficients.tolist()}
    return {"entropy_curve": table, "comparison": comparison}, summary, converged


def positivity_witness(settings: dict):
    """Criterion scan for the shipped non-gradient field and its entropy production."""
    m = octagon_surface()
    s = settings.get("s", 0.2)
    E = shipped_nongradient_field(m)
    rep = scan_criterion(m, E.scaled(s), "k", settings.get("n_points", 2000), settings.get("n_planes", 1),
                         settings.get("seed", 0))
    est = entropy_production(m, FieldConfig(external=E, scale=s), T=settings.get("T", 5000.0),
                             cfg=_cfg(settings))
    summary = {"criterion": rep.to_dict(), "hypothesis_satisfied": rep.verdict == "negative",
               "entropy": est.to_dict(), "ratio_to_error": est.value / est.std_error}
    rows = [{"s": s, "k_supremum": rep.supremum, "verdict": rep.verdict,
             "entropy_production": est.value, "std_error": est.std_error}]
    return {"positivity": rows}, summary, est.consistent


def _mismatch_discretization(m, fc, cfg: EnsembleConfig, mismatch: float, T: float = 100.0,
                             members: int = 2) -> float:
    """Richardson estimate of the integrator bias in ``mismatch = e + sum(lambda)`` (RK4, order 4).

    The bias is a rate, independent of the run length, so one short run at half
    the step gives the reference value.  A genuine violation of the identity
    would survive the halving and would not be absorbed by this estimate.
    """
    c = EnsembleConfig(members=members, burn_in=cfg.burn_in, step=cfg.step / 2, seed=cfg.seed,
                       threads=cfg.threads, chunk_size=cfg.chunk_size)
    lyap, est = lyapunov_and_entropy(m, fc, T, c)
    return abs(mismatch - (est.value + lyap.total)) * 16.0 / 15.0


def entropy_lyapunov(settings: dict):
    """Entropy production against minus the sum of Lyapunov exponents for the shipped fields.

    ``combined_error`` joins both statistical errors with the integrator bias of
    the mismatch, estimated by step halving.
    """
    m = octagon_surface()
    T = settings.get("T", 1000.0)
    rows = []
    cases = [("geodesic", FieldConfig()),
             ("gradient", FieldConfig(external=shipped_gradient_field(m), scale=0.1)),
             ("nongradient", FieldConfig(external=shipped_nongradient_field(m), scale=0.2)),
             ("nongradient-magnetic", FieldConfig(external=shipped_nongradient_field(m), scale=0.2,
                                                  lorentz=LorentzForce(m, 0.25)))]
    converged = True
    for i, (name, fc) in enumerate(cases):
        cfg = _cfg(settings, seed=settings.get("seed", 0) + i)
        lyap, est = lyapunov_and_entropy(m, fc, T, cfg)
        disc = _mismatch_discretization(m, fc, cfg, est.value + lyap.total)
        statistical = float(np.hypot(lyap.total_std_error, est.std_error))
        converged &= lyap.converged
        rows.append({"case": name, "entropy_production": est.value, "entropy_std_error": est.std_error,
                     "lyapunov_sum": lyap.total, "lyapunov_sum_std_error": lyap.total_std_error,
                     "mismatch": est.value + lyap.total, "statistical_error": statistical,
                     "discretization_error": disc, "combined_error": float(np.hypot(statistical, disc))})
    return {"entropy_lyapunov": rows}, {"rows": rows}, converged


SCENARIOS = {
    "geodesic-octagon": geodesic_lyapunov,
    "magnetic-octagon": magnetic_scaling_scenario,
    "gradient-null-octagon": gradient_null,
    "theoremA-octagon": theorem_a,
    "positivity-octagon": positivity_witness,
    "entropy-lyapunov-octagon": entropy_lyapunov,
}
