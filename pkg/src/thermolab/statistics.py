"""Autocorrelations, dynamical variances and the entropy-production curve."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import phase_velocity
from .ensemble import EnsembleConfig, run_ensemble
from .fields import FieldConfig
from .geometry import ManifoldModel
from .lyapunov import EntropyProductionEstimate, entropy_production

MIN_LENGTH_RATIO = 100


class InsufficientLengthError(ValueError):
    pass


@dataclass
class AutocorrelationEstimate:
    lags: np.ndarray
    rho: np.ndarray
    window: float
    window_index: int
    F_mean: float
    noise_floor: float
    converged: bool
    seed: int = 0
    group_rho: np.ndarray | None = field(default=None, repr=False)

    def integral(self, cutoff_index: int) -> float:
        """``2 * int_0^cutoff rho`` by the trapezoid rule."""
        return _windowed(self.rho, self.lags, cutoff_index)


@dataclass
class VarianceEstimate:
    value: float
    band: float  # spread of the estimate over cutoffs 0.5W, W, 1.5W
    std_error: float  # spread across independent member groups
    window: float
    converged: bool
    seed: int
    cutoff_values: tuple = ()
    segment_value: float | None = None  # independent segment-square estimate

    def to_dict(self) -> dict:
        return {"value": self.value, "band": self.band, "std_error": self.std_error,
                "window": self.window, "converged": self.converged, "seed": self.seed,
                "cutoff_values": list(self.cutoff_values), "segment_value": self.segment_value}


def _windowed(rho, lags, idx):
    idx = int(min(max(idx, 0), len(rho) - 1))
    if idx == 0:
        return 0.0
    return float(2.0 * np.trapezoid(rho[: idx + 1], lags[: idx + 1]))


def _autocov_sums(series, max_k):
    """Per-member sums of centred lag products (series already centred)."""
    k, n = series.shape
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    f = np.fft.rfft(series, nfft, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), nfft, axis=-1)[:, : max_k + 1]
    return ac


def select_window(rho, consecutive: int = 5, factor: float = 2.0):
    """First lag index from which ``|rho|`` stays below ``factor`` times the noise floor.

    The noise floor is the RMS of ``rho`` over the last half of the lag grid.
    Returns ``(index, floor, found)``.
    """
    L = len(rho)
    floor = float(np.sqrt(np.mean(rho[L // 2:] ** 2)))
    below = np.abs(rho) < factor * floor
    for i in range(1, L - consecutive + 1):
        if below[i:i + consecutive].all():
            return i, floor, i <= L // 2
    return L - 1, floor, False


def acf_from_series(series, dt: float, max_lag: float, groups: int = 20, seed: int = 0) -> AutocorrelationEstimate:
    """Ensemble autocorrelation of sampled series ``(members, samples)``."""
    series = np.atleast_2d(np.asarray(series, float))
    k, n = series.shape
    max_k = int(round(max_lag / dt))
    lags = dt * np.arange(max_k + 1)
    mu = float(np.mean(series))
    if np.ptp(series) == 0.0:
        rho = np.zeros(max_k + 1)
        return AutocorrelationEstimate(lags, rho, 0.0, 0, float(series.flat[0]), 0.0, True, seed,
                                       np.zeros((1, max_k + 1)))
    ac = _autocov_sums(series - mu, max_k)
    counts = n - np.arange(max_k + 1)
    rho = ac.sum(axis=0) / (k * counts)
    g = max(1, min(groups, k))
    bounds = np.linspace(0, k, g + 1).astype(int)
    group_rho = np.array([ac[a:b].sum(axis=0) / ((b - a) * counts) for a, b in zip(bounds[:-1], bounds[1:])])
    idx, floor, ok = select_window(rho)
    return AutocorrelationEstimate(lags, rho, float(lags[idx]), idx, mu, floor, ok, seed, group_rho)


def segment_variance(series, dt: float, segment: float, mean: float | None = None) -> float:
    """``E[(int_segment (F - mean))^2] / segment`` over non-overlapping segments."""
    series = np.atleast_2d(np.asarray(series, float))
    mu = float(np.mean(series)) if mean is None else mean
    m = int(round(segment / dt))
    nseg = series.shape[1] // m
    if nseg < 1:
        raise InsufficientLengthError("series shorter than one segment")
    x = series[:, : nseg * m].reshape(series.shape[0], nseg, m) - mu
    I = x.sum(axis=-1) * dt
    return float(np.mean(I * I) / (m * dt))


def variance_from_acf(acf: AutocorrelationEstimate, series=None, dt=None) -> VarianceEstimate:
    W = acf.window_index
    cut = [max(1, int(round(0.5 * W))), W, int(round(1.5 * W))]
    vals = [acf.integral(c) for c in cut]
    value = vals[1]
    band = float(max(vals) - min(vals))
    gvals = np.array([_windowed(r, acf.lags, W) for r in acf.group_rho])
    se = float(np.std(gvals, ddof=1) / np.sqrt(len(gvals))) if len(gvals) > 1 else float("nan")
    seg = None
    if series is not None and W > 0:
        seg_len = 10 * max(acf.window, dt)
        if np.shape(series)[1] * dt >= 2 * seg_len:
            seg = segment_variance(series, dt, seg_len, acf.F_mean)
    return VarianceEstimate(value, band, se, acf.window, acf.converged, acf.seed, tuple(vals), seg)


def _sample(m, fc, F, T, cfg, sample_dt):
    res = run_ensemble(m, fc, T, cfg, sample_dt=sample_dt, observables={"F": F})
    return res.series["F"]


def autocorrelation(m: ManifoldModel, fc: FieldConfig, F: Callable, T: float, max_lag: float,
                    cfg: EnsembleConfig | None = None, sample_dt: float = 0.1) -> AutocorrelationEstimate:
    """Autocorrelation of the observable ``F(x, v)`` along the flow.

    ``T`` is the averaging time per member; it must be at least 100 times the
    largest lag.
    """
    cfg = cfg or EnsembleConfig()
    if T < MIN_LENGTH_RATIO * max_lag:
        raise InsufficientLengthError(f"T = {T} is shorter than {MIN_LENGTH_RATIO} x max_lag = {max_lag}")
    series = _sample(m, fc, F, T, cfg, sample_dt)
    return acf_from_series(series, sample_dt, max_lag, seed=cfg.seed)


def variance(m: ManifoldModel, fc: FieldConfig, F: Callable, T: float, max_lag: float = 20.0,
             cfg: EnsembleConfig | None = None, sample_dt: float = 0.1) -> VarianceEstimate:
    """``Var(F) = 2 int_0^inf rho_F`` with an automatic cutoff and its sensitivity band."""
    cfg = cfg or EnsembleConfig()
    if T < MIN_LENGTH_RATIO * max_lag:
        raise InsufficientLengthError(f"T = {T} is shorter than {MIN_LENGTH_RATIO} x max_lag = {max_lag}")
    series = _sample(m, fc, F, T, cfg, sample_dt)
    acf = acf_from_series(series, sample_dt, max_lag, seed=cfg.seed)
    return variance_from_acf(acf, series, sample_dt)


def theta_observable(fc_or_field) -> Callable:
    """``F(x, v) = theta_x(v)`` for the (unscaled) external field."""
    E = fc_or_field.external if isinstance(fc_or_field, FieldConfig) else fc_or_field
    return lambda x, v: E.theta_of(x, v)


def flow_derivative_observable(m: ManifoldModel, fc: FieldConfig, u: Callable, step: float = 1e-6) -> Callable:
    """``F = d/dt u(state)`` along the flow, i.e. ``G_E u``, a coboundary by construction.

    ``u`` acts on the state array: ``(x, phi)`` on surfaces, ``(x, v)`` otherwise.
    Its gradient is taken by central differences of width ``step``.
    """
    n = m.dim

    def F(x, v):
        if n == 2:
            phi = np.arctan2(v[..., 1], v[..., 0])
            S = np.concatenate([x, phi[..., None]], axis=-1)
        else:
            S = np.concatenate([x, v], axis=-1)
        dS = phase_velocity(m, fc, S)
        eye = np.eye(S.shape[-1]) * step
        grad = np.stack([(u(S + e) - u(S - e)) / (2 * step) for e in eye], axis=-1)
        return np.sum(grad * dS, axis=-1)
    return F


# ---------------------------------------------------------------------------
# entropy-production curve


@dataclass
class EntropyCurve:
    s: np.ndarray
    e: np.ndarray
    err: np.ndarray
    coefficients: np.ndarray  # c_1 .. c_d of e(s) = sum_j c_j s^j
    covariance: np.ndarray
    estimates: list = field(default_factory=list, repr=False)

    @property
    def second_derivative(self) -> float:
        return float(2.0 * self.coefficients[1])

    @property
    def second_derivative_error(self) -> float:
        return float(2.0 * np.sqrt(self.covariance[1, 1]))

    @property
    def first_derivative(self) -> float:
        return float(self.coefficients[0])

    @property
    def first_derivative_error(self) -> float:
        return float(np.sqrt(self.covariance[0, 0]))

    def table(self):
        return [(float(a), float(b), float(c)) for a, b, c in zip(self.s, self.e, self.err)]


def fit_curve(s, e, err, degree: int = 2):
    """Weighted least squares for ``e(s) = sum_{j=1..degree} c_j s^j`` (no constant term)."""
    s = np.asarray(s, float)
    e = np.asarray(e, float)
    err = np.asarray(err, float)
    use = s != 0.0
    X = np.stack([s[use] ** j for j in range(1, degree + 1)], axis=-1)
    w = 1.0 / err[use]
    A = X * w[:, None]
    b = e[use] * w
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    # inflate by the reduced chi-square when the scatter exceeds the error bars
    dof = max(1, use.sum() - degree)
    chi2 = float(np.sum((A @ coef - b) ** 2)) / dof
    cov = cov * max(1.0, chi2)
    return coef, cov


def entropy_curve(m: ManifoldModel, fc: FieldConfig, s_grid: Sequence[float], T: float,
                  cfg: EnsembleConfig | None = None, degree: int = 2) -> EntropyCurve:
    """``e(s)`` on a symmetric grid with a polynomial fit through the origin."""
    cfg = cfg or EnsembleConfig()
    s_grid = np.asarray(sorted(float(s) for s in s_grid))
    if not np.allclose(s_grid, -s_grid[::-1]) or 0.0 not in s_grid:
        raise ValueError("s_grid must be symmetric about 0 and contain 0")
    e, err, ests = [], [], []
    for i, s in enumerate(s_grid):
        if s == 0.0:
            e.append(0.0)
            err.append(0.0)
            ests.append(None)
            continue
        seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        sub = EnsembleConfig(cfg.members, cfg.burn_in, cfg.step, seed, cfg.threads, cfg.chunk_size, cfg.fd_step)
        est: EntropyProductionEstimate = entropy_production(m, fc, s=s, T=T, cfg=sub)
        e.append(est.value)
        err.append(est.std_error)
        ests.append(est)
    coef, cov = fit_curve(s_grid, e, err, degree)
    return EntropyCurve(s_grid, np.array(e), np.array(err), coef, cov, ests)


def magnetic_scaling(intensity: float, power: float = 1.5) -> float:
    """Predicted variance ratio ``(1 - b^2)^power`` for a uniform magnetic field of intensity ``b``.

    The default exponent 3/2 is the stated law.  Treating the magnetic flow of a
    closed form as a constant time change of the geodesic flow by
    ``sqrt(1 - b^2)`` gives exponent 1/2, which is what simulations reproduce.
    """
    if not abs(intensity) < 1.0:
        raise ValueError("intensity must satisfy |b| < 1")
    return float((1.0 - intensity ** 2) ** power)
