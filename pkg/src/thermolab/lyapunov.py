"""Lyapunov spectra by QR re-orthonormalization and entropy production.

Tangent vectors are measured in an orthonormal frame whose volume element is
the Liouville density, so the sum of the accumulated log-stretchings over a
run equals the time integral of the divergence along it.  That makes the
entropy/Lyapunov identity an exact consequence of the bookkeeping up to the
integrator error, and any disagreement beyond error bars is a real bug.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import PhasePoint
from .ensemble import EnsembleConfig, EnsembleResult, run_ensemble
from .fields import FieldConfig
from .geometry import ManifoldModel

MIN_BATCHES = 20


@dataclass
class LyapunovResult:
    exponents: np.ndarray  # sorted descending
    std_error: np.ndarray
    T: float
    history_times: np.ndarray
    history: np.ndarray  # running ensemble-mean estimates at checkpoints
    seed: int
    members: int
    converged: bool
    drift: float

    @property
    def total(self) -> float:
        return float(np.sum(self.exponents))

    @property
    def total_std_error(self) -> float:
        return float(self._total_se)

    _total_se: float = 0.0

    @property
    def zero_exponent(self) -> float:
        """The exponent closest to zero (the flow direction)."""
        return float(self.exponents[np.argmin(np.abs(self.exponents))])

    def to_dict(self) -> dict:
        return {"exponents": self.exponents.tolist(), "std_error": self.std_error.tolist(),
                "sum": self.total, "sum_std_error": self.total_std_error, "T": self.T,
                "seed": self.seed, "members": self.members, "converged": self.converged,
                "drift": self.drift}


@dataclass
class EntropyProductionEstimate:
    value: float
    std_error: float
    T: float
    s: float
    batches: int
    seed: int
    consistent: bool = True  # independent half-ensembles agree
    halves: tuple = field(default=(0.0, 0.0))

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "T": self.T, "s": self.s,
                "batches": self.batches, "seed": self.seed, "consistent": self.consistent,
                "halves": list(self.halves)}


def blocks_needed(T: float, cfg: EnsembleConfig, min_batches: int = MIN_BATCHES) -> int:
    """Smallest number of equal time blocks per member giving ``min_batches`` batches."""
    need = max(1, -(-min_batches // cfg.members))
    n_steps = int(round(T / cfg.step))
    for b in range(need, n_steps + 1):
        if n_steps % b == 0:
            return b
    return n_steps


def _start_states(m, cfg, p0):
    if p0 is None:
        return None
    if isinstance(p0, PhasePoint):
        return np.repeat(p0.state()[None, :], cfg.members, axis=0)
    return np.asarray(p0, float)


def lyapunov_spectrum(m: ManifoldModel, fc: FieldConfig, p0=None, T: float = 1000.0,
                      cfg: EnsembleConfig | None = None, qr_dt: float = 1.0,
                      tol: float = 1e-2) -> LyapunovResult:
    """Lyapunov exponents averaged over an ensemble of trajectories.

    Each member integrates the variational equations (or differences the flow
    map) and re-orthonormalizes every ``qr_dt``.  ``p0`` may fix the starting
    state of every member; by default members start from Liouville samples.
    The run is flagged unconverged when the ensemble estimate moves more than
    ``tol`` over the last quarter of the run.
    """
    cfg = cfg or EnsembleConfig()
    res = run_ensemble(m, fc, T, cfg, tangent=True, qr_dt=qr_dt, states=_start_states(m, cfg, p0))
    return _spectrum_from(res, tol)


def _spectrum_from(res: EnsembleResult, tol: float) -> LyapunovResult:
    T = res.T
    per_member = res.log_r / T
    order = np.argsort(-per_member.mean(axis=0))
    per_member = per_member[:, order]
    exps = per_member.mean(axis=0)
    k = per_member.shape[0]
    if k > 1:
        se = per_member.std(axis=0, ddof=1) / np.sqrt(k)
        tot_se = per_member.sum(axis=1).std(ddof=1) / np.sqrt(k)
    else:
        se = np.full(exps.shape, np.nan)
        tot_se = np.nan
    times = res.qr_dt * np.arange(1, res.history.shape[0] + 1)
    hist = (res.history.mean(axis=1) / times[:, None])[:, order]
    q = int(0.75 * len(times))
    drift = float(np.max(np.abs(hist[-1] - hist[q:]))) if q < len(times) else 0.0
    out = LyapunovResult(exps, se, T, times, hist, res.config.seed, k, drift <= tol, drift)
    out._total_se = float(tot_se)
    return out


def _batch_means(block_vals, block_len, min_batches=MIN_BATCHES):
    """Batch means over member-time blocks; returns value, std error and batch count."""
    b = (block_vals / block_len).ravel()
    value = float(np.mean(b)) + 0.0  # no negative zero in reports
    nb = b.size
    if nb > 1:
        se = float(np.std(b, ddof=1) / np.sqrt(nb))
    else:
        se = float("nan")
    # an identically zero integrand is exact; keep the error strictly positive
    se = max(se, np.finfo(float).eps * max(1.0, abs(value)))
    return value, se, nb


def entropy_production(m: ManifoldModel, fc: FieldConfig, s: float | None = None, p0=None,
                       T: float = 1000.0, cfg: EnsembleConfig | None = None) -> EntropyProductionEstimate:
    """Time average of minus the divergence, with batch-means error bars.

    ``s`` rescales the external field (defaults to the scale in ``fc``).  Each
    member's run is split into enough time blocks to give at least 20 batches.
    """
    cfg = cfg or EnsembleConfig()
    if s is not None:
        fc = fc.with_scale(s)
    n_blocks = blocks_needed(T, cfg)
    res = run_ensemble(m, fc, T, cfg, n_blocks=n_blocks, states=_start_states(m, cfg, p0))
    return entropy_from(res, fc)


def entropy_from(res: EnsembleResult, fc: FieldConfig) -> EntropyProductionEstimate:
    n_blocks = res.block_div.shape[1]
    block_len = res.T / n_blocks
    vals = -res.block_div
    value, se, nb = _batch_means(vals, block_len)
    halves = (0.0, 0.0)
    consistent = True
    if vals.shape[0] >= 2:
        h1, s1, _ = _batch_means(vals[0::2], block_len)
        h2, s2, _ = _batch_means(vals[1::2], block_len)
        halves = (h1, h2)
        consistent = bool(abs(h1 - h2) <= 3.0 * np.hypot(s1, s2) + 1e-300)
    sc = fc.scale if fc.external is not None else 0.0
    return EntropyProductionEstimate(value, se, res.T, sc, nb, res.config.seed, consistent, halves)


def lyapunov_and_entropy(m, fc, T, cfg: EnsembleConfig | None = None, qr_dt: float = 1.0, tol: float = 1e-2):
    """One ensemble run reporting both the spectrum and the entropy production."""
    cfg = cfg or EnsembleConfig()
    n_blocks = blocks_needed(T, cfg)
    res = run_ensemble(m, fc, T, cfg, n_blocks=n_blocks, tangent=True, qr_dt=qr_dt)
    return _spectrum_from(res, tol), entropy_from(res, fc)
