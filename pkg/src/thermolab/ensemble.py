"""Deterministic ensembles of thermostat trajectories.

Every ensemble member owns a counter-based Philox stream spawned from the run
seed, starts from a Liouville-distributed state and is burned in before any
statistic is recorded.  Members are processed in fixed-size chunks; chunks may
run on worker threads but their results are always combined in member order,
so the thread count changes wall time only.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import try_compile
from .dynamics import (apply_transitions, positions, rk4_step, rk4_step_tangent, sample_liouville,
                       sasaki_weight, state_dim, velocities)
from .fields import FieldConfig
from .geometry import ManifoldModel


@dataclass(frozen=True)
class EnsembleConfig:
    members: int = 32
    burn_in: float = 20.0
    step: float = 0.02
    seed: int = 0
    threads: int = 1
    chunk_size: int = 16
    fd_step: float = 1e-7  # flow-map differencing step when no variational equations exist

    def __post_init__(self):
        if self.members < 1:
            raise ValueError("need at least one ensemble member")
        if not self.step > 0:
            raise ValueError("step must be positive")


def member_generators(seed: int, n: int) -> list[np.random.Generator]:
    """Independent Philox streams; member ``i`` depends only on ``(seed, i)``."""
    return [np.random.Generator(np.random.Philox(c)) for c in np.random.SeedSequence(seed).spawn(n)]


def initial_states(m: ManifoldModel, cfg: EnsembleConfig) -> np.ndarray:
    return np.concatenate([sample_liouville(m, g, 1) for g in member_generators(cfg.seed, cfg.members)])


@dataclass
class ChunkResult:
    block_theta: np.ndarray  # (k, n_blocks) integral of theta(v) over each block
    block_div: np.ndarray  # (k, n_blocks) integral of the divergence over each block
    series: dict  # name -> (k, n_samples)
    log_r: np.ndarray | None  # (k, n_exp) accumulated log stretching
    history: np.ndarray | None  # (n_qr, k, n_exp) cumulative logs at each QR time
    final: np.ndarray


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    T: float
    block_theta: np.ndarray
    block_div: np.ndarray
    series: dict = field(default_factory=dict)
    log_r: np.ndarray | None = None
    history: np.ndarray | None = None
    final: np.ndarray | None = None
    sample_dt: float | None = None
    qr_dt: float | None = None
    compiled: bool = False


def _steps(dt, h, what):
    n = dt / h
    if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
        raise ValueError(f"{what} ({dt}) must be a positive multiple of the step ({h})")
    return int(round(n))


def _sphere_basis(u):
    """Two orthonormal vectors spanning the tangent plane of the unit sphere at ``u``."""
    k = np.argmin(np.abs(u), axis=-1)
    a = np.zeros_like(u)
    a[np.arange(len(u)), k] = 1.0
    e1 = a - np.sum(a * u, axis=-1, keepdims=True) * u
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(u, e1)
    return e1, e2


class _Stepper:
    def __init__(self, m, fc, h):
        self.m, self.fc, self.h = m, fc, h
        self.kernel = try_compile(m, fc) if m.dim == 2 else None

    def run(self, S, n, D=None, at=None, ad=None):
        if self.kernel is not None:
            self.kernel.advance(S, n, self.h, D, at, ad)
            return S, D
        for _ in range(n):
            if D is not None:
                S, D, th, dv = rk4_step_tangent(self.m, self.fc, S, D, self.h)
            else:
                S, th, dv = rk4_step(self.m, self.fc, S, self.h, with_aux=True)
            if at is not None:
                at += th[: len(at)]
                ad += dv[: len(ad)]
        return S, D


def _run_chunk(m, fc, S0, T, cfg: EnsembleConfig, n_blocks, sample_dt, observables, tangent, qr_dt):
    h = cfg.step
    st = _Stepper(m, fc, h)
    S = np.array(S0, float, copy=True)
    k = S.shape[0]
    S, _ = st.run(S, _steps(cfg.burn_in, h, "burn-in") if cfg.burn_in > 0 else 0)
    n_total = _steps(T, h, "averaging time")
    block_len = n_total // n_blocks
    if block_len * n_blocks != n_total:
        raise ValueError("averaging time must split into whole blocks")
    strides = [block_len]
    sample_every = _steps(sample_dt, h, "sample interval") if sample_dt else None
    qr_every = _steps(qr_dt, h, "QR interval") if tangent else None
    for s_ in (sample_every, qr_every):
        if s_:
            strides.append(s_)
    base = strides[0]
    for s_ in strides[1:]:
        base = math.gcd(base, s_)
    surface = m.dim == 2
    n_exp = 2 * m.dim - 1
    at = np.zeros(k)
    ad = np.zeros(k)
    block_theta = np.zeros((k, n_blocks))
    block_div = np.zeros((k, n_blocks))
    series = {name: [] for name in observables}
    log_r = np.zeros((k, n_exp)) if tangent else None
    history = []
    D = None
    extra = None  # perturbed copies for flow-map differencing
    if tangent and surface:
        D = np.linalg.inv(sasaki_weight(m, S))
    if tangent and not surface:
        Q = np.broadcast_to(np.eye(n_exp), (k, n_exp, n_exp)).copy()

    def record(Sb):
        if observables:
            x, v = positions(m, Sb), velocities(m, Sb)
            for name, F in observables.items():
                series[name].append(np.asarray(F(x, v), float) * np.ones(k))

    def fd_start(Sb):
        n = m.dim
        x, v = Sb[:, :n], Sb[:, n:]
        ef = np.exp(m.exponent.value(x))
        u = v * ef[:, None]
        e1, e2 = _sphere_basis(u)
        eps = cfg.fd_step
        rows = []
        for j in range(n_exp):
            for sgn in (1.0, -1.0):
                xp, up = x.copy(), u.copy()
                if j < n:
                    xp[:, j] += sgn * eps
                else:
                    up = up + sgn * eps * (e1 if j == n else e2)
                    up /= np.linalg.norm(up, axis=-1, keepdims=True)
                vp = up * np.exp(-m.exponent.value(xp))[:, None]
                rows.append(np.concatenate([xp, vp], axis=-1))
        return np.concatenate(rows), ef

    def fd_jacobian(Sb, copies, ef_start):
        n = m.dim
        eps = cfg.fd_step
        x, v = Sb[:, :n], Sb[:, n:]
        ef = np.exp(m.exponent.value(x))
        u = v * ef[:, None]
        e1, e2 = _sphere_basis(u)
        J = np.zeros((k, n_exp, n_exp))
        C = copies.reshape(n_exp, 2, k, 2 * n)
        for j in range(n_exp):
            outs = []
            for sgn in range(2):
                c = C[j, sgn]
                dx = c[:, :n] - x
                if m.kind == "torus":
                    dx = (dx + 0.5) % 1.0 - 0.5
                uc = c[:, n:] * np.exp(m.exponent.value(c[:, :n]))[:, None]
                du = uc - u
                outs.append(np.concatenate([dx, np.sum(du * e1, -1, keepdims=True),
                                            np.sum(du * e2, -1, keepdims=True)], axis=-1))
            J[:, :, j] = (outs[0] - outs[1]) / (2 * eps)
        # weight to the orthonormal frame: position rows scale by exp(f)
        Wout = np.ones((k, n_exp))
        Wout[:, :n] = ef[:, None]
        Win = np.ones((k, n_exp))
        Win[:, :n] = ef_start[:, None]
        return Wout[:, :, None] * J / Win[:, None, :]

    if tangent and not surface:
        extra, ef0 = fd_start(S)
    elapsed = 0
    record(S)
    while elapsed < n_total:
        if extra is not None:
            allS = np.concatenate([S, extra])
            allS, _ = st.run(allS, base, None, at, ad)
            S, extra = allS[:k], allS[k:]
        else:
            S, D = st.run(S, base, D, at, ad)
        elapsed += base
        if elapsed % block_len == 0:
            b = elapsed // block_len - 1
            block_theta[:, b] = at
            block_div[:, b] = ad
            at[:] = 0.0
            ad[:] = 0.0
        if tangent and elapsed % qr_every == 0:
            if surface:
                W = sasaki_weight(m, S)
                q, r = np.linalg.qr(W @ D)
                D = np.linalg.solve(W, q)
            else:
                Jw = fd_jacobian(S, extra, ef0)
                q, r = np.linalg.qr(Jw @ Q)
                Q = q
                extra, ef0 = fd_start(S)
            log_r += np.log(np.abs(np.diagonal(r, axis1=-2, axis2=-1)))
            history.append(log_r.copy())
        if sample_every and elapsed % sample_every == 0 and elapsed < n_total:
            record(S)
    out_series = {name: np.stack(v, axis=-1) for name, v in series.items()}
    return ChunkResult(block_theta, block_div, out_series, log_r,
                       np.array(history) if tangent else None, S)


def run_ensemble(m: ManifoldModel, fc: FieldConfig, T: float, cfg: EnsembleConfig,
                 n_blocks: int = 1, sample_dt: float | None = None,
                 observables: dict[str, Callable] | None = None,
                 tangent: bool = False, qr_dt: float = 1.0, states=None) -> EnsembleResult:
    """Run ``cfg.members`` trajectories for ``T`` time units after burn-in."""
    observables = observables or {}
    S0 = initial_states(m, cfg) if states is None else np.asarray(states, float)
    if S0.shape != (cfg.members, state_dim(m)):
        raise ValueError("initial states do not match the ensemble size")
    S0, _, _ = apply_transitions(m, S0)
    chunks = [S0[i:i + cfg.chunk_size] for i in range(0, cfg.members, cfg.chunk_size)]

    def work(S):
        return _run_chunk(m, fc, S, T, cfg, n_blocks, sample_dt, observables, tangent, qr_dt)

    if cfg.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            results = list(ex.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    res = EnsembleResult(
        cfg, T,
        np.concatenate([r.block_theta for r in results]),
        np.concatenate([r.block_div for r in results]),
        {name: np.concatenate([r.series[name] for r in results]) for name in observables},
        np.concatenate([r.log_r for r in results]) if tangent else None,
        np.concatenate([r.history for r in results], axis=1) if tangent else None,
        np.concatenate([r.final for r in results]),
        sample_dt, qr_dt if tangent else None,
        m.dim == 2 and try_compile(m, fc) is not None,
    )
    return res
