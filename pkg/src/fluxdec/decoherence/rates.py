"""Empirical decoherence rates and the fluctuation lower bound."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import config
from ..errors import (
    NegativeInput,
    NoLinearWindowError,
    PreconditionViolation,
    ValidationError,
)
from ..fitting import fit_line
from ..hilbert import StateVector, TensorBasis, as_matrix
from .dynamics import DecoherenceTrace, simulate_joint
from .environment import EnvironmentModel, InteractionChannel, env_correlation, system_operator


@dataclass(frozen=True)
class RateFit:
    gamma: float
    stderr: float
    window: tuple[float, float]
    r2: float
    n_samples: int


@dataclass
class RateReport:
    channel: str
    lam: float
    g00: float
    fluctuation: float
    gamma_bound: float
    gamma_fit: float | None = None
    stderr: float | None = None
    window: tuple[float, float] | None = None
    r2: float | None = None
    tol: float = 0.2
    satisfied: bool | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "channel": self.channel,
            "lambda": self.lam,
            "g00": self.g00,
            "fluctuation": self.fluctuation,
            "gamma_bound": self.gamma_bound,
            "gamma_fit": self.gamma_fit,
            "stderr": self.stderr,
            "window": list(self.window) if self.window else None,
            "r2": self.r2,
            "tol": self.tol,
            "satisfied": self.satisfied,
            "notes": self.notes,
        }


def gamma_bound(lam: float, g00: float, fluct: float, hbar: float | None = None) -> float:
    """(lam^2 / hbar^2) * g00 * fluct."""
    hbar = config.get().hbar if hbar is None else hbar
    for name, v in (("lambda", lam), ("g00", g00), ("fluctuation", fluct)):
        if v < 0:
            raise NegativeInput(f"{name} must be >= 0, got {v}")
    return lam**2 / hbar**2 * g00 * fluct


def extract_rate(trace: DecoherenceTrace | tuple, s_max: float | None = None,
                 r2_min: float | None = None, min_samples: int | None = None) -> RateFit:
    """Slope of S_lin(t) on the longest linear window inside the S_lin <= s_max prefix.

    Ties in window length go to the earliest start.
    """
    s = config.get()
    s_max = s.fit_s_lin_max if s_max is None else s_max
    r2_min = s.fit_r2_min if r2_min is None else r2_min
    min_samples = s.fit_min_samples if min_samples is None else min_samples
    if isinstance(trace, DecoherenceTrace):
        t, y = trace.times, trace.s_lin
    else:
        t, y = (np.asarray(a, dtype=float) for a in trace)
    over = np.flatnonzero(y > s_max)
    n = int(over[0]) if over.size else y.size
    if n < min_samples:
        raise NoLinearWindowError(f"only {n} samples with S_lin <= {s_max}")
    t, y = t[:n], y[:n]
    # prefix sums give every window's regression in O(1)
    c = lambda a: np.concatenate([[0.0], np.cumsum(a)])  # noqa: E731
    St, Sy, Stt, Syy, Sty = c(t), c(y), c(t * t), c(y * y), c(t * y)
    for length in range(n, min_samples - 1, -1):
        i = np.arange(0, n - length + 1)
        j = i + length
        m = float(length)
        sxx = (Stt[j] - Stt[i]) - (St[j] - St[i]) ** 2 / m
        syy = (Syy[j] - Syy[i]) - (Sy[j] - Sy[i]) ** 2 / m
        sxy = (Sty[j] - Sty[i]) - (St[j] - St[i]) * (Sy[j] - Sy[i]) / m
        with np.errstate(divide="ignore", invalid="ignore"):
            r2 = np.where((syy > 1e-30) & (sxx > 0), sxy**2 / (sxx * syy), np.nan)
        ok = np.flatnonzero(r2 >= r2_min)
        if ok.size:
            start = int(ok[0])
            fit = fit_line(t[start: start + length], y[start: start + length])
            return RateFit(fit.slope, fit.slope_stderr,
                           (float(t[start]), float(t[start + length - 1])), fit.r2, length)
    raise NoLinearWindowError(f"no window with R^2 >= {r2_min} among {n} samples")


def _shift_index(state: StateVector) -> np.ndarray:
    """Permutation p with (T phi)[i] = phi[p[i]] for the one-site cyclic shift."""
    basis = state.basis
    V = state.geometry.n_sites
    if isinstance(basis, TensorBasis):
        idx = np.arange(basis.size if hasattr(basis, "size") else state.amplitudes.size)
        # T moves the content of site x to site x+1
        return ((idx >> 1) | ((idx & 1) << (V - 1))).astype(np.int64)
    states = basis.states
    shifted = np.roll(states, -1, axis=1)
    return basis.lookup(shifted)


@dataclass(frozen=True)
class TranslationCheck:
    passed: bool
    deviation: float


def check_translation_invariance(state: StateVector, tol: float = 1e-8) -> TranslationCheck:
    if state.geometry.boundary != "periodic":
        raise ValidationError("translation is undefined for open boundaries")
    phi = state.amplitudes
    p = _shift_index(state)
    if np.any(p < 0):
        raise ValidationError("shifted configuration left the basis")
    t_phi = phi[p]
    ov = np.vdot(phi, t_phi)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    dev = float(np.linalg.norm(t_phi - phase * phi))
    return TranslationCheck(dev <= tol, dev)


def channel_fluctuation(state: StateVector, channel: InteractionChannel) -> float:
    """<dA^dag dA> for A = (1/V) sum over all V sites of the channel's a(x)."""
    V = state.geometry.n_sites
    A = None
    for x in range(V):
        op = system_operator(state.basis, x, channel.a)
        A = op if A is None else A + op
    A = A / V
    phi = state.amplitudes
    v = A @ phi
    mean = np.vdot(phi, v)
    return max(float(np.vdot(v, v).real - abs(mean) ** 2), 0.0)


def _stationarity(state: StateVector, H_sys) -> float:
    if H_sys is None:
        return 0.0
    H = as_matrix(H_sys)
    phi = state.amplitudes
    h = H @ phi
    e = np.vdot(phi, h)
    return float(np.linalg.norm(h - e * phi))


def verify_rate_bound(state: StateVector, env: EnvironmentModel, channel: InteractionChannel,
                      H_sys=None, times=None, tol: float = 0.2, mode: str = "auto") -> RateReport:
    """Exact S_lin slope against the fluctuation lower bound for one channel."""
    times = np.asarray(times, dtype=float)
    tc = check_translation_invariance(state)
    if not tc.passed:
        raise PreconditionViolation(
            f"state is not translation invariant (deviation {tc.deviation:.3e})",
            check="translation-invariance", deviation=tc.deviation,
        )
    stat = _stationarity(state, H_sys)
    if stat > 1e-8:
        raise PreconditionViolation(
            f"state is not stationary under H_sys ({stat:.3e})", check="stationarity",
        )
    corr = env_correlation(env, channel, n_sys_sites=state.geometry.n_sites)
    fluct = channel_fluctuation(state, channel)
    bound = gamma_bound(channel.lam, corr.g00, fluct)
    if bound * times[-1] > 0.1:
        raise PreconditionViolation(
            f"weak coupling fails: gamma_bound * t_max = {bound * times[-1]:.3g} > 0.1",
            check="weak-coupling",
        )
    trace = simulate_joint(state, env, [channel], H_sys, times, mode=mode)
    fit = extract_rate(trace)
    return RateReport(
        channel=channel.label, lam=channel.lam, g00=corr.g00, fluctuation=fluct,
        gamma_bound=bound, gamma_fit=fit.gamma, stderr=fit.stderr, window=fit.window,
        r2=fit.r2, tol=tol, satisfied=bool(fit.gamma >= (1 - tol) * bound),
        notes={"plateau": list(corr.plateau), "translation_deviation": tc.deviation,
               "fit_policy": "longest window with S_lin <= cap and R^2 >= threshold",
               "seed": env.spec.seed, "route": trace.metadata["route"]},
    )


@dataclass
class ChannelSweep:
    reports: list[RateReport]
    worst_channel: str
    worst_gamma: float

    def to_dict(self) -> dict:
        return {"reports": [r.to_dict() for r in self.reports],
                "worst_channel": self.worst_channel, "worst_gamma_bound": self.worst_gamma}


def channel_sweep(state: StateVector, channels: Sequence[InteractionChannel],
                  envs: Sequence[EnvironmentModel] | EnvironmentModel) -> ChannelSweep:
    """Bound per channel and the channel with the largest bound (first on ties)."""
    channels = list(channels)
    if not channels:
        raise ValidationError("channel sweep needs at least one channel")
    if isinstance(envs, EnvironmentModel):
        envs = [envs] * len(channels)
    if len(envs) != len(channels):
        raise ValidationError("one environment per channel is required")
    reports = []
    for ch, env in zip(channels, envs):
        corr = env_correlation(env, ch, n_sys_sites=state.geometry.n_sites)
        fluct = channel_fluctuation(state, ch)
        reports.append(RateReport(ch.label, ch.lam, corr.g00, fluct,
                                  gamma_bound(ch.lam, corr.g00, fluct)))
    worst = max(range(len(reports)), key=lambda i: (reports[i].gamma_bound, -i))
    return ChannelSweep(reports, reports[worst].channel, reports[worst].gamma_bound)
