"""Size sweeps, power-law fits and family-versus-family rate separation."""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .decoherence import (
    EnvironmentSpec,
    InteractionChannel,
    build_environment,
    channel_fluctuation,
    env_correlation,
    extract_rate,
    gamma_bound,
    lindblad_surrogate,
    simulate_joint,
)
from .decoherence.dynamics import _conditional_possible
from .errors import AllSizesFailed, FluxdecError, InsufficientData, ValidationError
from .fitting import PowerFit, fit_power
from .fluctuation import max_intensive_fluctuation, verdict_for
from .models import BOSON_FAMILIES, ModelSpec, make_state, model_hamiltonian, psi_fluctuation

__all__ = ["SweepPlan", "ScalingReport", "SeparationReport", "run_sweep", "rate_separation",
           "fit_power"]

JOINT_CAP = 2**18


class TimeGrid(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    t_max: float = Field(gt=0)
    dt: float = Field(gt=0)

    def times(self) -> np.ndarray:
        return np.arange(0, int(round(self.t_max / self.dt)) + 1) * self.dt


class SweepPlan(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    family: ModelSpec
    sizes: tuple[int, ...]
    quantity: Literal["max_fluct", "psi_fluct", "gamma_bound", "gamma_fit", "g00"]
    channel: InteractionChannel | None = None
    env: EnvironmentSpec | None = None
    time: TimeGrid | None = None
    seeds: tuple[int, ...] | None = None  # default: the env template's seed
    use_model_hamiltonian: bool = False

    @field_validator("sizes")
    @classmethod
    def _sizes(cls, v):
        if not v:
            raise ValueError("sizes must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("sizes must be strictly increasing")
        if v[0] < 1:
            raise ValueError("sizes must be positive")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if v is not None and not v:
            raise ValueError("at least one seed is required")
        return v

    def needs_env(self) -> bool:
        return self.quantity in ("gamma_bound", "gamma_fit", "g00")


@dataclass
class ScalingReport:
    quantity: str
    rows: list[tuple[int, float, float]]
    gaps: list[tuple[int, str]] = field(default_factory=list)
    fit: PowerFit | None = None
    verdict: str | None = None
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "rows": [list(r) for r in self.rows],
            "gaps": [list(g) for g in self.gaps],
            "fit": self.fit.to_dict() if self.fit else None,
            "verdict": self.verdict,
            "notes": self.notes,
        }

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["V", "value", "stderr"])
        for V, val, err in self.rows:
            w.writerow([V, format(val, ".17g"), format(err, ".17g")])
        return buf.getvalue()


def _state_and_h(spec: ModelSpec, use_h: bool):
    state = make_state(spec)
    H = model_hamiltonian(spec, state.basis) if use_h else None
    return state, H


def _single_value(plan: SweepPlan, V: int, seed: int) -> tuple[float, float, list[str]]:
    """(value, stderr, notes) for one size and seed."""
    notes: list[str] = []
    q = plan.quantity
    if q == "max_fluct":
        spec = plan.family.with_size(V)
        if spec.family in BOSON_FAMILIES:
            return psi_fluctuation(spec).fluctuation, 0.0, notes
        return max_intensive_fluctuation(make_state(spec)).value, 0.0, notes
    if q == "psi_fluct":
        return psi_fluctuation(plan.family.with_size(V)).fluctuation, 0.0, notes
    if plan.channel is None or plan.env is None:
        raise ValidationError(f"quantity {q!r} needs channel and env templates")
    env_spec = plan.env.model_copy(update={"seed": seed})
    channel = plan.channel
    if q == "g00":
        # V is the contact-region size; the system is just the contact region
        ch = channel.model_copy(update={"contact_sites": None, "pairing": None})
        env = build_environment(env_spec, n_contact=V)
        return env_correlation(env, ch, n_sys_sites=V).g00, 0.0, notes
    spec = plan.family.with_size(V)
    state, H = _state_and_h(spec, plan.use_model_hamiltonian)
    n = state.geometry.n_sites
    n_contact = len(channel.contact_sites) if channel.contact_sites is not None else n
    env = build_environment(env_spec, n_contact=n_contact)
    corr = env_correlation(env, channel, n_sys_sites=n)
    fl = channel_fluctuation(state, channel)
    bound = gamma_bound(channel.lam, corr.g00, fl)
    if q == "gamma_bound":
        return bound, 0.0, notes
    if plan.time is None:
        raise ValidationError("gamma_fit needs a time grid")
    times = plan.time.times()
    joint = state.amplitudes.size * math.prod(env.dims)
    if _conditional_possible(state, env, [channel], H):
        trace = simulate_joint(state, env, [channel], H, times, mode="conditional")
    elif joint <= JOINT_CAP:
        trace = simulate_joint(state, env, [channel], H, times, mode="dense")
    else:
        notes.append(f"V={V}: joint dimension {joint} above {JOINT_CAP}; Lindblad surrogate used")
        trace = lindblad_surrogate(state, env, [channel], H, times)
    fit = extract_rate(trace)
    return fit.gamma, fit.stderr, notes


def _row(plan: SweepPlan, V: int):
    """One size: mean over seeds with its standard error, or a failure reason."""
    try:
        vals, errs, notes = [], [], []
        seeds = plan.seeds or ((plan.env.seed,) if plan.env is not None else (0,))
        for seed in seeds:
            v, e, n = _single_value(plan, V, seed)
            vals.append(v)
            errs.append(e)
            notes += n
        vals = np.array(vals)
        if vals.size > 1:
            err = float(vals.std(ddof=1) / math.sqrt(vals.size))
        else:
            err = float(errs[0])
        return V, float(vals.mean()), err, notes, None
    except FluxdecError as exc:
        return V, None, None, [], f"{exc.code}: {exc}"


def run_sweep(plan: SweepPlan, jobs: int = 1) -> ScalingReport:
    """One row per size; failed sizes become gaps with their reason."""
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_row, [plan] * len(plan.sizes), plan.sizes))
    else:
        results = [_row(plan, V) for V in plan.sizes]
    results.sort(key=lambda r: r[0])
    rows, gaps, notes = [], [], []
    for V, val, err, n, reason in results:
        notes += n
        if reason is None:
            rows.append((V, val, err))
        else:
            gaps.append((V, reason))
    if not rows:
        raise AllSizesFailed("every size failed", gaps=[list(g) for g in gaps])
    report = ScalingReport(plan.quantity, rows, gaps, notes=notes)
    positive = [r for r in rows if r[1] > 0]
    if len(positive) >= 3 and len(positive) == len(rows):
        report.fit = fit_power(rows)
        if plan.quantity in ("max_fluct", "psi_fluct") and len(rows) >= 4:
            report.verdict = verdict_for(report.fit.exponent)
    else:
        report.notes.append("no power-law fit: fewer than 3 rows or nonpositive values")
    return report


@dataclass
class SeparationReport:
    rows: list[tuple[int, float]]
    fit: PowerFit | None
    a: ScalingReport
    b: ScalingReport

    def to_dict(self) -> dict:
        return {
            "rows": [list(r) for r in self.rows],
            "fit": self.fit.to_dict() if self.fit else None,
            "family_a": self.a.to_dict(),
            "family_b": self.b.to_dict(),
        }

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        for k, v in (header or {}).items():
            buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["V", "ratio", "value_a", "value_b"])
        va = {r[0]: r[1] for r in self.a.rows}
        vb = {r[0]: r[1] for r in self.b.rows}
        for V, ratio in self.rows:
            w.writerow([V, format(ratio, ".17g"), format(va[V], ".17g"), format(vb[V], ".17g")])
        return buf.getvalue()


def rate_separation(plan_a: SweepPlan, plan_b: SweepPlan, jobs: int = 1) -> SeparationReport:
    """Ratio of the same quantity between two families, and its exponent in V."""
    if plan_a.sizes != plan_b.sizes:
        raise ValidationError("both plans must use the same sizes")
    if plan_a.quantity != plan_b.quantity:
        raise ValidationError("both plans must measure the same quantity")
    if plan_a.channel != plan_b.channel or plan_a.env != plan_b.env:
        raise ValidationError("both plans must share channel and environment templates")
    ra, rb = run_sweep(plan_a, jobs), run_sweep(plan_b, jobs)
    vb = {r[0]: r[1] for r in rb.rows}
    rows = [(V, val / vb[V]) for V, val, _ in ra.rows if V in vb and vb[V] > 0]
    fit = None
    if len(rows) >= 3 and all(r[1] > 0 for r in rows):
        fit = fit_power(rows)
    elif len(rows) < 2:
        raise InsufficientData("fewer than two common sizes")
    return SeparationReport(rows, fit, ra, rb)
