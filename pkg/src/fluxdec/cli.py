"""Command-line front end: ``fluxdec analyze | decohere | sweep | boson | report``.

Exit codes: 0 success, 2 validation, 3 resource, 4 numerical.
"""
from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Literal

import click
import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import config
from .decoherence import (
    EnvironmentSpec,
    InteractionChannel,
    build_environment,
    channel_fluctuation,
    check_translation_invariance,
    env_correlation,
    extract_rate,
    gamma_bound,
    leaky_box,
    lindblad_surrogate,
    simulate_joint,
)
from .decoherence.dynamics import embed_truncated, leaky_box_quasifree
from .errors import (
    DimensionOverflow,
    FluxdecError,
    MalformedFile,
    ValidationError,
)
from .fluctuation import max_intensive_fluctuation
from .hilbert import fock_dimension
from .models import (
    BOSON_FAMILIES,
    ModelSpec,
    load_state,
    long_range_order,
    make_state,
    model_hamiltonian,
    psi_fluctuation,
)
from .scaling import SweepPlan, TimeGrid, rate_separation, run_sweep

FORMATS = ("csv", "json", "svg")


# ---------------------------------------------------------------------------
# run configurations
# ---------------------------------------------------------------------------


class _Base(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    hbar: float = Field(1.0, gt=0)
    budget: int | None = Field(None, gt=0)
    seed: int | None = None
    formats: tuple[Literal["csv", "json", "svg"], ...] = ("csv", "json")


class DecohereConfig(_Base):
    system: ModelSpec
    env: EnvironmentSpec
    channels: tuple[InteractionChannel, ...]
    time: TimeGrid
    use_model_hamiltonian: bool = False
    method: Literal["exact", "surrogate"] = "exact"
    mode: Literal["auto", "conditional", "dense"] = "auto"
    tol: float = Field(0.2, ge=0, lt=1)

    @model_validator(mode="after")
    def _check(self):
        if not self.channels:
            raise ValueError("at least one channel is required")
        return self


class SeparationPair(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    a: SweepPlan
    b: SweepPlan


class SweepConfig(_Base):
    sweep: SweepPlan | None = None
    separation: SeparationPair | None = None

    @model_validator(mode="after")
    def _check(self):
        if (self.sweep is None) == (self.separation is None):
            raise ValueError("give exactly one of 'sweep' or 'separation'")
        return self


class BosonConfig(_Base):
    sgs: ModelSpec
    ppv: ModelSpec
    kappa: float = Field(ge=0)
    time: TimeGrid
    site: int = 0
    route: Literal["auto", "lindblad", "quasi-free"] = "auto"

    @model_validator(mode="after")
    def _check(self):
        if self.sgs.family != "bh_sgs" or self.ppv.family != "bh_ppv":
            raise ValueError("'sgs' must be a bh_sgs spec and 'ppv' a bh_ppv spec")
        if self.sgs.M != self.ppv.M:
            raise ValueError("both states need the same number of sites")
        n_sgs = float(self.sgs.N)
        n_ppv = abs(self.ppv.alpha_complex) ** 2
        if abs(n_sgs - n_ppv) > 0.01 * max(n_sgs, n_ppv):
            raise ValueError(f"<N> differs between the states ({n_sgs} vs {n_ppv:.6g})")
        if not 0 <= self.site < self.sgs.M:
            raise ValueError("leak site outside the box")
        return self


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: {exc}") from exc


def _load(model, path, seed):
    raw = _read_json(path)
    if not isinstance(raw, dict):
        raise MalformedFile(f"{path}: top level must be an object")
    if seed is not None:
        raw["seed"] = seed
    return model.model_validate(raw)


def _settings(cfg: _Base):
    overrides = {"hbar": cfg.hbar}
    if cfg.budget is not None:
        overrides["budget"] = cfg.budget
    return config.using(**overrides)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonify) + "\n"


def _jsonify(o):
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _header(cfg: _Base) -> dict:
    return {"config": json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True),
            "seed": cfg.seed}


class _Outputs:
    """Collect files and write them only once the run has succeeded."""

    def __init__(self, out: str | None, formats):
        self.out = Path(out) if out else None
        self.formats = set(formats)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str, fmt: str):
        if fmt in self.formats:
            self.files[name] = text

    def add_svg(self, name: str, series: dict, xlabel: str, ylabel: str, loglog=False):
        if "svg" in self.formats:
            self.files[name] = _svg(series, xlabel, ylabel, loglog)

    def flush(self) -> list[str]:
        if self.out is None:
            return []
        self.out.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (self.out / name).write_text(text)
        return sorted(self.files)


def _svg(series: dict, xlabel: str, ylabel: str, loglog: bool) -> str:
    try:
        import matplotlib
    except ImportError as exc:  # optional extra
        raise ValidationError("svg output needs matplotlib (install the 'plot' extra)") from exc
    import io

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "fluxdec"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (x, y) in series.items():
        ax.plot(x, y, marker="o" if loglog else None, label=label)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# command bodies (plain functions, reused by tests)
# ---------------------------------------------------------------------------


def analyze_payload(state, spec: ModelSpec | None = None) -> dict:
    if state.kind == "qubit":
        rep = max_intensive_fluctuation(state)
        out = rep.to_dict()
        out["optimal_axes"] = rep.dominant_axes()
        return out
    stats = psi_fluctuation(spec) if spec is not None else None
    if stats is None:
        from .models import order_parameter_stats

        stats = order_parameter_stats(state, "psi")
    return {"state_label": state.label, "M": state.geometry.n_sites,
            "psi_mean": [stats.mean.real, stats.mean.imag],
            "psi_fluctuation": stats.fluctuation,
            "long_range_order": long_range_order(state)}


def run_decohere(cfg: DecohereConfig) -> tuple[dict, object]:
    spec = cfg.system
    state = make_state(spec)
    H = model_hamiltonian(spec, state.basis) if cfg.use_model_hamiltonian else None
    n = state.geometry.n_sites
    env_spec = cfg.env if cfg.seed is None else cfg.env.model_copy(update={"seed": cfg.seed})
    channels = list(cfg.channels)
    n_contact = max(len(ch.sites(n)) for ch in channels)
    env = build_environment(env_spec, n_contact=n_contact)
    times = cfg.time.times()
    per_channel = []
    for ch in channels:
        corr = env_correlation(env, ch, n_sys_sites=n)
        fl = channel_fluctuation(state, ch)
        per_channel.append({"channel": ch.label, "lambda": ch.lam, "g00": corr.g00,
                            "plateau": list(corr.plateau), "fluctuation": fl,
                            "gamma_bound": gamma_bound(ch.lam, corr.g00, fl)})
    total_bound = sum(c["gamma_bound"] for c in per_channel)
    tc = check_translation_invariance(state)
    stationary = True
    if H is not None:
        phi = state.amplitudes
        h = H.matrix @ phi
        stationary = float(np.linalg.norm(h - np.vdot(phi, h) * phi)) <= 1e-8
    pre = {"translation_invariant": tc.passed, "translation_deviation": tc.deviation,
           "stationary": stationary, "weak_coupling": total_bound * times[-1] <= 0.1}
    if cfg.method == "surrogate":
        trace = lindblad_surrogate(state, env, channels, H, times)
    else:
        trace = simulate_joint(state, env, channels, H, times, mode=cfg.mode)
    report = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": env_spec.seed,
              "channels": per_channel, "gamma_bound": total_bound, "preconditions": pre,
              "provenance": trace.provenance, "route": trace.metadata.get("route"),
              "fit_policy": {"s_lin_max": config.get().fit_s_lin_max,
                             "r2_min": config.get().fit_r2_min}}
    try:
        fit = extract_rate(trace)
        report.update({"gamma_fit": fit.gamma, "stderr": fit.stderr, "window": list(fit.window),
                       "r2": fit.r2, "fit_error": None})
        ok = pre["translation_invariant"] and pre["stationary"] and pre["weak_coupling"]
        report["satisfied"] = bool(fit.gamma >= (1 - cfg.tol) * total_bound) if ok else None
        if not ok:
            report["note"] = "preconditions of the bound fail; comparison not asserted"
    except FluxdecError as exc:
        report.update({"gamma_fit": None, "fit_error": exc.to_dict(), "satisfied": None})
    report["tol"] = cfg.tol
    return report, trace


def _leak_route(cfg: BosonConfig) -> str:
    if cfg.route != "auto":
        return cfg.route
    dim = fock_dimension(cfg.ppv.M, cfg.ppv.n_max, cfg.ppv.cutoff, False)
    if dim * dim <= config.get().max_amplitudes:
        return "lindblad"
    if cfg.sgs.U == 0 and cfg.ppv.U == 0 and cfg.sgs.J_hop == cfg.ppv.J_hop:
        return "quasi-free"
    raise DimensionOverflow(
        f"PPV density matrix needs {dim * dim} entries; budget {config.get().max_amplitudes}"
    )


def run_boson(cfg: BosonConfig) -> tuple[dict, dict]:
    times = cfg.time.times()
    report = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": cfg.seed,
              "states": {}}
    for name, spec in (("sgs", cfg.sgs), ("ppv", cfg.ppv)):
        stats = psi_fluctuation(spec)
        entry = {"label": spec.describe(), "psi_mean": [stats.mean.real, stats.mean.imag],
                 "psi_fluctuation": stats.fluctuation, "long_range_order": None}
        if name == "sgs" and fock_dimension(spec.M, spec.N, spec.cutoff, True) <= 20000:
            entry["long_range_order"] = long_range_order(make_state(spec))
        report["states"][name] = entry
    route = _leak_route(cfg)
    traces = {}
    for name, spec in (("sgs", cfg.sgs), ("ppv", cfg.ppv)):
        if route == "quasi-free":
            if spec.U != 0:
                raise ValidationError("the quasi-free route needs U = 0")
            traces[name] = leaky_box_quasifree(
                spec.M, times, cfg.kappa, spec.J_hop,
                n_particles=spec.N if name == "sgs" else None,
                coherent=name == "ppv", site=cfg.site, boundary=spec.boundary)
        else:
            st = embed_truncated(make_state(spec))
            H = model_hamiltonian(spec, st.basis)
            traces[name] = leaky_box(st, cfg.kappa, times, H, site=cfg.site)
    report["route"] = route
    fits = {}
    for name, tr in traces.items():
        try:
            f = extract_rate(tr)
            fits[name] = f
            report["states"][name].update({"gamma_fit": f.gamma, "window": list(f.window),
                                           "fit_error": None})
        except FluxdecError as exc:
            report["states"][name].update({"gamma_fit": None, "fit_error": exc.to_dict()})
    report["comparison"] = compare_traces(traces["sgs"], traces["ppv"], fits)
    return report, traces


def compare_traces(sgs, ppv, fits: dict) -> dict:
    """Which trace lies above on the common fit window (t > 0 samples)."""
    windows = [f.window for f in fits.values()]
    if not windows:
        return {"window": None, "faster": "undetermined", "sgs_above_throughout": False}
    lo = max(w[0] for w in windows)
    hi = min(w[1] for w in windows) if len(windows) == 2 else windows[0][1]
    t = sgs.times
    mask = (t >= lo - 1e-12) & (t <= hi + 1e-12) & (t > 0)
    if not mask.any():
        return {"window": [lo, hi], "faster": "undetermined", "sgs_above_throughout": False}
    s1, s2 = sgs.s_lin[mask], ppv.s_lin[mask]
    above = bool(np.all(s1 > s2))
    below = bool(np.all(s2 > s1))
    faster = "sgs" if above else ("ppv" if below else "undetermined")
    return {"window": [float(lo), float(hi)], "faster": faster, "sgs_above_throughout": above,
            "min_gap": float(np.min(s1 - s2))}


# ---------------------------------------------------------------------------
# click plumbing
# ---------------------------------------------------------------------------


def _fail(exc: FluxdecError, error_json: bool):
    if error_json:
        click.echo(json.dumps(exc.to_dict(), sort_keys=True), err=True)
    else:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
    sys.exit(exc.exit_code)


def _guard(fn, error_json: bool):
    try:
        return fn()
    except FluxdecError as exc:
        _fail(exc, error_json)
    except pydantic.ValidationError as exc:
        _fail(ValidationError(_pydantic_message(exc)), error_json)
    except MemoryError:
        _fail(DimensionOverflow("out of memory"), error_json)


def _pydantic_message(exc: pydantic.ValidationError) -> str:
    parts = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        parts.append(f"{loc}: {e['msg']}" if loc else e["msg"])
    return "; ".join(parts)


def common_options(f):
    f = click.option("--error-json", is_flag=True, help="Print errors as JSON on stderr.")(f)
    f = click.option("--format", "formats", multiple=True, type=click.Choice(FORMATS),
                     help="Output formats (repeatable); defaults to the config's list.")(f)
    f = click.option("--deterministic/--no-deterministic", default=True,
                     help="Fixed reduction order (default on).")(f)
    f = click.option("--jobs", type=click.IntRange(1), default=1, help="Worker processes.")(f)
    f = click.option("--seed", type=int, default=None, help="Override the config seed.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), default=None,
                     help="Output directory.")(f)
    return f


@click.group()
@click.option("--budget", type=click.IntRange(1), default=None,
              help="Maximum number of complex amplitudes (overrides FLUXDEC_BUDGET).")
@click.pass_context
def main(ctx, budget):
    """Fluctuations of intensive operators and decoherence of macroscopic states."""
    ctx.ensure_object(dict)
    ctx.obj["budget"] = budget


def _budget_ctx(ctx):
    b = ctx.obj.get("budget") if ctx.obj else None
    return config.using(budget=b) if b else config.using()


@main.command()
@click.option("--family", type=click.Choice(
    ["product", "ghz", "w", "dicke", "ising_sgs", "ising_ppv", "bh_sgs", "bh_ppv"]))
@click.option("--n", "size", type=int, help="System size (V, or M for bosons).")
@click.option("--param", multiple=True, help="Extra ModelSpec field as key=value.")
@click.option("--state-file", type=click.Path(dir_okay=False), default=None)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="ModelSpec JSON.")
@common_options
@click.pass_context
def analyze(ctx, family, size, param, state_file, config_path, out, seed, jobs, deterministic,
            formats, error_json):
    """Largest intensive-operator fluctuation of a state (or Psi statistics for bosons)."""

    def body():
        spec = None
        if state_file:
            state = load_state(state_file)
        else:
            if config_path:
                raw = _read_json(config_path)
            elif family:
                raw = {"family": family}
                key = "M" if family in BOSON_FAMILIES else "V"
                if size is not None:
                    raw[key] = size
                if family == "bh_sgs" and size is not None:
                    raw.setdefault("N", size)
            else:
                raise ValidationError("give --family, --config or --state-file")
            for p in param:
                if "=" not in p:
                    raise ValidationError(f"--param expects key=value, got {p!r}")
                k, v = p.split("=", 1)
                try:
                    raw[k] = json.loads(v)
                except json.JSONDecodeError:
                    raw[k] = v
            spec = ModelSpec.model_validate(raw)
            state = make_state(spec) if spec.family not in BOSON_FAMILIES else None
            if state is None:
                stats = psi_fluctuation(spec)
                payload = {"state_label": spec.describe(), "M": spec.M,
                           "psi_mean": [stats.mean.real, stats.mean.imag],
                           "psi_fluctuation": stats.fluctuation}
                return payload
        return analyze_payload(state, spec)

    with _budget_ctx(ctx):
        payload = _guard(body, error_json)
    text = _dump(payload)
    click.echo(text, nl=False)
    if out:
        o = _Outputs(out, formats or ("json",))
        o.add("analyze.json", text, "json")
        o.flush()


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@common_options
@click.pass_context
def decohere(ctx, config_path, out, seed, jobs, deterministic, formats, error_json):
    """Exact (or surrogate) decoherence run with the rate bound check."""

    def body():
        cfg = _load(DecohereConfig, config_path, seed)
        with _settings(cfg):
            report, trace = run_decohere(cfg)
        o = _Outputs(out, formats or cfg.formats)
        o.add("trace.csv", trace.to_csv(_header(cfg)), "csv")
        o.add("report.json", _dump(report), "json")
        o.add_svg("trace.svg", {"S_lin": (trace.times, trace.s_lin)}, "t", "S_lin")
        return report, o

    with _budget_ctx(ctx):
        report, o = _guard(body, error_json)
        o.flush()
    click.echo(_dump(_summary(report)), nl=False)


def _summary(report: dict) -> dict:
    keys = ("gamma_bound", "gamma_fit", "satisfied", "fit_error", "route")
    return {k: report.get(k) for k in keys if k in report}


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@common_options
@click.pass_context
def sweep(ctx, config_path, out, seed, jobs, deterministic, formats, error_json):
    """Size sweep with a power-law fit, or a two-family rate separation."""

    def body():
        cfg = _load(SweepConfig, config_path, None)
        if seed is not None:
            upd = {"seeds": (seed,)}
            if cfg.sweep is not None:
                cfg = cfg.model_copy(update={"sweep": cfg.sweep.model_copy(update=upd)})
            else:
                pair = SeparationPair(a=cfg.separation.a.model_copy(update=upd),
                                      b=cfg.separation.b.model_copy(update=upd))
                cfg = cfg.model_copy(update={"separation": pair, "seed": seed})
        with _settings(cfg):
            if cfg.sweep is not None:
                rep = run_sweep(cfg.sweep, jobs=jobs)
                series = {cfg.sweep.quantity: ([r[0] for r in rep.rows], [r[1] for r in rep.rows])}
            else:
                rep = rate_separation(cfg.separation.a, cfg.separation.b, jobs=jobs)
                series = {"ratio": ([r[0] for r in rep.rows], [r[1] for r in rep.rows])}
        payload = {"config": cfg.model_dump(mode="json", by_alias=True), "seed": cfg.seed}
        payload.update(rep.to_dict())
        o = _Outputs(out, formats or cfg.formats)
        o.add("sweep.csv", rep.to_csv(_header(cfg)), "csv")
        o.add("sweep.json", _dump(payload), "json")
        o.add_svg("sweep.svg", series, "V", "value", loglog=True)
        return payload, o

    with _budget_ctx(ctx):
        payload, o = _guard(body, error_json)
        o.flush()
    click.echo(_dump({"fit": payload.get("fit"), "verdict": payload.get("verdict"),
                      "gaps": payload.get("gaps", payload.get("family_a", {}).get("gaps"))}),
               nl=False)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@common_options
@click.pass_context
def boson(ctx, config_path, out, seed, jobs, deterministic, formats, error_json):
    """Symmetric ground state versus pure-phase vacuum in a leaky box."""

    def body():
        cfg = _load(BosonConfig, config_path, seed)
        with _settings(cfg):
            report, traces = run_boson(cfg)
        o = _Outputs(out, formats or cfg.formats)
        for name, tr in traces.items():
            o.add(f"trace_{name}.csv", tr.to_csv(_header(cfg)), "csv")
        o.add("boson.json", _dump(report), "json")
        o.add_svg("boson.svg", {k: (t.times, t.s_lin) for k, t in traces.items()}, "t", "S_lin")
        return report, o

    with _budget_ctx(ctx):
        report, o = _guard(body, error_json)
        o.flush()
    click.echo(_dump({"route": report["route"], "comparison": report["comparison"],
                      "psi_fluctuation": {k: v["psi_fluctuation"]
                                          for k, v in report["states"].items()}}), nl=False)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--error-json", is_flag=True)
def report(run_dir, error_json):
    """Summarize every JSON report in a run directory."""

    def body():
        rows = {}
        for path in sorted(Path(run_dir).glob("*.json")):
            if path.name == "summary.json":
                continue
            data = _read_json(path)
            rows[path.name] = {k: data.get(k) for k in
                               ("gamma_bound", "gamma_fit", "satisfied", "fit", "verdict",
                                "comparison", "value") if k in data}
        if not rows:
            raise ValidationError(f"no JSON reports in {run_dir}")
        return rows

    rows = _guard(body, error_json)
    text = _dump(rows)
    Path(run_dir, "summary.json").write_text(text)
    click.echo(text, nl=False)


if __name__ == "__main__":  # pragma: no cover
    main()
