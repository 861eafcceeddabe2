"""Command-line front end: ``corrsense {solve,sweep,geometry,validate}``.

Each command reads one JSON config and writes ``results.json``,
``results.csv`` and (for sweeps) ``curves/*.svg`` under ``--out``.
Exit status: 0 on success, 1 on a bad config, 2 when a solve does not
converge or a validation check fails.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import experiments as ex
from . import geometry
from .bounds import assumption1_check
from .errors import InvalidSpecError
from .problem import EnsembleSpec, NoiseSpec, StructureSpec, make_instance, trial_seed
from .regularizers import make_regularizer
from .solvers import PROCEDURES, SolverConfig

EXPERIMENTS = ("solve", "sweep", "geometry", "validate")


class ConfigError(InvalidSpecError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"config key '{key}': {msg}")
        self.key = key


# -- config parsing ----------------------------------------------------------

_TOP_KEYS = {"experiment", "procedure", "model", "params", "solver", "bounds", "trials", "seed",
             "success_tol", "geometry", "validate", "description"}
_MODEL_KEYS = {"n", "m", "m_grid", "signal", "corruption", "ensemble", "noise", "f", "g"}
_PARAM_KEYS = {"lam", "tau1", "tau2", "beta", "tau_scale", "C_tau"}
_SOLVER_KEYS = {"max_iters", "tol_primal", "tol_dual", "rho", "accel", "adaptive_rho"}
_BOUND_KEYS = {"C", "samples"}


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigError(where or "<root>", "expected an object")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}" if where else k, "unknown key")


def _build(key, fn, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (InvalidSpecError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(key, str(exc)) from None


def _num(d, key, where, cast=float, default=None, required=False):
    if key not in d:
        if required:
            raise ConfigError(f"{where}.{key}", "missing")
        return default
    try:
        return cast(d[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}", f"not a valid {cast.__name__}: {d[key]!r}") from None


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    spec: ex.TrialSpec | None
    m_grid: tuple[int, ...]
    trials: int
    seed: int
    bounds: dict[str, Any] = field(default_factory=dict)
    geometry: dict[str, Any] = field(default_factory=dict)
    validate: dict[str, Any] = field(default_factory=dict)
    raw: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return self.raw


def parse_config(raw: dict[str, Any], seed_override: int | None = None) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError("experiment", f"expected one of {EXPERIMENTS}, got {exp!r}")
    seed = _num(raw, "seed", "", int, 0)
    if seed_override is not None:
        seed = int(seed_override)
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    trials = _num(raw, "trials", "", int, 1)
    if trials < 1:
        raise ConfigError("trials", "must be >= 1")
    raw = dict(raw, seed=seed)

    spec, m_grid = None, ()
    if exp in ("solve", "sweep"):
        spec, m_grid = _parse_trial_spec(raw)
        if exp == "sweep" and not m_grid:
            m_grid = (spec.m,)
    bounds = raw.get("bounds", {})
    _check_keys(bounds, _BOUND_KEYS, "bounds")
    if "C" in bounds and _num(bounds, "C", "bounds") <= 0:
        raise ConfigError("bounds.C", "must be positive")
    geo = raw.get("geometry", {})
    val = raw.get("validate", {})
    if exp == "geometry" and not geo.get("tasks"):
        raise ConfigError("geometry.tasks", "must be a non-empty list")
    if exp == "validate" and not val:
        raise ConfigError("validate", "must name at least one check")
    return RunConfig(exp, spec, tuple(m_grid), trials, seed, bounds, geo, val, raw)


def _parse_trial_spec(raw):
    model = raw.get("model")
    if model is None:
        raise ConfigError("model", "missing")
    _check_keys(model, _MODEL_KEYS, "model")
    n = _num(model, "n", "model", int, required=True)
    m_grid = tuple(int(v) for v in model.get("m_grid", ()))
    if "m_grid" in model and not m_grid:
        raise ConfigError("model.m_grid", "must be non-empty")
    if any(v < 1 for v in m_grid):
        raise ConfigError("model.m_grid", "entries must be positive")
    m = _num(model, "m", "model", int, m_grid[0] if m_grid else None)
    if m is None:
        raise ConfigError("model.m", "missing")
    signal = _build("model.signal", StructureSpec.from_dict, model.get("signal", {}))
    corruption = _build("model.corruption", StructureSpec.from_dict, model.get("corruption", {}))
    ensemble = _build("model.ensemble", EnsembleSpec.from_dict, model.get("ensemble", "gaussian"))
    noise = _build("model.noise", NoiseSpec.from_dict, model.get("noise", "none"))
    fcfg, gcfg = model.get("f", {"kind": "l1"}), model.get("g", {"kind": "l1"})
    _check_keys(fcfg, {"kind", "block"}, "model.f")
    _check_keys(gcfg, {"kind", "block"}, "model.g")

    proc = raw.get("procedure")
    if proc not in PROCEDURES:
        raise ConfigError("procedure", f"expected one of {PROCEDURES}, got {proc!r}")
    params = raw.get("params", {})
    _check_keys(params, _PARAM_KEYS, "params")
    scfg = raw.get("solver", {})
    _check_keys(scfg, _SOLVER_KEYS, "solver")
    solver = _build("solver", lambda: SolverConfig(trace_every=0, **{
        "tol_primal": 1e-7, "tol_dual": 1e-7, **scfg}))
    kw = {k: _num(params, k, "params") for k in _PARAM_KEYS if k in params}
    for k in ("lam", "tau1", "tau2", "tau_scale", "C_tau"):
        if k in kw and not kw[k] > 0:
            raise ConfigError(f"params.{k}", "must be positive")
    if "beta" in kw and not kw["beta"] > 1:
        raise ConfigError("params.beta", "must exceed 1")
    spec = _build(
        "model",
        ex.TrialSpec,
        proc, n, m, signal, corruption, ensemble, noise,
        fcfg.get("kind", "l1"), int(fcfg.get("block", 1)), gcfg.get("kind", "l1"), int(gcfg.get("block", 1)),
    )
    spec = replace(spec, solver=solver, success_tol=_num(raw, "success_tol", "", float, 1e-3), **kw)
    _build("model.f", make_regularizer, spec.f_kind, n, spec.f_block)
    _build("model.g", make_regularizer, spec.g_kind, m, spec.g_block)
    return spec, m_grid


# -- output helpers ----------------------------------------------------------


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if math.isfinite(v) else repr(v)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=1) + "\n")


def svg_polyline(xs, series: dict[str, list[float]], title: str, xlabel: str, ylabel: str,
                 width: int = 480, height: int = 320) -> str:
    """Minimal line chart; y axis spans [0, 1] unless data exceed it."""
    pad = 48
    xs = [float(x) for x in xs]
    ys_all = [y for ys in series.values() for y in ys if math.isfinite(y)]
    y0, y1 = min(0.0, *ys_all) if ys_all else 0.0, max(1.0, *ys_all) if ys_all else 1.0
    x0, x1 = min(xs), max(xs)
    if x1 == x0:
        x1 = x0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{pad / 2}" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">{xlabel}</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">{ylabel}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" text-anchor="end" font-size="10">{y0:g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="10">{y1:g}</text>',
        f'<text x="{pad}" y="{height - pad + 14}" text-anchor="middle" font-size="10">{x0:g}</text>',
        f'<text x="{width - pad}" y="{height - pad + 14}" text-anchor="middle" font-size="10">{x1:g}</text>',
    ]
    for i, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        parts.append(f'<text x="{width - pad}" y="{pad + 14 * (i + 1)}" text-anchor="end" '
                     f'font-size="11" fill="{c}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- commands ----------------------------------------------------------------


def _attach_bounds(cfg: RunConfig, spec: ex.TrialSpec) -> ex.TrialSpec:
    if "C" not in cfg.bounds:
        return spec
    samples = int(cfg.bounds.get("samples", 2000))
    gam = ex.cone_gamma_bound(spec, samples, cfg.seed)
    return replace(spec, C_bound=float(cfg.bounds["C"]), gamma_hat=gam)


def cmd_solve(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    spec = _attach_bounds(cfg, cfg.spec)
    recs = ex.repeated_trials(spec, cfg.trials, cfg.seed, jobs)
    ex.records_to_csv(recs, path=out / "results.csv")
    write_json(out / "results.json", {"config": cfg.raw, "trials": recs, "summary": ex.summarize(recs)[0].to_dict()})
    return 0 if all(r["converged"] for r in recs) else 2


def cmd_sweep(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    specs = [_attach_bounds(cfg, replace(cfg.spec, m=m)) for m in cfg.m_grid]
    tasks = [
        (s, trial_seed(cfg.seed, t), i, t)
        for i, s in enumerate(specs)
        for t in range(cfg.trials)
    ]
    recs = ex.run_trials(tasks, jobs)
    summ = ex.summarize(recs)
    iso = ex.isotonic_success(summ)
    ms = [c.m for c in summ]
    ex.records_to_csv(recs, path=out / "results.csv")
    write_json(out / "results.json", {
        "config": cfg.raw,
        "cells": [c.to_dict() for c in summ],
        "isotonic_success": iso,
        "m50": ex.crossing_point(ms, iso),
    })
    curves = out / "curves"
    curves.mkdir(exist_ok=True)
    (curves / "success_vs_m.svg").write_text(svg_polyline(
        ms, {"success rate": [c.success_rate for c in summ], "isotonic": list(iso)},
        f"{cfg.spec.procedure}: n={cfg.spec.n}", "m", "success rate"))
    return 0


def _geometry_task(task: dict[str, Any], idx: int, samples: int, seed: int) -> dict[str, Any]:
    where = f"geometry.tasks[{idx}]"
    _check_keys(task, {"op", "kind", "dim", "block", "sparsity", "tau", "samples"}, where)
    op = task.get("op")
    reg = _build(where, make_regularizer, task.get("kind", "l1"), int(task.get("dim", 0)), int(task.get("block", 1)))
    samples = int(task.get("samples", samples))
    s = int(task.get("sparsity", 0))
    if s > reg.nblocks:
        raise ConfigError(f"{where}.sparsity", "exceeds the number of blocks")
    anchor_vec = np.zeros(reg.dim)
    anchor_vec[: s * reg.block] = 1.0
    anchor = reg.anchor(anchor_vec)
    row: dict[str, Any] = {"op": op, "kind": reg.kind, "dim": reg.dim, "block": reg.block, "sparsity": s}
    if op == "eta_sq":
        tau = _num(task, "tau", where, float, required=True)
        if tau < 0:
            raise ConfigError(f"{where}.tau", "must be nonnegative")
        est = _build(where, geometry.mc_eta_sq, reg, tau, anchor, samples, seed)
        row.update(tau=tau, oracle=geometry.eta_sq_quadrature(reg, s, tau))
    elif op == "width_tangent":
        est = _build(where, geometry.mc_width_tangent, reg, anchor, samples, seed)
    elif op == "gamma_ball":
        _, est = _build(where, geometry.rad_and_gamma_ball, reg, samples, seed)
        row.update(oracle=geometry.gamma_ball_exact(reg))
    else:
        raise ConfigError(f"{where}.op", f"expected eta_sq, width_tangent or gamma_ball, got {op!r}")
    row.update(est.to_dict())
    return row


def cmd_geometry(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    samples = int(cfg.geometry.get("samples", 10_000))
    rows = [
        _geometry_task(t, i, samples, trial_seed(cfg.seed, i))
        for i, t in enumerate(cfg.geometry["tasks"])
    ]
    write_json(out / "results.json", {"config": cfg.raw, "estimates": rows})
    cols = ["op", "kind", "dim", "block", "sparsity", "tau", "mean", "std_error", "samples", "oracle", "config_hash"]
    ex.records_to_csv(rows, columns=tuple(cols), path=out / "results.csv")
    return 0


def _validate_deviation(d, seed):
    _check_keys(d, {"ensembles", "n", "m", "trials", "t_grid", "C_max"}, "validate.deviation")
    n, m = int(d.get("n", 8)), int(d.get("m", 8))
    ts = geometry.DeviationSet.ray(np.eye(n)[0], np.eye(m)[0])
    rows = []
    for i, ens in enumerate(d.get("ensembles", ["gaussian", "rademacher"])):
        e = _build("validate.deviation.ensembles", EnsembleSpec.from_dict, ens)
        rep = geometry.check_deviation_inequality(
            ts, e, m, tuple(d.get("t_grid", (1.0, 2.0, 3.0))), int(d.get("trials", 10_000)), trial_seed(seed, i))
        ok = rep.passed and rep.fitted_C <= float(d.get("C_max", 4.0))
        rows.append({"check": "deviation", "ensemble": e.kind, "passed": ok, **rep.to_dict()})
    return rows


def _validate_sup_ip(d, seed):
    _check_keys(d, {"ensembles", "n", "m", "trials", "t_grid"}, "validate.sup_ip")
    n, m = int(d.get("n", 64)), int(d.get("m", 32))
    reg = make_regularizer("l1", n)
    rows = []
    for i, ens in enumerate(d.get("ensembles", ["gaussian", "rademacher"])):
        e = _build("validate.sup_ip.ensembles", EnsembleSpec.from_dict, ens)
        w = geometry.rng_for(seed, 0x51, i).standard_normal(m)
        rep = geometry.check_sup_ip(e, w, reg, tuple(d.get("t_grid", (1.0, 2.0, 3.0))), int(d.get("trials", 10_000)),
                                    trial_seed(seed, 100 + i))
        rows.append({"check": "sup_ip", "ensemble": e.kind, "passed": rep.passed, **rep.to_dict()})
    return rows


def _validate_assumption1(d, seed):
    _check_keys(d, {"noise", "n", "m", "trials", "beta", "C_tau", "ensemble", "min_rate"}, "validate.assumption1")
    noise = _build("validate.assumption1.noise", NoiseSpec.from_dict, d.get("noise", {"kind": "bounded", "delta": 1.0}))
    if noise.kind == "none":
        raise ConfigError("validate.assumption1.noise", "needs a noise model")
    n, m = int(d.get("n", 64)), int(d.get("m", 32))
    spec = ex.TrialSpec("full", n, m, StructureSpec("sparse", 0), StructureSpec("sparse", 0),
                        _build("validate.assumption1.ensemble", EnsembleSpec.from_dict, d.get("ensemble", "gaussian")),
                        noise, beta=float(d.get("beta", 1.5)), C_tau=float(d.get("C_tau", 0.5)))
    _, t1, t2 = ex.resolve_penalties(spec)
    f, g = spec.regularizers()
    trials = int(d.get("trials", 10_000))
    passes = 0
    worst1 = worst2 = math.inf
    for t in range(trials):
        inst = make_instance(n, m, spec.signal, spec.corruption, spec.ensemble, noise, trial_seed(seed, t))
        r = assumption1_check(inst, f, g, t1, t2, spec.beta)
        passes += r.passed
        worst1, worst2 = min(worst1, r.margin_tau1), min(worst2, r.margin_tau2)
    rate = passes / trials
    return [{"check": "assumption1", "noise": noise.kind, "tau1": t1, "tau2": t2, "rate": rate,
             "min_margin_tau1": worst1, "min_margin_tau2": worst2,
             "passed": rate >= float(d.get("min_rate", 0.99))}]


def cmd_validate(cfg: RunConfig, out: Path, jobs: int = 1) -> int:
    _check_keys(cfg.validate, {"deviation", "sup_ip", "assumption1"}, "validate")
    rows = []
    if "deviation" in cfg.validate:
        rows += _validate_deviation(cfg.validate["deviation"], cfg.seed)
    if "sup_ip" in cfg.validate:
        rows += _validate_sup_ip(cfg.validate["sup_ip"], cfg.seed)
    if "assumption1" in cfg.validate:
        checks = cfg.validate["assumption1"]
        for i, c in enumerate(checks if isinstance(checks, list) else [checks]):
            rows += _validate_assumption1(c, trial_seed(cfg.seed, 1000 + i))
    write_json(out / "results.json", {"config": cfg.raw, "checks": rows})
    ex.records_to_csv(rows, columns=("check", "ensemble", "noise", "fitted_C", "rate", "passed"),
                      path=out / "results.csv")
    return 0 if all(r["passed"] for r in rows) else 2


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "geometry": cmd_geometry, "validate": cmd_validate}


def load_config(path, seed=None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from None
    return parse_config(raw, seed)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="corrsense", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--seed", type=int, default=None, help="override the config's base seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    p.add_argument("--out", default="out", help="output directory")
    args = p.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if cfg.experiment != args.command:
            raise ConfigError("experiment", f"config is for {cfg.experiment!r}, not {args.command!r}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, max(1, args.jobs))
    except (InvalidSpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
