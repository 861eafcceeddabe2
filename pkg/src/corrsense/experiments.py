"""Seeded recovery trials, m-sweeps and their aggregation.

A trial is fully determined by its ``TrialSpec`` and integer seed, so
trials can run in any order or in parallel; aggregation sorts by
(cell, trial) and sums with ``math.fsum``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Any

import numpy as np

from . import geometry
from .bounds import (
    CSV_COLUMNS,
    error_bound_constrained,
    error_bound_full,
    realized_slack,
    required_m_constrained,
    tau_recipe_bounded,
    tau_recipe_subgaussian,
)
from .errors import InvalidSpecError
from .problem import EnsembleSpec, NoiseSpec, StructureSpec, make_instance, trial_seed
from .regularizers import make_regularizer
from .solvers import (
    PROCEDURES,
    SolverConfig,
    JointLinearMap,
    solve_constrained_corruption,
    solve_constrained_signal,
    solve_fully_penalized,
    solve_partially_penalized,
)

TRIAL_COLUMNS = CSV_COLUMNS + ("seed", "rel_error", "iters", "converged", "success")


@dataclass(frozen=True)
class TrialSpec:
    """Everything but the seed needed to generate and solve one instance.

    ``lam`` None picks the ratio of the squared-distance-minimising scales.
    ``tau1``/``tau2`` None picks them from the noise model: ``tau_scale``
    (times lambda for tau2) without noise, else the matching recipe with
    constant ``C_tau``.  ``C_bound`` enables per-trial error bounds.
    """

    procedure: str
    n: int
    m: int
    signal: StructureSpec
    corruption: StructureSpec
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    f_kind: str = "l1"
    f_block: int = 1
    g_kind: str = "l1"
    g_block: int = 1
    lam: float | None = None
    tau1: float | None = None
    tau2: float | None = None
    beta: float = 1.5
    tau_scale: float = 1e-5
    C_tau: float = 0.5
    C_bound: float | None = None
    gamma_hat: float | None = None
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(tol_primal=1e-7, tol_dual=1e-7, trace_every=0))
    success_tol: float = 1e-3

    def __post_init__(self):
        if self.procedure not in PROCEDURES:
            raise InvalidSpecError(f"unknown procedure {self.procedure!r}; expected one of {PROCEDURES}")
        if self.n < 1 or self.m < 1:
            raise InvalidSpecError("n and m must be positive")

    def regularizers(self):
        return make_regularizer(self.f_kind, self.n, self.f_block), make_regularizer(self.g_kind, self.m, self.g_block)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["signal"] = self.signal.to_dict()
        d["corruption"] = self.corruption.to_dict()
        d["ensemble"] = self.ensemble.to_dict()
        d["noise"] = self.noise.to_dict()
        return d


@lru_cache(maxsize=256)
def _optimal_scale(kind, dim, block, sparsity):
    return geometry.optimal_scale(make_regularizer(kind, dim, block), sparsity)[0]


def default_lambda(spec: TrialSpec) -> float:
    """lambda = tau_g* / tau_f*, the ratio of the squared-distance minimisers."""
    tf = _optimal_scale(spec.f_kind, spec.n, spec.f_block, spec.signal.sparsity)
    tg = _optimal_scale(spec.g_kind, spec.m, spec.g_block, spec.corruption.sparsity)
    if tf <= 0 or tg <= 0:
        return 1.0
    return float(tg / tf)


@lru_cache(maxsize=256)
def _gamma_ball(kind, dim, block):
    return geometry.gamma_ball_exact(make_regularizer(kind, dim, block))


def resolve_penalties(spec: TrialSpec) -> tuple[float, float, float]:
    """(lambda, tau1, tau2) actually used for ``spec``."""
    lam = spec.lam if spec.lam is not None else default_lambda(spec)
    if spec.tau1 is not None and spec.tau2 is not None:
        return lam, float(spec.tau1), float(spec.tau2)
    f, g = spec.regularizers()
    K = spec.ensemble.subgaussian_K
    nz = spec.noise
    if nz.kind == "none" or (nz.kind == "bounded" and nz.delta == 0):
        t1, t2 = spec.tau_scale, lam * spec.tau_scale
    elif nz.kind == "bounded":
        t1, t2 = tau_recipe_bounded(
            nz.delta, spec.m, K, spec.beta, spec.C_tau,
            _gamma_ball(spec.f_kind, spec.n, spec.f_block), f.ball_radius_r(), g.ball_radius_r(),
        )
    else:
        t1, t2 = tau_recipe_subgaussian(
            K, nz.L, spec.m, spec.beta, spec.C_tau,
            _gamma_ball(spec.f_kind, spec.n, spec.f_block), f.ball_radius_r(),
            _gamma_ball(spec.g_kind, spec.m, spec.g_block), g.ball_radius_r(),
        )
    return lam, float(spec.tau1 if spec.tau1 is not None else t1), float(spec.tau2 if spec.tau2 is not None else t2)


def noise_radius(inst) -> float:
    """delta handed to the constrained programs: the model bound, or ||z|| for unbounded noise."""
    nz = inst.noise_model
    if nz.kind == "bounded":
        return float(nz.delta)
    if nz.kind == "none":
        return 0.0
    return float(np.linalg.norm(inst.noise))


def solve_instance(spec: TrialSpec, inst, lam, tau1, tau2):
    f, g = spec.regularizers()
    op = JointLinearMap(inst.sensing)
    delta = noise_radius(inst)
    if spec.procedure == "full":
        return solve_fully_penalized(inst, f, g, tau1, tau2, spec.solver, op=op)
    if spec.procedure == "partial":
        return solve_partially_penalized(inst, f, g, lam, delta, spec.solver, op)
    if spec.procedure == "constrained_f":
        return solve_constrained_signal(inst, f, g, g.value(inst.corruption), delta, spec.solver, op)
    return solve_constrained_corruption(inst, f, g, f.value(inst.signal), delta, spec.solver, op)


def run_trial(spec: TrialSpec, seed: int) -> dict[str, Any]:
    inst = make_instance(spec.n, spec.m, spec.signal, spec.corruption, spec.ensemble, spec.noise, seed)
    lam, tau1, tau2 = resolve_penalties(spec)
    res = solve_instance(spec, inst, lam, tau1, tau2)
    err = float(res.joint_error(inst))
    rel = float(res.relative_error(inst))
    rec: dict[str, Any] = {
        "procedure": spec.procedure,
        "n": spec.n,
        "m": spec.m,
        "s": spec.signal.sparsity,
        "k": spec.corruption.sparsity,
        "delta": noise_radius(inst),
        "lambda": lam if spec.procedure == "partial" else "",
        "tau1": tau1 if spec.procedure == "full" else "",
        "tau2": tau2 if spec.procedure == "full" else "",
        "beta": spec.beta if spec.procedure == "full" else "",
        "gamma_hat": "",
        "m_required": "",
        "error_bound": "",
        "error_observed": err,
        "satisfied": "",
        "seed": int(seed),
        "rel_error": rel,
        "iters": res.iters,
        "converged": bool(res.converged),
        "success": bool(rel <= spec.success_tol),
    }
    if spec.C_bound is not None and spec.gamma_hat is not None:
        rec.update(_bound_fields(spec, rec, tau1, tau2))
    return rec


def _bound_fields(spec: TrialSpec, rec, tau1, tau2) -> dict[str, Any]:
    K = spec.ensemble.subgaussian_K
    eps = realized_slack(spec.m, spec.gamma_hat, spec.C_bound, K)
    out = {
        "gamma_hat": spec.gamma_hat,
        "m_required": required_m_constrained(spec.gamma_hat, spec.C_bound, K, max(eps, 0.0)),
        "satisfied": eps > 0,
    }
    if eps <= 0:
        out["error_bound"] = math.inf
    elif spec.procedure == "full":
        f, g = spec.regularizers()
        out["error_bound"] = error_bound_full(
            spec.m, spec.beta, tau1, tau2, f.compatibility_alpha(), g.compatibility_alpha(), eps
        )
    else:
        out["error_bound"] = error_bound_constrained(spec.m, rec["delta"], eps)
    return out


# -- geometry plug-ins -------------------------------------------------------


def _anchor(reg, sparsity):
    w = np.zeros(reg.dim)
    w[: sparsity * reg.block] = 1.0
    return reg.anchor(w)


def cone_gamma_bound(spec: TrialSpec, samples: int = 4000, seed: int = 0) -> float:
    """Plug-in complexity bound of the procedure's error cone at (spec.n, spec.m).

    Widths and squared distances only depend on the number of active
    blocks, so a canonical support is used.
    """
    f, g = spec.regularizers()
    af, ag = _anchor(f, spec.signal.sparsity), _anchor(g, spec.corruption.sparsity)
    if spec.procedure in ("constrained_f", "constrained_g"):
        return geometry.gamma_bound_C1(
            geometry.mc_width_tangent(f, af, samples, seed), geometry.mc_width_tangent(g, ag, samples, seed + 1)
        )
    lam, tau1, tau2 = resolve_penalties(spec)
    if spec.procedure == "partial":
        l1 = _optimal_scale(spec.f_kind, spec.n, spec.f_block, spec.signal.sparsity) or 1.0
        return geometry.gamma_bound_C2(
            geometry.mc_eta_sq(f, l1, af, samples, seed), geometry.mc_eta_sq(g, lam * l1, ag, samples, seed + 1)
        )
    return geometry.gamma_bound_C3(
        geometry.mc_eta_sq(f, tau1, af, samples, seed),
        geometry.mc_eta_sq(g, tau2, ag, samples, seed + 1),
        tau1, tau2, f.compatibility_alpha(), g.compatibility_alpha(), spec.beta,
    )


def predicted_threshold(spec: TrialSpec, C: float, samples: int = 4000, seed: int = 0, iters: int = 50) -> float:
    """Fixed point m = (C K^2 gamma(m))^2 of the sample-size condition with eps = 0."""
    K2 = spec.ensemble.subgaussian_K ** 2
    m = float(spec.m)
    for _ in range(iters):
        mi = max(1, int(round(m)))
        new = (C * K2 * cone_gamma_bound(replace(spec, m=mi), samples, seed)) ** 2
        if abs(new - m) < 0.5:
            return new
        m = new
    return m


# -- trials in bulk ----------------------------------------------------------


def _run_one(args):
    spec, seed, cell, trial = args
    rec = run_trial(spec, seed)
    rec["cell"], rec["trial"] = cell, trial
    return rec


def run_trials(tasks, jobs: int = 1) -> list[dict[str, Any]]:
    """Run (spec, seed, cell, trial) tasks; output sorted by (cell, trial)."""
    tasks = list(tasks)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            recs = list(ex.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        recs = [_run_one(t) for t in tasks]
    return sorted(recs, key=lambda r: (r["cell"], r["trial"]))


def repeated_trials(spec: TrialSpec, trials: int, base_seed: int, jobs: int = 1, cell: int = 0):
    return run_trials(((spec, trial_seed(base_seed, t), cell, t) for t in range(trials)), jobs)


def sweep_m(spec: TrialSpec, m_grid, trials: int, base_seed: int, jobs: int = 1):
    """Trials at each m.

    Trial t uses seed trial_seed(base_seed, t) in every cell (common random
    numbers), so a single-cell sweep reproduces ``repeated_trials``.
    """
    if not len(m_grid):
        raise InvalidSpecError("m grid must be non-empty")
    tasks = [
        (replace(spec, m=int(m)), trial_seed(base_seed, t), i, t)
        for i, m in enumerate(m_grid)
        for t in range(trials)
    ]
    return run_trials(tasks, jobs)


@dataclass(frozen=True)
class CellSummary:
    m: int
    trials: int
    success_rate: float
    success_se: float
    mean_error: float
    mean_rel_error: float
    mean_iters: float
    converged_rate: float

    def to_dict(self):
        return asdict(self)


def summarize(records) -> list[CellSummary]:
    cells: dict[int, list] = {}
    for r in records:
        cells.setdefault(r["cell"], []).append(r)
    out = []
    for c in sorted(cells):
        rs = cells[c]
        n = len(rs)
        p = sum(bool(r["success"]) for r in rs) / n
        out.append(
            CellSummary(
                int(rs[0]["m"]),
                n,
                p,
                math.sqrt(p * (1 - p) / n),
                math.fsum(r["error_observed"] for r in rs) / n,
                math.fsum(r["rel_error"] for r in rs) / n,
                math.fsum(r["iters"] for r in rs) / n,
                sum(bool(r["converged"]) for r in rs) / n,
            )
        )
    return out


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def records_to_csv(records, columns=TRIAL_COLUMNS, path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow({c: _fmt(r.get(c, "")) for c in columns})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def isotonic_success(summaries) -> np.ndarray:
    """Non-decreasing least-squares fit of success rate against m."""
    from scipy.optimize import isotonic_regression

    rates = np.array([s.success_rate for s in summaries])
    weights = np.array([s.trials for s in summaries], dtype=float)
    return isotonic_regression(rates, weights=weights, increasing=True).x


def crossing_point(ms, rates, level: float = 0.5) -> float:
    """m at which the (monotone) rate curve first reaches ``level``, by linear interpolation."""
    ms = np.asarray(ms, dtype=float)
    rates = np.asarray(rates, dtype=float)
    idx = np.flatnonzero(rates >= level)
    if idx.size == 0:
        return math.inf
    i = idx[0]
    if i == 0:
        return float(ms[0])
    m0, m1, r0, r1 = ms[i - 1], ms[i], rates[i - 1], rates[i]
    return float(m0 + (level - r0) * (m1 - m0) / (r1 - r0))
