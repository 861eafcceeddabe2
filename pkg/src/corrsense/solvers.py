"""First-order solvers for the four corrupted-sensing recovery programs.

======================  ==================================================
procedure               program
======================  ==================================================
``constrained_f``       min f(x)  s.t. g(v) <= g_budget, ||y-Phi x-v|| <= delta
``constrained_g``       min g(v)  s.t. f(x) <= f_budget, ||y-Phi x-v|| <= delta
``partial``             min f(x) + lam*g(v)  s.t. ||y-Phi x-v|| <= delta
``full``                min 0.5||y-Phi x-v||^2 + tau1*f(x) + tau2*g(v)
======================  ==================================================

The fully penalized program is solved by proximal gradient (FISTA with
gradient-based adaptive restart, or plain ISTA when ``accel`` is off) on the
joint variable (x, v).  The three constrained programs share one ADMM
skeleton over the splitting Phi x + v + r = y with r in the delta-ball:
a prox-linearized x-step, an exact v-step and a projection for r.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import InvalidSpecError, SolverDivergenceError
from .problem import ProblemInstance
from .regularizers import Regularizer

PROCEDURES = ("full", "partial", "constrained_f", "constrained_g")


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 50_000
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    rho: float = 1.0
    accel: bool = True
    adaptive_rho: bool = True
    # objective values are kept every ``trace_every`` iterations (0 disables)
    trace_every: int = 1

    def __post_init__(self):
        if not (self.tol_primal > 0 and self.tol_dual > 0):
            raise InvalidSpecError("solver tolerances must be positive")
        if not self.rho > 0:
            raise InvalidSpecError("rho must be positive")
        if self.max_iters < 1:
            raise InvalidSpecError("max_iters must be >= 1")


@dataclass
class SolverResult:
    x_hat: np.ndarray
    v_hat: np.ndarray
    iters: int
    converged: bool
    primal_residual: float
    dual_residual: float
    objective: float
    objective_trace: list[float] = field(default_factory=list)
    procedure: str = ""

    def joint_error(self, inst: ProblemInstance) -> float:
        dx = self.x_hat - inst.signal
        dv = self.v_hat - inst.corruption
        return float(np.sqrt(dx @ dx + dv @ dv))

    def relative_error(self, inst: ProblemInstance) -> float:
        scale = np.sqrt(inst.signal @ inst.signal + inst.corruption @ inst.corruption)
        err = self.joint_error(inst)
        return err / scale if scale > 0 else err


def operator_norm(op, iters: int = 500, tol: float = 1e-12) -> float:
    """Largest singular value of a matrix (or JointLinearMap's Phi) by power iteration."""
    if iters < 10:
        raise InvalidSpecError("power method needs at least 10 iterations")
    phi = op.sensing if isinstance(op, JointLinearMap) else np.atleast_2d(op)
    n = phi.shape[1]
    # fixed start keeps the estimate deterministic
    u = np.random.default_rng(0).standard_normal(n)
    u /= np.linalg.norm(u)
    est = 0.0
    for _ in range(iters):
        w = phi.T @ (phi @ u)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(np.sqrt(u @ w))
        u = w / nw
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    return est


class JointLinearMap:
    """The map (a, b) -> Phi a + b and its adjoint w -> (Phi^T w, w)."""

    def __init__(self, sensing):
        self.sensing = np.atleast_2d(np.asarray(sensing, dtype=float))

    @property
    def shape(self):
        m, n = self.sensing.shape
        return m, n + m

    def apply(self, a, b):
        return self.sensing @ a + b

    def adjoint(self, w):
        return self.sensing.T @ w, np.asarray(w, dtype=float).copy()

    @cached_property
    def sensing_norm(self) -> float:
        return operator_norm(self.sensing)

    @property
    def joint_norm_sq(self) -> float:
        # ||[Phi, I]||^2 = lambda_max(Phi Phi^T + I)
        return 1.0 + self.sensing_norm**2


# -- fully penalized: proximal gradient --------------------------------------


def solve_fully_penalized(
    inst: ProblemInstance,
    f: Regularizer,
    g: Regularizer,
    tau1: float,
    tau2: float,
    cfg: SolverConfig = SolverConfig(),
    x0=None,
    v0=None,
    op: JointLinearMap | None = None,
) -> SolverResult:
    """Minimise 0.5||y - Phi x - v||^2 + tau1 f(x) + tau2 g(v)."""
    if not (tau1 > 0 and tau2 > 0):
        raise InvalidSpecError("tau1 and tau2 must be positive")
    op = op or JointLinearMap(inst.sensing)
    phi, y = op.sensing, inst.observation
    # 1% head-room over the power-method estimate
    lip = 1.01 * op.joint_norm_sq
    step = 1.0 / lip
    scale = max(1.0, float(np.linalg.norm(y)))

    x = np.zeros(inst.n) if x0 is None else np.array(x0, dtype=float)
    v = np.zeros(inst.m) if v0 is None else np.array(v0, dtype=float)
    ax = phi @ x

    def objective(ax_, x_, v_):
        r = y - ax_ - v_
        return 0.5 * (r @ r) + tau1 * f.value(x_) + tau2 * g.value(v_)

    fx = objective(ax, x, v)
    best = (fx, x, v)
    trace = [fx] if cfg.trace_every else []
    ex, ev, eax = x, v, ax
    t = 1.0
    gmap = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        r = eax + ev - y
        x_new = f.prox(ex - step * (phi.T @ r), step * tau1)
        v_new = g.prox(ev - step * r, step * tau2)
        ax_new = phi @ x_new
        dx, dv = ex - x_new, ev - v_new
        gmap = lip * float(np.sqrt(dx @ dx + dv @ dv))
        f_new = objective(ax_new, x_new, v_new)
        if not np.isfinite(f_new):
            raise SolverDivergenceError(f"objective became non-finite at iteration {it}")
        if f_new < best[0]:
            best = (f_new, x_new, v_new)
        if cfg.trace_every and it % cfg.trace_every == 0:
            trace.append(f_new)

        if cfg.accel:
            # restart when the momentum direction opposes the gradient step
            if dx @ (x_new - x) + dv @ (v_new - v) > 0:
                t = 1.0
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta = (t - 1.0) / t_next
            t = t_next
            ex = x_new + beta * (x_new - x)
            ev = v_new + beta * (v_new - v)
            eax = ax_new + beta * (ax_new - ax)
        else:
            ex, ev, eax = x_new, v_new, ax_new
        x, v, ax, fx = x_new, v_new, ax_new, f_new

        if gmap <= cfg.tol_dual * scale:
            converged = True
            break

    f_best, x_best, v_best = best
    if converged:
        x_best, v_best, f_best = x, v, fx
    res = float(np.linalg.norm(y - phi @ x_best - v_best))
    return SolverResult(
        x_best, v_best, it, converged, res, gmap, float(f_best), trace, "full"
    )


# -- constrained programs: three-block ADMM ----------------------------------


def _project_l2_ball(w, radius):
    if radius == 0.0:
        return np.zeros_like(w)
    nw = np.linalg.norm(w)
    return w if nw <= radius else w * (radius / nw)


def _admm(
    phi: np.ndarray,
    y: np.ndarray,
    step_x: Callable[[np.ndarray, float], np.ndarray],
    step_v: Callable[[np.ndarray, float], np.ndarray],
    objective: Callable[[np.ndarray, np.ndarray], float],
    delta: float,
    cfg: SolverConfig,
    op: JointLinearMap,
    procedure: str,
) -> SolverResult:
    """ADMM for min F1(x) + F2(v) s.t. Phi x + v + r = y, ||r|| <= delta.

    ``step_x(w, t)`` / ``step_v(w, t)`` are the proximal maps of F1 / F2
    with parameter t.  The x-step is linearized with constant
    mu = 1.01 * ||Phi||^2 so no linear system is ever solved.
    """
    m, n = phi.shape
    mu = 1.01 * op.sensing_norm**2
    rho = cfg.rho
    ynorm = float(np.linalg.norm(y))

    x = np.zeros(n)
    v = np.zeros(m)
    r = _project_l2_ball(y, delta)
    u = np.zeros(m)
    ax = np.zeros(m)
    trace = []
    primal = dual = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        c = ax + v + r - y + u
        x_new = step_x(x - (phi.T @ c) / mu, 1.0 / (rho * mu))
        ax_new = phi @ x_new
        v_new = step_v(y - ax_new - r - u, 1.0 / rho)
        r_new = _project_l2_ball(y - ax_new - v_new - u, delta)
        res = ax_new + v_new + r_new - y
        u = u + res

        dvr = (v_new - v) + (r_new - r)
        dx_res = mu * (x_new - x) - phi.T @ (ax_new - ax) - phi.T @ dvr
        dr = r_new - r
        primal = float(np.linalg.norm(res))
        dual = rho * float(np.sqrt(dx_res @ dx_res + dr @ dr))
        x, v, r, ax = x_new, v_new, r_new, ax_new

        if not (np.isfinite(primal) and np.isfinite(dual)):
            raise SolverDivergenceError(f"ADMM iterates became non-finite at iteration {it}")
        if cfg.trace_every and it % cfg.trace_every == 0:
            trace.append(objective(x, v))

        lam = rho * u
        dual_scale = max(1.0, float(np.sqrt(np.sum((phi.T @ lam) ** 2) + lam @ lam)))
        p_rel = primal / (1.0 + ynorm)
        d_rel = dual / dual_scale
        if p_rel <= cfg.tol_primal and d_rel <= cfg.tol_dual:
            converged = True
            break
        if cfg.adaptive_rho and it % 10 == 0:
            if p_rel > 10.0 * d_rel:
                rho *= 2.0
                u /= 2.0
            elif d_rel > 10.0 * p_rel:
                rho /= 2.0
                u *= 2.0

    return SolverResult(
        x, v, it, converged, primal, dual, float(objective(x, v)), trace, procedure
    )


def _check_delta(delta):
    if delta < 0:
        raise InvalidSpecError(f"delta must be nonnegative, got {delta}")


def solve_partially_penalized(
    inst: ProblemInstance,
    f: Regularizer,
    g: Regularizer,
    lam: float,
    delta: float,
    cfg: SolverConfig = SolverConfig(),
    op: JointLinearMap | None = None,
) -> SolverResult:
    """Minimise f(x) + lam*g(v) subject to ||y - Phi x - v||_2 <= delta."""
    _check_delta(delta)
    if not lam > 0:
        raise InvalidSpecError("lambda must be positive")
    op = op or JointLinearMap(inst.sensing)
    return _admm(
        op.sensing,
        inst.observation,
        f.prox,
        lambda w, t: g.prox(w, lam * t),
        lambda x, v: f.value(x) + lam * g.value(v),
        delta,
        cfg,
        op,
        "partial",
    )


def solve_constrained_signal(
    inst: ProblemInstance,
    f: Regularizer,
    g: Regularizer,
    g_budget: float,
    delta: float,
    cfg: SolverConfig = SolverConfig(),
    op: JointLinearMap | None = None,
) -> SolverResult:
    """Minimise f(x) subject to g(v) <= g_budget and ||y - Phi x - v||_2 <= delta."""
    _check_delta(delta)
    if g_budget < 0:
        raise InvalidSpecError("g_budget must be nonnegative")
    op = op or JointLinearMap(inst.sensing)
    return _admm(
        op.sensing,
        inst.observation,
        f.prox,
        lambda w, t: g.project_ball(w, g_budget),
        lambda x, v: f.value(x),
        delta,
        cfg,
        op,
        "constrained_f",
    )


def solve_constrained_corruption(
    inst: ProblemInstance,
    f: Regularizer,
    g: Regularizer,
    f_budget: float,
    delta: float,
    cfg: SolverConfig = SolverConfig(),
    op: JointLinearMap | None = None,
) -> SolverResult:
    """Minimise g(v) subject to f(x) <= f_budget and ||y - Phi x - v||_2 <= delta."""
    _check_delta(delta)
    if f_budget < 0:
        raise InvalidSpecError("f_budget must be nonnegative")
    op = op or JointLinearMap(inst.sensing)
    return _admm(
        op.sensing,
        inst.observation,
        lambda w, t: f.project_ball(w, f_budget),
        g.prox,
        lambda x, v: g.value(v),
        delta,
        cfg,
        op,
        "constrained_g",
    )
