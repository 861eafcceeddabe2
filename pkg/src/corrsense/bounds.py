"""Sample-size conditions, error bounds and regularization recipes.

All constants C are supplied by the caller (fitted empirically, see
``calibrate_constant``); nothing here hard-codes a universal constant.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import InvalidSpecError
from .problem import ProblemInstance
from .regularizers import Regularizer

CSV_COLUMNS = (
    "procedure", "n", "m", "s", "k", "delta", "lambda", "tau1", "tau2", "beta",
    "gamma_hat", "m_required", "error_bound", "error_observed", "satisfied",
)


def _check_beta(beta):
    if not beta > 1:
        raise InvalidSpecError(f"beta must exceed 1, got {beta}")


def _required_m(gamma, C_fit, K, epsilon) -> float:
    if min(gamma, C_fit, K, epsilon) < 0:
        raise InvalidSpecError("gamma, C, K and epsilon must be nonnegative")
    return float((C_fit * K * K * gamma + epsilon) ** 2)


def required_m_constrained(gamma_c1, C_fit, K, epsilon) -> float:
    """(C K^2 gamma(C1) + eps)^2 measurements for either constrained program."""
    return _required_m(gamma_c1, C_fit, K, epsilon)


def required_m_partial(gamma_c2, C_fit, K, epsilon) -> float:
    return _required_m(gamma_c2, C_fit, K, epsilon)


def required_m_full(gamma_c3, C_fit, K, epsilon) -> float:
    return _required_m(gamma_c3, C_fit, K, epsilon)


def realized_slack(m, gamma, C_fit, K) -> float:
    """eps = sqrt(m) - C K^2 gamma, the margin left by m measurements."""
    return float(math.sqrt(m) - C_fit * K * K * gamma)


def error_bound_constrained(m, delta, epsilon) -> float:
    """2 delta sqrt(m) / eps."""
    if not epsilon > 0:
        raise InvalidSpecError(f"epsilon must be positive, got {epsilon}")
    if delta < 0:
        raise InvalidSpecError("delta must be nonnegative")
    return float(2.0 * delta * math.sqrt(m) / epsilon)


def error_bound_partial(m, delta, epsilon) -> float:
    return error_bound_constrained(m, delta, epsilon)


def error_bound_full(m, beta, tau1, tau2, alpha_f, alpha_g, epsilon) -> float:
    """2 m (beta+1)/beta (tau1 alpha_f + tau2 alpha_g) / eps^2."""
    _check_beta(beta)
    if not epsilon > 0:
        raise InvalidSpecError(f"epsilon must be positive, got {epsilon}")
    return float(2.0 * m * (beta + 1.0) / beta * (tau1 * alpha_f + tau2 * alpha_g) / epsilon**2)


def tau_recipe_bounded(delta, m, K, beta, C_fit, gamma_Bf, r_f, r_g) -> tuple[float, float]:
    """Penalties for noise with ||z|| <= delta.

    tau1 = beta C K delta / sqrt(m) * (gamma(B_f) + sqrt(m) r_f), tau2 = beta delta r_g.
    """
    _check_beta(beta)
    sm = math.sqrt(m)
    return (
        float(beta * C_fit * K * delta / sm * (gamma_Bf + sm * r_f)),
        float(beta * delta * r_g),
    )


def tau_recipe_subgaussian(K, L, m, beta, C_fit, gamma_Bf, r_f, gamma_Bg, r_g) -> tuple[float, float]:
    """Penalties for i.i.d. noise with psi_2 norm L.

    tau1 = C K (1+L^2) beta (gamma(B_f) + sqrt(m) r_f),
    tau2 = C L beta (gamma(B_g) + sqrt(m) r_g).
    """
    _check_beta(beta)
    sm = math.sqrt(m)
    return (
        float(C_fit * K * (1.0 + L * L) * beta * (gamma_Bf + sm * r_f)),
        float(C_fit * L * beta * (gamma_Bg + sm * r_g)),
    )


@dataclass(frozen=True)
class Assumption1Report:
    passed: bool
    margin_tau1: float
    margin_tau2: float
    f_dual: float
    g_dual: float


def assumption1_check(inst: ProblemInstance, f: Regularizer, g: Regularizer, tau1, tau2, beta) -> Assumption1Report:
    """Check tau1 >= beta f*(Phi^T z) and tau2 >= beta g*(z) on the instance's noise."""
    _check_beta(beta)
    fd = float(f.dual_value(inst.sensing.T @ inst.noise))
    gd = float(g.dual_value(inst.noise))
    m1 = float(tau1 - beta * fd)
    m2 = float(tau2 - beta * gd)
    return Assumption1Report(m1 >= 0 and m2 >= 0, m1, m2, fd, gd)


def calibrate_constant(
    success_rate: Callable[[int], float],
    gamma: float,
    K: float,
    lo: float = 0.0,
    hi: float = 4.0,
    target: float = 0.95,
    iters: int = 12,
) -> float:
    """Smallest C (to bisection accuracy) with success_rate(ceil((C K^2 gamma)^2)) >= target.

    ``success_rate`` maps a measurement count to an empirical recovery rate
    and is assumed nondecreasing.  ``hi`` is doubled until it succeeds.
    """
    if gamma <= 0 or K <= 0:
        raise InvalidSpecError("gamma and K must be positive")

    def m_of(c):
        return max(1, math.ceil((c * K * K * gamma) ** 2))

    for _ in range(20):
        if success_rate(m_of(hi)) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise InvalidSpecError("no constant reaches the target success rate")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if m_of(mid) == m_of(hi):
            hi = mid
            continue
        if success_rate(m_of(mid)) >= target:
            hi = mid
        else:
            lo = mid
    return float(hi)


@dataclass
class BoundReport:
    procedure: str
    n: int
    m: int
    s: int
    k: int
    delta: float
    gamma_hat: float
    m_required: float
    epsilon: float
    error_bound: float
    error_observed: float = float("nan")
    lam: float | None = None
    tau1: float | None = None
    tau2: float | None = None
    beta: float | None = None
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        # m_required at the realized slack equals m up to rounding; test the slack itself
        return self.epsilon > 0

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["satisfied"] = self.satisfied
        return d

    def csv_row(self) -> dict[str, Any]:
        d = self.to_dict()
        d["lambda"] = d.pop("lam")
        return {c: ("" if d[c] is None else d[c]) for c in CSV_COLUMNS}


def bound_report(
    procedure: str,
    inst: ProblemInstance,
    gamma_hat: float,
    C_fit: float,
    *,
    delta: float = 0.0,
    error_observed: float = float("nan"),
    lam=None,
    tau1=None,
    tau2=None,
    beta=None,
    alpha_f: float = 1.0,
    alpha_g: float = 1.0,
) -> BoundReport:
    """Evaluate the sample-size condition and error bound at the realized slack."""
    K = inst.ensemble.subgaussian_K
    m = inst.m
    eps = realized_slack(m, gamma_hat, C_fit, K)
    eps_req = max(eps, 0.0)
    m_req = _required_m(gamma_hat, C_fit, K, eps_req)
    if eps <= 0:
        err = float("inf")
    elif procedure == "full":
        err = error_bound_full(m, beta, tau1, tau2, alpha_f, alpha_g, eps)
    else:
        err = error_bound_constrained(m, delta, eps)
    s = int(np.count_nonzero(inst.signal))
    k = int(np.count_nonzero(inst.corruption))
    return BoundReport(
        procedure, inst.n, m, s, k, float(delta), float(gamma_hat), m_req, eps, err,
        float(error_observed), lam, tau1, tau2, beta, {"C": C_fit, "K": K},
    )


def reports_to_csv(reports, path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row() if isinstance(r, BoundReport) else {c: r.get(c, "") for c in CSV_COLUMNS})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
