import numpy as np
import pytest

from corrsense.errors import InvalidSpecError
from corrsense.problem import EnsembleSpec, NoiseSpec, StructureSpec, assemble, make_instance
from corrsense.regularizers import make_regularizer
from corrsense.solvers import (
    JointLinearMap,
    SolverConfig,
    operator_norm,
    solve_constrained_corruption,
    solve_constrained_signal,
    solve_fully_penalized,
    solve_partially_penalized,
)

cp = pytest.importorskip("cvxpy")

TIGHT = SolverConfig(tol_primal=1e-10, tol_dual=1e-10, max_iters=200_000)


def scalar_instance(y):
    return assemble(np.eye(1), np.array([y]), np.zeros(1), np.zeros(1))


def l1(d):
    return make_regularizer("l1", d)


def cs_instance(n=128, m=64, s=4, k=3, seed=0, noise=NoiseSpec()):
    return make_instance(n, m, StructureSpec("sparse", s), StructureSpec("sparse", k), EnsembleSpec(), noise, seed)


# -- linear map --------------------------------------------------------------------


def test_operator_norm_examples():
    assert operator_norm(np.eye(5)) == pytest.approx(1.0)
    assert operator_norm(np.diag([3.0, 1.0])) == pytest.approx(3.0)
    a = np.random.default_rng(0).standard_normal((100, 80))
    assert operator_norm(a) == pytest.approx(np.linalg.svd(a, compute_uv=False)[0], rel=0.01)
    with pytest.raises(InvalidSpecError):
        operator_norm(a, iters=5)


def test_adjoint_identity():
    rng = np.random.default_rng(1)
    op = JointLinearMap(rng.standard_normal((30, 50)))
    for _ in range(20):
        a, b, w = rng.standard_normal(50), rng.standard_normal(30), rng.standard_normal(30)
        at, bt = op.adjoint(w)
        assert op.apply(a, b) @ w == pytest.approx(a @ at + b @ bt, abs=1e-10)
    assert op.joint_norm_sq == pytest.approx(1 + np.linalg.svd(op.sensing, compute_uv=False)[0] ** 2, rel=1e-6)


def test_config_validation():
    with pytest.raises(InvalidSpecError):
        SolverConfig(tol_primal=0)
    with pytest.raises(InvalidSpecError):
        SolverConfig(rho=-1)


# -- fully penalized ---------------------------------------------------------------


def test_full_large_penalty_gives_zero():
    inst = cs_instance()
    res = solve_fully_penalized(inst, l1(128), l1(64), 1e6, 1e6)
    assert np.all(res.x_hat == 0) and np.all(res.v_hat == 0)


def test_full_scalar_grid_oracle():
    inst = scalar_instance(4.0)
    res = solve_fully_penalized(inst, l1(1), l1(1), 0.5, 0.5, TIGHT)
    xs = np.linspace(-1, 5, 1201)
    X, V = np.meshgrid(xs, xs)
    grid = 0.5 * (4 - X - V) ** 2 + 0.5 * np.abs(X) + 0.5 * np.abs(V)
    # a coarse grid brackets the minimum; the minimiser set is x + v = 3.5
    assert grid.min() == pytest.approx(1.875, abs=1e-6)
    assert res.objective == pytest.approx(1.875, abs=1e-6)


def test_full_orthogonal_design_is_soft_threshold():
    n = 64
    rng = np.random.default_rng(2)
    x = np.zeros(n)
    x[5] = 3.0
    inst = assemble(np.eye(n), x, np.zeros(n), 0.1 * rng.standard_normal(n))
    tau = 0.4
    # with tau2 > tau1 the corruption stays at zero coordinatewise
    res = solve_fully_penalized(inst, l1(n), l1(n), tau, 2 * tau, TIGHT)
    np.testing.assert_allclose(res.x_hat, l1(n).prox(inst.observation, tau), atol=1e-7)
    np.testing.assert_allclose(res.v_hat, 0.0, atol=1e-7)


def test_full_monotone_without_momentum():
    inst = cs_instance(noise=NoiseSpec("subgaussian"))
    cfg = SolverConfig(accel=False, max_iters=300, trace_every=1)
    res = solve_fully_penalized(inst, l1(128), l1(64), 0.5, 0.5, cfg)
    tr = np.array(res.objective_trace)
    assert np.all(np.diff(tr) <= 1e-10 * np.abs(tr[:-1]))


def test_full_rejects_nonpositive_tau():
    with pytest.raises(InvalidSpecError):
        solve_fully_penalized(cs_instance(), l1(128), l1(64), 0.0, 1.0)


def test_full_matches_cvxpy():
    inst = cs_instance(n=8, m=4, s=1, k=1, seed=3, noise=NoiseSpec("subgaussian"))
    t1, t2 = 0.3, 0.2
    res = solve_fully_penalized(inst, l1(8), l1(4), t1, t2, TIGHT)
    x, v = cp.Variable(8), cp.Variable(4)
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(inst.observation - inst.sensing @ x - v)
                                  + t1 * cp.norm1(x) + t2 * cp.norm1(v)))
    prob.solve()
    assert res.converged
    assert res.objective == pytest.approx(prob.value, abs=1e-6)


# -- ADMM programs --------------------------------------------------------------------


def test_partial_large_delta_zero():
    inst = cs_instance(noise=NoiseSpec("subgaussian"))
    delta = np.linalg.norm(inst.observation) * 1.01
    res = solve_partially_penalized(inst, l1(128), l1(64), 1.0, delta)
    assert res.objective == pytest.approx(0.0, abs=1e-8)


def test_partial_exact_recovery_without_corruption():
    inst = cs_instance(n=128, m=64, s=4, k=0, seed=4)
    res = solve_partially_penalized(inst, l1(128), l1(64), 1.0, 0.0)
    assert res.converged
    assert res.relative_error(inst) <= 1e-4


def test_partial_scalar():
    inst = scalar_instance(2.0)
    res = solve_partially_penalized(inst, l1(1), l1(1), 1.0, 0.0, TIGHT)
    assert res.objective == pytest.approx(2.0, abs=1e-6)


def test_partial_rejects_bad_args():
    inst = cs_instance()
    with pytest.raises(InvalidSpecError):
        solve_partially_penalized(inst, l1(128), l1(64), 1.0, -0.1)
    with pytest.raises(InvalidSpecError):
        solve_partially_penalized(inst, l1(128), l1(64), 0.0, 0.1)


def test_constrained_signal_basis_pursuit():
    inst = cs_instance(n=128, m=64, s=4, k=0, seed=5)
    res = solve_constrained_signal(inst, l1(128), l1(64), 0.0, 0.0)
    assert res.relative_error(inst) <= 1e-4
    assert np.all(res.v_hat == 0)


def test_constrained_signal_loose_budget_zero():
    inst = cs_instance(seed=6)
    g = l1(64)
    res = solve_constrained_signal(inst, l1(128), g, g.value(inst.observation), 0.0)
    assert res.objective == pytest.approx(0.0, abs=1e-7)
    np.testing.assert_allclose(res.v_hat, inst.observation, atol=1e-6)


def test_constrained_corruption_mirror():
    inst = cs_instance(seed=7, s=0, k=3)
    res = solve_constrained_corruption(inst, l1(128), l1(64), 0.0, 0.0)
    assert np.all(res.x_hat == 0)
    np.testing.assert_allclose(res.v_hat, inst.observation, atol=1e-6)
    inst2 = cs_instance(seed=8, s=0, k=3)
    # budget large enough for x alone to explain y, so v = 0 is optimal
    x_ls = np.linalg.pinv(inst2.sensing) @ inst2.observation
    res2 = solve_constrained_corruption(inst2, l1(128), l1(64), 2 * l1(128).value(x_ls), 0.0)
    assert res2.objective == pytest.approx(0.0, abs=1e-7)


def test_swap_feasibility():
    inst = cs_instance(seed=9, noise=NoiseSpec("bounded", 0.2))
    f, g = l1(128), l1(64)
    a = solve_constrained_signal(inst, f, g, g.value(inst.corruption), 0.2, TIGHT)
    b = solve_constrained_corruption(inst, f, g, f.value(a.x_hat), 0.2, TIGHT)
    # the first solution is feasible for the second program, so it cannot do worse
    assert b.objective <= g.value(a.v_hat) + 1e-6
    assert np.linalg.norm(inst.observation - inst.sensing @ a.x_hat - a.v_hat) <= 0.2 + 1e-6


@pytest.mark.parametrize("procedure", ["partial", "constrained_f", "constrained_g"])
def test_admm_matches_cvxpy(procedure):
    inst = cs_instance(n=8, m=4, s=1, k=1, seed=10, noise=NoiseSpec("bounded", 0.3))
    f, g = l1(8), l1(4)
    x, v = cp.Variable(8), cp.Variable(4)
    cons = [cp.norm(inst.observation - inst.sensing @ x - v) <= 0.3]
    if procedure == "partial":
        res = solve_partially_penalized(inst, f, g, 0.7, 0.3, TIGHT)
        obj = cp.norm1(x) + 0.7 * cp.norm1(v)
    elif procedure == "constrained_f":
        budget = g.value(inst.corruption)
        res = solve_constrained_signal(inst, f, g, budget, 0.3, TIGHT)
        obj, cons = cp.norm1(x), cons + [cp.norm1(v) <= budget]
    else:
        budget = f.value(inst.signal)
        res = solve_constrained_corruption(inst, f, g, budget, 0.3, TIGHT)
        obj, cons = cp.norm1(v), cons + [cp.norm1(x) <= budget]
    prob = cp.Problem(cp.Minimize(obj), cons)
    prob.solve()
    assert res.converged
    assert res.objective == pytest.approx(prob.value, abs=1e-5)
    resid = np.linalg.norm(inst.observation - inst.sensing @ res.x_hat - res.v_hat)
    assert resid <= 0.3 + 1e-6


def test_programs_agree_when_recovery_exact():
    inst = cs_instance(n=128, m=96, s=3, k=3, seed=11)
    f, g = l1(128), l1(96)
    cfg = SolverConfig(tol_primal=1e-9, tol_dual=1e-9)
    sols = [
        solve_fully_penalized(inst, f, g, 1e-6, 1e-6, cfg),
        solve_partially_penalized(inst, f, g, 1.0, 0.0, cfg),
        solve_constrained_signal(inst, f, g, g.value(inst.corruption), 0.0, cfg),
        solve_constrained_corruption(inst, f, g, f.value(inst.signal), 0.0, cfg),
    ]
    for i in range(4):
        for j in range(i):
            d = np.sqrt(np.sum((sols[i].x_hat - sols[j].x_hat) ** 2) + np.sum((sols[i].v_hat - sols[j].v_hat) ** 2))
            assert d <= 1e-3


def test_scaling_equivariance():
    inst = cs_instance(seed=12, noise=NoiseSpec("bounded", 0.1))
    c = 3.0
    scaled = assemble(inst.sensing, c * inst.signal, c * inst.corruption, c * inst.noise)
    f, g = l1(128), l1(64)
    a = solve_partially_penalized(inst, f, g, 0.9, 0.1, TIGHT)
    b = solve_partially_penalized(scaled, f, g, 0.9, c * 0.1, TIGHT)
    np.testing.assert_allclose(b.x_hat, c * a.x_hat, atol=1e-5)
    a2 = solve_fully_penalized(inst, f, g, 0.2, 0.2, TIGHT)
    b2 = solve_fully_penalized(scaled, f, g, c * 0.2, c * 0.2, TIGHT)
    np.testing.assert_allclose(b2.v_hat, c * a2.v_hat, atol=1e-5)


def test_deterministic():
    inst = cs_instance(seed=13)
    a = solve_partially_penalized(inst, l1(128), l1(64), 0.9, 0.0)
    b = solve_partially_penalized(inst, l1(128), l1(64), 0.9, 0.0)
    assert np.array_equal(a.x_hat, b.x_hat) and a.iters == b.iters


def test_block_norm_recovery():
    inst = make_instance(96, 80, StructureSpec("block-sparse", 2, block_size=4, amplitude="gaussian"),
                         StructureSpec("sparse", 3), seed=14)
    f = make_regularizer("block_l1l2", 96, 4)
    res = solve_partially_penalized(inst, f, l1(80), 0.8, 0.0)
    assert res.relative_error(inst) <= 1e-4
