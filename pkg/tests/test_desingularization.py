import numpy as np
import pytest

from singulo.desing import desing_step, gamma_apply, initial_step, run_chain
from singulo.errors import CommutativityViolated, NotPSD, OrderExceeded
from singulo.linstep import lsim_exact
from singulo.lq import LQProblem, normalize_controls
from singulo.signals import SampledSignal, iterated_primitive


def make_problem(A, B, P, Q, R, x0=None, xT=None, T=1.0):
    n = np.atleast_2d(np.asarray(A, float)).shape[0]
    return LQProblem(A=A, B=B, P=P, Q=Q, R=R, horizon=T,
                     x0=np.zeros(n) if x0 is None else x0,
                     xT=np.zeros(n) if xT is None else xT)


SCALAR = make_problem([[0.0]], [[1.0]], [[1.0]], [[0.0]], [[0.0]])
DBLINT_P_SING = make_problem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]],
                             [[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0]], [[0.0]])
DBLINT_P_FULL = make_problem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]],
                             np.eye(2), [[0.0, 0.0]], [[0.0]])


def test_step_scalar_blocks():
    step = desing_step(initial_step(normalize_controls(SCALAR)), SCALAR.A, SCALAR.P)
    assert np.allclose(step.B_diag[1], [[0.0]])
    assert np.allclose(step.Q_diag[1], [[1.0]])
    assert np.allclose(step.R_diag[1], [[1.0]])


def test_step_double_integrator_full_P():
    step = desing_step(initial_step(normalize_controls(DBLINT_P_FULL)),
                       DBLINT_P_FULL.A, DBLINT_P_FULL.P)
    assert np.allclose(step.B_diag[1], [[1.0], [0.0]])
    assert np.allclose(step.Q_diag[1], [[0.0, 1.0]])
    assert np.allclose(step.R_diag[1], [[1.0]])


def test_step_commutativity_violation():
    p = make_problem(np.zeros((2, 2)), np.eye(2), np.eye(2),
                     [[0.0, 1.0], [-1.0, 0.0]], np.zeros((2, 2)))
    with pytest.raises(CommutativityViolated):
        desing_step(initial_step(normalize_controls(p)), p.A, p.P)


def test_step_not_psd():
    # pure cross cost: the candidate reduced weight is indefinite
    p = make_problem([[0.0]], [[1.0]], [[-1.0]], [[0.0]], [[0.0]])
    with pytest.raises(NotPSD):
        desing_step(initial_step(normalize_controls(p)), p.A, p.P)


def test_chain_regular_problem():
    p = make_problem([[0.0]], [[1.0]], [[1.0]], [[0.0]], [[2.0]])
    chain = run_chain(normalize_controls(p))
    assert chain.r == 0
    assert chain.jump_basis.shape == (1, 0)
    assert chain.jump_labels == ()


def test_chain_scalar():
    chain = run_chain(normalize_controls(SCALAR))
    assert chain.r == 1
    assert chain.group_sizes == (0, 1)
    assert np.allclose(chain.jump_basis, [[1.0]])
    assert chain.m == 1 and chain.p == 1


def test_chain_double_integrator_two_levels():
    chain = run_chain(normalize_controls(DBLINT_P_SING))
    assert chain.r == 2
    assert chain.group_sizes == (0, 0, 1)
    # level-1 weight is zero (empty group), level-2 weight is one
    assert chain.R[1].shape == (0, 0)
    assert np.allclose(chain.R[2], [[1.0]])
    assert np.allclose(chain.B[(0, 2)], [[0.0], [1.0]])
    assert np.allclose(chain.B[(1, 2)], [[1.0], [0.0]])
    assert chain.m == 2 and chain.p == 2 and chain.stratum_dim == 0


def test_chain_order_exceeded_for_degenerate_cost():
    # zero state cost: the recursion never produces a positive weight
    p = make_problem([[0.0]], [[1.0]], [[0.0]], [[0.0]], [[0.0]])
    with pytest.raises(OrderExceeded):
        run_chain(normalize_controls(p))


@pytest.mark.parametrize("seed", range(5))
def test_state_quadratic_cost_gives_order_one(seed):
    rng = np.random.default_rng(seed)
    n, k = 4, 2
    M = rng.standard_normal((n, n))
    P = M @ M.T + 0.5 * np.eye(n)
    B = rng.standard_normal((n, k))
    p = make_problem(rng.standard_normal((n, n)), B, P, np.zeros((k, n)),
                     np.zeros((k, k)))
    chain = run_chain(normalize_controls(p))
    assert chain.r == 1
    # the resolved weight is congruent to B'PB (same control-basis rotation)
    W = chain.control_map[:, chain.group_slice(1)]
    assert np.linalg.norm(chain.R[1] - W.T @ (B.T @ P @ B) @ W) <= 1e-10 * np.linalg.norm(P)
    assert chain.r <= n


def _trajectory_identity_error(problem, chain, u):
    Bg, _, _ = chain.level0_blocks()
    x = lsim_exact(problem.A, Bg, u.values, u.dt, problem.x0)
    v = gamma_apply(chain, u)
    Br, _, _ = chain.reduced_blocks()
    xr = lsim_exact(problem.A, Br, v.values, u.dt, problem.x0)
    recon = xr.copy()
    for (i, j) in chain.jump_labels:
        sl = chain.group_slice(j)
        prim = iterated_primitive(SampledSignal(u.values[:, sl], u.dt), i + 1).values
        recon += prim @ chain.B[(i, j)].T
    return float(np.max(np.abs(x - recon)))


def test_trajectory_identity_double_integrator():
    chain = run_chain(normalize_controls(DBLINT_P_SING))
    n = 4096
    dt = 1.0 / n
    t = dt * np.arange(n + 1)
    u = SampledSignal((np.sin(3 * t) + 0.3 * t * t)[:, None], dt)
    assert _trajectory_identity_error(DBLINT_P_SING, chain, u) < 1e-7


def test_trajectory_identity_mixed_R():
    # k = 2 with one regular and one singular channel
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[1.0, 0.0], [0.0, 1.0]])
    P = np.eye(2)
    Q = np.zeros((2, 2))
    R = np.diag([1.0, 0.0])
    p = make_problem(A, B, P, Q, R, x0=np.array([0.5, -0.25]))
    chain = run_chain(normalize_controls(p))
    assert chain.r == 1 and chain.group_sizes == (1, 1)
    n = 4096
    dt = 1.0 / n
    t = dt * np.arange(n + 1)
    u = SampledSignal(np.column_stack([np.cos(2 * t), np.sin(3 * t)]), dt)
    assert _trajectory_identity_error(p, chain, u) < 1e-7


def test_gamma_linearity():
    chain = run_chain(normalize_controls(DBLINT_P_SING))
    n = 512
    dt = 1.0 / n
    t = dt * np.arange(n + 1)
    u = SampledSignal(np.sin(2 * t)[:, None], dt)
    w = SampledSignal((t ** 2)[:, None], dt)
    a, b = 1.7, -0.4
    combo = SampledSignal(a * u.values + b * w.values, dt)
    lhs = gamma_apply(chain, combo).values
    rhs = a * gamma_apply(chain, u).values + b * gamma_apply(chain, w).values
    scale = max(1.0, np.max(np.abs(rhs)))
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * scale


def test_gamma_apply_examples():
    chain = run_chain(normalize_controls(SCALAR))
    n = 256
    dt = 1.0 / n
    zero = SampledSignal(np.zeros((n + 1, 1)), dt)
    assert np.all(gamma_apply(chain, zero).values == 0.0)
    one = SampledSignal(np.ones((n + 1, 1)), dt)
    v = gamma_apply(chain, one)
    assert np.max(np.abs(v.values[:, 0] - one.times)) < 1e-12
    chain2 = run_chain(normalize_controls(DBLINT_P_SING))
    v2 = gamma_apply(chain2, one)
    assert np.max(np.abs(v2.values[:, 0] - one.times ** 2 / 2)) < 1e-12


def test_gamma_apply_dimension_mismatch():
    chain = run_chain(normalize_controls(SCALAR))
    with pytest.raises(ValueError):
        gamma_apply(chain, SampledSignal(np.zeros((16, 2)), 0.1))


def test_chain_report_serializable():
    import json
    chain = run_chain(normalize_controls(DBLINT_P_SING))
    rep = chain.to_report()
    text = json.dumps(rep)
    assert '"r": 2' in text and rep["stratum_dim"] == 0
