import numpy as np
import pytest

from singulo.desing import run_chain
from singulo.errors import IllConditioned, NonConvergent, NotStabilizable
from singulo.lq import LQProblem, normalize_controls
from singulo.reduced import (
    InfimumEstimate,
    ReducedLQ,
    infimum_extrapolate,
    lq_cost,
    richardson,
    solve_finite,
    solve_infinite,
)
from singulo.signals import SampledSignal, simpson_quad

from oracles import qp_reduced_optimum


def scalar_problem(x0=1.0, xT=1.0):
    return LQProblem(A=[[0.0]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[0.0]],
                     horizon=1.0, x0=[x0], xT=[xT])


def reduced_of(problem):
    chain = run_chain(normalize_controls(problem))
    return chain, ReducedLQ.from_chain(chain, problem)


def test_scalar_reduced_solution():
    chain, red = reduced_of(scalar_problem())
    sol = solve_finite(red)
    assert sol.cost_reduced == pytest.approx(0.0, abs=1e-12)
    assert np.max(np.abs(sol.v_star.values + 1.0)) < 1e-10
    assert np.max(np.abs(sol.x_r.values - 1.0)) < 1e-10
    assert sol.bvp_residual < 1e-10 and sol.transversality_residual < 1e-10


def test_zero_boundary_data_gives_zero_solution():
    chain, red = reduced_of(scalar_problem(0.0, 0.0))
    sol = solve_finite(red)
    assert sol.cost_reduced == pytest.approx(0.0, abs=1e-14)
    assert np.max(np.abs(sol.v_star.values)) < 1e-12


def test_stationarity_and_transversality_invariants():
    p = LQProblem(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]],
                  P=[[1.0, 0.0], [0.0, 0.0]], Q=[[0.0, 0.0]], R=[[0.0]],
                  horizon=1.0, x0=[1.0, -0.5], xT=[0.5, 1.0])
    chain, red = reduced_of(p)
    sol = solve_finite(red)
    scale = 1.0 + np.max(np.abs(sol.x_r.values))
    assert sol.stationarity_residual(red.Rr, red.Qr, red.Br) <= 1e-8 * scale
    for col in red.endpoint_subspace.T:
        assert abs(col @ sol.lam.values[-1]) <= 1e-8 * scale
    assert sol.cost_reduced >= -1e-12
    assert sol.bvp_residual <= 1e-8


def test_cost_matches_dense_qp_on_regular_problem():
    # regular LQ (r = 0): the reduced problem is the original problem
    A = np.array([[0.0, 1.0], [-0.5, 0.2]])
    B = np.array([[0.0], [1.0]])
    P = np.eye(2)
    Q = np.array([[0.1, 0.0]])
    R = np.array([[1.0]])
    p = LQProblem(A=A, B=B, P=P, Q=Q, R=R, horizon=2.0, x0=[1.0, 0.0], xT=[0.0, 0.0])
    chain, red = reduced_of(p)
    assert chain.r == 0
    sol = solve_finite(red)
    qp = qp_reduced_optimum(A, B, P, Q, R, red.endpoint_subspace, 2.0,
                            p.x0, p.xT, n_nodes=257)
    assert sol.cost_reduced > 0.1
    assert abs(sol.cost_reduced - qp) <= 1e-5 * (1.0 + abs(qp))


def test_cost_matches_dense_qp_double_integrator_chain():
    p = LQProblem(A=[[0.0, 1.0], [0.0, 0.0]], B=[[0.0], [1.0]],
                  P=[[1.0, 0.0], [0.0, 0.0]], Q=[[0.0, 0.0]], R=[[0.0]],
                  horizon=1.0, x0=[1.0, -0.5], xT=[0.5, 1.0])
    chain, red = reduced_of(p)
    sol = solve_finite(red)
    qp = qp_reduced_optimum(red.A, red.Br, red.P, red.Qr, red.Rr,
                            red.endpoint_subspace, red.T, p.x0, p.xT, n_nodes=257)
    assert sol.cost_reduced >= -1e-12
    assert abs(sol.cost_reduced - qp) <= 1e-5 * (1.0 + abs(qp))


def test_free_endpoint_branch():
    p = LQProblem(A=[[-0.2]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[1.0]],
                  horizon=1.5, x0=[1.0], xT=None)
    chain, red = reduced_of(p)
    sol = solve_finite(red)
    assert np.linalg.norm(sol.lam.values[-1]) < 1e-9
    assert sol.cost_reduced > 0


def test_ill_conditioned_near_conjugate_point():
    # negative state weight: the shooting matrix degenerates at T = pi
    red = ReducedLQ(A=np.array([[0.0]]), Br=np.array([[1.0]]), P=np.array([[-1.0]]),
                    Qr=np.array([[0.0]]), Rr=np.array([[1.0]]),
                    endpoint_subspace=np.zeros((1, 0)), T=float(np.pi),
                    x0=np.array([1.0]), xT=np.array([0.5]))
    with pytest.raises(IllConditioned):
        solve_finite(red)


def test_infinite_horizon_scalar_riccati():
    red = ReducedLQ(A=np.array([[-1.0]]), Br=np.array([[1.0]]), P=np.array([[1.0]]),
                    Qr=np.array([[0.0]]), Rr=np.array([[1.0]]),
                    endpoint_subspace=np.zeros((1, 0)), T=np.inf,
                    x0=np.array([1.0]), xT=None)
    sol = solve_infinite(red)
    assert sol.cost_reduced == pytest.approx(np.sqrt(2) - 1, rel=1e-12)
    assert sol.gain[0, 0] == pytest.approx(np.sqrt(2) - 1, rel=1e-12)
    # closed loop Hurwitz and quadrature cost consistent with x0'Xx0
    integrand = (np.einsum("ti,ij,tj->t", sol.x_r.values, red.P, sol.x_r.values)
                 + np.einsum("ti,ij,tj->t", sol.v_star.values, red.Rr, sol.v_star.values))
    assert simpson_quad(integrand, sol.x_r.dt) == pytest.approx(sol.cost_reduced, rel=1e-6)
    assert sol.stationarity_residual(red.Rr, red.Qr, red.Br) < 1e-10


def test_infinite_horizon_zero_start():
    red = ReducedLQ(A=np.array([[-1.0]]), Br=np.array([[1.0]]), P=np.array([[1.0]]),
                    Qr=np.array([[0.0]]), Rr=np.array([[1.0]]),
                    endpoint_subspace=np.zeros((1, 0)), T=np.inf,
                    x0=np.array([0.0]), xT=None)
    sol = solve_infinite(red)
    assert sol.cost_reduced == 0.0
    assert np.max(np.abs(sol.v_star.values)) == 0.0


def test_not_stabilizable():
    red = ReducedLQ(A=np.array([[1.0]]), Br=np.zeros((1, 1)) * 0.0, P=np.array([[1.0]]),
                    Qr=np.array([[0.0]]), Rr=np.array([[1.0]]),
                    endpoint_subspace=np.zeros((1, 0)), T=np.inf,
                    x0=np.array([1.0]), xT=None)
    red = ReducedLQ(A=red.A, Br=np.array([[0.0]]), P=red.P, Qr=red.Qr, Rr=red.Rr,
                    endpoint_subspace=red.endpoint_subspace, T=np.inf,
                    x0=red.x0, xT=None)
    with pytest.raises(NotStabilizable):
        solve_infinite(red)


def test_closed_loop_eigenvalues_negative():
    rng = np.random.default_rng(11)
    A = rng.standard_normal((3, 3))
    Br = rng.standard_normal((3, 2))
    red = ReducedLQ(A=A, Br=Br, P=np.eye(3), Qr=np.zeros((2, 3)), Rr=np.eye(2),
                    endpoint_subspace=np.zeros((3, 0)), T=np.inf,
                    x0=np.array([1.0, 0.0, -1.0]), xT=None)
    sol = solve_infinite(red)
    Acl = A - Br @ sol.gain
    assert np.max(np.linalg.eigvals(Acl).real) < 0


def box_family(etas, T=1.0, sign_in=-1.0, sign_out=1.0, samples=64):
    """Box-impulse family for the scalar problem: jump down, rest, jump back."""
    fam = []
    for eta in etas:
        n = int(samples / eta)
        dt = T / n
        t = dt * np.arange(n + 1)
        vals = np.zeros((n + 1, 1))
        vals[t < eta, 0] = sign_in / eta
        vals[t > T - eta, 0] = sign_out / eta
        i0, i1 = int(round(eta / dt)), int(round((T - eta) / dt))
        vals[i0, 0] = 0.5 * sign_in / eta
        vals[i1, 0] = 0.5 * sign_out / eta
        fam.append((eta, SampledSignal(vals, dt)))
    return fam


def test_infimum_extrapolate_scalar_example():
    p = scalar_problem()
    fam = box_family([2.0 ** -k for k in range(3, 9)])
    est = infimum_extrapolate(p, fam)
    assert isinstance(est, InfimumEstimate)
    assert abs(est.value) <= 1e-3
    assert est.residual < 1e-8


def test_infimum_extrapolate_zero_data():
    p = scalar_problem(0.0, 0.0)
    etas = [2.0 ** -k for k in range(3, 8)]
    fam = [(eta, SampledSignal(np.zeros((257, 1)), 1 / 256)) for eta in etas]
    est = infimum_extrapolate(p, fam)
    assert abs(est.value) <= 1e-10


def test_richardson_requires_geometric_grid():
    with pytest.raises(ValueError):
        richardson([0.1, 0.05, 0.03], [1.0, 0.5, 0.3])


def test_infimum_extrapolate_nonconvergent():
    p = scalar_problem()
    rng = np.random.default_rng(0)
    etas = [2.0 ** -k for k in range(3, 8)]
    fam = []
    for eta in etas:
        vals = rng.standard_normal((257, 1))  # noise, not a family
        fam.append((eta, SampledSignal(vals, 1 / 256)))
    with pytest.raises(NonConvergent):
        infimum_extrapolate(p, fam, tol=1e-10)


def test_lq_cost_along_known_control():
    # xdot = u with u = 1 from x0 = 0: x = t, J = int t^2 = T^3/3
    p = LQProblem(A=[[0.0]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[0.0]],
                  horizon=2.0, x0=[0.0], xT=[2.0])
    n = 512
    u = SampledSignal(np.ones((n + 1, 1)), 2.0 / n)
    cost, traj = lq_cost(p, u)
    assert cost == pytest.approx(8.0 / 3.0, rel=1e-10)
    assert traj.values[-1, 0] == pytest.approx(2.0, rel=1e-12)
