"""Regular reduced LQ problems: finite-horizon BVP and infinite-horizon Riccati.

Finite horizon: eliminating the control through the stationarity
condition  2 Rr v + 2 Qr x - Br' lam = 0  turns the optimality system
into a linear Hamiltonian ODE in z = (x, lam),

    x'   = (A - Br Ri Qr) x + (Br Ri Br'/2) lam
    lam' = 2 (P - Qr' Ri Qr) x + (Qr' Ri Br' - A') lam,

solved by single shooting with the matrix exponential (exact for linear
dynamics).  Boundary conditions: x(0) = x0, x(T) in xT + span(E) and
lam(T) perpendicular to span(E), E being the jump basis; these close a
dense linear system in (lam(0), subspace coordinates).

Infinite horizon: stabilizing solution of the algebraic Riccati equation
via the stable invariant subspace of the associated Hamiltonian matrix,
closed loop v = -K x.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import expm, schur

from singulo.desing import DesingChain
from singulo.errors import (
    IllConditioned,
    NonConvergent,
    NotStabilizable,
    NoStabilizingSolution,
)
from singulo.linstep import lsim_exact, propagate_homogeneous
from singulo.lq import LQProblem
from singulo.signals import SampledSignal, simpson_quad


def tol_bvp(x0: np.ndarray, xT: Optional[np.ndarray]) -> float:
    s = float(np.linalg.norm(x0))
    if xT is not None:
        s += float(np.linalg.norm(xT))
    return 1e-8 * (1.0 + s)


@dataclass(frozen=True)
class ReducedLQ:
    """Regular LQ problem produced by the desingularization chain."""

    A: np.ndarray
    Br: np.ndarray
    P: np.ndarray
    Qr: np.ndarray
    Rr: np.ndarray
    endpoint_subspace: np.ndarray
    T: float
    x0: np.ndarray
    xT: Optional[np.ndarray]

    @classmethod
    def from_chain(cls, chain: DesingChain, problem: LQProblem) -> "ReducedLQ":
        Br, Qr, Rr = chain.reduced_blocks()
        return cls(A=problem.A, Br=Br, P=problem.P, Qr=Qr, Rr=Rr,
                   endpoint_subspace=chain.jump_basis, T=problem.horizon,
                   x0=problem.x0, xT=problem.xT)

    def __post_init__(self):
        lam_min = float(np.linalg.eigvalsh(self.Rr)[0]) if self.Rr.size else 1.0
        if self.Rr.size and lam_min <= 0:
            raise ValueError(f"reduced weight must be positive definite (min eig {lam_min:.3e})")


@dataclass(frozen=True)
class ReducedSolution:
    """Optimal reduced control, trajectory, adjoint and diagnostics."""

    v_star: SampledSignal
    x_r: SampledSignal
    lam: SampledSignal
    cost_reduced: float
    endpoint_shift: np.ndarray
    mode: str                      # "finite" | "infinite"
    condition: float
    bvp_residual: float
    transversality_residual: float
    gain: Optional[np.ndarray] = None
    riccati: Optional[np.ndarray] = None

    def stationarity_residual(self, Rr: np.ndarray, Qr: np.ndarray, Br: np.ndarray) -> float:
        res = (2.0 * self.v_star.values @ Rr.T + 2.0 * self.x_r.values @ Qr.T
               - self.lam.values @ Br)
        return float(np.max(np.abs(res))) if res.size else 0.0


def _hamiltonian(red: ReducedLQ) -> np.ndarray:
    n = red.A.shape[0]
    Ri = np.linalg.inv(red.Rr)
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = red.A - red.Br @ Ri @ red.Qr
    M[:n, n:] = 0.5 * red.Br @ Ri @ red.Br.T
    M[n:, :n] = 2.0 * (red.P - red.Qr.T @ Ri @ red.Qr)
    M[n:, n:] = red.Qr.T @ Ri @ red.Br.T - red.A.T
    return M


def solve_finite(red: ReducedLQ, n_intervals: int = 4096,
                 cond_limit: float = 1e12) -> ReducedSolution:
    """Solve the finite-horizon reduced problem by Hamiltonian shooting.

    Raises IllConditioned when the shooting system's condition number
    exceeds ``cond_limit`` (boundary data near a conjugate point, or a
    horizon past which the infimum stops being finite).
    """
    if not np.isfinite(red.T):
        raise ValueError("solve_finite needs a finite horizon")
    n = red.A.shape[0]
    M = _hamiltonian(red)
    Phi = expm(M * red.T)
    P11, P12 = Phi[:n, :n], Phi[:n, n:]
    P21, P22 = Phi[n:, :n], Phi[n:, n:]
    E = red.endpoint_subspace
    pc = E.shape[1]

    if red.xT is None:
        # free endpoint: lam(T) = 0
        K = P22
        rhs = -P21 @ red.x0
    else:
        K = np.zeros((n + pc, n + pc))
        K[:n, :n] = P12
        K[:n, n:] = -E
        K[n:, :n] = E.T @ P22
        rhs = np.concatenate([red.xT - P11 @ red.x0, -E.T @ (P21 @ red.x0)])
    condition = float(np.linalg.cond(K)) if K.size else 1.0
    if not np.isfinite(condition) or condition > cond_limit:
        raise IllConditioned(
            f"shooting system condition {condition:.3e} exceeds {cond_limit:.1e}: "
            "boundary data near a conjugate point or horizon too long for a finite infimum")
    sol = np.linalg.solve(K, rhs)
    lam0 = sol[:n]
    shift = sol[n:] if red.xT is not None else np.zeros(0)

    dt = red.T / n_intervals
    Z = propagate_homogeneous(M, np.concatenate([red.x0, lam0]), n_intervals + 1, dt)
    x_vals, lam_vals = Z[:, :n], Z[:, n:]
    Ri = np.linalg.inv(red.Rr)
    v_vals = 0.5 * lam_vals @ red.Br @ Ri - x_vals @ red.Qr.T @ Ri

    integrand = (np.einsum("ti,ij,tj->t", x_vals, red.P, x_vals)
                 + 2.0 * np.einsum("ti,ij,tj->t", v_vals, red.Qr, x_vals)
                 + np.einsum("ti,ij,tj->t", v_vals, red.Rr, v_vals))
    cost = simpson_quad(integrand, dt)

    if red.xT is None:
        bvp_res = 0.0
        trans_res = float(np.linalg.norm(lam_vals[-1]))
    else:
        bvp_res = float(np.linalg.norm(x_vals[-1] - red.xT - E @ shift))
        trans_res = float(np.linalg.norm(E.T @ lam_vals[-1])) if pc else 0.0

    return ReducedSolution(
        v_star=SampledSignal(v_vals, dt),
        x_r=SampledSignal(x_vals, dt),
        lam=SampledSignal(lam_vals, dt),
        cost_reduced=cost,
        endpoint_shift=shift,
        mode="finite",
        condition=condition,
        bvp_residual=bvp_res,
        transversality_residual=trans_res,
    )


def _pbh_stabilizable(A: np.ndarray, B: np.ndarray, tol: float = 1e-9) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= -tol:
            pencil = np.hstack([A - lam * np.eye(n), B]).astype(complex)
            if np.linalg.matrix_rank(pencil) < n:
                return False
    return True


def stabilizing_riccati(red: ReducedLQ) -> np.ndarray:
    """Stabilizing ARE solution from the Hamiltonian's stable subspace."""
    n = red.A.shape[0]
    Ri = np.linalg.inv(red.Rr)
    As = red.A - red.Br @ Ri @ red.Qr
    Ps = red.P - red.Qr.T @ Ri @ red.Qr
    H = np.block([[As, -red.Br @ Ri @ red.Br.T], [-Ps, -As.T]])
    T, Z, sdim = schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolution(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    U1, U2 = Z[:n, :n], Z[n:, :n]
    try:
        X = np.linalg.solve(U1.T, U2.T).T
    except np.linalg.LinAlgError:
        raise NoStabilizingSolution("stable subspace is not a graph over the state space") from None
    X = 0.5 * (X + X.T)
    resid = As.T @ X + X @ As - X @ red.Br @ Ri @ red.Br.T @ X + Ps
    if np.linalg.norm(resid) > 1e-6 * (1.0 + np.linalg.norm(X)) ** 2:
        raise NoStabilizingSolution(f"Riccati residual too large ({np.linalg.norm(resid):.3e})")
    return X


def solve_infinite(red: ReducedLQ, n_intervals: int = 4096,
                   decay: float = 1e-8, horizon_constants: float = 50.0) -> ReducedSolution:
    """Infinite-horizon solution via the stabilizing Riccati feedback.

    The closed-loop trajectory is sampled until it decays below
    ``decay`` times its initial size or until the cap of
    ``horizon_constants`` time constants of the slowest mode.
    """
    if np.isfinite(red.T):
        raise ValueError("solve_infinite needs an infinite horizon")
    if not _pbh_stabilizable(red.A, red.Br):
        raise NotStabilizable("(A, Br) fails the PBH stabilizability test")
    form = np.block([[red.P, red.Qr.T], [red.Qr, red.Rr]])
    if np.linalg.eigvalsh(form)[0] < -1e-9 * max(1.0, np.linalg.norm(form)):
        raise ValueError("infinite horizon requires a nonnegative integrand form")

    X = stabilizing_riccati(red)
    Ri = np.linalg.inv(red.Rr)
    K = Ri @ (red.Br.T @ X + red.Qr)
    Acl = red.A - red.Br @ K
    re = np.linalg.eigvals(Acl).real
    if np.max(re) >= 0:
        raise NoStabilizingSolution("closed loop not Hurwitz")
    tau_slow = 1.0 / abs(np.max(re))
    T_sim = horizon_constants * tau_slow

    dt = T_sim / n_intervals
    x_vals = propagate_homogeneous(Acl, red.x0, n_intervals + 1, dt)
    norms = np.linalg.norm(x_vals, axis=1)
    x0n = max(norms[0], 1e-300)
    below = np.nonzero(norms <= decay * x0n)[0]
    last = int(below[0]) + 1 if below.size else n_intervals + 1
    x_vals = x_vals[:max(last, 2)]
    v_vals = -x_vals @ K.T
    lam_vals = -2.0 * x_vals @ X

    cost = float(red.x0 @ X @ red.x0)
    return ReducedSolution(
        v_star=SampledSignal(v_vals, dt),
        x_r=SampledSignal(x_vals, dt),
        lam=SampledSignal(lam_vals, dt),
        cost_reduced=cost,
        endpoint_shift=np.zeros(0),
        mode="infinite",
        condition=1.0,
        bvp_residual=0.0,
        transversality_residual=0.0,
        gain=K,
        riccati=X,
    )


def lq_cost(problem: LQProblem, u: SampledSignal, x0: Optional[np.ndarray] = None,
            B: Optional[np.ndarray] = None, Q: Optional[np.ndarray] = None,
            R: Optional[np.ndarray] = None) -> tuple[float, SampledSignal]:
    """Cost and trajectory of the original problem along a sampled control.

    Alternative (B, Q, R) triples allow evaluation in a rotated control
    basis (the quadratic form is basis-covariant).
    """
    B = problem.B if B is None else B
    Q = problem.Q if Q is None else Q
    R = problem.R if R is None else R
    x0 = problem.x0 if x0 is None else x0
    x_vals = lsim_exact(problem.A, B, u.values, u.dt, x0)
    integrand = (np.einsum("ti,ij,tj->t", x_vals, problem.P, x_vals)
                 + 2.0 * np.einsum("ti,ij,tj->t", u.values, Q, x_vals)
                 + np.einsum("ti,ij,tj->t", u.values, R, u.values))
    return simpson_quad(integrand, u.dt), SampledSignal(x_vals, u.dt)


@dataclass(frozen=True)
class InfimumEstimate:
    value: float
    residual: float
    table: tuple


def richardson(etas: Sequence[float], values: Sequence[float],
               max_order: int = 6) -> tuple[float, float, list]:
    """Richardson extrapolation of values(eta) to eta -> 0.

    Requires a geometric eta grid (decreasing); eliminates successive
    integer powers of eta.  Returns (estimate, residual, tableau).
    """
    etas = np.asarray(etas, dtype=float)
    vals = np.asarray(values, dtype=float)
    if len(etas) < 2:
        raise ValueError("need at least two samples to extrapolate")
    ratios = etas[1:] / etas[:-1]
    q = ratios.mean()
    if not (0 < q < 1):
        raise ValueError("eta grid must decrease geometrically")
    if np.max(np.abs(ratios / q - 1.0)) > 1e-8:
        raise ValueError("eta grid must be geometric")
    levels = min(max_order, len(vals) - 1)
    tab = [list(vals)]
    for mlev in range(1, levels + 1):
        prev = tab[-1]
        fac = q ** mlev
        tab.append([(prev[i] - fac * prev[i - 1]) / (1.0 - fac) for i in range(1, len(prev))])
    est = tab[-1][-1]
    resid = abs(tab[-1][-1] - tab[-2][-1]) if len(tab) >= 2 else np.inf
    return float(est), float(resid), tab


def infimum_extrapolate(problem: LQProblem, family: Sequence[tuple[float, SampledSignal]],
                        tol: float = 1e-4) -> InfimumEstimate:
    """Generalized-infimum estimate from a family of ordinary controls.

    Costs are evaluated along integrated trajectories (controls are in
    the original control basis) and extrapolated to vanishing family
    parameter.  Raises NonConvergent when the extrapolants fail to
    settle within ``tol`` relative.
    """
    etas = [e for e, _ in family]
    costs = [lq_cost(problem, u)[0] for _, u in family]
    est, resid, tab = richardson(etas, costs)
    if resid > tol * (1.0 + abs(est)):
        raise NonConvergent(
            f"extrapolation residual {resid:.3e} above tolerance {tol:.1e} (estimate {est:.6g})")
    return InfimumEstimate(value=est, residual=resid, table=tuple(map(tuple, tab)))
