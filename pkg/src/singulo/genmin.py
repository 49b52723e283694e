"""Generalized optimal controls: impulse reconstruction and exact degree of singularity.

The optimal reduced control v* is analytic, and the generalized optimal
control of the original singular problem is the preimage of v* under the
reduced-control operator: an analytic function plus derivatives-of-delta
concentrated at t = 0 and t = T.  On the open interval the group-j
primitive chain can be inverted by differentiation, and the one-sided
boundary values of those derivatives are exactly the impulse
coefficients: the trajectory jumps

    x(0+) - x0      = sum B[i,j] alpha[i,j],
    xT     - x(T-)  = sum B[i,j] beta[i,j],

and the degree of singularity of minimizing families is

    sigma = max over contributing (i,j) of  (i + 1/2) / (2(j - i) - 1),

with sigma = 0 when no jumps are needed but the optimal control is
nonzero and sigma = -inf for the zero control.  In the infinite-horizon
case only the alpha coefficients enter.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from singulo.desing import DesingChain
from singulo.errors import RankDeficientBasis, ResidualTooLarge
from singulo.reduced import ReducedSolution
from singulo.signals import SampledSignal, grid_derivative


def sigma_value(i: int, j: int) -> float:
    """Singularity contribution of an impulse of order i in group j."""
    return (i + 0.5) / (2.0 * (j - i) - 1.0)


def default_tol_zero(x0: np.ndarray, xT: Optional[np.ndarray]) -> float:
    s = float(np.linalg.norm(x0))
    if xT is not None:
        s += float(np.linalg.norm(xT))
    return 1e-7 * (s + 1.0)


@dataclass(frozen=True)
class GeneralizedControl:
    """Analytic part plus endpoint impulse coefficients (group coordinates).

    ``impulses_start[(i, j)]`` is the coefficient vector of the i-th
    delta derivative at t=0 in control group j (present for i < j only);
    ``impulses_end`` holds the t=T coefficients.
    """

    analytic: SampledSignal
    impulses_start: dict
    impulses_end: dict

    def max_impulse(self) -> float:
        vals = [np.max(np.abs(c)) for c in self.impulses_start.values() if c.size]
        vals += [np.max(np.abs(c)) for c in self.impulses_end.values() if c.size]
        return max(vals) if vals else 0.0

    def is_zero(self, tol: float) -> bool:
        return (float(np.max(np.abs(self.analytic.values), initial=0.0)) <= tol
                and self.max_impulse() <= tol)


@dataclass(frozen=True)
class JumpDecomposition:
    """Boundary jumps expanded in the jump basis, split by (i, j) labels."""

    alpha: dict
    beta: dict
    jump0: np.ndarray
    jumpT: np.ndarray
    residual: float

    def contributing(self, tol: float) -> list:
        out = []
        for key in sorted(set(self.alpha) | set(self.beta)):
            a = self.alpha.get(key)
            b = self.beta.get(key)
            mag = max(
                float(np.max(np.abs(a), initial=0.0)) if a is not None else 0.0,
                float(np.max(np.abs(b), initial=0.0)) if b is not None else 0.0,
            )
            if mag > tol:
                out.append(key)
        return out


@dataclass(frozen=True)
class SigmaReport:
    """Degree-of-singularity value with its provenance.

    ``method`` is "exact-formula" (from the jump decomposition) or
    "fitted" (log-log regression on a minimizing family); ``sigma`` may
    be -inf for the zero optimal control.
    """

    sigma: float
    contributors: tuple
    mode: str                     # "finite-horizon" | "infinite-horizon"
    method: str                   # "exact-formula" | "fitted"
    value_set: tuple = ()
    warnings: tuple = ()
    fit_ci: Optional[tuple] = None
    fit_points: int = 0
    gap_decades: float = 0.0
    exact_reference: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma if np.isfinite(self.sigma) else "-inf",
            "contributors": [list(c) for c in self.contributors],
            "mode": self.mode,
            "method": self.method,
            "value_set": list(self.value_set),
            "warnings": list(self.warnings),
            "fit_ci": None if self.fit_ci is None else list(self.fit_ci),
            "fit_points": self.fit_points,
            "gap_decades": self.gap_decades,
            "exact_reference": self.exact_reference,
        }


def _tilde_derivatives(chain: DesingChain, v: SampledSignal) -> dict:
    """Per-group primitive-chain inversion of the reduced control.

    Returns, for each nonempty group j, the arrays of the 0..j-th grid
    derivatives of the group's effective j-fold primitive (the reduced
    control minus the cross-group coupling terms).  Derivative s of that
    function equals the (j-s)-fold primitive of the group control on the
    open interval.
    """
    dt = v.dt
    derivs: dict = {}
    for j in range(chain.r, -1, -1):
        if chain.group_sizes[j] == 0:
            continue
        tv = v.values[:, chain.group_slice(j)].copy()
        for (ii, q, l), coeff in chain.gamma_coeffs.items():
            if ii != j:
                continue
            tv -= derivs[l][l - q - 1] @ coeff.T
        stack = [tv]
        for _ in range(j):
            stack.append(grid_derivative(stack[-1], dt))
        derivs[j] = stack
    return derivs


def decompose_boundary(chain: DesingChain, sol: ReducedSolution,
                       x0: np.ndarray, xT: Optional[np.ndarray],
                       tol_jump: Optional[float] = None) -> JumpDecomposition:
    """Expand the boundary jumps of the generalized minimizer.

    The required values of the group primitives at 0+ and T- are read
    off one-sided derivatives of the analytic reduced control; the
    resulting jumps are expanded in the jump-basis columns by least
    squares and split by (i, j) label.  Raises RankDeficientBasis when
    the expansion is not unique and ResidualTooLarge when a jump leaves
    the basis span.
    """
    if chain.r < 1:
        raise ValueError("regular problem (r = 0) has no jump structure")
    if tol_jump is None:
        tol_jump = 1e-6 * (1.0 + np.linalg.norm(x0)
                           + (np.linalg.norm(xT) if xT is not None else 0.0))
    E = chain.jump_basis
    if E.shape[1] and np.linalg.matrix_rank(E) < E.shape[1]:
        raise RankDeficientBasis(
            "jump-basis columns are dependent; refusing to guess a non-unique expansion")

    derivs = _tilde_derivatives(chain, sol.v_star)
    jump0 = np.zeros(chain.n)
    xT_minus = sol.x_r.values[-1].copy()
    for (i, j) in chain.jump_labels:
        d_at_0 = derivs[j][j - 1 - i][0]
        d_at_T = derivs[j][j - 1 - i][-1]
        jump0 += chain.B[(i, j)] @ d_at_0
        xT_minus += chain.B[(i, j)] @ d_at_T
    if xT is None:
        jumpT = np.zeros(chain.n)
    else:
        jumpT = xT - xT_minus

    slices = chain.jump_column_slices()
    alpha: dict = {}
    beta: dict = {}
    resid = 0.0
    for target, out in ((jump0, alpha), (jumpT, beta)):
        if E.shape[1] == 0:
            resid = max(resid, float(np.linalg.norm(target)))
            continue
        coef, *_ = np.linalg.lstsq(E, target, rcond=None)
        resid = max(resid, float(np.linalg.norm(E @ coef - target)))
        for (i, j), sl in slices.items():
            out[(i, j)] = coef[sl]
    if resid > tol_jump:
        raise ResidualTooLarge(
            f"boundary jump leaves the jump-basis span (residual {resid:.3e} > {tol_jump:.1e})")
    return JumpDecomposition(alpha=alpha, beta=beta, jump0=jump0, jumpT=jumpT, residual=resid)


def _classify(decomp: JumpDecomposition, use_beta: bool, tol_zero: float):
    contributors = []
    warnings = []
    keys = sorted(set(decomp.alpha) | (set(decomp.beta) if use_beta else set()))
    for key in keys:
        mags = [float(np.max(np.abs(decomp.alpha.get(key, np.zeros(0))), initial=0.0))]
        if use_beta:
            mags.append(float(np.max(np.abs(decomp.beta.get(key, np.zeros(0))), initial=0.0)))
        mag = max(mags)
        if mag > tol_zero:
            contributors.append(key)
        if tol_zero / 10.0 <= mag <= tol_zero * 10.0:
            warnings.append(
                f"coefficient {key} has magnitude {mag:.3e}, within 10x of the zero threshold "
                f"{tol_zero:.1e}; stratum classification is uncertain")
    return contributors, warnings


def sigma_exact(decomp: JumpDecomposition, optimal_control_zero: bool = False,
                tol_zero: float = 1e-7, value_set: tuple = ()) -> SigmaReport:
    """Exact finite-horizon degree of singularity from the jump data."""
    contributors, warns = _classify(decomp, use_beta=True, tol_zero=tol_zero)
    if optimal_control_zero:
        sigma = -np.inf
        contributors = []
    elif not contributors:
        sigma = 0.0
    else:
        sigma = max(sigma_value(i, j) for (i, j) in contributors)
    return SigmaReport(sigma=sigma, contributors=tuple(contributors), mode="finite-horizon",
                       method="exact-formula", value_set=value_set, warnings=tuple(warns))


def sigma_exact_infinite(decomp: JumpDecomposition, optimal_control_zero: bool = False,
                         tol_zero: float = 1e-7, value_set: tuple = ()) -> SigmaReport:
    """Infinite-horizon variant: only initial-jump coefficients count."""
    contributors, warns = _classify(decomp, use_beta=False, tol_zero=tol_zero)
    if optimal_control_zero:
        sigma = -np.inf
        contributors = []
    elif not contributors:
        sigma = 0.0
    else:
        sigma = max(sigma_value(i, j) for (i, j) in contributors)
    return SigmaReport(sigma=sigma, contributors=tuple(contributors), mode="infinite-horizon",
                       method="exact-formula", value_set=value_set, warnings=tuple(warns))


def synthesize(chain: DesingChain, sol: ReducedSolution,
               decomp: JumpDecomposition) -> GeneralizedControl:
    """Assemble the generalized optimal control from its pieces.

    The analytic interior part is the primitive-chain inversion of the
    optimal reduced control (grid differentiation); the impulse
    coefficients at t=0 / t=T are the alpha / beta jump coefficients.
    """
    derivs = _tilde_derivatives(chain, sol.v_star)
    vals = np.zeros((sol.v_star.n_points, chain.k))
    for j in range(chain.r + 1):
        if chain.group_sizes[j] == 0:
            continue
        vals[:, chain.group_slice(j)] = derivs[j][j]
    analytic = SampledSignal(vals, sol.v_star.dt)
    return GeneralizedControl(
        analytic=analytic,
        impulses_start={k: np.array(v) for k, v in decomp.alpha.items()},
        impulses_end={k: np.array(v) for k, v in decomp.beta.items()},
    )


@dataclass(frozen=True)
class StratumDescriptor:
    """Enumerated singularity values for a chain and the occupied stratum."""

    r: int
    value_set: tuple              # sorted distinct sigma values
    pair_values: dict             # (i, j) -> sigma value
    occupied: Optional[tuple]     # contributing (i, j) pairs, if a decomposition was given
    sigma: Optional[float]
    generic_value: Optional[float]
    stratum_dim: int


def stratum_report(chain: DesingChain, decomp: Optional[JumpDecomposition] = None,
                   tol_zero: float = 1e-7) -> StratumDescriptor:
    """Enumerate the finite set of singularity values for the chain.

    The generic stratum attains r - 1/2; the classical (jump-free)
    stratum has dimension n + m - 2p.
    """
    pair_values = {(i, j): sigma_value(i, j)
                   for i in range(chain.r + 1) for j in range(i + 1, chain.r + 1)}
    values = tuple(sorted(set(pair_values.values())))
    occupied = None
    sigma = None
    if decomp is not None:
        occ, _ = _classify(decomp, use_beta=True, tol_zero=tol_zero)
        occupied = tuple(occ)
        sigma = max((sigma_value(i, j) for (i, j) in occ), default=0.0)
    return StratumDescriptor(
        r=chain.r,
        value_set=values,
        pair_values=pair_values,
        occupied=occupied,
        sigma=sigma,
        generic_value=(chain.r - 0.5) if chain.r >= 1 else None,
        stratum_dim=chain.stratum_dim,
    )
