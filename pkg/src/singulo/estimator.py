"""Empirical degree-of-singularity measurement and the regularization schedule.

A minimizing family substitutes every endpoint impulse of a generalized
control by the matching polynomial approximant at width eta, integrates
the original dynamics, and records cost, endpoint gap and control norm.
The degree of singularity is then the log-log slope of the control norm
against the optimality gap (cost excess plus endpoint gap, the two gap
conditions share one scale).

The regularization schedule takes a family with costs within 1/m of the
infimum and penalty masses nu_m, sets eps_m = 1/(m nu_m), and checks the
penalized values stay within 2/m of the infimum -- for any nonnegative
penalty, which the sweep demonstrates for both quadratic and absolute
penalties.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from singulo.deltas import profile_values, solve_alpha
from singulo.desing import DesingChain
from singulo.errors import DegenerateGaps, ScheduleViolated
from singulo.genmin import GeneralizedControl, SigmaReport
from singulo.linstep import lsim_exact
from singulo.lq import LQProblem
from singulo.signals import SampledSignal, grid_for_feature, simpson_quad


@dataclass(frozen=True)
class PenaltySpec:
    """Nonnegative control penalty rho(t, u).

    Either a power law |u|^exponent (pointwise euclidean magnitude) or a
    user-supplied vectorized callable rho(times, values) -> (N,).
    """

    exponent: float = 2.0
    func: Optional[Callable] = None

    def __post_init__(self):
        if self.func is None and self.exponent < 1:
            raise ValueError("power-law exponent must be >= 1")

    def mass(self, u: SampledSignal) -> float:
        """Integral of rho(t, u(t)) over the signal's horizon."""
        if self.func is not None:
            rho = np.asarray(self.func(u.times, u.values), dtype=float)
        else:
            rho = np.linalg.norm(u.values, axis=1) ** self.exponent
        if np.any(rho < -1e-12):
            raise ValueError("penalty must be nonnegative")
        return simpson_quad(rho, u.dt)


@dataclass(frozen=True)
class FamilyEntry:
    eta: float
    u: SampledSignal
    cost: float
    endpoint_gap: float
    l2norm: float


@dataclass(frozen=True)
class MinimizingFamily:
    """Ordinary-control family indexed by the approximation width eta."""

    entries: tuple
    inf_estimate: float

    def gaps(self) -> np.ndarray:
        return np.array([e.cost - self.inf_estimate + e.endpoint_gap for e in self.entries])

    def csv_rows(self):
        for e in self.entries:
            yield (e.eta, e.cost - self.inf_estimate + e.endpoint_gap,
                   e.cost, e.endpoint_gap, e.l2norm)


def build_minimizing_family(problem: LQProblem, chain: DesingChain,
                            gc: GeneralizedControl, eta_grid: Sequence[float],
                            inf_estimate: float,
                            samples_per_eta: int = 256,
                            jobs: int = 1) -> MinimizingFamily:
    """Ordinary controls approximating a generalized control, one per eta.

    Every impulse coefficient of the i-th delta derivative in group j is
    replaced by the (m, p) = (i+1, j) polynomial approximant at width
    eta (end impulses time-reflected about T), the analytic part is kept,
    and the original dynamics are integrated on a grid resolving eta.
    """
    if not problem.finite_horizon:
        raise ValueError("family construction needs a finite horizon")
    T = problem.horizon
    Bg, Qg, Rg = chain.level0_blocks()
    alphas = {(i, j): solve_alpha(i + 1, j)
              for (i, j) in set(gc.impulses_start) | set(gc.impulses_end)}

    def one(eta: float) -> FamilyEntry:
        n_int = grid_for_feature(T, eta, samples_per_feature=samples_per_eta)
        dt = T / n_int
        times = dt * np.arange(n_int + 1)
        u_vals = np.empty((n_int + 1, chain.k))
        for ch in range(chain.k):
            u_vals[:, ch] = np.interp(times, gc.analytic.times, gc.analytic.values[:, ch])
        for (i, j), coef in gc.impulses_start.items():
            prof = profile_values(alphas[(i, j)], i + 1, j, eta, times)
            u_vals[:, chain.group_slice(j)] += np.outer(prof, coef)
        for (i, j), coef in gc.impulses_end.items():
            prof = profile_values(alphas[(i, j)], i + 1, j, eta, T - times)
            u_vals[:, chain.group_slice(j)] += ((-1.0) ** i) * np.outer(prof, coef)

        x_vals = lsim_exact(problem.A, Bg, u_vals, dt, problem.x0)
        integrand = (np.einsum("ti,ij,tj->t", x_vals, problem.P, x_vals)
                     + 2.0 * np.einsum("ti,ij,tj->t", u_vals, Qg, x_vals)
                     + np.einsum("ti,ij,tj->t", u_vals, Rg, u_vals))
        cost = simpson_quad(integrand, dt)
        gap = float(np.linalg.norm(x_vals[-1] - problem.xT)) if problem.xT is not None else 0.0
        l2 = float(np.sqrt(simpson_quad(np.sum(u_vals * u_vals, axis=1), dt)))
        return FamilyEntry(eta=float(eta), u=SampledSignal(u_vals, dt),
                           cost=cost, endpoint_gap=gap, l2norm=l2)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(one, eta_grid))
    else:
        entries = [one(eta) for eta in eta_grid]
    entries.sort(key=lambda e: -e.eta)
    return MinimizingFamily(entries=tuple(entries), inf_estimate=float(inf_estimate))


def fit_sigma(family: MinimizingFamily, exact_reference: Optional[float] = None,
              mode: str = "finite-horizon", confidence: float = 0.95) -> SigmaReport:
    """Fitted degree of singularity: slope of ln|u| against ln(1/gap).

    Discards the two largest-gap entries when at least 8 are available
    (the defining limit is one-sided in the gap).  Raises DegenerateGaps
    on non-positive gaps or a gap range narrower than two decades.
    """
    if len(family.entries) < 5:
        raise DegenerateGaps("need at least 5 family entries to fit")
    gaps = family.gaps()
    norms = np.array([e.l2norm for e in family.entries])
    if np.any(gaps <= 0):
        raise DegenerateGaps("non-positive optimality gap in the family "
                             "(inconsistent infimum estimate?)")
    order = np.argsort(gaps)[::-1]
    gaps, norms = gaps[order], norms[order]
    if len(gaps) >= 8:
        gaps, norms = gaps[2:], norms[2:]
    decades = float(np.log10(gaps.max() / gaps.min()))
    if decades < 2.0:
        raise DegenerateGaps(f"gaps span only {decades:.2f} decades; need >= 2")
    x = np.log(1.0 / gaps)
    y = np.log(norms)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = len(x) - 2
    se = float(np.sqrt(np.sum(resid ** 2) / dof / np.sum((x - x.mean()) ** 2))) if dof > 0 else np.inf
    halfwidth = stats.t.ppf(0.5 + confidence / 2.0, dof) * se if dof > 0 else np.inf
    return SigmaReport(
        sigma=float(slope),
        contributors=(),
        mode=mode,
        method="fitted",
        fit_ci=(float(slope - halfwidth), float(slope + halfwidth)),
        fit_points=len(x),
        gap_decades=decades,
        exact_reference=exact_reference,
    )


@dataclass(frozen=True)
class ScheduleRow:
    m: int
    eta: float
    nu: float
    eps: float
    cost: float
    penalized: float
    bound: float


def epsilon_schedule(family: MinimizingFamily, penalty: PenaltySpec,
                     m_max: int = 64, tol: float = 1e-6) -> list[ScheduleRow]:
    """Regularization schedule along the family.

    For each index m picks the widest family entry with cost within 1/m
    of the infimum, sets eps_m from the penalty mass, and verifies the
    penalized value stays within 2/m (+ tol) of the infimum.  A zero
    penalty mass degenerates to eps_m = 1/m with the value unchanged.
    """
    inf = family.inf_estimate
    rows = []
    masses = [penalty.mass(e.u) for e in family.entries]
    for m in range(1, m_max + 1):
        pick = None
        for e, nu in zip(family.entries, masses):
            if e.cost <= inf + 1.0 / m:
                pick = (e, nu)
                break
        if pick is None:
            raise ScheduleViolated(
                f"family has no entry with cost within 1/{m} of the infimum; widen the eta grid")
        e, nu = pick
        eps = 1.0 / (m * nu) if nu > 0 else 1.0 / m
        penalized = e.cost + eps * nu
        bound = inf + 2.0 / m
        if penalized > bound + tol:
            raise ScheduleViolated(
                f"penalized value {penalized:.6g} exceeds the 2/{m} bound {bound:.6g} "
                "(inconsistent infimum estimate?)")
        rows.append(ScheduleRow(m=m, eta=e.eta, nu=nu, eps=eps, cost=e.cost,
                                penalized=penalized, bound=bound))
    return rows


def regularization_sweep(family: MinimizingFamily, penalty: PenaltySpec,
                         eps_grid: Sequence[float]) -> list[tuple[float, float, float]]:
    """Upper envelope of the penalized values over the family.

    Returns rows (eps, envelope, eta_argmin); the eps = 0 row equals the
    family's minimum cost, and the envelope is nondecreasing in eps.
    """
    masses = [penalty.mass(e.u) for e in family.entries]
    rows = []
    for eps in eps_grid:
        vals = [e.cost + eps * nu for e, nu in zip(family.entries, masses)]
        i = int(np.argmin(vals))
        rows.append((float(eps), float(vals[i]), family.entries[i].eta))
    return rows
