"""Piecewise-polynomial approximants of delta derivatives in weak norms.

The approximant of the (m-1)-th delta derivative inside the order--p
weak space is defined through its p-fold primitive

    psi_eta(t) = sum_{i<p} a_i t^(p+i) / ((p+i)! eta^(m+i))   on [0, eta],
    psi_eta(t) = t^(p-m) / (p-m)!                             for t > eta,

with the coefficient vector a the unique solution of M a = b,

    M[q, i] = 1 / (p + i - q)!        q, i = 0..p-1
    b[q]    = 1 / (p - m - q)!        (zero once p - m - q < 0),

which enforces a C^(p-1) junction at t = eta; a does not depend on eta.
The approximant itself is u = d^p psi / dt^p, supported on [0, eta]:

    u(t) = sum_{i<p} a_i t^i / (i! eta^(m+i)).

Squared norms obey exact power laws,  |u|_L2^2 = C1 / eta^(2m-1)  and
|u - v|_{H_-p}^2 = C2 eta^(2(p-m)+1),  so the attainable norm-growth
exponent against the weak-norm gap is (2m-1)/(2(p-m)+1), which
``verify_rates`` measures by log-log regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from singulo.errors import GridTooCoarse, SingularM
from singulo.signals import SampledSignal, grid_for_feature

MAX_ORDER = 12  # factorial guard: keeping 1/(2p-1)! well inside double range


def _inv_fact(n: int) -> float:
    return 1.0 / math.factorial(n) if n >= 0 else 0.0


def solve_alpha(m: int, p: int) -> np.ndarray:
    """Junction coefficients for the (m, p) approximant (eta-independent)."""
    if not (1 <= m <= p <= MAX_ORDER):
        raise ValueError(f"need 1 <= m <= p <= {MAX_ORDER}, got (m, p) = ({m}, {p})")
    M = np.array([[_inv_fact(p + i - q) for i in range(p)] for q in range(p)])
    b = np.array([_inv_fact(p - m - q) for q in range(p)])
    try:
        alpha = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        raise SingularM(f"junction system singular for (m, p) = ({m}, {p})") from None
    resid = float(np.linalg.norm(M @ alpha - b))
    if resid > 1e-10:
        raise SingularM(f"junction system ill-solved for (m, p) = ({m}, {p}): residual {resid:.3e}")
    return alpha


def profile_values(alpha: np.ndarray, m: int, p: int, eta: float,
                   times: np.ndarray, jump_mean: bool = True) -> np.ndarray:
    """Sample u on arbitrary times (support [0, eta], zero outside).

    At a node landing exactly on the support edge the stored value is
    the mean of the one-sided limits, which keeps trapezoid primitives
    of the sampled signal exact across the jump.
    """
    t = np.asarray(times, dtype=float)
    out = np.zeros_like(t)
    edge_tol = 1e-9 * eta + 1e-15
    inside = (t >= -edge_tol) & (t <= eta + edge_tol)
    ts = t[inside]
    acc = np.zeros_like(ts)
    for i in range(p - 1, -1, -1):
        acc = acc * ts + alpha[i] / (math.factorial(i) * eta ** (m + i))
    out[inside] = acc
    if jump_mean:
        at_edge = np.abs(t - eta) <= edge_tol
        out[at_edge] *= 0.5
    out[(t < -edge_tol) | (t > eta + edge_tol)] = 0.0
    return out


def psi_values(alpha: np.ndarray, m: int, p: int, eta: float, times: np.ndarray) -> np.ndarray:
    """Sample the p-fold primitive psi_eta (continuous, C^(p-1))."""
    t = np.asarray(times, dtype=float)
    out = np.empty_like(t)
    inside = t <= eta
    ts = t[inside]
    acc = np.zeros_like(ts)
    for i in range(p - 1, -1, -1):
        acc = acc * ts + alpha[i] / (math.factorial(p + i) * eta ** (m + i))
    out[inside] = acc * ts ** p
    out[~inside] = t[~inside] ** (p - m) * _inv_fact(p - m)
    return out


def comparator_values(m: int, p: int, times: np.ndarray) -> np.ndarray:
    """p-fold primitive of the exact (m-1)-th delta derivative: t^(p-m)/(p-m)!."""
    return np.asarray(times, dtype=float) ** (p - m) * _inv_fact(p - m)


@dataclass(frozen=True)
class DeltaApproximant:
    """One member of the approximant family, sampled on a uniform grid.

    ``l2`` and ``h_error`` are computed by quadrature restricted to the
    support interval (left-limit polynomial values, no jump smearing),
    so they carry the full power laws without grid bias.
    """

    m: int
    p: int
    eta: float
    alpha: np.ndarray
    u: SampledSignal
    psi: SampledSignal
    l2: float
    h_error: float

    def junction_residuals(self) -> np.ndarray:
        """Relative mismatch of psi and its first p-1 derivatives at eta."""
        res = np.empty(self.p)
        for q in range(self.p):
            left = sum(self.alpha[i] * self.eta ** (self.p + i - q)
                       / (math.factorial(self.p + i - q) * self.eta ** (self.m + i))
                       for i in range(self.p))
            right = (self.eta ** (self.p - self.m - q) * _inv_fact(self.p - self.m - q)
                     if self.p - self.m - q >= 0 else 0.0)
            scale = max(abs(left), abs(right), self.eta ** (self.p - self.m) * 1e-3)
            res[q] = abs(left - right) / scale
        return res


def build(m: int, p: int, eta: float, T: float,
          n_intervals: int | None = None) -> DeltaApproximant:
    """Construct and sample the (m, p) approximant at width eta on [0, T].

    The default grid resolves [0, eta] with 64 samples; an explicit grid
    that resolves it with fewer raises GridTooCoarse.
    """
    if not (0 < eta < T):
        raise ValueError("eta must lie in ]0, T[")
    alpha = solve_alpha(m, p)
    if n_intervals is None:
        n_intervals = grid_for_feature(T, eta, samples_per_feature=64, min_intervals=512)
    dt = T / n_intervals
    if eta / dt < 64 - 1e-9:
        raise GridTooCoarse(f"only {eta / dt:.1f} samples inside [0, eta]; need >= 64")
    times = dt * np.arange(n_intervals + 1)
    u = SampledSignal(profile_values(alpha, m, p, eta, times), dt)
    psi = SampledSignal(psi_values(alpha, m, p, eta, times), dt)

    # support-restricted quadrature on [0, eta]
    n_sub = max(64, int(round(eta / dt)))
    sub_t = np.linspace(0.0, eta, n_sub + 1)
    u_sub = profile_values(alpha, m, p, eta, sub_t, jump_mean=False)
    l2 = float(np.sqrt(simpson(u_sub * u_sub, dx=eta / n_sub)))
    d_sub = psi_values(alpha, m, p, eta, sub_t) - comparator_values(m, p, sub_t)
    h_error = float(np.sqrt(simpson(d_sub * d_sub, dx=eta / n_sub)))
    return DeltaApproximant(m=m, p=p, eta=eta, alpha=alpha, u=u, psi=psi,
                            l2=l2, h_error=h_error)


@dataclass(frozen=True)
class RateReport:
    """Measured power laws of an eta sweep for one (m, p) pair."""

    m: int
    p: int
    etas: tuple
    l2_norms: tuple
    h_errors: tuple
    norm_slope: float            # ln|u| vs ln(1/eta); expect (2m-1)/2
    err_slope: float             # ln gap vs ln eta;   expect (2(p-m)+1)/2
    combined_slope: float        # ln|u| vs ln(1/gap); expect (2m-1)/(2(p-m)+1)
    C1: tuple                    # |u|^2 eta^(2m-1) across the sweep
    C2: tuple                    # gap^2 / eta^(2(p-m)+1)

    @property
    def expected_norm_slope(self) -> float:
        return (2 * self.m - 1) / 2.0

    @property
    def expected_err_slope(self) -> float:
        return (2 * (self.p - self.m) + 1) / 2.0

    @property
    def expected_combined_slope(self) -> float:
        return (2 * self.m - 1) / (2 * (self.p - self.m) + 1)


def verify_rates(m: int, p: int, eta_grid, T: float = 1.0) -> RateReport:
    """Measure the norm-growth and weak-error power laws over an eta sweep."""
    etas = sorted(float(e) for e in eta_grid)
    if len(etas) < 5:
        raise ValueError("need an eta grid of at least 5 points")
    l2s, errs = [], []
    for eta in etas:
        d = build(m, p, eta, T)
        l2s.append(d.l2)
        errs.append(d.h_error)
    l2s_a, errs_a, etas_a = map(np.asarray, (l2s, errs, etas))
    norm_slope = float(np.polyfit(np.log(1.0 / etas_a), np.log(l2s_a), 1)[0])
    err_slope = float(np.polyfit(np.log(etas_a), np.log(errs_a), 1)[0])
    combined = float(np.polyfit(np.log(1.0 / errs_a), np.log(l2s_a), 1)[0])
    C1 = tuple(l2s_a ** 2 * etas_a ** (2 * m - 1))
    C2 = tuple(errs_a ** 2 / etas_a ** (2 * (p - m) + 1))
    return RateReport(m=m, p=p, etas=tuple(etas), l2_norms=tuple(l2s), h_errors=tuple(errs),
                      norm_slope=norm_slope, err_slope=err_slope, combined_slope=combined,
                      C1=C1, C2=C2)
