"""Uniform-grid sampled signals and quadrature-backed norms.

A :class:`SampledSignal` is a vector-valued function on ``[0, T]``
sampled on a uniform grid.  Primitivization (running integral from 0)
uses cumulative trapezoid so that it stays a linear operator on the
grid and is exact on piecewise-linear signals; norms use composite
Simpson.  The weak norm of negative order p is the L2 norm of the
p-fold primitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson


@dataclass(frozen=True)
class SampledSignal:
    """Vector-valued samples on a uniform grid over [0, T].

    ``values`` has shape (n_points, dim); ``dt`` is the grid step so
    that the signal lives on [0, dt*(n_points-1)].
    """

    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 2:
            raise ValueError("signal needs a 2-D (n_points, dim) array with >= 2 grid points")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def duration(self) -> float:
        return self.dt * (self.n_points - 1)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_points)

    def component(self, j: int) -> np.ndarray:
        return self.values[:, j]

    def __add__(self, other: "SampledSignal") -> "SampledSignal":
        self._check_compatible(other)
        return SampledSignal(self.values + other.values, self.dt)

    def __sub__(self, other: "SampledSignal") -> "SampledSignal":
        self._check_compatible(other)
        return SampledSignal(self.values - other.values, self.dt)

    def __rmul__(self, a: float) -> "SampledSignal":
        return SampledSignal(float(a) * self.values, self.dt)

    def _check_compatible(self, other: "SampledSignal") -> None:
        if self.values.shape != other.values.shape or not np.isclose(self.dt, other.dt):
            raise ValueError("signals live on different grids")


def uniform_grid(T: float, n_intervals: int) -> tuple[np.ndarray, float]:
    """Times and step of the uniform grid with ``n_intervals`` steps on [0, T]."""
    if n_intervals < 1:
        raise ValueError("need at least one interval")
    dt = T / n_intervals
    return dt * np.arange(n_intervals + 1), dt


def grid_for_feature(T: float, feature: float, samples_per_feature: int = 64,
                     min_intervals: int = 4096, max_intervals: int = 1 << 21) -> int:
    """Interval count resolving the smallest feature with the required samples.

    Snaps so that an integer number of steps covers one feature whenever
    T is an integer multiple of the feature (the dyadic case used by the
    sweeps), and never returns fewer than ``min_intervals``.
    """
    if feature <= 0 or feature > T:
        raise ValueError("feature must lie in ]0, T]")
    n = samples_per_feature * int(np.ceil(T / feature))
    n = max(n, min_intervals)
    if n > max_intervals:
        raise MemoryError(f"grid of {n} intervals exceeds the cap {max_intervals}")
    return n


def primitive(u: SampledSignal) -> SampledSignal:
    """Running integral from 0, cumulative trapezoid, same grid."""
    vals = cumulative_trapezoid(u.values, dx=u.dt, axis=0, initial=0.0)
    return SampledSignal(vals, u.dt)


def iterated_primitive(u: SampledSignal, p: int) -> SampledSignal:
    for _ in range(p):
        u = primitive(u)
    return u


def l2_norm(s: SampledSignal) -> float:
    """L2[0,T] norm by composite Simpson of the squared magnitude."""
    sq = np.sum(s.values * s.values, axis=1)
    return float(np.sqrt(max(simpson(sq, dx=s.dt), 0.0)))


def h_minus_norm(s: SampledSignal, p: int) -> float:
    """Weak norm of order -p: L2 norm of the p-fold primitive."""
    if p < 0:
        raise ValueError("order p must be >= 0")
    return l2_norm(iterated_primitive(s, p))


def simpson_quad(y: np.ndarray, dt: float) -> float:
    """Composite Simpson on uniformly sampled scalar data."""
    return float(simpson(np.asarray(y, dtype=float), dx=dt))


# One-sided / central finite-difference stencils for the first derivative,
# all 4th-order accurate.  Rows: offsets 0..5 from the evaluation point.
_FD_FORWARD = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FD_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def grid_derivative(values: np.ndarray, dt: float, order: int = 1) -> np.ndarray:
    """Differentiate uniformly sampled data ``order`` times.

    4th-order central stencils inside, 4th-order one-sided stencils at
    the first/last two nodes, so boundary values converge for analytic
    samples (needed when reading impulse coefficients off the ends).
    """
    y = np.asarray(values, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    for _ in range(order):
        if y.shape[0] < 6:
            raise ValueError("too few grid points for 4th-order differentiation")
        d = np.empty_like(y)
        d[2:-2] = (y[:-4] * _FD_CENTRAL[0] + y[1:-3] * _FD_CENTRAL[1]
                   + y[3:-1] * _FD_CENTRAL[3] + y[4:] * _FD_CENTRAL[4]) / dt
        for i in (0, 1):
            d[i] = _FD_FORWARD @ y[i:i + 5] / dt
            d[-1 - i] = -(_FD_FORWARD @ y[-1 - i::-1][:5]) / dt
        y = d
    return y[:, 0] if squeeze else y


def resample(s: SampledSignal, times: np.ndarray, dt_new: float) -> SampledSignal:
    """Linear-interpolation resampling onto a new uniform grid."""
    out = np.empty((len(times), s.dim))
    for j in range(s.dim):
        out[:, j] = np.interp(times, s.times, s.values[:, j])
    return SampledSignal(out, dt_new)
