import numpy as np
import pytest

from singulo.signals import (
    SampledSignal,
    grid_derivative,
    grid_for_feature,
    h_minus_norm,
    iterated_primitive,
    l2_norm,
    primitive,
    resample,
)


def _sig(fn, n=257, T=1.0, dim=1):
    t = np.linspace(0.0, T, n)
    vals = np.column_stack([fn(t)] * dim)
    return SampledSignal(vals, T / (n - 1))


def test_signal_validation():
    with pytest.raises(ValueError):
        SampledSignal(np.zeros((1, 2)), 0.1)
    with pytest.raises(ValueError):
        SampledSignal(np.zeros((5, 2)), -1.0)
    s = SampledSignal(np.zeros(5), 0.25)
    assert s.dim == 1 and s.n_points == 5 and s.duration == pytest.approx(1.0)


def test_primitive_of_zero_and_constant():
    z = _sig(lambda t: 0.0 * t)
    assert np.all(primitive(z).values == 0.0)
    one = _sig(lambda t: np.ones_like(t))
    p = primitive(one)
    assert np.max(np.abs(p.values[:, 0] - one.times)) < 1e-12


def test_primitive_exact_on_linear():
    lin = _sig(lambda t: t)
    p = primitive(lin)
    assert np.max(np.abs(p.values[:, 0] - lin.times ** 2 / 2)) < 1e-12


def test_iterated_primitive_polynomial():
    one = _sig(lambda t: np.ones_like(t))
    p2 = iterated_primitive(one, 2)
    assert np.max(np.abs(p2.values[:, 0] - one.times ** 2 / 2)) < 1e-12


def test_l2_norms():
    assert l2_norm(_sig(lambda t: 0.0 * t)) == 0.0
    assert l2_norm(_sig(lambda t: np.ones_like(t))) == pytest.approx(1.0, abs=1e-12)
    # box of height 1/eta on [0, eta]: squared norm 1/eta
    eta = 0.125
    n = 1025
    t = np.linspace(0, 1, n)
    vals = np.where(t < eta, 1 / eta, 0.0)
    vals[t == eta] = 0.5 / eta
    sq = l2_norm(SampledSignal(vals, 1 / (n - 1))) ** 2
    assert sq == pytest.approx(1 / eta, rel=2e-2)


def test_h_minus_norm_matches_manual():
    s = _sig(lambda t: np.sin(3 * t), n=2049)
    manual = l2_norm(iterated_primitive(s, 2))
    assert h_minus_norm(s, 2) == pytest.approx(manual, rel=1e-14)


def test_grid_derivative_polynomial_and_sin():
    n, T = 513, 2.0
    t = np.linspace(0, T, n)
    dt = T / (n - 1)
    cubic = t ** 3 - 2 * t
    d = grid_derivative(cubic, dt)
    assert np.max(np.abs(d - (3 * t ** 2 - 2))) < 1e-9
    s = np.sin(2 * t)
    d2 = grid_derivative(s, dt, order=2)
    assert np.max(np.abs(d2 + 4 * np.sin(2 * t))) < 1e-5


def test_grid_for_feature():
    assert grid_for_feature(1.0, 2.0 ** -4, samples_per_feature=64, min_intervals=16) == 1024
    with pytest.raises(ValueError):
        grid_for_feature(1.0, 2.0)
    with pytest.raises(MemoryError):
        grid_for_feature(1.0, 1e-9, max_intervals=10 ** 6)


def test_resample_linear():
    s = _sig(lambda t: 2 * t + 1, n=33)
    fine = np.linspace(0, 1, 257)
    r = resample(s, fine, 1 / 256)
    assert np.max(np.abs(r.values[:, 0] - (2 * fine + 1))) < 1e-12
