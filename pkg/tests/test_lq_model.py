import json

import numpy as np
import pytest

from singulo.errors import ProblemInvalid
from singulo.lq import LQProblem, load_problem, normalize_controls, validate


def scalar_problem(**kw):
    base = dict(A=[[0.0]], B=[[1.0]], P=[[1.0]], Q=[[0.0]], R=[[0.0]],
                horizon=1.0, x0=[1.0], xT=[1.0])
    base.update(kw)
    return LQProblem(**base)


def test_validate_well_formed_scalar():
    assert validate(scalar_problem()) == []


def test_validate_flags_indefinite_R():
    p = LQProblem(A=np.zeros((2, 2)), B=np.eye(2), P=np.eye(2), Q=np.zeros((2, 2)),
                  R=[[1.0, 0.0], [0.0, -1.0]], horizon=1.0, x0=[0, 0], xT=[0, 0])
    assert any("not PSD" in v for v in validate(p))


def test_validate_flags_dimension_mismatch():
    p = LQProblem(A=np.zeros((3, 3)), B=np.zeros((2, 1)), P=np.eye(3), Q=np.zeros((1, 3)),
                  R=[[0.0]], horizon=1.0, x0=[0, 0, 0], xT=[0, 0, 0])
    assert any("dimension mismatch" in v for v in validate(p))


def test_symmetrization_warns_and_applies():
    with pytest.warns(UserWarning, match="symmetriz"):
        p = LQProblem(A=np.zeros((2, 2)), B=np.eye(2), P=[[1.0, 0.5], [0.0, 1.0]],
                      Q=np.zeros((2, 2)), R=np.zeros((2, 2)), horizon=1.0,
                      x0=[0, 0], xT=[0, 0])
    assert np.allclose(p.P, p.P.T)


def test_normalize_identity_case():
    p = LQProblem(A=np.zeros((2, 2)), B=np.eye(2), P=np.eye(2), Q=np.zeros((2, 2)),
                  R=np.diag([1.0, 0.0]), horizon=1.0, x0=[0, 0], xT=[0, 0])
    norm = normalize_controls(p)
    assert norm.k0 == 1
    assert np.allclose(norm.S, np.eye(2))
    assert np.allclose(norm.R00, [[1.0]])


def test_normalize_swap_case():
    p = LQProblem(A=np.zeros((2, 2)), B=np.eye(2), P=np.eye(2), Q=np.zeros((2, 2)),
                  R=[[0.0, 0.0], [0.0, 2.0]], horizon=1.0, x0=[0, 0], xT=[0, 0])
    norm = normalize_controls(p)
    assert norm.k0 == 1
    assert np.allclose(norm.R00, [[2.0]])
    assert np.allclose(np.abs(norm.S), [[0, 1], [1, 0]])


def test_normalize_fully_singular():
    p = LQProblem(A=np.zeros((2, 2)), B=np.arange(4.0).reshape(2, 2), P=np.eye(2),
                  Q=np.ones((2, 2)), R=np.zeros((2, 2)), horizon=1.0, x0=[0, 0], xT=[0, 0])
    norm = normalize_controls(p)
    assert norm.k0 == 0
    assert np.allclose(norm.S, np.eye(2))
    assert np.allclose(norm.B01, p.B)
    assert np.allclose(norm.Q01, p.Q)


def test_normalize_rejects_invalid():
    p = LQProblem(A=np.zeros((3, 3)), B=np.zeros((2, 1)), P=np.eye(3), Q=np.zeros((1, 3)),
                  R=[[0.0]], horizon=1.0, x0=[0, 0, 0], xT=[0, 0, 0])
    with pytest.raises(ProblemInvalid):
        normalize_controls(p)


def test_normalization_basis_independence():
    rng = np.random.default_rng(7)
    A = rng.standard_normal((3, 3))
    B = rng.standard_normal((3, 3))
    Q = rng.standard_normal((3, 3))
    R = np.diag([2.0, 0.5, 0.0])
    base = LQProblem(A=A, B=B, P=np.eye(3), Q=Q, R=R, horizon=1.0,
                     x0=np.zeros(3), xT=np.zeros(3))
    U, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rotated = LQProblem(A=A, B=B @ U, P=np.eye(3), Q=U.T @ Q, R=U.T @ R @ U,
                        horizon=1.0, x0=np.zeros(3), xT=np.zeros(3))
    n1, n2 = normalize_controls(base), normalize_controls(rotated)
    assert n1.k0 == n2.k0
    assert np.allclose(np.diag(n1.R00), np.diag(n2.R00), rtol=1e-10, atol=1e-12)


def test_normalization_reconstruction():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((4, 4))
    R = M @ np.diag([3.0, 1.0, 0.0, 0.0]) @ M.T
    R = 0.5 * (R + R.T)
    # clip tiny negative eigenvalues introduced by the outer product
    lam, V = np.linalg.eigh(R)
    R = V @ np.diag(np.clip(lam, 0, None)) @ V.T
    p = LQProblem(A=np.zeros((4, 4)), B=rng.standard_normal((4, 4)), P=np.eye(4),
                  Q=np.zeros((4, 4)), R=R, horizon=1.0, x0=np.zeros(4), xT=np.zeros(4))
    norm = normalize_controls(p)
    lam_max = np.linalg.eigvalsh(R)[-1]
    rebuilt = np.zeros((4, 4))
    rebuilt[:norm.k0, :norm.k0] = norm.R00
    assert np.linalg.norm(norm.S.T @ R @ norm.S - rebuilt) <= 1e-10 * (1 + lam_max)
    assert np.linalg.norm(norm.S.T @ norm.S - np.eye(4)) <= 1e-12


def test_load_problem_roundtrip(tmp_path):
    path = tmp_path / "prob.json"
    path.write_text(json.dumps({
        "A": [[0.0]], "B": [[1.0]], "P": [[1.0]], "Q": [[0.0]], "R": [[0.0]],
        "T": 1.0, "x0": [1.0], "xT": [1.0]}))
    p = load_problem(str(path))
    assert p.finite_horizon and p.horizon == 1.0
    assert validate(p) == []


def test_load_problem_infinite_horizon(tmp_path):
    path = tmp_path / "prob.json"
    path.write_text(json.dumps({
        "A": [[-1.0]], "B": [[1.0]], "P": [[1.0]], "Q": [[0.0]], "R": [[1.0]],
        "T": "inf", "x0": [1.0]}))
    p = load_problem(str(path))
    assert not p.finite_horizon


@pytest.mark.parametrize("key", ["A", "B", "P", "Q", "R", "T", "x0"])
def test_load_problem_errors_name_offending_key(tmp_path, key):
    good = {"A": [[0.0]], "B": [[1.0]], "P": [[1.0]], "Q": [[0.0]], "R": [[0.0]],
            "T": 1.0, "x0": [1.0], "xT": [1.0]}
    bad = dict(good)
    bad[key] = "bogus" if key != "T" else "sometimes"
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(bad))
    with pytest.raises(ProblemInvalid, match=f"'{key}'"):
        load_problem(str(path))
