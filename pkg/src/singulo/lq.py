"""Singular LQ problem instances and control-coordinate normalization.

The cost is  J(u) = int_0^T  x'Px + 2u'Qx + u'Ru dt  along x' = Ax + Bu,
with R symmetric positive semidefinite.  ``normalize_controls`` rotates
the control space so R becomes diag(R00, 0) with R00 positive definite,
which is the form the desingularization recursion starts from.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from singulo.errors import ProblemInvalid

TOL_PSD = 1e-9          # kernel detection threshold, relative to lambda_max(R)
SYMMETRIZE_WARN = 1e-8  # asymmetry beyond this is reported on load


def _as_matrix(M, name: str) -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim == 0:
        A = A.reshape(1, 1)
    elif A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2:
        raise ProblemInvalid(f"{name} must be a matrix")
    return A


@dataclass(frozen=True)
class LQProblem:
    """A (possibly singular) linear-quadratic problem instance.

    ``horizon`` is a positive float or ``np.inf``; ``xT`` is required
    exactly when the horizon is finite and the endpoint is constrained.
    P and R are symmetrized on construction (serialization noise is
    tolerated up to a warning threshold).
    """

    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    horizon: float
    x0: np.ndarray
    xT: Optional[np.ndarray] = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        P = _as_matrix(self.P, "P")
        Q = _as_matrix(self.Q, "Q")
        R = _as_matrix(self.R, "R")
        for name, M in (("P", P), ("R", R)):
            asym = np.linalg.norm(M - M.T)
            if asym > SYMMETRIZE_WARN * (1.0 + np.linalg.norm(M)):
                warnings.warn(f"{name} asymmetric beyond tolerance (|{name}-{name}'| = {asym:.3e}); symmetrizing")
        P = 0.5 * (P + P.T)
        R = 0.5 * (R + R.T)
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        xT = None if self.xT is None else np.asarray(self.xT, dtype=float).reshape(-1)
        for name, val in (("A", A), ("B", B), ("P", P), ("Q", Q), ("R", R), ("x0", x0), ("xT", xT)):
            object.__setattr__(self, name, val)
        for arr in (A, B, P, Q, R, x0) + (() if xT is None else (xT,)):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def k(self) -> int:
        return self.B.shape[1]

    @property
    def finite_horizon(self) -> bool:
        return np.isfinite(self.horizon)


def validate(problem: LQProblem) -> list[str]:
    """Structural validation; returns the list of violated conditions.

    Report-style: an empty list means the instance is well formed.  The
    deeper admissibility conditions (zero commutator, PSD of the reduced
    weights) are checked level by level during desingularization.
    """
    v: list[str] = []
    n = problem.A.shape[0]
    if problem.A.shape != (n, n):
        v.append("dimension mismatch: A must be square")
    k = problem.B.shape[1]
    if problem.B.shape[0] != n:
        v.append(f"dimension mismatch: B has {problem.B.shape[0]} rows, expected {n}")
    if problem.P.shape != (n, n):
        v.append(f"dimension mismatch: P must be {n}x{n}")
    if problem.Q.shape != (k, n):
        v.append(f"dimension mismatch: Q must be {k}x{n}")
    if problem.R.shape != (k, k):
        v.append(f"dimension mismatch: R must be {k}x{k}")
    if problem.x0.shape != (n,):
        v.append(f"dimension mismatch: x0 must have length {n}")
    if problem.xT is not None and problem.xT.shape != (n,):
        v.append(f"dimension mismatch: xT must have length {n}")
    if not (problem.horizon > 0):
        v.append("horizon must be positive")
    if problem.R.shape == (k, k):
        lam = np.linalg.eigvalsh(problem.R)
        if lam.size and lam[0] < -TOL_PSD * max(1.0, lam[-1] if lam[-1] > 0 else 1.0):
            v.append(f"R not PSD (min eigenvalue {lam[0]:.3e})")
    return v


@dataclass(frozen=True)
class NormalizedLQ:
    """LQ problem with the control basis rotated so R = diag(R00, 0).

    ``S`` is the orthogonal change of control basis (original = S @ new);
    the positive block R00 is diagonal with descending eigenvalues.
    """

    base: LQProblem
    S: np.ndarray
    k0: int
    R00: np.ndarray
    B00: np.ndarray
    B01: np.ndarray
    Q00: np.ndarray
    Q01: np.ndarray


def normalize_controls(problem: LQProblem, tol_psd: float = TOL_PSD) -> NormalizedLQ:
    """Rotate control coordinates to split R into a PD block and a kernel.

    Eigenvalues above tol_psd * max(1, lambda_max(R)) are retained in the
    positive block (descending order, deterministic eigenvector signs);
    B and Q are re-expressed in the new basis and split accordingly.
    """
    violations = validate(problem)
    if violations:
        raise ProblemInvalid("; ".join(violations))
    R = problem.R
    k = R.shape[0]
    lam, V = np.linalg.eigh(R)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], V[:, order]
    tau = tol_psd * max(1.0, lam[0] if lam.size and lam[0] > 0 else 1.0)
    k0 = int(np.sum(lam > tau))
    if k0 == 0:
        # fully singular control weight: keep the original basis
        S = np.eye(k)
        lam = np.zeros(k)
    else:
        # deterministic eigenvector signs: largest |entry| positive
        for j in range(k):
            i = int(np.argmax(np.abs(V[:, j])))
            if V[i, j] < 0:
                V[:, j] = -V[:, j]
        S = V
    Bn = problem.B @ S
    Qn = S.T @ problem.Q
    return NormalizedLQ(
        base=problem,
        S=S,
        k0=k0,
        R00=np.diag(lam[:k0]),
        B00=Bn[:, :k0],
        B01=Bn[:, k0:],
        Q00=Qn[:k0, :],
        Q01=Qn[k0:, :],
    )


def load_problem(path: str) -> LQProblem:
    """Read a problem from its JSON file form.

    Keys: "A","B","P","Q","R" (row-major nested arrays), "T" (number or
    "inf"), "x0", "xT" (optional).  Parse errors name the offending key.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return problem_from_dict(raw)


def problem_from_dict(raw: dict) -> LQProblem:
    def grab(key, required=True):
        if key not in raw:
            if required:
                raise ProblemInvalid(f"problem file missing key '{key}'")
            return None
        return raw[key]

    mats = {}
    for key in ("A", "B", "P", "Q", "R"):
        try:
            mats[key] = _as_matrix(np.array(grab(key), dtype=float), key)
        except (TypeError, ValueError) as exc:
            raise ProblemInvalid(f"key '{key}' is not a numeric matrix: {exc}") from None
    T_raw = grab("T")
    if isinstance(T_raw, str):
        if T_raw.lower() not in ("inf", "infinity"):
            raise ProblemInvalid("key 'T' must be a positive number or \"inf\"")
        horizon = np.inf
    else:
        try:
            horizon = float(T_raw)
        except (TypeError, ValueError):
            raise ProblemInvalid("key 'T' must be a positive number or \"inf\"") from None
    try:
        x0 = np.asarray(grab("x0"), dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ProblemInvalid("key 'x0' is not a numeric vector") from None
    xT = None
    if raw.get("xT") is not None:
        try:
            xT = np.asarray(raw["xT"], dtype=float).reshape(-1)
        except (TypeError, ValueError):
            raise ProblemInvalid("key 'xT' is not a numeric vector") from None
    return LQProblem(A=mats["A"], B=mats["B"], P=mats["P"], Q=mats["Q"], R=mats["R"],
                     horizon=horizon, x0=x0, xT=xT)
