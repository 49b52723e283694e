"""Exact discrete stepping for LTI systems with piecewise-linear inputs.

For x' = A x + B u with u linear between grid nodes, one step of length
dt is exact:  x_{k+1} = E x_k + F0 u_k + F1 u_{k+1}, with (E, F0, F1)
read off a single block matrix exponential (Van Loan).  The recursion is
then applied in blocks through a precomputed lower-triangular Toeplitz
operator, which keeps the whole response a handful of BLAS calls instead
of a per-step Python loop.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm


def step_matrices(A: np.ndarray, B: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact one-step propagator (E, F0, F1) for piecewise-linear input."""
    n, k = B.shape
    M = np.zeros((n + 2 * k, n + 2 * k))
    M[:n, :n] = A
    M[:n, n:n + k] = B
    M[n:n + k, n + k:] = np.eye(k)
    Z = expm(M * dt)
    E = Z[:n, :n]
    G1 = Z[:n, n:n + k]
    G2 = Z[:n, n + k:]
    F1 = G2 / dt
    F0 = G1 - F1
    return E, F0, F1


class _BlockToeplitz:
    """Precomputed convolution operator for a block of exact steps."""

    def __init__(self, E: np.ndarray, block: int):
        n = E.shape[0]
        self.n = n
        self.block = block
        pows = np.empty((block + 1, n, n))
        pows[0] = np.eye(n)
        for j in range(1, block + 1):
            pows[j] = E @ pows[j - 1]
        self.pows = pows
        # T[j-1, s] = E^(j-1-s) for s < j; x_rel[j] = sum_s T[j-1,s] g_s
        T = np.zeros((block, block, n, n))
        for d in range(block):
            j = np.arange(d + 1, block + 1)
            T[j - 1, j - 1 - d] = pows[d]
        self.T = T.transpose(0, 2, 1, 3).reshape(block * n, block * n)

    def advance(self, x0: np.ndarray, g: np.ndarray) -> np.ndarray:
        """States x_1..x_m from x_0 and forcing g_0..g_{m-1} (m <= block)."""
        m = g.shape[0]
        n = self.n
        if m == self.block:
            rel = (self.T @ g.reshape(-1)).reshape(m, n)
        else:
            Tm = self.T[:m * n, :m * n]
            rel = (Tm @ g.reshape(-1)).reshape(m, n)
        return rel + self.pows[1:m + 1] @ x0


def lsim_exact(A: np.ndarray, B: np.ndarray, u: np.ndarray, dt: float,
               x0: np.ndarray, block: int = 256) -> np.ndarray:
    """Exact trajectory of x' = Ax + Bu for piecewise-linear sampled u.

    ``u`` has shape (n_points, k); the result has shape (n_points, n).
    Exact up to the accuracy of the matrix exponential, independent of
    how stiff the step recursion would be for a naive ODE integrator.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    n = A.shape[0]
    E, F0, F1 = step_matrices(A, B, dt)
    g = u[:-1] @ F0.T + u[1:] @ F1.T
    steps = g.shape[0]
    op = _BlockToeplitz(E, min(block, steps))
    x = np.empty((steps + 1, n))
    x[0] = np.asarray(x0, dtype=float).reshape(n)
    pos = 0
    while pos < steps:
        m = min(op.block, steps - pos)
        x[pos + 1:pos + 1 + m] = op.advance(x[pos], g[pos:pos + m])
        pos += m
    return x


def propagate_homogeneous(M: np.ndarray, z0: np.ndarray, n_points: int, dt: float) -> np.ndarray:
    """Sampled solution of z' = Mz on a uniform grid (n_points nodes)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    E = expm(M * dt)
    z = np.empty((n_points, n))
    z[0] = np.asarray(z0, dtype=float).reshape(n)
    block = min(256, n_points - 1)
    pows = np.empty((block + 1, n, n))
    pows[0] = np.eye(n)
    for j in range(1, block + 1):
        pows[j] = E @ pows[j - 1]
    pos = 0
    while pos < n_points - 1:
        m = min(block, n_points - 1 - pos)
        z[pos + 1:pos + 1 + m] = pows[1:m + 1] @ z[pos]
        pos += m
    return z
