"""Independent oracles used by the test suite.

These deliberately avoid the package's solver paths: the reduced LQ
optimum is recomputed as a dense equality-constrained quadratic program
over sampled controls, and the approximant norms are integrated exactly
through polynomial coefficient arithmetic.
"""

import math

import numpy as np
from scipy.linalg import expm


def qp_reduced_optimum(A, Br, P, Qr, Rr, E, T, x0, xT, n_nodes=257):
    """Direct discretized minimum of the reduced problem.

    Controls are piecewise linear on the grid (values at nodes), states
    propagate exactly per step via a block matrix exponential, the cost
    uses composite Simpson weights, and the endpoint constraint
    x(T) - xT in span(E) closes a dense KKT system.  Returns the
    minimum value.
    """
    A, Br, P, Qr, Rr = map(np.atleast_2d, (A, Br, P, Qr, Rr))
    n, k = Br.shape
    steps = n_nodes - 1
    h = T / steps

    M = np.zeros((n + 2 * k, n + 2 * k))
    M[:n, :n] = A
    M[:n, n:n + k] = Br
    M[n:n + k, n + k:] = np.eye(k)
    Z = expm(M * h)
    Ed, G1, G2 = Z[:n, :n], Z[:n, n:n + k], Z[:n, n + k:]
    F1 = G2 / h
    F0 = G1 - F1

    # x_i = S_i x0 + sum_j W[i][j] v_j   (affine in the stacked controls)
    nv = n_nodes * k
    S = np.empty((n_nodes, n, n))
    W = np.zeros((n_nodes, n, nv))
    S[0] = np.eye(n)
    for i in range(steps):
        S[i + 1] = Ed @ S[i]
        W[i + 1] = Ed @ W[i]
        W[i + 1][:, i * k:(i + 1) * k] += F0
        W[i + 1][:, (i + 1) * k:(i + 2) * k] += F1

    if n_nodes % 2 == 0:
        raise ValueError("need an odd node count for Simpson weights")
    wts = np.ones(n_nodes)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    wts *= h / 3.0

    # quadratic cost in z = (v stacked, c): 0.5 z'Hz + g'z + const
    pc = E.shape[1]
    H = np.zeros((nv + pc, nv + pc))
    g = np.zeros(nv + pc)
    const = 0.0
    for i in range(n_nodes):
        Wi = W[i]
        xi0 = S[i] @ x0
        sel = np.zeros((k, nv))
        sel[:, i * k:(i + 1) * k] = np.eye(k)
        # (x'Px + 2v'Qx + v'Rv) with x = xi0 + Wi v
        H[:nv, :nv] += 2.0 * wts[i] * (Wi.T @ P @ Wi + sel.T @ Qr @ Wi
                                       + Wi.T @ Qr.T @ sel + sel.T @ Rr @ sel)
        g[:nv] += 2.0 * wts[i] * (Wi.T @ P @ xi0 + sel.T @ Qr @ xi0)
        const += wts[i] * float(xi0 @ P @ xi0)

    # constraint x_N - E c = xT
    C = np.zeros((n, nv + pc))
    C[:, :nv] = W[-1]
    C[:, nv:] = -E
    d = xT - S[-1] @ x0

    KKT = np.zeros((nv + pc + n, nv + pc + n))
    KKT[:nv + pc, :nv + pc] = H
    KKT[:nv + pc, nv + pc:] = C.T
    KKT[nv + pc:, :nv + pc] = C
    rhs = np.concatenate([-g, d])
    sol = np.linalg.solve(KKT, rhs)
    z = sol[:nv + pc]
    return float(0.5 * z @ H @ z + g @ z + const)


def _poly_mul(a, b):
    return np.convolve(a, b)


def _poly_int(coeffs, upper):
    """Exact integral over [0, upper] of a polynomial (ascending coeffs)."""
    total = 0.0
    for i, c in enumerate(coeffs):
        total += c * upper ** (i + 1) / (i + 1)
    return total


def approximant_l2sq(alpha, m, p, eta):
    """Exact squared L2 norm of the approximant profile on [0, eta]."""
    coeffs = np.array([alpha[i] / (math.factorial(i) * eta ** (m + i)) for i in range(p)])
    return _poly_int(_poly_mul(coeffs, coeffs), eta)


def approximant_herrsq(alpha, m, p, eta):
    """Exact squared weak-norm error of the approximant on [0, eta]."""
    # psi - comparator as one polynomial of degree 2p-1 (coeff of t^j)
    coeffs = np.zeros(2 * p)
    for i in range(p):
        coeffs[p + i] = alpha[i] / (math.factorial(p + i) * eta ** (m + i))
    coeffs[p - m] -= 1.0 / math.factorial(p - m)
    return _poly_int(_poly_mul(coeffs, coeffs), eta)


def rk4_linear_reference(A, B, u_values, dt, x0):
    """Matrix-exponential reference trajectory for linear dynamics.

    Exact for piecewise-linear inputs via the same one-step identity the
    oracle QP uses; serves as the comparison path for the fixed-step
    nonlinear integrator on linear systems.
    """
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    n, k = B.shape
    M = np.zeros((n + 2 * k, n + 2 * k))
    M[:n, :n] = A
    M[:n, n:n + k] = B
    M[n:n + k, n + k:] = np.eye(k)
    Z = expm(M * dt)
    Ed, G1, G2 = Z[:n, :n], Z[:n, n:n + k], Z[:n, n + k:]
    F1 = G2 / dt
    F0 = G1 - F1
    u = np.atleast_2d(u_values)
    out = np.empty((u.shape[0], n))
    out[0] = x0
    for i in range(u.shape[0] - 1):
        out[i + 1] = Ed @ out[i] + F0 @ u[i] + F1 @ u[i + 1]
    return out
