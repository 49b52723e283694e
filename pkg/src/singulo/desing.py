"""Multistep desingularization of a singular LQ problem.

One step trades the singular control block for its primitive and updates
the blocks:

    B_new = (A - B+ R+^-1 Q+) Bs + B+ R+^-1 B+' Qs'
    Q_new = Bs' (P - Q+' R+^-1 Q+) - Qs (A - B+ R+^-1 Q+)
    R_new = Q_new Bs - B_new' Qs'

where (B+, Q+, R+) collect every positive block found so far and
(Bs, Qs) is the current singular block.  Admissibility at each level
requires the zero commutator   Qs Bs - Bs' Qs' = 0   and R_new PSD.
With the standing hypotheses the recursion terminates in at most n
levels with a positive-definite reduced weight; the number of levels
used is the order of singularity r.

Control coordinates are re-mixed at every level (eigenbasis of R_new),
so the chain tracks, for the final group layout u = (u_0,...,u_r):

  * diagonal blocks  B[j,j], Q[j,j], R[j]          (reduced problem data),
  * coupling blocks  B[i,j], Q[i,j] for i < j      (jump basis and the
    reduced-control operator coefficients),
  * the orthogonal map from stacked group coordinates back to the
    original control basis.

The reduced-control operator maps u to v by

    v_i = phi^i u_i
          + R[i]^-1 sum_{i<=q<l<=r} (Q[i,i] B[q,l] - B[i,i]' Q[q,l]') phi^(q+1) u_l
    v_r = phi^r u_r

with phi the running integral; ``gamma_apply`` evaluates it on a grid.
The trajectory identity

    x_{x0,u} = x^r_{x0, gamma u} + sum_{i<j} B[i,j] phi^(i+1) u_j

ties the original and reduced systems together and is what the jump
decomposition of generalized minimizers rests on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from singulo.errors import CommutativityViolated, NotPSD, OrderExceeded
from singulo.lq import TOL_PSD, NormalizedLQ
from singulo.signals import SampledSignal, iterated_primitive


def _tol_comm(Q_sing: np.ndarray, B_sing: np.ndarray) -> float:
    return 1e-8 * (1.0 + np.linalg.norm(Q_sing) * np.linalg.norm(B_sing))


def _canonical_signs(V: np.ndarray) -> np.ndarray:
    V = V.copy()
    for j in range(V.shape[1]):
        i = int(np.argmax(np.abs(V[:, j])))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    return V


@dataclass(frozen=True)
class DesingStep:
    """State of the recursion after ``level`` steps.

    ``B_diag/Q_diag/R_diag`` hold the positive groups resolved so far
    (sizes may be zero); ``B_sing/Q_sing`` is the still-singular block.
    ``B_hist[q]/Q_hist[q]`` are the images of the current singular
    columns at earlier levels q <= level; when columns resolve into a
    group these histories become the coupling blocks, recorded in
    ``new_offdiag_B/Q`` of the resolving step.  ``mix`` and ``new_mix``
    carry the original-basis directions of the singular columns and of
    the group resolved at this level.
    """

    level: int
    B_diag: tuple
    Q_diag: tuple
    R_diag: tuple
    B_sing: np.ndarray
    Q_sing: np.ndarray
    B_hist: tuple
    Q_hist: tuple
    mix: np.ndarray
    new_mix: np.ndarray
    new_offdiag_B: tuple
    new_offdiag_Q: tuple
    commutativity_residual: float

    @property
    def k_sing(self) -> int:
        return self.B_sing.shape[1]


def initial_step(norm: NormalizedLQ) -> DesingStep:
    res = float(np.linalg.norm(norm.Q01 @ norm.B01 - norm.B01.T @ norm.Q01.T))
    return DesingStep(
        level=0,
        B_diag=(norm.B00,),
        Q_diag=(norm.Q00,),
        R_diag=(norm.R00,),
        B_sing=norm.B01,
        Q_sing=norm.Q01,
        B_hist=(norm.B01,),
        Q_hist=(norm.Q01,),
        mix=norm.S[:, norm.k0:],
        new_mix=norm.S[:, :norm.k0],
        new_offdiag_B=(),
        new_offdiag_Q=(),
        commutativity_residual=res,
    )


def desing_step(current: DesingStep, A: np.ndarray, P: np.ndarray,
                tol_psd: float = TOL_PSD) -> DesingStep:
    """Advance the recursion one level.

    Raises CommutativityViolated or NotPSD when the admissibility
    conditions fail (either one signals that the standing hypotheses do
    not hold for the instance).
    """
    Bs, Qs = current.B_sing, current.Q_sing
    if Bs.shape[1] == 0:
        raise ValueError("no singular block left; the chain is already regular")
    comm = Qs @ Bs - Bs.T @ Qs.T
    res = float(np.linalg.norm(comm))
    if res > _tol_comm(Qs, Bs):
        raise CommutativityViolated(
            f"zero-commutator condition fails at level {current.level} (residual {res:.3e})")

    k_pos = sum(R.shape[0] for R in current.R_diag)
    if k_pos > 0:
        Bp = np.hstack([b for b in current.B_diag if b.shape[1]])
        Qp = np.vstack([q for q in current.Q_diag if q.shape[0]])
        Rp_inv = np.diag(1.0 / np.concatenate(
            [np.diag(R) for R in current.R_diag if R.shape[0]]))
        Ared = A - Bp @ Rp_inv @ Qp
        B_new = Ared @ Bs + Bp @ Rp_inv @ Bp.T @ Qs.T
        Q_new = Bs.T @ (P - Qp.T @ Rp_inv @ Qp) - Qs @ Ared
    else:
        # degenerate limit: no positive block yet
        B_new = A @ Bs
        Q_new = Bs.T @ P - Qs @ A
    R_new = Q_new @ Bs - B_new.T @ Qs.T

    scale = max(1.0, float(np.linalg.norm(R_new)))
    sym_defect = float(np.linalg.norm(R_new - R_new.T))
    if sym_defect > 1e-7 * scale:
        raise NotPSD(f"reduced weight candidate asymmetric at level {current.level + 1} "
                     f"(defect {sym_defect:.3e})")
    R_new = 0.5 * (R_new + R_new.T)
    lam, V = np.linalg.eigh(R_new)
    order = np.argsort(lam)[::-1]
    lam, V = lam[order], _canonical_signs(V[:, order])
    tau = tol_psd * max(1.0, lam[0] if lam.size and lam[0] > 0 else 1.0)
    if lam.size and lam[-1] < -tau:
        raise NotPSD(f"reduced weight candidate indefinite at level {current.level + 1} "
                     f"(min eigenvalue {lam[-1]:.3e})")
    k_new = int(np.sum(lam > tau))
    Upos, Uker = V[:, :k_new], V[:, k_new:]

    B_sing_next = B_new @ Uker
    Q_sing_next = Uker.T @ Q_new
    res_next = float(np.linalg.norm(Q_sing_next @ B_sing_next - B_sing_next.T @ Q_sing_next.T))
    return DesingStep(
        level=current.level + 1,
        B_diag=current.B_diag + (B_new @ Upos,),
        Q_diag=current.Q_diag + (Upos.T @ Q_new,),
        R_diag=current.R_diag + (np.diag(lam[:k_new]),),
        B_sing=B_sing_next,
        Q_sing=Q_sing_next,
        B_hist=tuple(H @ Uker for H in current.B_hist) + (B_sing_next,),
        Q_hist=tuple(Uker.T @ G for G in current.Q_hist) + (Q_sing_next,),
        mix=current.mix @ Uker,
        new_mix=current.mix @ Upos,
        new_offdiag_B=tuple(H @ Upos for H in current.B_hist),
        new_offdiag_Q=tuple(Upos.T @ G for G in current.Q_hist),
        commutativity_residual=res_next,
    )


@dataclass(frozen=True)
class DesingChain:
    """Complete output of the desingularization recursion.

    Group j collects the control directions whose weight becomes
    positive definite at level j (sizes may be zero).  ``B[(i, j)]`` and
    ``Q[(i, j)]`` hold the diagonal (i == j) and coupling (i < j)
    blocks; ``jump_basis`` stacks the columns of all B[(i, j)], i < j,
    in lexicographic label order.
    """

    r: int
    n: int
    k: int
    group_sizes: tuple
    B: dict
    Q: dict
    R: dict
    gamma_coeffs: dict           # (i, q, l) -> R[i]^-1 (Q[i,i]B[q,l] - B[i,i]'Q[q,l]')
    jump_basis: np.ndarray
    jump_labels: tuple           # (i, j) label for each jump_basis column block
    control_map: np.ndarray      # k x k orthogonal: stacked group coords -> original coords
    m: int                       # reachability rank of (A, B)
    p: int                       # rank of the jump basis
    steps: tuple = field(repr=False, default=())

    @property
    def stratum_dim(self) -> int:
        return self.n + self.m - 2 * self.p

    @property
    def group_offsets(self) -> tuple:
        off, acc = [], 0
        for s in self.group_sizes:
            off.append(acc)
            acc += s
        return tuple(off)

    def group_slice(self, j: int) -> slice:
        start = self.group_offsets[j]
        return slice(start, start + self.group_sizes[j])

    def jump_column_slices(self) -> dict:
        """Column ranges of each (i, j) block inside ``jump_basis``."""
        out, pos = {}, 0
        for (i, j) in self.jump_labels:
            w = self.B[(i, j)].shape[1]
            out[(i, j)] = slice(pos, pos + w)
            pos += w
        return out

    def level0_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(B, Q, R) of the original problem in stacked group coordinates."""
        Bg = np.hstack([self.B[(0, j)] if j else self.B[(0, 0)] for j in range(self.r + 1)])
        Qg = np.vstack([self.Q[(0, j)] if j else self.Q[(0, 0)] for j in range(self.r + 1)])
        Rg = np.zeros((self.k, self.k))
        k0 = self.group_sizes[0]
        Rg[:k0, :k0] = self.R[0]
        return Bg, Qg, Rg

    def reduced_blocks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Br, Qr, Rr) of the regular reduced problem (diagonal groups)."""
        Br = np.hstack([self.B[(j, j)] for j in range(self.r + 1)])
        Qr = np.vstack([self.Q[(j, j)] for j in range(self.r + 1)])
        Rr = np.zeros((self.k, self.k))
        for j in range(self.r + 1):
            sl = self.group_slice(j)
            Rr[sl, sl] = self.R[j]
        return Br, Qr, Rr

    def to_report(self) -> dict:
        rep = {
            "r": self.r,
            "n": self.n,
            "k": self.k,
            "group_sizes": list(self.group_sizes),
            "m": self.m,
            "p": self.p,
            "stratum_dim": self.stratum_dim,
            "commutativity_residuals": [s.commutativity_residual for s in self.steps],
            "blocks": {f"B[{i},{j}]": self.B[(i, j)].tolist() for (i, j) in sorted(self.B)},
        }
        rep["blocks"].update({f"Q[{i},{j}]": self.Q[(i, j)].tolist() for (i, j) in sorted(self.Q)})
        rep["blocks"].update({f"R[{j}]": self.R[j].tolist() for j in sorted(self.R)})
        return rep


def run_chain(norm: NormalizedLQ, tol_psd: float = TOL_PSD) -> DesingChain:
    """Iterate the desingularization step until the weight is PD.

    Stops at the first level r with R_r positive definite and records
    the group layout, the reduced-control operator coefficients, the
    jump basis, the reachability rank m and the jump-space rank p.
    Raises OrderExceeded past n levels.
    """
    A, P = norm.base.A, norm.base.P
    n, k = norm.base.n, norm.base.k
    steps = [initial_step(norm)]
    while steps[-1].k_sing > 0:
        if steps[-1].level >= n:
            raise OrderExceeded(
                f"no positive-definite weight after {n} levels; standing hypotheses violated")
        steps.append(desing_step(steps[-1], A, P, tol_psd=tol_psd))

    final = steps[-1]
    r = final.level
    group_sizes = tuple(R.shape[0] for R in final.R_diag)
    B: dict = {}
    Q: dict = {}
    R: dict = {}
    for j in range(r + 1):
        B[(j, j)] = final.B_diag[j]
        Q[(j, j)] = final.Q_diag[j]
        R[j] = final.R_diag[j]
    for j in range(1, r + 1):
        step_j = steps[j]
        for i in range(j):
            B[(i, j)] = step_j.new_offdiag_B[i]
            Q[(i, j)] = step_j.new_offdiag_Q[i]

    gamma_coeffs: dict = {}
    for i in range(r):
        if group_sizes[i] == 0:
            continue
        Rii_inv = np.diag(1.0 / np.diag(R[i]))
        for q in range(i, r):
            for l in range(q + 1, r + 1):
                if group_sizes[l] == 0:
                    continue
                gamma_coeffs[(i, q, l)] = Rii_inv @ (
                    Q[(i, i)] @ B[(q, l)] - B[(i, i)].T @ Q[(q, l)].T)

    labels, cols = [], []
    for i in range(r + 1):
        for j in range(i + 1, r + 1):
            if (i, j) in B and B[(i, j)].shape[1] > 0:
                labels.append((i, j))
                cols.append(B[(i, j)])
    jump_basis = np.hstack(cols) if cols else np.zeros((n, 0))

    m = int(np.linalg.matrix_rank(_controllability(A, norm.base.B)))
    p = int(np.linalg.matrix_rank(jump_basis)) if jump_basis.shape[1] else 0

    control_map = np.hstack([steps[j].new_mix for j in range(r + 1)])
    if control_map.shape != (k, k):
        raise AssertionError("group bookkeeping lost control directions")

    return DesingChain(
        r=r, n=n, k=k,
        group_sizes=group_sizes,
        B=B, Q=Q, R=R,
        gamma_coeffs=gamma_coeffs,
        jump_basis=jump_basis,
        jump_labels=tuple(labels),
        control_map=control_map,
        m=m, p=p,
        steps=tuple(steps),
    )


def _controllability(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def gamma_apply(chain: DesingChain, u: SampledSignal) -> SampledSignal:
    """Evaluate the reduced-control operator on a sampled control.

    ``u`` is in stacked group coordinates (dim k).  Primitives are
    cumulative trapezoid; the output lives on the same grid.
    """
    if u.dim != chain.k:
        raise ValueError(f"control has {u.dim} channels, chain expects {chain.k}")
    prims: dict = {}

    def phi_pow(j: int, q: int) -> np.ndarray:
        key = (j, q)
        if key not in prims:
            sig = SampledSignal(u.values[:, chain.group_slice(j)], u.dt)
            prims[key] = iterated_primitive(sig, q).values
        return prims[key]

    out = np.zeros((u.n_points, chain.k))
    for i in range(chain.r + 1):
        if chain.group_sizes[i] == 0:
            continue
        acc = phi_pow(i, i).copy()
        for (ii, q, l), coeff in chain.gamma_coeffs.items():
            if ii == i:
                acc += phi_pow(l, q + 1) @ coeff.T
        out[:, chain.group_slice(i)] = acc
    return SampledSignal(out, u.dt)
