"""Closed-form LTV synthesis of FIR closed-loop maps.

For the linear time-varying model

    x_t = A_{t-1} x_{t-1} + B_{t-1} u_{t-1} + w_t

an affine map ``x = R w + r``, ``u = M w + m`` is achievable exactly when

    R[t, 1] = I,   R[t, k] = A_{t-1} R[t-1, k-1] + B_{t-1} M[t-1, k-1].

An FIR horizon ``T`` adds ``R[t, T] = 0``. The H2 objective
``sum ||R[t,k]||_F^2 + ||M[t,k]||_F^2`` is then an equality-constrained QP.
Blocks that share the disturbance entry time ``h = t - k + 1`` form an
independent chain ``X_j = R[h+j, j+1]``, ``U_j = M[h+j, j+1]``, so the QP
splits into one small KKT solve per ``h``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .clm import AffineClm
from .operators import DimensionError, LinearCausalKernel, Sequence, as_sequence

#: Relative singular-value tolerance used for rank decisions.
REFINE_STEPS = 2
RANK_TOL = 1e-10

HOLD = "hold"
TRUNCATE = "truncate"


class InfeasibleSynthesisError(ValueError):
    """The terminal constraint cannot be met for disturbance entry time ``h``."""

    def __init__(self, h: int, detail: str = ""):
        self.h = h
        msg = f"FIR terminal constraint infeasible for disturbance entry time h={h}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class LtvModel:
    """Linear time-varying model with optional reference offsets.

    Parameters
    ----------
    A : array_like
        Shape ``(H, n, n)``; ``A[t]`` maps ``x_t`` to ``x_{t+1}``.
    B : array_like
        Shape ``(H, n, m)``.
    x_ref, u_ref : Sequence, optional
        Offsets ``r_t`` and ``m_t`` over ``t = 0..H``.
    """

    def __init__(self, A, B, x_ref: Optional[Sequence] = None,
                 u_ref: Optional[Sequence] = None):
        A = np.array(A, dtype=float)
        B = np.array(B, dtype=float)
        if A.ndim != 3 or A.shape[1] != A.shape[2]:
            raise DimensionError(f"A must have shape (H, n, n), got {A.shape}")
        if B.ndim != 3 or B.shape[:2] != A.shape[:2]:
            raise DimensionError(f"B must have shape (H, n, m), got {B.shape}")
        if A.shape[0] < 1:
            raise ValueError("model horizon must be at least 1")
        A.setflags(write=False)
        B.setflags(write=False)
        self.A = A
        self.B = B
        self.x_ref = None if x_ref is None else as_sequence(x_ref, self.n)
        self.u_ref = None if u_ref is None else as_sequence(u_ref, self.m)
        for ref in (self.x_ref, self.u_ref):
            if ref is not None and ref.horizon != self.horizon:
                raise DimensionError("reference horizon must equal the model horizon")

    @classmethod
    def from_lti(cls, A, B, horizon: int) -> "LtvModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        return cls(np.tile(A, (horizon, 1, 1)), np.tile(B, (horizon, 1, 1)))

    @property
    def horizon(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]

    def __repr__(self) -> str:
        return f"LtvModel(n={self.n}, m={self.m}, H={self.horizon})"

    def extended(self, extra: int) -> "LtvModel":
        """Model with the last matrices held for ``extra`` more steps."""
        if extra <= 0:
            return self
        A = np.concatenate([self.A, np.repeat(self.A[-1:], extra, axis=0)])
        B = np.concatenate([self.B, np.repeat(self.B[-1:], extra, axis=0)])
        return LtvModel(A, B)


class FirClm(AffineClm):
    """Affine CLM with FIR kernels produced by :func:`synthesize_h2_fir`.

    Attributes
    ----------
    T : int
        FIR horizon.
    tail : str
        Boundary handling used during synthesis.
    """

    def __init__(self, R, M, r_offset=None, m_offset=None, *, T: int,
                 tail: str = HOLD):
        super().__init__(R, M, r_offset, m_offset)
        self.T = int(T)
        self.tail = tail

    def __repr__(self) -> str:
        return f"FirClm(n={self.n}, m={self.m}, H={self.horizon}, T={self.T})"


def _weights(weights, dim: int) -> np.ndarray:
    if weights is None:
        return np.ones(dim)
    w = np.broadcast_to(np.asarray(weights, dtype=float), (dim,)).copy()
    if np.any(w <= 0):
        raise ValueError("objective weights must be positive")
    return w


def _chain_terminal_rows(As, Bs, h: int):
    """Rows enforcing ``X_J = 0`` without redundancy, or raise if infeasible.

    ``X_J = Phi X_0 + Gamma U`` with ``X_0 = I``. The constraint is feasible
    iff ``Phi`` lies in the range of ``Gamma``; it is then equivalent to
    projecting ``X_J`` onto that range.
    """
    n = As[0].shape[0] if len(As) else 0
    J = len(As)
    phi = np.eye(n)
    gammas = []
    for j in range(J):
        gammas = [As[j] @ g for g in gammas]
        gammas.append(Bs[j])
        phi = As[j] @ phi
    gamma = np.hstack(gammas)
    U, s, _ = np.linalg.svd(gamma, full_matrices=True)
    tol = RANK_TOL * max(1.0, s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    if rank == n:
        return None
    basis, perp = U[:, :rank], U[:, rank:]
    gap = np.linalg.norm(perp.T @ phi)
    if gap > RANK_TOL * max(1.0, np.linalg.norm(phi)):
        raise InfeasibleSynthesisError(h, f"uncontrollable residual {gap:.3e}")
    return basis.T


def _solve_chain(As, Bs, q, rw, terminal: bool, h: int):
    """Minimize ``sum q.|X_j|^2 + rw.|U_j|^2`` along one chain.

    Returns ``X`` of shape ``(J+1, n, n)`` and ``U`` of shape ``(J, m, n)``
    where ``J = len(As)``.
    """
    J = len(As)
    n = q.shape[0]
    m = rw.shape[0]
    nx = (J + 1) * n
    nv = nx + J * m
    proj = None
    if terminal:
        proj = _chain_terminal_rows(As, Bs, h)
    rows, cols, vals = [], [], []

    def put(r0, c0, mat):
        rr, cc = np.nonzero(mat)
        rows.extend(rr + r0)
        cols.extend(cc + c0)
        vals.extend(mat[rr, cc])

    # X_0 = I
    put(0, 0, np.eye(n))
    r = n
    for j in range(J):
        # X_{j+1} - A_j X_j - B_j U_j = 0
        put(r, (j + 1) * n, np.eye(n))
        put(r, j * n, -As[j])
        put(r, nx + j * m, -Bs[j])
        r += n
    if terminal:
        term = np.eye(n) if proj is None else proj
        put(r, J * n, term)
        r += term.shape[0]
    ncon = r
    E = sp.csc_matrix((vals, (rows, cols)), shape=(ncon, nv))
    hess = np.concatenate([np.tile(q, J + 1), np.tile(rw, J)])
    K = sp.bmat([[sp.diags(2.0 * hess), E.T], [E, None]], format="csc")
    rhs = np.zeros((nv + ncon, n))
    rhs[nv : nv + n] = np.eye(n)
    lu = splu(K)
    sol = lu.solve(rhs)
    # iterative refinement recovers accuracy lost to pivoting on ill-conditioned B
    for _ in range(REFINE_STEPS):
        sol += lu.solve(rhs - K @ sol)
    resid = float(np.max(np.abs(K @ sol - rhs)))
    if not np.isfinite(resid) or resid > 1e-9 * max(1.0, float(np.max(np.abs(sol)))):
        raise InfeasibleSynthesisError(h, f"KKT residual {resid:.3e}")
    X = sol[:nx].reshape(J + 1, n, n)
    U = sol[nx:nv].reshape(J, m, n)
    return X, U


def synthesize_h2_fir(model: LtvModel, T: int, *, tail: str = HOLD,
                      state_weights=None, input_weights=None) -> FirClm:
    """Minimum-energy FIR closed-loop map for an LTV model.

    Parameters
    ----------
    model : LtvModel
        Model on ``t = 0..H``. Its references, if any, become the offsets.
    T : int
        FIR horizon, at least 2. Blocks ``R[t, T]`` and ``M[t, T]`` are zero.
    tail : {"hold", "truncate"}
        Handling of chains that run past the model horizon. ``"hold"``
        extends the model by holding its last matrices so every chain meets
        the terminal constraint. ``"truncate"`` cuts those chains at ``H``
        and drops their terminal constraint.
    state_weights, input_weights : array_like, optional
        Positive diagonal weights of the objective (default all ones).

    Returns
    -------
    FirClm

    Raises
    ------
    InfeasibleSynthesisError
        If some chain cannot reach zero within ``T - 1`` steps.
    """
    if T < 2:
        raise ValueError("FIR horizon T must be at least 2")
    if tail not in (HOLD, TRUNCATE):
        raise ValueError(f"tail must be {HOLD!r} or {TRUNCATE!r}")
    H, n, m = model.horizon, model.n, model.m
    q = _weights(state_weights, n)
    rw = _weights(input_weights, m)
    ext = model.extended(T) if tail == HOLD else model
    K = min(H + 1, T)
    R = np.zeros((H + 1, K, n, n))
    M = np.zeros((H + 1, K, m, n))
    cache = {}
    for h in range(H + 1):
        if tail == HOLD:
            J = T - 1
            terminal = True
        else:
            J = min(T - 1, H - h)
            terminal = J == T - 1
        As = ext.A[h : h + J]
        Bs = ext.B[h : h + J]
        # identical time patterns (e.g. LTI models) share one factorization
        key = (As.tobytes(), Bs.tobytes(), terminal)
        if key in cache:
            X, U = cache[key]
        else:
            X, U = _solve_chain(As, Bs, q, rw, terminal, h)
            cache[key] = (X, U)
        last = min(J, H - h)
        for j in range(last + 1):
            if j + 1 > K:
                break
            R[h + j, j] = X[j]
            if j < J:
                M[h + j, j] = U[j]
    R[:, 0] = np.eye(n)
    if T <= H + 1:
        R[:, T - 1] = 0.0
        M[:, T - 1] = 0.0
    return FirClm(
        LinearCausalKernel(R, T),
        LinearCausalKernel(M, T),
        model.x_ref,
        model.u_ref,
        T=T,
        tail=tail,
    )


def synthesize_h2_fir_stacked(model: LtvModel, T: int, *, tail: str = HOLD,
                              state_weights=None, input_weights=None) -> FirClm:
    """Reference solver: one KKT system over all ``(t, k)`` blocks at once.

    Uses the block indexing directly rather than the chain decomposition,
    so it serves as an independent check of :func:`synthesize_h2_fir`. The
    ``"hold"`` tail is handled by solving on the held extension of the model
    and cropping to ``t <= H``. Assumes a feasible problem.
    """
    if T < 2:
        raise ValueError("FIR horizon T must be at least 2")
    H, n, m = model.horizon, model.n, model.m
    q = _weights(state_weights, n)
    rw = _weights(input_weights, m)
    if tail == HOLD:
        work = model.extended(T - 1)
    else:
        work = model
    Hs = work.horizon if tail == HOLD else H
    idx_r, idx_m = {}, {}
    nv = 0
    for t in range(Hs + 1):
        for k in range(1, min(t + 1, T) + 1):
            idx_r[t, k] = nv
            nv += n
    for t in range(Hs + 1):
        for k in range(1, min(t + 1, T - 1) + 1):
            idx_m[t, k] = nv
            nv += m
    rows, cols, vals = [], [], []
    rhs_rows = []
    r = 0

    def put(r0, c0, mat):
        rr, cc = np.nonzero(mat)
        rows.extend(rr + r0)
        cols.extend(cc + c0)
        vals.extend(mat[rr, cc])

    for t in range(Hs + 1):
        for k in range(1, min(t + 1, T) + 1):
            if k == 1:
                put(r, idx_r[t, 1], np.eye(n))
                rhs_rows.append(r)
                r += n
                continue
            put(r, idx_r[t, k], np.eye(n))
            put(r, idx_r[t - 1, k - 1], -work.A[t - 1])
            put(r, idx_m[t - 1, k - 1], -work.B[t - 1])
            r += n
            if k == T:
                # terminal block R[t, T] = 0
                put(r, idx_r[t, k], np.eye(n))
                r += n
    ncon = r
    E = sp.csc_matrix((vals, (rows, cols)), shape=(ncon, nv))
    hess = np.empty(nv)
    for (t, k), i in idx_r.items():
        hess[i : i + n] = q
    for (t, k), i in idx_m.items():
        hess[i : i + m] = rw
    Kkt = sp.bmat([[sp.diags(2.0 * hess), E.T], [E, None]], format="csc")
    rhs = np.zeros((nv + ncon, n))
    for r0 in rhs_rows:
        rhs[nv + r0 : nv + r0 + n] = np.eye(n)
    sol = splu(Kkt).solve(rhs)
    K = min(H + 1, T)
    R = np.zeros((H + 1, K, n, n))
    M = np.zeros((H + 1, K, m, n))
    for (t, k), i in idx_r.items():
        if t <= H:
            R[t, k - 1] = sol[i : i + n]
    for (t, k), i in idx_m.items():
        if t <= H:
            M[t, k - 1] = sol[i : i + m]
    return FirClm(
        LinearCausalKernel(R, T),
        LinearCausalKernel(M, T),
        model.x_ref,
        model.u_ref,
        T=T,
        tail=tail,
    )


def verify_subspace(clm: AffineClm, model: LtvModel) -> float:
    """Largest Frobenius violation of the achievability constraints.

    Covers ``R[t, 1] = I`` and ``R[t, k] = A_{t-1} R[t-1, k-1] +
    B_{t-1} M[t-1, k-1]`` for every ``k`` up to one past the stored blocks,
    with absent blocks read as zero.
    """
    if clm.n != model.n or clm.m != model.m:
        raise DimensionError("CLM and model dimensions differ")
    H = min(clm.horizon, model.horizon)
    n, m = model.n, model.m
    K = max(clm.R.num_blocks, clm.M.num_blocks)
    Rb = np.zeros((H + 1, K + 1, n, n))
    Mb = np.zeros((H + 1, K + 1, m, n))
    Rb[:, : clm.R.num_blocks] = clm.R.blocks[: H + 1]
    Mb[:, : clm.M.num_blocks] = clm.M.blocks[: H + 1]
    worst = float(np.max(np.linalg.norm(Rb[:, 0] - np.eye(n), axis=(1, 2))))
    for k in range(2, K + 2):
        # t ranges over k-1..H so that R[t-1, k-1] exists
        if k - 1 > H:
            break
        t = np.arange(k - 1, H + 1)
        pred = np.einsum("tab,tbc->tac", model.A[t - 1], Rb[t - 1, k - 2]) + np.einsum(
            "tab,tbc->tac", model.B[t - 1], Mb[t - 1, k - 2]
        )
        err = np.linalg.norm(Rb[t, k - 1] - pred, axis=(1, 2))
        worst = max(worst, float(np.max(err)))
    return worst


def h2_cost(clm: AffineClm) -> float:
    """Sum of squared Frobenius norms of all stored kernel blocks."""
    return float(np.sum(clm.R.blocks**2) + np.sum(clm.M.blocks**2))


def constraint_nullspace_direction(clm: FirClm, model: LtvModel, rng) -> tuple:
    """Random feasible perturbation ``(dR, dM)`` of a synthesized map.

    The perturbation keeps ``dR[t, 1] = 0``, the recursion, and the
    terminal condition of every chain that has one, so ``clm + eps * d``
    stays feasible. With the ``hold`` tail, chains that run past the
    horizon are left unperturbed: part of their cost lives in blocks that
    are not stored, so ``h2_cost`` is not their objective.
    """
    H, n, m, T = model.horizon, model.n, model.m, clm.T
    ext = model.extended(T) if clm.tail == HOLD else model
    K = clm.R.num_blocks
    dR = np.zeros((H + 1, K, n, n))
    dM = np.zeros((H + 1, K, m, n))
    for h in range(H + 1):
        if clm.tail == HOLD:
            if h + T - 1 > H:
                continue
            J, terminal = T - 1, True
        else:
            J = min(T - 1, H - h)
            terminal = J == T - 1
        As, Bs = ext.A[h : h + J], ext.B[h : h + J]
        # input directions that keep X_J = 0: null space of the reachability map
        gammas = []
        for j in range(J):
            gammas = [As[j] @ g for g in gammas]
            gammas.append(Bs[j])
        U = rng.standard_normal((J * m, n))
        if terminal and J:
            G = np.hstack(gammas)
            _, s, Vt = np.linalg.svd(G)
            rank = int(np.sum(s > RANK_TOL * max(1.0, s[0] if s.size else 0)))
            null = Vt[rank:].T
            U = null @ (null.T @ U)
        U = U.reshape(J, m, n)
        X = np.zeros((J + 1, n, n))
        for j in range(J):
            X[j + 1] = As[j] @ X[j] + Bs[j] @ U[j]
        for j in range(min(J, H - h) + 1):
            if j >= K:
                break
            dR[h + j, j] = X[j]
            if j < J:
                dM[h + j, j] = U[j]
    if T <= H + 1:
        dR[:, T - 1] = 0.0
        dM[:, T - 1] = 0.0
    return dR, dM


__all__ = [
    "FirClm",
    "HOLD",
    "InfeasibleSynthesisError",
    "LtvModel",
    "TRUNCATE",
    "constraint_nullspace_direction",
    "h2_cost",
    "synthesize_h2_fir",
    "synthesize_h2_fir_stacked",
    "verify_subspace",
]
