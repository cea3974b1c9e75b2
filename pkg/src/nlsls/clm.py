"""Closed-loop maps: construction, completion, residuals and realization.

A closed-loop map (CLM) ``Psi = (Psi_x, Psi_u)`` sends a disturbance sequence
``w`` to the state and input trajectories of a feedback loop around the plant
``x = F(x, u) + w``. A pair is achievable exactly when
``Psi_x = F(Psi) + I``; the unique controller realizing it is
``Psi_u o Psi_x^{-1}``.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .operators import (
    CAUSAL,
    STRICTLY_CAUSAL,
    ComponentOperator,
    DimensionError,
    LinearCausalKernel,
    Sequence,
    Stream,
    add,
    as_sequence,
    check_strictness,
    compose,
    evaluate,
    identity,
    invert_causal,
    scale,
    stack,
    stack_sequences,
)


class Plant:
    """Discrete-time plant ``x = F(x, u) + w`` with strictly causal ``F``.

    Parameters
    ----------
    n, m : int
        State and input dimensions.
    dynamics : ComponentOperator
        Strictly causal operator from the stacked signal ``(x, u)`` of
        dimension ``n + m`` to ``R^n``. Its component at ``t = 0`` must be
        zero.
    linear : tuple of LinearCausalKernel, optional
        Kernels ``(F_x, F_u)`` when the dynamics are linear.
    lti : tuple of ndarray, optional
        Matrices ``(A, B)`` when the dynamics are linear time-invariant.
    check : bool
        Spot-check strictness and ``F_0 = 0`` by sampling.
    """

    def __init__(self, n: int, m: int, dynamics: ComponentOperator, *,
                 linear=None, lti=None, check: bool = True):
        if dynamics.in_dim != n + m or dynamics.out_dim != n:
            raise DimensionError(
                f"plant dynamics must map R^{n + m} to R^{n}, got "
                f"{dynamics.in_dim}->{dynamics.out_dim}"
            )
        if dynamics.strictness != STRICTLY_CAUSAL:
            raise ValueError("plant dynamics must be declared strictly causal")
        self.n = int(n)
        self.m = int(m)
        self.dynamics = dynamics
        self.linear = linear
        self.lti = lti
        if check:
            check_strictness(dynamics, samples=2)
            rng = np.random.default_rng(1)
            f0 = dynamics.component(0, rng.standard_normal((1, n + m)))
            if np.any(f0 != 0):
                raise ValueError("plant dynamics must vanish at t = 0")

    @property
    def horizon(self) -> int:
        return self.dynamics.horizon

    def __repr__(self) -> str:
        kind = "lti" if self.lti is not None else "linear" if self.linear else "nonlinear"
        return f"Plant(n={self.n}, m={self.m}, H={self.horizon}, {kind})"

    @classmethod
    def from_kernels(cls, Fx: LinearCausalKernel, Fu: LinearCausalKernel,
                     lti=None) -> "Plant":
        """Linear plant ``x = F_x x + F_u u + w``."""
        if Fx.horizon != Fu.horizon or Fx.out_dim != Fu.out_dim:
            raise DimensionError("F_x and F_u must share horizon and output dim")
        if not (Fx.is_strict() and Fu.is_strict()):
            raise ValueError("plant kernels must be strictly causal (zero k=1 block)")
        n, m = Fx.in_dim, Fu.in_dim
        cap = max(Fx.num_blocks, Fu.num_blocks)
        joint = np.zeros((Fx.horizon + 1, cap, n, n + m))
        joint[:, : Fx.num_blocks, :, :n] = Fx.blocks
        joint[:, : Fu.num_blocks, :, n:] = Fu.blocks
        fir = None
        if Fx.fir_horizon is not None and Fu.fir_horizon is not None:
            fir = max(Fx.fir_horizon, Fu.fir_horizon)
        op = LinearCausalKernel(joint, fir).as_operator()
        op.name = "linear plant"
        return cls(n, m, op, linear=(Fx, Fu), lti=lti, check=False)

    @classmethod
    def lti_plant(cls, A, B, horizon: int) -> "Plant":
        """``x_t = A x_{t-1} + B u_{t-1} + w_t``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise DimensionError(f"incompatible A {A.shape} and B {B.shape}")
        Fx = LinearCausalKernel.shift(A, horizon)
        Fu = LinearCausalKernel.shift(B, horizon)
        return cls.from_kernels(Fx, Fu, lti=(A, B))

    @classmethod
    def from_function(cls, f: Callable, n: int, m: int, horizon: int,
                      check: bool = True) -> "Plant":
        """Plant from a step map ``f(t, x_past, u_past)``.

        ``x_past`` and ``u_past`` hold ``x_{t-1:0}`` and ``u_{t-1:0}`` in
        reverse-chronological order (shapes ``(t, n)`` and ``(t, m)``); ``f``
        is only called for ``t >= 1`` and returns ``x_t - w_t``.
        """
        zero = np.zeros(n)

        def comp(t, hist):
            if t == 0:
                return zero
            past = hist[1:]
            return f(t, past[:, :n], past[:, n:])

        op = ComponentOperator(comp, n + m, n, horizon, STRICTLY_CAUSAL, name="plant")
        return cls(n, m, op, check=check)

    def linear_kernels(self):
        """``(F_x, F_u)`` for linear plants; raises otherwise."""
        if self.linear is None:
            raise ValueError("plant has no linear specialization")
        return self.linear


class AffineClm:
    """Affine closed-loop map ``x = R w + r``, ``u = M w + m``.

    Parameters
    ----------
    R : LinearCausalKernel
        ``n x n`` kernel with ``R[t, 1] = I``.
    M : LinearCausalKernel
        ``m x n`` kernel.
    r_offset, m_offset : Sequence, optional
        Offsets ``r`` and ``m``; omitted offsets are zero.
    """

    #: Allowed deviation of ``R[t, 1]`` from the identity.
    LEADING_TOL = 1e-12

    def __init__(self, R: LinearCausalKernel, M: LinearCausalKernel,
                 r_offset: Optional[Sequence] = None,
                 m_offset: Optional[Sequence] = None):
        if R.in_dim != R.out_dim:
            raise DimensionError("R must be square")
        if M.in_dim != R.in_dim or M.horizon != R.horizon:
            raise DimensionError(f"incompatible kernels {R!r} and {M!r}")
        lead_err = float(np.max(np.abs(R.blocks[:, 0] - np.eye(R.in_dim))))
        if lead_err > self.LEADING_TOL:
            raise ValueError(f"R[t,1] must equal I (deviation {lead_err:.2e})")
        if lead_err:
            blocks = np.array(R.blocks)
            blocks[:, 0] = np.eye(R.in_dim)
            R = LinearCausalKernel(blocks, R.fir_horizon)
        self.R = R
        self.M = M
        self.r_offset = None if r_offset is None else as_sequence(r_offset, R.out_dim)
        self.m_offset = None if m_offset is None else as_sequence(m_offset, M.out_dim)
        for off in (self.r_offset, self.m_offset):
            if off is not None and off.horizon < R.horizon:
                raise DimensionError("offset horizon shorter than kernel horizon")

    @property
    def n(self) -> int:
        return self.R.in_dim

    @property
    def m(self) -> int:
        return self.M.out_dim

    @property
    def horizon(self) -> int:
        return self.R.horizon

    @property
    def fir_horizon(self) -> Optional[int]:
        fr, fm = self.R.fir_horizon, self.M.fir_horizon
        if fr is None or fm is None:
            return None
        return max(fr, fm)

    def __repr__(self) -> str:
        return f"AffineClm(n={self.n}, m={self.m}, H={self.horizon}, T={self.fir_horizon})"

    def psi_x(self) -> ComponentOperator:
        op = self.R.as_operator(self.r_offset)
        op.name = "psi_x"
        return op

    def psi_u(self) -> ComponentOperator:
        op = self.M.as_operator(self.m_offset)
        op.name = "psi_u"
        return op

    def pair(self) -> "ClmPair":
        return ClmPair(self.psi_x(), self.psi_u(), affine=self)

    def evaluate(self, w) -> tuple:
        """``(x, u)`` produced by the map on disturbance ``w``."""
        w = as_sequence(w, self.n)
        return self.R.apply(w, self.r_offset), self.M.apply(w, self.m_offset)


class ClmPair:
    """Closed-loop map pair ``(Psi_x, Psi_u)``.

    Parameters
    ----------
    psi_x : ComponentOperator
        ``R^n -> R^n`` with ``psi_x - I`` strictly causal.
    psi_u : ComponentOperator
        ``R^n -> R^m``, causal.
    affine : AffineClm, optional
        Kernel representation of the same pair.
    check : bool
        Sample strictness of ``psi_x - I`` when not declared by construction.
    """

    def __init__(self, psi_x: ComponentOperator, psi_u: ComponentOperator,
                 affine: Optional[AffineClm] = None, check: bool = True):
        if psi_x.in_dim != psi_x.out_dim:
            raise DimensionError("psi_x must be square")
        if psi_u.in_dim != psi_x.in_dim:
            raise DimensionError("psi_u must act on the same disturbance as psi_x")
        if check and not psi_x.unit_feedthrough:
            check_strictness(psi_x, minus_identity=True)
        self.psi_x = psi_x
        self.psi_u = psi_u
        self.affine = affine

    @property
    def n(self) -> int:
        return self.psi_x.in_dim

    @property
    def m(self) -> int:
        return self.psi_u.out_dim

    @property
    def horizon(self) -> int:
        return min(self.psi_x.horizon, self.psi_u.horizon)

    def __repr__(self) -> str:
        return f"ClmPair(n={self.n}, m={self.m}, H={self.horizon})"

    def evaluate(self, w) -> tuple:
        """``(x, u) = Psi(w)``."""
        w = as_sequence(w, self.n)
        if self.affine is not None:
            return self.affine.evaluate(w)
        return evaluate(self.psi_x, w), evaluate(self.psi_u, w)

    def joint(self) -> ComponentOperator:
        """Operator ``w -> (Psi_x(w), Psi_u(w))``."""
        return stack(self.psi_x, self.psi_u)


def _check_plant_pair(plant: Plant, psi: ClmPair):
    if plant.n != psi.n or plant.m != psi.m:
        raise DimensionError(
            f"plant (n={plant.n}, m={plant.m}) does not match CLM (n={psi.n}, m={psi.m})"
        )


def clm_residual(plant: Plant, psi: ClmPair, w) -> Sequence:
    """``F(Psi(w)) + w - Psi_x(w)``; zero iff the CLM equation holds along w."""
    _check_plant_pair(plant, psi)
    w = as_sequence(w, plant.n)
    x, u = psi.evaluate(w)
    fz = evaluate(plant.dynamics, stack_sequences(x, u))
    return (fz + w) - x


def residual_operator(plant: Plant, psi: ClmPair) -> ComponentOperator:
    """The residual ``F(Psi) + I - Psi_x`` as an operator."""
    _check_plant_pair(plant, psi)
    horizon = min(plant.horizon, psi.horizon)
    f_psi = compose(plant.dynamics, psi.joint())
    op = add(add(f_psi, identity(plant.n, horizon)), scale(psi.psi_x, -1.0))
    op.name = "residual"
    return op


class _CompletedStream(Stream):
    """Streams ``x_t = F_t(x_{t-1:0}, u_{t-1:0}) + w_t`` alongside ``Psi_u``."""

    def __init__(self, plant: Plant, psi_u: ComponentOperator):
        self._f = plant.dynamics.stream()
        self._u = psi_u.stream()
        self._z0 = np.zeros(plant.n + plant.m)
        self.t = 0

    def peek(self, w):
        return self._f.peek(self._z0) + w

    def push(self, w):
        x = self._f.peek(self._z0) + w
        u = self._u.push(w)
        self._f.push(np.concatenate([x, u]))
        self.t += 1
        return x


def complete_clm(plant: Plant, psi_u: ComponentOperator) -> ClmPair:
    """Complete ``Psi_u`` to a pair satisfying the CLM equation exactly.

    ``Psi_x`` is evaluated by the forward recursion
    ``Psi_x,t(w) = F_t(Psi_x(w), Psi_u(w)) + w_t``, streamed so each
    evaluation costs one pass over the horizon.
    """
    if psi_u.in_dim != plant.n or psi_u.out_dim != plant.m:
        raise DimensionError(
            f"psi_u must map R^{plant.n} to R^{plant.m}, got "
            f"{psi_u.in_dim}->{psi_u.out_dim}"
        )
    horizon = min(plant.horizon, psi_u.horizon)
    psi_x = ComponentOperator(
        None,
        plant.n,
        plant.n,
        horizon,
        CAUSAL,
        stream_factory=lambda: _CompletedStream(plant, psi_u),
        unit_feedthrough=True,
        name="psi_x(completed)",
    )
    return ClmPair(psi_x, psi_u, check=False)


def complete_affine(plant: Plant, M: LinearCausalKernel,
                    m_offset: Optional[Sequence] = None) -> AffineClm:
    """Kernel-level completion for linear plants.

    Solves ``R = I + F_x R + F_u M`` and ``r = F_x r + F_u m`` forward in
    time, so the returned map satisfies the CLM equation exactly.
    """
    Fx, Fu = plant.linear_kernels()
    n, H = plant.n, min(plant.horizon, M.horizon)
    if M.in_dim != n or M.out_dim != plant.m:
        raise DimensionError("M has the wrong shape for this plant")
    R = np.zeros((H + 1, H + 1, n, n))
    Mb = np.zeros((H + 1, H + 1, plant.m, n))
    Mb[:, : M.num_blocks] = M.blocks[: H + 1]
    for t in range(H + 1):
        R[t, 0] = np.eye(n)
        for j in range(2, t + 2):
            fx = Fx.block(t, j)
            fu = Fu.block(t, j)
            if not (fx.any() or fu.any()):
                continue
            s = t + 1 - j
            # R[t, k] += F[t, j] R[s, k + 1 - j] for k + 1 - j in 1..s+1
            R[t, j - 1 : j + s] += np.einsum("ab,kbc->kac", fx, R[s, : s + 1])
            R[t, j - 1 : j + s] += np.einsum("ab,kbc->kac", fu, Mb[s, : s + 1])
    r = None
    if m_offset is not None:
        m_vals = as_sequence(m_offset, plant.m).values
        r_vals = np.zeros((H + 1, n))
        for t in range(1, H + 1):
            for j in range(2, t + 2):
                s = t + 1 - j
                r_vals[t] += Fx.block(t, j) @ r_vals[s] + Fu.block(t, j) @ m_vals[s]
        r = Sequence(r_vals)
    Mk = LinearCausalKernel(Mb, None) if M.horizon == H else M
    return AffineClm(LinearCausalKernel(R, None), Mk, r, m_offset)


def realize_controller(psi: ClmPair) -> ComponentOperator:
    """Realizing controller ``Psi_u o Psi_x^{-1}``."""
    op = compose(psi.psi_u, invert_causal(psi.psi_x))
    op.name = "realized controller"
    return op


__all__ = [
    "AffineClm",
    "ClmPair",
    "Plant",
    "clm_residual",
    "complete_affine",
    "complete_clm",
    "realize_controller",
    "residual_operator",
]
