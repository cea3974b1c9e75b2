"""System level controllers and closed-loop simulation.

The system level controller ``SL(A, B)`` keeps an internal state ``c`` and
processes measurements ``a_t`` by

    c_t = a_t - A_t(0, c_{t-1:0}),    b_t = B_t(c_{t:0}).

Parameterized by a CLM pair ``(Psi_x, Psi_u)`` it realizes that map, and its
internal state is the reconstructed disturbance ``w_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .clm import ClmPair, Plant
from .io import write_columns_csv
from .operators import (
    ComponentOperator,
    DimensionError,
    Sequence,
    as_sequence,
    check_strictness,
    evaluate,
)


class SlController:
    """Stateful system level controller ``SL(A, B)``.

    Parameters
    ----------
    a_op : ComponentOperator
        Square operator with ``a_op - I`` strictly causal.
    b_op : ComponentOperator
        Output operator acting on the internal state.
    check : bool
        Sample strictness of ``a_op - I`` unless declared by construction.

    Notes
    -----
    One instance serves one stream of measurements; use :meth:`fresh` for an
    independent copy starting at ``t = 0``.
    """

    def __init__(self, a_op: ComponentOperator, b_op: ComponentOperator,
                 check: bool = True):
        if a_op.in_dim != a_op.out_dim:
            raise DimensionError("a_op must be square")
        if b_op.in_dim != a_op.in_dim:
            raise DimensionError("b_op must act on the internal state")
        if check and not a_op.unit_feedthrough:
            check_strictness(a_op, minus_identity=True)
        self.a_op = a_op
        self.b_op = b_op
        self.horizon = min(a_op.horizon, b_op.horizon)
        self._zero = np.zeros(a_op.in_dim)
        self.reset()

    @classmethod
    def from_clm(cls, psi: ClmPair) -> "SlController":
        return cls(psi.psi_x, psi.psi_u, check=False)

    @property
    def n(self) -> int:
        return self.a_op.in_dim

    @property
    def m(self) -> int:
        return self.b_op.out_dim

    @property
    def t(self) -> int:
        """Number of processed measurements."""
        return len(self._c)

    def reset(self) -> None:
        self._a = self.a_op.stream()
        self._b = self.b_op.stream()
        self._c: list = []
        self._inputs: list = []
        self._outputs: list = []

    def fresh(self) -> "SlController":
        return SlController(self.a_op, self.b_op, check=False)

    def predicted(self) -> np.ndarray:
        """``A_t(0, c_{t-1:0})`` for the next time step."""
        return self._a.peek(self._zero)

    def step(self, measurement, t: Optional[int] = None, *,
             state_perturbation=None) -> np.ndarray:
        """Process one measurement and return the controller output.

        Parameters
        ----------
        measurement : array_like
            ``a_t`` of dimension ``n``.
        t : int, optional
            Expected time index; a mismatch raises ``ValueError``.
        state_perturbation : array_like, optional
            Additive perturbation of the internal state update, so that
            ``c_t = a_t + v_t - A_t(0, c_{t-1:0})``.
        """
        a = np.asarray(measurement, dtype=float).reshape(-1)
        if a.shape[0] != self.n:
            raise DimensionError(f"measurement must have dim {self.n}, got {a.shape[0]}")
        if t is not None and t != self.t:
            raise ValueError(f"out-of-order step: expected t={self.t}, got t={t}")
        if self.t > self.horizon:
            raise IndexError("controller horizon exhausted")
        pred = self._a.peek(self._zero)
        c = a - pred if state_perturbation is None else a + np.asarray(
            state_perturbation, dtype=float) - pred
        self._a.push(c)
        b = self._b.push(c)
        self._c.append(c)
        self._inputs.append(a)
        self._outputs.append(b)
        return b

    @property
    def state_history(self) -> Sequence:
        """Internal state ``c_{0:t-1}``."""
        if not self._c:
            raise ValueError("no steps taken")
        return Sequence(np.array(self._c))

    @property
    def input_history(self) -> Sequence:
        return Sequence(np.array(self._inputs))

    @property
    def output_history(self) -> Sequence:
        return Sequence(np.array(self._outputs))


def sl_step(ctrl: SlController, measurement, t: Optional[int] = None) -> np.ndarray:
    """Advance ``ctrl`` by one measurement; see :meth:`SlController.step`."""
    return ctrl.step(measurement, t)


@dataclass(frozen=True)
class LoopTrace:
    """Horizon-aligned signals of one closed-loop run."""

    w: Sequence
    x: Sequence
    u: Sequence
    w_hat: Sequence
    v: Sequence
    d: Sequence

    @property
    def horizon(self) -> int:
        return self.x.horizon

    def columns(self) -> dict:
        return {
            "w": self.w,
            "x": self.x,
            "u": self.u,
            "w_hat": self.w_hat,
            "v": self.v,
            "d": self.d,
        }

    def to_csv(self, path) -> Path:
        """One row per time step with column groups ``w, x, u, w_hat, v, d``."""
        return write_columns_csv(path, self.columns())


def simulate_nominal(plant: Plant, controller: Union[ComponentOperator, SlController],
                     w) -> LoopTrace:
    """Simulate ``x = F(x, u) + w``, ``u = K(x)``.

    ``controller`` is either a causal operator ``K`` or an
    :class:`SlController`; the latter is copied so the argument is not
    advanced. ``w_hat`` in the trace is the controller's internal state for
    SL controllers and ``x`` otherwise.
    """
    w = as_sequence(w, plant.n)
    n, m, H = plant.n, plant.m, w.horizon
    if isinstance(controller, SlController):
        ctrl = controller.fresh()
        if ctrl.n != n or ctrl.m != m:
            raise DimensionError("controller dimensions do not match the plant")
        step = ctrl.step
    else:
        if controller.in_dim != n or controller.out_dim != m:
            raise DimensionError("controller dimensions do not match the plant")
        ctrl = None
        k_stream = controller.stream()
        step = k_stream.push
    f_stream = plant.dynamics.stream()
    z0 = np.zeros(n + m)
    x = np.zeros((H + 1, n))
    u = np.zeros((H + 1, m))
    for t in range(H + 1):
        x[t] = f_stream.peek(z0) + w.values[t]
        u[t] = step(x[t])
        f_stream.push(np.concatenate([x[t], u[t]]))
    xs = Sequence(x)
    w_hat = ctrl.state_history if ctrl is not None else xs
    return LoopTrace(w, xs, Sequence(u), w_hat, Sequence.zeros(n, H), Sequence.zeros(m, H))


def simulate_perturbed(plant: Plant, psi: ClmPair, w, v=None, d=None) -> LoopTrace:
    """Simulate the loop with perturbed controller state and input.

    The recursion is::

        x_t     = F_t(x_{t-1:0}, u_{t-1:0}) + w_t       (x_0 = w_0)
        w_hat_t = x_t + v_t - Psi_x,t(0, w_hat_{t-1:0})
        u_t     = Psi_u,t(w_hat_{t:0}) + d_t
    """
    w = as_sequence(w, plant.n)
    n, m, H = plant.n, plant.m, w.horizon
    if psi.n != n or psi.m != m:
        raise DimensionError("CLM dimensions do not match the plant")
    v = Sequence.zeros(n, H) if v is None else as_sequence(v, n)
    d = Sequence.zeros(m, H) if d is None else as_sequence(d, m)
    if v.horizon != H or d.horizon != H:
        raise DimensionError("w, v and d must share the horizon")
    ctrl = SlController.from_clm(psi)
    f_stream = plant.dynamics.stream()
    z0 = np.zeros(n + m)
    x = np.zeros((H + 1, n))
    u = np.zeros((H + 1, m))
    for t in range(H + 1):
        x[t] = f_stream.peek(z0) + w.values[t]
        u[t] = ctrl.step(x[t], state_perturbation=v.values[t]) + d.values[t]
        f_stream.push(np.concatenate([x[t], u[t]]))
    return LoopTrace(w, Sequence(x), Sequence(u), ctrl.state_history, v, d)


def replay_internal_identity(ctrl: SlController) -> tuple:
    """Recompute ``A(c)`` and ``B(c)`` from the recorded internal state.

    Returns the maximum deviations from the streamed inputs and outputs.
    """
    c = ctrl.state_history
    a_err = float(np.max(np.abs(evaluate(ctrl.a_op, c).values - ctrl.input_history.values)))
    b_err = float(np.max(np.abs(evaluate(ctrl.b_op, c).values - ctrl.output_history.values)))
    return a_err, b_err


__all__ = [
    "LoopTrace",
    "SlController",
    "replay_internal_identity",
    "simulate_nominal",
    "simulate_perturbed",
    "sl_step",
]
