"""Cart-pole testbed: dynamics, zero-order-hold flow, linearization, tracking.

State ``(x_c, theta, x_c_dot, theta_dot)`` with ``theta = 0`` pointing down
and ``theta = pi`` upright; the input is the horizontal force on the cart.
With ``s = sin(theta)``, ``c = cos(theta)`` and
``D = m_c + m_p s^2`` the solved equations of motion are::

    x_c_ddot   = (f + m_p s (l theta_dot^2 + g c)) / D
    theta_ddot = (-f c - m_p l theta_dot^2 c s - (m_c + m_p) g s) / (l D)

which satisfy the manipulator equations

    (m_c + m_p) x_c_ddot + m_p l theta_ddot c - m_p l theta_dot^2 s = f
    l theta_ddot + x_c_ddot c + g s = 0.

Angles are never wrapped; swing-up trajectories cross ``pi``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import expm, solve_discrete_are

from .clm import AffineClm, Plant
from .io import write_columns_csv
from .ltv import LtvModel
from .operators import Sequence
from .runtime import LoopTrace, SlController

STATE_DIM = 4
INPUT_DIM = 1
DEFAULT_SUBSTEPS = 16


class IntegrationError(FloatingPointError):
    """Raised when the integrated state becomes non-finite."""


@dataclass(frozen=True)
class CartPoleParams:
    """Physical parameters (SI units)."""

    m_c: float = 1.0
    m_p: float = 0.1
    l: float = 0.5
    g: float = 9.81
    tau_s: float = 0.033

    def __post_init__(self):
        for name in ("m_c", "m_p", "l", "g", "tau_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def continuous_dynamics(params: CartPoleParams, x, u) -> np.ndarray:
    """State derivative ``(x_c_dot, theta_dot, x_c_ddot, theta_ddot)``."""
    _, th, xd, om = np.asarray(x, dtype=float)
    f = float(np.asarray(u, dtype=float).reshape(-1)[0]) if np.ndim(u) else float(u)
    p = params
    s, c = np.sin(th), np.cos(th)
    D = p.m_c + p.m_p * s * s
    xdd = (f + p.m_p * s * (p.l * om * om + p.g * c)) / D
    thdd = (-f * c - p.m_p * p.l * om * om * c * s - (p.m_c + p.m_p) * p.g * s) / (p.l * D)
    return np.array([xd, om, xdd, thdd])


def manipulator_residual(params: CartPoleParams, x, u, deriv) -> np.ndarray:
    """Residual of the implicit equations of motion at a candidate derivative."""
    _, th, _, om = np.asarray(x, dtype=float)
    xdd, thdd = deriv[2], deriv[3]
    p = params
    s, c = np.sin(th), np.cos(th)
    r1 = (p.m_c + p.m_p) * xdd + p.m_p * p.l * thdd * c - p.m_p * p.l * om * om * s - float(u)
    r2 = p.l * thdd + xdd * c + p.g * s
    return np.array([r1, r2])


def input_affine(params: CartPoleParams, x) -> tuple:
    """Split ``xdot = drift(x) + g(x) f``; returns ``(drift, g)``."""
    _, th, xd, om = np.asarray(x, dtype=float)
    p = params
    s, c = np.sin(th), np.cos(th)
    D = p.m_c + p.m_p * s * s
    drift = np.array(
        [
            xd,
            om,
            p.m_p * s * (p.l * om * om + p.g * c) / D,
            (-p.m_p * p.l * om * om * c * s - (p.m_c + p.m_p) * p.g * s) / (p.l * D),
        ]
    )
    gvec = np.array([0.0, 0.0, 1.0 / D, -c / (p.l * D)])
    return drift, gvec


def jacobian(params: CartPoleParams, x, u) -> tuple:
    """Analytic Jacobians ``(d xdot / dx, d xdot / df)`` at ``(x, u)``."""
    _, th, _, om = np.asarray(x, dtype=float)
    f = float(u)
    p = params
    s, c = np.sin(th), np.cos(th)
    D = p.m_c + p.m_p * s * s
    dD = 2.0 * p.m_p * s * c
    n1 = f + p.m_p * s * (p.l * om * om + p.g * c)
    n2 = -f * c - p.m_p * p.l * om * om * c * s - (p.m_c + p.m_p) * p.g * s
    dn1_dth = p.m_p * (c * p.l * om * om + p.g * (c * c - s * s))
    dn1_dom = 2.0 * p.m_p * s * p.l * om
    dn2_dth = f * s - p.m_p * p.l * om * om * (c * c - s * s) - (p.m_c + p.m_p) * p.g * c
    dn2_dom = -2.0 * p.m_p * p.l * om * c * s
    J = np.zeros((4, 4))
    J[0, 2] = 1.0
    J[1, 3] = 1.0
    J[2, 1] = (dn1_dth * D - n1 * dD) / D**2
    J[2, 3] = dn1_dom / D
    J[3, 1] = (dn2_dth * D - n2 * dD) / (p.l * D**2)
    J[3, 3] = dn2_dom / (p.l * D)
    gvec = np.array([0.0, 0.0, 1.0 / D, -c / (p.l * D)])
    return J, gvec


def zoh_flow(params: CartPoleParams, x, u, substeps: int = DEFAULT_SUBSTEPS,
             duration: Optional[float] = None) -> np.ndarray:
    """Integrate over one hold interval with the force held constant.

    Classical fourth-order Runge-Kutta with ``substeps`` equal steps over
    ``duration`` (default ``tau_s``).

    Raises
    ------
    IntegrationError
        If the state becomes non-finite.
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    T = params.tau_s if duration is None else duration
    h = T / substeps
    y = np.array(x, dtype=float)
    f = float(np.asarray(u, dtype=float).reshape(-1)[0]) if np.ndim(u) else float(u)
    # overflow is reported through IntegrationError, not numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(substeps):
            k1 = continuous_dynamics(params, y, f)
            k2 = continuous_dynamics(params, y + 0.5 * h * k1, f)
            k3 = continuous_dynamics(params, y + 0.5 * h * k2, f)
            k4 = continuous_dynamics(params, y + h * k3, f)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise IntegrationError("non-finite state during integration")
    return y


def energy(params: CartPoleParams, x) -> float:
    """Total mechanical energy (potential zero at the pivot height)."""
    _, th, xd, om = np.asarray(x, dtype=float)
    p = params
    kin = (
        0.5 * (p.m_c + p.m_p) * xd * xd
        + p.m_p * p.l * xd * om * np.cos(th)
        + 0.5 * p.m_p * p.l**2 * om * om
    )
    return float(kin - p.m_p * p.g * p.l * np.cos(th))


def discretize(J, gvec, tau_s: float) -> tuple:
    """``(exp(J tau), int_0^tau exp(J s) ds g)`` via one augmented exponential."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    gvec = np.asarray(gvec, dtype=float).reshape(J.shape[0], -1)
    n, m = gvec.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = J
    aug[:n, n:] = gvec
    E = expm(aug * tau_s)
    return E[:n, :n], E[:n, n:]


def linearize_zoh(params: CartPoleParams, x_ref, u_ref) -> tuple:
    """Matrix-exponential linearization ``(A_hat, B_hat)`` at a reference point."""
    J, gvec = jacobian(params, x_ref, u_ref)
    return discretize(J, gvec, params.tau_s)


# --------------------------------------------------------------------------
# Reference trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Sampled state and force reference.

    Attributes
    ----------
    x_d : Sequence
        States over ``t = 0..H`` (radians).
    u_d : Sequence
        Forces over ``t = 0..H``.
    source : str
        ``"file"`` or ``"heuristic"``.
    """

    x_d: Sequence
    u_d: Sequence
    source: str = "heuristic"

    def __post_init__(self):
        if self.x_d.horizon != self.u_d.horizon:
            raise ValueError("x_d and u_d horizons differ")
        if self.x_d.dim != STATE_DIM or self.u_d.dim != INPUT_DIM:
            raise ValueError("reference must have 4 states and 1 input")

    @property
    def horizon(self) -> int:
        return self.x_d.horizon

    def to_csv(self, path, tau_s: Optional[float] = None) -> Path:
        """Columns ``t, x_c, theta, x_dot, theta_dot, f``; ``t`` in seconds
        when ``tau_s`` is given, sample index otherwise."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x_c", "theta", "x_dot", "theta_dot", "f"])
            for k in range(self.horizon + 1):
                t = k if tau_s is None else k * tau_s
                row = [t] + list(self.x_d.values[k]) + [self.u_d.values[k, 0]]
                w.writerow(["%.17g" % v for v in row])
        return path


def load_reference_csv(path) -> ReferenceTrajectory:
    """Read a reference with columns ``t, x_c, theta, x_dot, theta_dot, f``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"reference file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["x_c", "theta", "x_dot", "theta_dot", "f"]
        missing = [c for c in need if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [[float(r[c]) for c in need] for r in reader]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two samples")
    data = np.array(rows)
    return ReferenceTrajectory(Sequence(data[:, :4]), Sequence(data[:, 4:]), "file")


def upright_lqr_gain(params: CartPoleParams, Q=None, R=None) -> np.ndarray:
    """Discrete LQR gain ``K`` (``f = -K (x - x_up)``) at the upright point."""
    A, B = linearize_zoh(params, np.array([0.0, np.pi, 0.0, 0.0]), 0.0)
    Q = np.diag([1.0, 10.0, 1.0, 1.0]) if Q is None else np.asarray(Q, dtype=float)
    R = np.array([[0.1]]) if R is None else np.atleast_2d(R)
    P = solve_discrete_are(A, B, Q, R)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


@dataclass(frozen=True)
class SwingUpGains:
    """Tuning of the energy-pumping reference heuristic."""

    energy_gain: float = 5.0
    cart_position_gain: float = 2.0
    cart_velocity_gain: float = 2.0
    max_accel: float = 15.0
    kick_force: float = 5.0
    kick_steps: int = 3
    catch_cos: float = -0.95
    catch_rate: float = 4.0


def _swing_force(params: CartPoleParams, x, gains: SwingUpGains) -> float:
    """Partial feedback linearization toward an energy-pumping acceleration."""
    xc, th, xd, om = x
    p = params
    s, c = np.sin(th), np.cos(th)
    # pendulum energy relative to the upright rest level
    e_err = 0.5 * p.m_p * p.l**2 * om * om - p.m_p * p.g * p.l * (c + 1.0)
    accel = gains.energy_gain * e_err * om * c - gains.cart_position_gain * xc \
        - gains.cart_velocity_gain * xd
    accel = float(np.clip(accel, -gains.max_accel, gains.max_accel))
    D = p.m_c + p.m_p * s * s
    return D * accel - p.m_p * s * (p.l * om * om + p.g * c)


def heuristic_swingup_reference(
    params: CartPoleParams = CartPoleParams(),
    duration: float = 6.0,
    *,
    gains: SwingUpGains = SwingUpGains(),
    control_substeps: int = 1,
    substeps: int = DEFAULT_SUBSTEPS,
) -> ReferenceTrajectory:
    """Approximate swing-up reference: energy pumping, then upright hold.

    The pendulum starts at rest hanging down, gets a short push, is pumped
    toward the upright energy level and is caught by a discrete LQR once it
    is near the top. This is a convenience generator, not an optimal
    trajectory.

    Parameters
    ----------
    params : CartPoleParams
    duration : float
        Length in seconds; the horizon is ``round(duration / tau_s)``.
    gains : SwingUpGains
    control_substeps : int
        With ``1`` the reference is rolled out with :func:`zoh_flow` itself,
        so it is discretization-consistent. Larger values update the force
        that many times per sample, which makes the sampled pair
        inconsistent with the hold model.
    substeps : int
        Integrator substeps per hold interval.
    """
    H = int(round(duration / params.tau_s))
    K = upright_lqr_gain(params)
    xs = np.zeros((H + 1, 4))
    us = np.zeros((H + 1, 1))
    x = np.zeros(4)
    caught = False
    dt = params.tau_s / control_substeps
    sub = max(1, substeps // control_substeps)

    def law(t, x):
        nonlocal caught
        if t < gains.kick_steps:
            return gains.kick_force
        up = np.pi * (2 * np.round((x[1] - np.pi) / (2 * np.pi)) + 1)
        if not caught and np.cos(x[1]) < gains.catch_cos and abs(x[3]) < gains.catch_rate:
            caught = True
        if caught:
            err = x - np.array([0.0, up, 0.0, 0.0])
            return float(-(K @ err)[0])
        return _swing_force(params, x, gains)

    for t in range(H + 1):
        xs[t] = x
        f = law(t, x)
        us[t, 0] = f
        if t == H:
            break
        if control_substeps == 1:
            x = zoh_flow(params, x, f, substeps)
        else:
            for j in range(control_substeps):
                if j:
                    f = law(t, x)
                x = zoh_flow(params, x, f, sub, duration=dt)
    return ReferenceTrajectory(Sequence(xs), Sequence(us), "heuristic")


def trajectory_error(params: CartPoleParams, ref: ReferenceTrajectory,
                     substeps: int = DEFAULT_SUBSTEPS) -> Sequence:
    """``e_t = phi(x_d[t-1], u_d[t-1]) - x_d[t]`` with ``e_0 = 0``."""
    xd, ud = ref.x_d.values, ref.u_d.values
    e = np.zeros_like(xd)
    for t in range(1, ref.horizon + 1):
        e[t] = zoh_flow(params, xd[t - 1], ud[t - 1, 0], substeps) - xd[t]
    return Sequence(e)


def build_tracking_model(params: CartPoleParams, ref: ReferenceTrajectory) -> LtvModel:
    """Linearize along the reference; offsets are the reference itself."""
    if ref.horizon < 1:
        raise ValueError("reference must have at least two samples")
    H = ref.horizon
    A = np.zeros((H, 4, 4))
    B = np.zeros((H, 4, 1))
    for t in range(H):
        A[t], B[t] = linearize_zoh(params, ref.x_d.values[t], ref.u_d.values[t, 0])
    return LtvModel(A, B, ref.x_d, ref.u_d)


# --------------------------------------------------------------------------
# Tracking experiment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseConfig:
    """I.i.d. zero-mean Gaussian perturbations and initial offset.

    Attributes
    ----------
    w_std, v_std, d_std : float or sequence of float
        Per-channel standard deviations of the process disturbance (applied
        for ``t >= 1``), the controller-state perturbation and the input
        perturbation.
    initial_offset : sequence of float
        Added to ``x_d[0]`` to form the initial state.
    """

    w_std: object = 0.0
    v_std: object = 0.0
    d_std: object = 0.0
    initial_offset: tuple = (0.0, 0.0, 0.0, 0.0)

    def draw(self, rng, horizon: int) -> tuple:
        w = rng.standard_normal((horizon + 1, 4)) * np.broadcast_to(self.w_std, (4,))
        v = rng.standard_normal((horizon + 1, 4)) * np.broadcast_to(self.v_std, (4,))
        d = rng.standard_normal((horizon + 1, 1)) * np.broadcast_to(self.d_std, (1,))
        w[0] = 0.0
        # adding zero turns -0.0 into 0.0 for clean CSV output
        return w + 0.0, v + 0.0, d + 0.0


@dataclass(frozen=True)
class TrackingResult:
    """Trace and summary of one tracking run.

    ``trace.w`` holds the effective disturbance ``x_t - x_d[t] -
    A_hat (x_{t-1} - x_d[t-1]) - B_hat (u_{t-1} - u_d[t-1])`` of the true
    plant relative to the linear model, so ``w_hat = w`` whenever the
    controller is an exact CLM of that model.
    """

    trace: LoopTrace
    reference: ReferenceTrajectory
    trajectory_error: Sequence
    normalized_error: np.ndarray
    w_hat_inf: float
    diverged: bool
    diverged_at: Optional[int]
    plant: str = "nonlinear"
    extras: dict = field(default_factory=dict)

    def to_csv(self, path) -> Path:
        # a diverged run stops early; crop the reference columns to match
        H = self.trace.horizon
        cols = dict(self.trace.columns())
        cols["x_ref"] = self.reference.x_d.head(H)
        cols["u_ref"] = self.reference.u_d.head(H)
        cols["e"] = self.trajectory_error.head(H)
        cols["e_bar"] = Sequence(self.normalized_error[: H + 1])
        return write_columns_csv(path, cols)

    def summary(self) -> str:
        deg = np.degrees(self.trace.x.values[:, 1])
        lines = [
            f"plant = {self.plant}",
            f"horizon = {self.trace.horizon}",
            f"w_hat_inf = {self.w_hat_inf:.6g}",
            f"max_e_bar = {float(np.max(self.normalized_error)):.6g}",
            f"final_theta_deg = {deg[-1]:.6g}",
            f"diverged = {self.diverged}",
        ]
        if self.diverged_at is not None:
            lines.append(f"diverged_at = {self.diverged_at}")
        return "\n".join(lines) + "\n"


def run_tracking_experiment(
    params: CartPoleParams,
    ref: ReferenceTrajectory,
    clm: AffineClm,
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    *,
    plant: str = "nonlinear",
    model: Optional[LtvModel] = None,
    substeps: int = DEFAULT_SUBSTEPS,
    blowup: float = 1e6,
) -> TrackingResult:
    """Track ``ref`` with the affine SL controller of ``clm``.

    The loop runs::

        w_hat_t = x_t + v_t - x_d[t] - sum_{k>=2} R[t,k] w_hat_{t+1-k}
        u_t     = u_d[t] + sum_k M[t,k] w_hat_{t+1-k} + d_t
        x_{t+1} = phi(x_t, u_t) + w_{t+1}

    Parameters
    ----------
    plant : {"nonlinear", "ltv"}
        ``"ltv"`` substitutes the linearized model for the true flow, which
        makes the synthesized map an exact CLM of the simulated plant.
    model : LtvModel, optional
        Linearization (computed from the reference when omitted).
    blowup : float
        Divergence threshold on ``|x_t|_inf``; reported, not raised.
    """
    if plant not in ("nonlinear", "ltv"):
        raise ValueError("plant must be 'nonlinear' or 'ltv'")
    H = ref.horizon
    if clm.horizon < H:
        raise ValueError("CLM horizon shorter than the reference")
    if model is None:
        model = build_tracking_model(params, ref)
    rng = np.random.default_rng(seed)
    w_raw, v, d = noise.draw(rng, H)
    xd, ud = ref.x_d.values, ref.u_d.values
    R_op = AffineClm(clm.R, clm.M).psi_x()
    M_op = AffineClm(clm.R, clm.M).psi_u()
    ctrl = SlController(R_op, M_op, check=False)
    x = np.zeros((H + 1, 4))
    u = np.zeros((H + 1, 1))
    w_eff = np.zeros((H + 1, 4))
    x[0] = xd[0] + np.asarray(noise.initial_offset, dtype=float) + w_raw[0]
    w_eff[0] = x[0] - xd[0]
    diverged_at = None
    last = H
    for t in range(H + 1):
        if t > 0:
            if plant == "nonlinear":
                try:
                    nxt = zoh_flow(params, x[t - 1], u[t - 1, 0], substeps)
                except IntegrationError:
                    nxt = np.full(4, np.inf)
            else:
                nxt = xd[t] + model.A[t - 1] @ (x[t - 1] - xd[t - 1]) + \
                    model.B[t - 1] @ (u[t - 1] - ud[t - 1])
            x[t] = nxt + w_raw[t]
            w_eff[t] = (x[t] - xd[t]) - model.A[t - 1] @ (x[t - 1] - xd[t - 1]) - \
                model.B[t - 1] @ (u[t - 1] - ud[t - 1])
        if not np.all(np.isfinite(x[t])) or np.max(np.abs(x[t])) > blowup:
            diverged_at = t
            last = t - 1
            break
        # the SL controller acts on deviations from the reference
        u[t] = ud[t] + ctrl.step(x[t] - xd[t], state_perturbation=v[t]) + d[t]
    if diverged_at is not None:
        keep = max(last, 0)
        x, u, w_eff = x[: keep + 1], u[: keep + 1], w_eff[: keep + 1]
        v, d = v[: keep + 1], d[: keep + 1]
    steps = x.shape[0]
    w_hat = ctrl.state_history.values[:steps] if ctrl.t else np.zeros((1, 4))
    trace = LoopTrace(
        Sequence(w_eff), Sequence(x), Sequence(u), Sequence(w_hat), Sequence(v), Sequence(d)
    )
    e = trajectory_error(params, ref, substeps)
    x_scale = float(np.max(np.abs(x))) if x.size else 1.0
    e_bar = np.max(np.abs(e.values), axis=1) / (x_scale if x_scale > 0 else 1.0)
    w_hat_inf = float(np.max(np.abs(w_hat)))
    return TrackingResult(
        trace,
        ref,
        e,
        e_bar,
        w_hat_inf,
        diverged_at is not None,
        diverged_at,
        plant,
    )


def cartpole_plant(params: CartPoleParams, horizon: int,
                   substeps: int = DEFAULT_SUBSTEPS) -> Plant:
    """The sampled cart-pole ``x_t = phi(x_{t-1}, u_{t-1}) + w_t`` as a plant."""

    def step(t, x_past, u_past):
        return zoh_flow(params, x_past[0], u_past[0, 0], substeps)

    return Plant.from_function(step, 4, 1, horizon, check=False)


__all__ = [
    "CartPoleParams",
    "IntegrationError",
    "NoiseConfig",
    "ReferenceTrajectory",
    "SwingUpGains",
    "TrackingResult",
    "build_tracking_model",
    "cartpole_plant",
    "continuous_dynamics",
    "discretize",
    "energy",
    "heuristic_swingup_reference",
    "input_affine",
    "jacobian",
    "linearize_zoh",
    "load_reference_csv",
    "manipulator_residual",
    "run_tracking_experiment",
    "trajectory_error",
    "upright_lqr_gain",
    "zoh_flow",
]
