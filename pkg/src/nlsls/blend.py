"""Blended system level controllers and saturation anti-windup.

A blend combines linear closed-loop maps ``(R^i, M^i)`` through memoryless
selectors ``G^i`` that sum to the identity:

    Psi_x = I + sum_i (R^i - I) G^i,    Psi_u = sum_i M^i G^i.

If every level is an exact CLM of a linear plant, the blend is an exact CLM
too. The anti-windup construction pairs a map ``(R, M)`` whose inputs stay
inside the actuator set for disturbances in ``W`` with an open-loop level
``R'[t, k] = A^{k-1}`` (``k <= T_bar``), ``M' = 0``, using the split
``G = sat(. | W)``, ``G' = id - G``. For the saturated plant the internal
state then obeys

    w_hat_t = A^T_bar (w_hat_{t-T_bar} - sat(w_hat_{t-T_bar} | W)) + w_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clm import ClmPair, Plant, clm_residual
from .operators import (
    DimensionError,
    LinearCausalKernel,
    Sequence,
    _norm_id,
    add,
    as_sequence,
    compose,
    identity,
    kernel_compose,
    pointwise,
)
from .runtime import LoopTrace, SlController, simulate_nominal

BOX = "box"
BALL = "ball"

NESTED = "nested"
SAT_SPLIT = "sat_split"
CUSTOM = "custom"

PARTITION_TOL = 1e-12


class ContainmentError(ValueError):
    """The map does not keep inputs (or states) inside the required sets."""


class UnsupportedSetError(ValueError):
    """The operation does not support this kind of set."""


# --------------------------------------------------------------------------
# Sets and norms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvexSet:
    """Origin-containing box or norm ball.

    Use :meth:`box` or :meth:`ball` to construct.
    """

    kind: str
    dim: int
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    norm: float = 2.0
    radius: float = np.inf

    def __post_init__(self):
        if self.kind == BOX:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise DimensionError("box bounds must have length dim")
            if np.any(lo > 0) or np.any(hi < 0):
                raise ValueError("box must contain the origin")
            if np.any(lo > hi):
                raise ValueError("box bounds must be ordered")
        elif self.kind == BALL:
            if not self.radius > 0:
                raise ValueError("ball radius must be positive")
            object.__setattr__(self, "norm", _norm_id(self.norm))
        else:
            raise ValueError(f"unknown set kind {self.kind!r}")

    @classmethod
    def box(cls, lower, upper) -> "ConvexSet":
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        lo.setflags(write=False)
        hi.setflags(write=False)
        return cls(BOX, lo.shape[0], lo, hi)

    @classmethod
    def symmetric_box(cls, half_widths) -> "ConvexSet":
        hw = np.atleast_1d(np.asarray(half_widths, dtype=float))
        return cls.box(-hw, hw)

    @classmethod
    def ball(cls, dim: int, radius: float, norm=2) -> "ConvexSet":
        return cls(BALL, int(dim), norm=norm, radius=float(radius))

    @classmethod
    def whole(cls, dim: int) -> "ConvexSet":
        return cls.ball(dim, np.inf)

    @property
    def bounded(self) -> bool:
        if self.kind == BALL:
            return bool(np.isfinite(self.radius))
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    def project(self, w) -> np.ndarray:
        """Coordinate clamp for boxes, radial scaling for balls."""
        w = np.asarray(w, dtype=float)
        if w.shape[-1] != self.dim:
            raise DimensionError(f"vector of dim {w.shape[-1]} vs set of dim {self.dim}")
        if self.kind == BOX:
            return np.clip(w, self.lower, self.upper)
        if not np.isfinite(self.radius):
            return w.copy()
        nrm = np.linalg.norm(w, ord=self.norm)
        if nrm <= self.radius:
            return w.copy()
        return w * (self.radius / nrm)

    def contains(self, w, tol: float = 0.0) -> bool:
        w = np.asarray(w, dtype=float)
        if self.kind == BOX:
            return bool(np.all(w >= self.lower - tol) and np.all(w <= self.upper + tol))
        return bool(np.linalg.norm(w, ord=self.norm) <= self.radius + tol)

    def inscribed_radius(self, norm=2) -> float:
        """Largest ``eta`` with the ``norm``-ball of radius ``eta`` inside the set."""
        norm = _norm_id(norm)
        if self.kind == BOX:
            return float(np.min(np.minimum(-self.lower, self.upper)))
        # |x|_self <= n^{max(0, 1/self - 1/norm)} |x|_norm
        inv = lambda q: 0.0 if q == np.inf else 1.0 / q  # noqa: E731
        factor = self.dim ** max(0.0, inv(self.norm) - inv(norm))
        return float(self.radius / factor)

    def bounding_box(self) -> "ConvexSet":
        """Smallest box containing the set."""
        if self.kind == BOX:
            return self
        return ConvexSet.symmetric_box(np.full(self.dim, self.radius))

    def scaled(self, factor: float) -> "ConvexSet":
        if self.kind == BOX:
            return ConvexSet.box(self.lower * factor, self.upper * factor)
        return ConvexSet.ball(self.dim, self.radius * factor, self.norm)


def induced_norm(matrix, norm=2) -> float:
    """Induced matrix norm for vector norms 1, 2 or inf."""
    norm = _norm_id(norm)
    mat = np.atleast_2d(np.asarray(matrix, dtype=float))
    if norm == 1.0:
        return float(np.max(np.sum(np.abs(mat), axis=0)))
    if norm == np.inf:
        return float(np.max(np.sum(np.abs(mat), axis=1)))
    return float(np.linalg.norm(mat, 2))


def spectral_radius(matrix) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.atleast_2d(matrix)))))


def min_contraction_horizon(A, norm=2, T_max: int = 1000) -> Optional[int]:
    """Smallest ``T_bar <= T_max`` with ``|A^T_bar| < 1``, or ``None``.

    Returns ``None`` immediately when the spectral radius is at least one,
    since it bounds every induced norm of every power from below.
    """
    if T_max < 1:
        raise ValueError("T_max must be at least 1")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if spectral_radius(A) >= 1.0:
        return None
    P = np.eye(A.shape[0])
    for k in range(1, T_max + 1):
        P = P @ A
        if induced_norm(P, norm) < 1.0:
            return k
    return None


# --------------------------------------------------------------------------
# Blend definition and controller
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlendLevel:
    R: LinearCausalKernel
    M: LinearCausalKernel


@dataclass(frozen=True)
class BlendSpec:
    """Levels, selectors and (for the sat-split form) the anti-windup horizon.

    Attributes
    ----------
    levels : tuple of BlendLevel
    selectors : tuple of callables
        Memoryless maps ``G^i`` of the disturbance estimate.
    kind : {"nested", "sat_split", "custom"}
    sets : tuple of ConvexSet
        ``Omega_1..Omega_{N-1}`` for nested blends, ``(W,)`` for sat-split.
    antiwindup_horizon : int or None
    plant_matrix : ndarray or None
        ``A`` of the anti-windup level (sat-split only).
    notes : tuple of str
    """

    levels: tuple
    selectors: tuple
    kind: str
    sets: tuple = ()
    antiwindup_horizon: Optional[int] = None
    plant_matrix: Optional[np.ndarray] = None
    notes: tuple = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.levels[0].R.in_dim

    @property
    def m(self) -> int:
        return self.levels[0].M.out_dim

    @property
    def horizon(self) -> int:
        return min(min(lv.R.horizon, lv.M.horizon) for lv in self.levels)

    @property
    def W(self) -> ConvexSet:
        if self.kind != SAT_SPLIT:
            raise ValueError("only sat-split blends have a disturbance set W")
        return self.sets[0]

    # -- constructors -----------------------------------------------------

    @classmethod
    def nested(cls, levels, sets, *, seed: int = 0) -> "BlendSpec":
        """Projection-difference blend over nested sets.

        ``G^i = P_{Omega_i} - P_{Omega_{i-1}}`` with ``P_{Omega_0} = 0`` and
        ``P_{Omega_N} = I``; ``sets`` lists ``Omega_1 .. Omega_{N-1}``.
        """
        levels = tuple(_as_level(lv) for lv in levels)
        sets = tuple(sets)
        if len(sets) != len(levels) - 1:
            raise ValueError("nested blends need one set fewer than levels")
        n = levels[0].R.in_dim
        projections = [lambda w: np.zeros_like(w)] + [s.project for s in sets] + [
            lambda w: np.asarray(w, dtype=float)
        ]
        selectors = tuple(
            _difference(projections[i + 1], projections[i]) for i in range(len(levels))
        )
        _check_nested(sets, n, seed)
        spec = cls(levels, selectors, NESTED, sets)
        spec.validate(seed=seed)
        return spec

    @classmethod
    def sat_split(cls, level, level_prime, W: ConvexSet, antiwindup_horizon: int,
                  plant_matrix=None, *, seed: int = 0) -> "BlendSpec":
        """Two-level blend with ``G = sat(.|W)`` and ``G' = id - G``."""
        selectors = (W.project, lambda w: np.asarray(w, dtype=float) - W.project(w))
        spec = cls(
            (_as_level(level), _as_level(level_prime)),
            selectors,
            SAT_SPLIT,
            (W,),
            int(antiwindup_horizon),
            None if plant_matrix is None else np.atleast_2d(plant_matrix),
        )
        spec.validate(seed=seed)
        return spec

    @classmethod
    def custom(cls, levels, selectors, *, seed: int = 0) -> "BlendSpec":
        """Arbitrary memoryless selectors; the partition is checked by sampling only."""
        spec = cls(
            tuple(_as_level(lv) for lv in levels),
            tuple(selectors),
            CUSTOM,
            notes=("partition verified by sampling only",),
        )
        spec.validate(seed=seed)
        return spec

    # -- validation -------------------------------------------------------

    def validate(self, samples: int = 200, seed: int = 0) -> float:
        """Check identity-leading ``R^i`` and sample ``sum_i G^i(w) = w``.

        Returns the worst relative partition error.
        """
        if not self.levels:
            raise ValueError("a blend needs at least one level")
        if len(self.selectors) != len(self.levels):
            raise ValueError("one selector per level is required")
        n, m = self.n, self.m
        for i, lv in enumerate(self.levels):
            if lv.R.in_dim != n or lv.R.out_dim != n or lv.M.in_dim != n or lv.M.out_dim != m:
                raise DimensionError(f"level {i} has inconsistent dimensions")
            lead = float(np.max(np.abs(lv.R.blocks[:, 0] - np.eye(n))))
            if lead > PARTITION_TOL:
                raise ValueError(f"level {i}: R[t,1] must be the identity")
        rng = np.random.default_rng(seed)
        worst = 0.0
        for j in range(samples):
            scale = 10.0 ** rng.uniform(-2, 2)
            w = scale * rng.standard_normal(n)
            total = sum(np.asarray(g(w), dtype=float) for g in self.selectors)
            err = float(np.max(np.abs(total - w))) / max(1.0, float(np.max(np.abs(w))))
            worst = max(worst, err)
        if worst > PARTITION_TOL:
            raise ValueError(f"selectors do not sum to the identity (error {worst:.2e})")
        return worst


def _as_level(lv) -> BlendLevel:
    if isinstance(lv, BlendLevel):
        return lv
    if hasattr(lv, "R") and hasattr(lv, "M"):
        return BlendLevel(lv.R, lv.M)
    R, M = lv
    return BlendLevel(R, M)


def _difference(p_hi, p_lo):
    return lambda w: p_hi(w) - p_lo(w)


def _check_nested(sets, n: int, seed: int, samples: int = 200):
    rng = np.random.default_rng(seed)
    for inner, outer in zip(sets[:-1], sets[1:]):
        for _ in range(samples):
            w = inner.project(10.0 ** rng.uniform(-1, 2) * rng.standard_normal(n))
            if not outer.contains(w, tol=1e-12):
                raise ValueError("blend sets are not nested")


def _level_strict_part(R: LinearCausalKernel) -> LinearCausalKernel:
    return R - LinearCausalKernel.identity(R.in_dim, R.horizon, R.fir_horizon)


def blended_pair(spec: BlendSpec) -> ClmPair:
    """``(Psi_x, Psi_u)`` of the blend as evaluable operators."""
    n, H = spec.n, spec.horizon
    psi_x = identity(n, H)
    psi_u = None
    for lv, g in zip(spec.levels, spec.selectors):
        sel = pointwise(g, n, n, H)
        sel.name = "selector"
        strict = _level_strict_part(lv.R).as_operator()
        psi_x = add(psi_x, compose(strict, sel))
        term = compose(lv.M.as_operator(), sel)
        psi_u = term if psi_u is None else add(psi_u, term)
    psi_x.name = "blended psi_x"
    psi_u.name = "blended psi_u"
    return ClmPair(psi_x, psi_u, check=False)


def blended_controller(spec: BlendSpec) -> SlController:
    """System level controller ``SL(Psi_x, Psi_u)`` of the blend."""
    return SlController.from_clm(blended_pair(spec))


@dataclass(frozen=True)
class BlendResidual:
    level_residuals: tuple
    sample_residual: float

    @property
    def max(self) -> float:
        return max(max(self.level_residuals, default=0.0), self.sample_residual)


def level_residual_kernel(plant: Plant, R: LinearCausalKernel,
                          M: LinearCausalKernel) -> LinearCausalKernel:
    """``F_x R + F_u M + I - R`` for a linear plant."""
    Fx, Fu = plant.linear_kernels()
    H = min(R.horizon, Fx.horizon)
    if R.horizon != Fx.horizon:
        raise DimensionError("level and plant horizons differ")
    out = kernel_compose(_unbounded(Fx), _unbounded(R)) + kernel_compose(
        _unbounded(Fu), _unbounded(M)
    )
    return out + LinearCausalKernel.identity(R.in_dim, H) - _unbounded(R)


def _unbounded(k: LinearCausalKernel) -> LinearCausalKernel:
    blocks = np.zeros((k.horizon + 1, k.horizon + 1, k.out_dim, k.in_dim))
    blocks[:, : k.num_blocks] = k.blocks
    return LinearCausalKernel(blocks, None)


def blend_residual_check(plant: Plant, spec: BlendSpec, w_samples) -> BlendResidual:
    """Level residual kernels and sampled CLM residuals of the blend.

    Level residuals are the largest absolute entries of
    ``F_x R^i + F_u M^i + I - R^i``; the sample residual is the largest
    entry of ``F(Psi(w)) + w - Psi_x(w)`` over the supplied disturbances.
    """
    levels = tuple(
        float(np.max(np.abs(level_residual_kernel(plant, lv.R, lv.M).blocks)))
        for lv in spec.levels
    )
    pair = blended_pair(spec)
    sample = 0.0
    for w in w_samples:
        sample = max(sample, clm_residual(plant, pair, w).max_abs())
    return BlendResidual(levels, sample)


# --------------------------------------------------------------------------
# Anti-windup
# --------------------------------------------------------------------------


def open_loop_level(A, m: int, horizon: int, antiwindup_horizon: int) -> BlendLevel:
    """``R'[t, k] = A^{k-1}`` for ``k <= T_bar`` and ``M' = 0``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    T_bar = int(antiwindup_horizon)
    if T_bar < 1:
        raise ValueError("anti-windup horizon must be at least 1")
    taps = [np.linalg.matrix_power(A, k) for k in range(T_bar)]
    R = LinearCausalKernel.time_invariant(taps, horizon, fir_horizon=T_bar)
    M = LinearCausalKernel.zeros(m, n, horizon, fir_horizon=T_bar)
    return BlendLevel(R, M)


@dataclass(frozen=True)
class ContainmentResult:
    """Ratios of allowed bounds to worst-case excursions (``>= 1`` is safe)."""

    contained: bool
    x_margins: Optional[np.ndarray]
    u_margins: np.ndarray

    @property
    def min_margin(self) -> float:
        vals = [float(np.min(self.u_margins))]
        if self.x_margins is not None:
            vals.append(float(np.min(self.x_margins)))
        return min(vals)


def _box_of(s: ConvexSet) -> ConvexSet:
    if s.kind == BOX:
        return s
    # every norm ball on the real line is an interval
    if s.norm == np.inf or s.dim == 1 or not s.bounded:
        return s.bounding_box()
    raise UnsupportedSetError("containment supports boxes and inf-norm balls only")


def _excursions(kernel: LinearCausalKernel, W: ConvexSet):
    """Worst-case upper and lower outputs of ``kernel`` over W-valued inputs."""
    pos = np.clip(kernel.blocks, 0, None)
    neg = np.clip(kernel.blocks, None, 0)
    with np.errstate(invalid="ignore"):
        hi = np.nansum(pos * W.upper + neg * W.lower, axis=(1, 3))
        lo = np.nansum(pos * W.lower + neg * W.upper, axis=(1, 3))
    return hi, lo


def _ratio(limit, excursion):
    """``limit / excursion`` with the conventions ``x/0 = inf`` and ``inf/inf = inf``."""
    limit = np.broadcast_to(limit, excursion.shape)
    out = np.full(excursion.shape, np.inf)
    active = excursion > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(np.isinf(limit), np.inf, limit / np.where(active, excursion, 1.0))
    out[active] = r[active]
    return out


def _margins(kernel: LinearCausalKernel, W: ConvexSet, S: ConvexSet) -> np.ndarray:
    hi, lo = _excursions(kernel, W)
    up = _ratio(S.upper, hi)
    down = _ratio(-S.lower, -lo)
    return np.minimum(up, down)


def verify_containment(rm, W: ConvexSet, U: ConvexSet,
                       X: Optional[ConvexSet] = None) -> ContainmentResult:
    """Exact check that ``M(w)`` stays in ``U`` (and ``R(w)`` in ``X``) for W-valued w.

    The worst case over the box is attained at sign-matched vertices, so
    each output row is bounded by the absolute row sums of its kernel
    blocks weighted by the box bounds.
    """
    Wb, Ub = _box_of(W), _box_of(U)
    u_m = _margins(rm.M, Wb, Ub)
    x_m = None
    if X is not None:
        x_m = _margins(rm.R, Wb, _box_of(X))
    ok = bool(np.all(u_m >= 1.0)) and (x_m is None or bool(np.all(x_m >= 1.0)))
    return ContainmentResult(ok, x_m, u_m)


def antiwindup_wrap(A, B, rm, W: ConvexSet, U: ConvexSet,
                    antiwindup_horizon: Optional[int] = None, *,
                    X: Optional[ConvexSet] = None, norm=2) -> BlendSpec:
    """Wrap a contained linear map with the open-loop anti-windup level.

    Raises
    ------
    ValueError
        If no contraction horizon exists and none is supplied.
    ContainmentError
        If ``M(W)`` is not inside ``U`` (or ``R(W)`` not inside ``X``).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if antiwindup_horizon is None:
        antiwindup_horizon = min_contraction_horizon(A, norm)
        if antiwindup_horizon is None:
            raise ValueError("A has no contraction horizon; supply one explicitly")
    x_bounded = X is not None and X.bounded
    # with U and X the whole space there is nothing to contain
    if U.bounded or x_bounded:
        if not W.bounded:
            # an unbounded W only fits when the constrained outputs ignore it
            ok = not (U.bounded and np.any(rm.M.blocks)) and not x_bounded
            cont = ContainmentResult(ok, None, np.full((rm.horizon + 1, B.shape[1]), np.inf))
        else:
            cont = verify_containment(rm, W, U, X)
        if not cont.contained:
            raise ContainmentError(f"containment fails (min margin {cont.min_margin:.4g})")
    level_prime = open_loop_level(A, B.shape[1], rm.horizon, antiwindup_horizon)
    return BlendSpec.sat_split(
        BlendLevel(rm.R, rm.M), level_prime, W, antiwindup_horizon, A
    )


def saturated_plant(A, B, U: ConvexSet, horizon: int) -> Plant:
    """``x_t = A x_{t-1} + B sat(u_{t-1} | U) + w_t``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape

    def step(t, x_past, u_past):
        return A @ x_past[0] + B @ U.project(u_past[0])

    return Plant.from_function(step, n, m, horizon, check=False)


def simulate_antiwindup(A, B, spec: BlendSpec, U: ConvexSet, w) -> LoopTrace:
    """Closed loop of the saturated plant with the blended controller."""
    w = as_sequence(w)
    plant = saturated_plant(A, B, U, w.horizon)
    return simulate_nominal(plant, blended_controller(spec), w)


def saturated_internal_dynamics(spec: BlendSpec, A, w) -> Sequence:
    """Reduced recursion ``w_hat_t = A^T_bar (w_hat - sat(w_hat|W))_{t-T_bar} + w_t``."""
    if spec.kind != SAT_SPLIT:
        raise ValueError("reduced dynamics require a sat-split blend")
    w = as_sequence(w, spec.n)
    T_bar = spec.antiwindup_horizon
    AT = np.linalg.matrix_power(np.atleast_2d(np.asarray(A, dtype=float)), T_bar)
    W = spec.W
    out = np.array(w.values)
    for t in range(T_bar, w.horizon + 1):
        prev = out[t - T_bar]
        out[t] = AT @ (prev - W.project(prev)) + w.values[t]
    return Sequence(out)


@dataclass(frozen=True)
class AwpBound:
    """Result of :func:`awp_bound`.

    Attributes
    ----------
    bound : float or None
        Bound on ``||w_hat||_p``; ``None`` when neither branch applies.
    branch : {"global", "local", "infeasible"}
    contraction : float
        Induced norm ``|A^T_bar|``.
    admissible : float
        Largest admissible ``||w||_p`` for the branch (``inf`` for global).
    """

    bound: Optional[float]
    branch: str
    contraction: float
    admissible: float


def awp_bound(A, antiwindup_horizon: int, W: ConvexSet, p, w_norm: float,
              gamma: Optional[float] = None, norm=2) -> AwpBound:
    """Anti-windup stability bound on the internal state.

    Global branch (``|A^T_bar| < 1``): ``||w_hat|| <= ||w|| / (1 - |A^T_bar|)``.
    Local branch (``0 <= gamma < min(1, |A^T_bar|)``): if
    ``||w|| <= (1 - gamma) |A^T_bar| eta / (|A^T_bar| - gamma)`` then
    ``||w_hat|| <= ||w|| / (1 - gamma)``, with ``eta`` the inscribed radius
    of W.
    """
    _norm_id(p)
    AT = np.linalg.matrix_power(np.atleast_2d(np.asarray(A, dtype=float)), int(antiwindup_horizon))
    a = induced_norm(AT, norm)
    if a < 1.0:
        return AwpBound(w_norm / (1.0 - a), "global", a, np.inf)
    if gamma is not None and 0.0 <= gamma < min(1.0, a):
        eta = W.inscribed_radius(norm)
        admissible = (1.0 - gamma) * a * eta / (a - gamma)
        if w_norm <= admissible:
            return AwpBound(w_norm / (1.0 - gamma), "local", a, admissible)
        return AwpBound(None, "infeasible", a, admissible)
    return AwpBound(None, "infeasible", a, 0.0)


@dataclass(frozen=True)
class ConvergenceResult:
    """First time after which the state provably stays in X.

    Attributes
    ----------
    t_prime : int or None
        ``x_t`` lies in X for every ``t > t_prime``; ``None`` when the
        saturation excess persists too close to the end of the horizon.
    last_excess : int or None
        Last time with ``w_hat_t`` outside W.
    holds : bool
        Whether the decomposed state is inside X for all ``t > t_prime``.
    """

    t_prime: Optional[int]
    last_excess: Optional[int]
    holds: bool
    state: Sequence


def convergence_check(w_hat, rm, W: ConvexSet, X: ConvexSet, antiwindup_horizon: int,
                      A, tol: float = 0.0) -> ConvergenceResult:
    """Locate when the unsaturated tail stops influencing the state.

    The state of the anti-windup loop decomposes as
    ``x = R(sat(w_hat|W)) + R'(w_hat - sat(w_hat|W))``. The second term only
    sees the last ``T_bar`` excess samples, so with ``tau`` the last time of
    nonzero excess it vanishes for ``t >= tau + T_bar`` and the containment
    of ``R(W)`` in X takes over; ``t_prime = tau + T_bar - 1``.
    """
    w_hat = as_sequence(w_hat)
    H = w_hat.horizon
    sat = np.array([W.project(v) for v in w_hat.values])
    excess = w_hat.values - sat
    T_bar = int(antiwindup_horizon)
    prime = open_loop_level(A, rm.M.out_dim, rm.horizon, T_bar)
    x = rm.R.apply(Sequence(sat).head(min(H, rm.horizon))).values + \
        prime.R.apply(Sequence(excess).head(min(H, rm.horizon))).values
    nz = np.nonzero(np.any(excess != 0, axis=1))[0]
    if nz.size == 0:
        t_prime = 0
        last = None
    else:
        last = int(nz[-1])
        t_prime = last + T_bar - 1
        if t_prime >= H:
            return ConvergenceResult(None, last, False, Sequence(x))
    later = x[t_prime + 1 :]
    holds = all(X.contains(v, tol) for v in later)
    return ConvergenceResult(t_prime, last, holds, Sequence(x))


__all__ = [
    "AwpBound",
    "BlendLevel",
    "BlendResidual",
    "BlendSpec",
    "ContainmentError",
    "ContainmentResult",
    "ConvergenceResult",
    "ConvexSet",
    "UnsupportedSetError",
    "antiwindup_wrap",
    "awp_bound",
    "blend_residual_check",
    "blended_controller",
    "blended_pair",
    "convergence_check",
    "induced_norm",
    "level_residual_kernel",
    "min_contraction_horizon",
    "open_loop_level",
    "saturated_internal_dynamics",
    "saturated_plant",
    "simulate_antiwindup",
    "spectral_radius",
    "verify_containment",
]
