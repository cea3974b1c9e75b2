"""Finite-horizon causal operators on vector sequences.

A causal operator ``A`` on sequences indexed ``t = 0..H`` is described by a
family of component functions ``A_t`` that map the history ``x_{t:0}`` to an
output vector. Histories are always passed in reverse-chronological order, so
``history[0]`` is the current sample ``x_t`` and ``history[-1]`` is ``x_0``.

Every operator can be evaluated in two ways:

* ``evaluate(op, seq)`` maps a whole sequence at once.
* ``op.stream()`` returns a stateful evaluator with ``push`` (commit a sample,
  return the output) and ``peek`` (return the output a sample would produce
  without committing it). Streams are what make compositions, causal inverses
  and closed-loop simulation linear in the horizon.

Linear operators additionally have a dense block representation,
:class:`LinearCausalKernel`, with ``y_t = sum_k K[t, k] x_{t+1-k}``.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence as _Seq

import numpy as np

CAUSAL = "causal"
STRICTLY_CAUSAL = "strictly_causal"
_STRICTNESS = (CAUSAL, STRICTLY_CAUSAL)

#: Absolute/relative tolerance used when spot-checking strict causality.
STRICTNESS_TOL = 1e-12


class DimensionError(ValueError):
    """Raised when operand dimensions or horizons do not match."""


class StrictnessError(ValueError):
    """Raised when an operator fails a sampled strict-causality check."""


def _norm_id(p) -> float:
    if p in (np.inf, "inf", "Inf", "INF", float("inf")):
        return np.inf
    p = float(p)
    if p not in (1.0, 2.0):
        raise ValueError(f"unsupported norm order {p!r}; use 1, 2 or inf")
    return p


# --------------------------------------------------------------------------
# Sequences
# --------------------------------------------------------------------------


class Sequence:
    """Immutable finite-horizon sequence of real vectors.

    Parameters
    ----------
    values : array_like
        Array of shape ``(H + 1, dim)``. A one-dimensional array is read as a
        scalar sequence of shape ``(H + 1, 1)``.

    Attributes
    ----------
    values : numpy.ndarray
        Read-only array of shape ``(horizon + 1, dim)``.
    """

    __slots__ = ("values",)
    __array_priority__ = 100

    def __init__(self, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(
                f"sequence values must have shape (H+1, dim), got {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("Sequence is immutable")

    @classmethod
    def zeros(cls, dim: int, horizon: int) -> "Sequence":
        return cls(np.zeros((horizon + 1, dim)))

    @classmethod
    def impulse(cls, dim: int, horizon: int, at: int = 0, direction=None) -> "Sequence":
        """Sequence that is zero except for ``direction`` at time ``at``."""
        vals = np.zeros((horizon + 1, dim))
        vals[at] = 1.0 if direction is None else np.asarray(direction, dtype=float)
        return cls(vals)

    @classmethod
    def constant(cls, vector, horizon: int) -> "Sequence":
        vec = np.atleast_1d(np.asarray(vector, dtype=float))
        return cls(np.tile(vec, (horizon + 1, 1)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, t):
        return self.values[t]

    def __iter__(self):
        return iter(self.values)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values.copy()
        return self.values.astype(dtype)

    def __repr__(self) -> str:
        return f"Sequence(dim={self.dim}, horizon={self.horizon})"

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Sequence):
            if other.values.shape != self.values.shape:
                raise DimensionError(
                    f"shape mismatch {self.values.shape} vs {other.values.shape}"
                )
            return other.values
        return np.asarray(other, dtype=float)

    def __add__(self, other):
        return Sequence(self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Sequence(self.values - self._coerce(other))

    def __rsub__(self, other):
        return Sequence(self._coerce(other) - self.values)

    def __neg__(self):
        return Sequence(-self.values)

    def __mul__(self, scalar):
        return Sequence(self.values * float(scalar))

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, Sequence):
            return NotImplemented
        return self.values.shape == other.values.shape and bool(
            np.array_equal(self.values, other.values)
        )

    __hash__ = None

    def max_abs(self) -> float:
        """Largest absolute entry."""
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def head(self, horizon: int) -> "Sequence":
        """Restriction to indices ``0..horizon``."""
        return Sequence(self.values[: horizon + 1])


def as_sequence(x, dim: Optional[int] = None) -> Sequence:
    seq = x if isinstance(x, Sequence) else Sequence(x)
    if dim is not None and seq.dim != dim:
        raise DimensionError(f"expected sequence of dim {dim}, got {seq.dim}")
    return seq


def stack_sequences(*seqs: Sequence) -> Sequence:
    """Concatenate sequences channel-wise (same horizon)."""
    horizons = {s.horizon for s in seqs}
    if len(horizons) != 1:
        raise DimensionError(f"horizon mismatch: {sorted(horizons)}")
    return Sequence(np.hstack([s.values for s in seqs]))


def truncate(s: Sequence, tau: int) -> Sequence:
    """Zero every sample after index ``tau``.

    ``tau`` beyond the horizon returns an equal copy.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    vals = np.array(s.values)
    vals[tau + 1 :] = 0.0
    return Sequence(vals)


def lp_norm(s: Sequence, p=2, vec_norm=2) -> float:
    """Sequence ``l_p`` norm built over a finite-dimensional vector norm.

    Parameters
    ----------
    s : Sequence
    p : {1, 2, inf}
        Order of the sequence norm.
    vec_norm : {1, 2, inf}
        Vector norm applied to each sample first.
    """
    p = _norm_id(p)
    pointwise = np.linalg.norm(s.values, ord=_norm_id(vec_norm), axis=1)
    return float(np.linalg.norm(pointwise, ord=p))


def running_lp_norms(s: Sequence, p=2, vec_norm=2) -> np.ndarray:
    """Norms of the truncations ``P^tau s`` for ``tau = 0..H``."""
    p = _norm_id(p)
    pointwise = np.linalg.norm(s.values, ord=_norm_id(vec_norm), axis=1)
    if p == np.inf:
        return np.maximum.accumulate(pointwise)
    if p == 1.0:
        return np.cumsum(pointwise)
    return np.sqrt(np.cumsum(pointwise**2))


# --------------------------------------------------------------------------
# Streams
# --------------------------------------------------------------------------


class Stream:
    """Stateful causal evaluator.

    ``push(x)`` commits ``x`` as the next sample and returns the output at
    that time. ``peek(x)`` returns the output the sample ``x`` would produce
    without committing it.
    """

    t: int = 0

    def push(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def peek(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError


class _HistoryStream(Stream):
    """Keeps the full input history and calls the component function."""

    def __init__(self, op: "ComponentOperator"):
        self._fn = op._component
        self._out = op.out_dim
        self._buf = np.zeros((op.horizon + 1, op.in_dim))
        self._horizon = op.horizon
        self.t = 0

    def _eval(self, x) -> np.ndarray:
        t = self.t
        if t > self._horizon:
            raise IndexError("stream advanced past the operator horizon")
        self._buf[t] = x
        # copy: the component may return a view into the history buffer
        return np.array(self._fn(t, self._buf[t::-1]), dtype=float).reshape(self._out)

    def peek(self, x):
        return self._eval(x)

    def push(self, x):
        y = self._eval(x)
        self.t += 1
        return y


class _ComposeStream(Stream):
    def __init__(self, outer: Stream, inner: Stream):
        self._outer = outer
        self._inner = inner
        self.t = 0

    def peek(self, x):
        return self._outer.peek(self._inner.peek(x))

    def push(self, x):
        self.t += 1
        return self._outer.push(self._inner.push(x))


class _SumStream(Stream):
    def __init__(self, a: Stream, b: Stream):
        self._a = a
        self._b = b
        self.t = 0

    def peek(self, x):
        return self._a.peek(x) + self._b.peek(x)

    def push(self, x):
        self.t += 1
        return self._a.push(x) + self._b.push(x)


class _ScaleStream(Stream):
    def __init__(self, inner: Stream, gain: float):
        self._inner = inner
        self._gain = gain
        self.t = 0

    def peek(self, x):
        return self._gain * self._inner.peek(x)

    def push(self, x):
        self.t += 1
        return self._gain * self._inner.push(x)


class _StackStream(Stream):
    def __init__(self, parts: list):
        self._parts = parts
        self.t = 0

    def peek(self, x):
        return np.concatenate([s.peek(x) for s in self._parts])

    def push(self, x):
        self.t += 1
        return np.concatenate([s.push(x) for s in self._parts])


class _InverseStream(Stream):
    """Forward recursion ``b_t = a_t - A_t(0, b_{t-1:0})``."""

    def __init__(self, inner: Stream, dim: int):
        self._inner = inner
        self._zero = np.zeros(dim)
        self.t = 0

    def peek(self, a):
        return np.asarray(a, dtype=float) - self._inner.peek(self._zero)

    def push(self, a):
        b = np.asarray(a, dtype=float) - self._inner.peek(self._zero)
        self._inner.push(b)
        self.t += 1
        return b


class _MemorylessStream(Stream):
    def __init__(self, fn, out_dim: int):
        self._fn = fn
        self._out = out_dim
        self.t = 0

    def peek(self, x):
        return np.array(self._fn(np.asarray(x, dtype=float)), dtype=float).reshape(
            self._out
        )

    def push(self, x):
        self.t += 1
        return self.peek(x)


class _DelayStream(Stream):
    def __init__(self, dim: int, steps: int, gain: float):
        self._buf = np.zeros((steps, dim))
        self._steps = steps
        self._gain = gain
        self.t = 0

    def peek(self, x):
        return self._gain * self._buf[self.t % self._steps].copy()

    def push(self, x):
        i = self.t % self._steps
        y = self._gain * self._buf[i].copy()
        self._buf[i] = x
        self.t += 1
        return y


# --------------------------------------------------------------------------
# Component operators
# --------------------------------------------------------------------------


ComponentFn = Callable[[int, np.ndarray], np.ndarray]


class ComponentOperator:
    """Causal operator described by per-time component functions.

    Parameters
    ----------
    component : callable or None
        ``component(t, history) -> vector`` where ``history`` has shape
        ``(t + 1, in_dim)`` and ``history[0]`` is the current sample. May be
        ``None`` when ``stream_factory`` is given; the component is then
        recovered by replaying the history through a fresh stream.
    in_dim, out_dim : int
        Input and output vector dimensions.
    horizon : int
        Last time index on which the operator is defined.
    strictness : {"causal", "strictly_causal"}
        Declared strictness. Strictly causal operators ignore the current
        sample.
    stream_factory : callable, optional
        Zero-argument callable returning a fresh :class:`Stream`.
    unit_feedthrough : bool
        Declares that ``op - I`` is strictly causal by construction, which is
        what causal inversion requires.
    name : str, optional
        Label used in ``repr``.
    """

    def __init__(
        self,
        component: Optional[ComponentFn],
        in_dim: int,
        out_dim: int,
        horizon: int,
        strictness: str = CAUSAL,
        *,
        stream_factory: Optional[Callable[[], Stream]] = None,
        unit_feedthrough: bool = False,
        name: Optional[str] = None,
    ):
        if component is None and stream_factory is None:
            raise ValueError("either component or stream_factory is required")
        if strictness not in _STRICTNESS:
            raise ValueError(f"strictness must be one of {_STRICTNESS}")
        if in_dim < 1 or out_dim < 1:
            raise DimensionError("dimensions must be positive")
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if unit_feedthrough and in_dim != out_dim:
            raise DimensionError("unit feedthrough requires a square operator")
        self._component = component
        self._stream_factory = stream_factory
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.horizon = int(horizon)
        self.strictness = strictness
        self.unit_feedthrough = bool(unit_feedthrough)
        self.name = name or "op"

    def __repr__(self) -> str:
        return (
            f"ComponentOperator({self.name}, {self.in_dim}->{self.out_dim}, "
            f"H={self.horizon}, {self.strictness})"
        )

    @property
    def is_strict(self) -> bool:
        return self.strictness == STRICTLY_CAUSAL

    def stream(self) -> Stream:
        """Fresh stateful evaluator starting at ``t = 0``."""
        if self._stream_factory is not None:
            return self._stream_factory()
        return _HistoryStream(self)

    def component(self, t: int, history) -> np.ndarray:
        """Evaluate ``A_t`` on a reverse-chronological history of length t+1."""
        hist = np.asarray(history, dtype=float).reshape(-1, self.in_dim)
        if hist.shape[0] != t + 1:
            raise DimensionError(f"history at t={t} must have {t + 1} samples")
        if self._component is not None:
            return np.asarray(self._component(t, hist), dtype=float).reshape(
                self.out_dim
            )
        s = self.stream()
        for x in hist[:0:-1]:
            s.push(x)
        return s.peek(hist[0])

    def __call__(self, x: Sequence) -> Sequence:
        return evaluate(self, x)


def _check_same_dims(a: ComponentOperator, b: ComponentOperator):
    if a.in_dim != b.in_dim or a.out_dim != b.out_dim:
        raise DimensionError(
            f"dimension mismatch: {a.in_dim}->{a.out_dim} vs {b.in_dim}->{b.out_dim}"
        )


def evaluate(op: ComponentOperator, x) -> Sequence:
    """Apply ``op`` to a whole sequence.

    Raises
    ------
    DimensionError
        If the sequence dimension differs from ``op.in_dim`` or its horizon
        exceeds the operator horizon.
    """
    x = as_sequence(x)
    if x.dim != op.in_dim:
        raise DimensionError(f"{op!r} expects inputs of dim {op.in_dim}, got {x.dim}")
    if x.horizon > op.horizon:
        raise DimensionError(
            f"input horizon {x.horizon} exceeds operator horizon {op.horizon}"
        )
    s = op.stream()
    out = np.empty((x.horizon + 1, op.out_dim))
    for t, xt in enumerate(x.values):
        out[t] = s.push(xt)
    return Sequence(out)


def identity(dim: int, horizon: int) -> ComponentOperator:
    return ComponentOperator(
        lambda t, h: h[0],
        dim,
        dim,
        horizon,
        CAUSAL,
        stream_factory=lambda: _MemorylessStream(lambda x: x, dim),
        unit_feedthrough=True,
        name="identity",
    )


def zero(in_dim: int, out_dim: int, horizon: int) -> ComponentOperator:
    z = np.zeros(out_dim)
    return ComponentOperator(
        lambda t, h: z,
        in_dim,
        out_dim,
        horizon,
        STRICTLY_CAUSAL,
        stream_factory=lambda: _MemorylessStream(lambda x: z, out_dim),
        name="zero",
    )


def delay(dim: int, horizon: int, steps: int = 1, gain: float = 1.0) -> ComponentOperator:
    """``y_t = gain * x_{t-steps}`` with zero initial history."""
    if steps < 1:
        raise ValueError("steps must be at least 1")

    def comp(t, h):
        return gain * h[steps] if t >= steps else np.zeros(dim)

    return ComponentOperator(
        comp,
        dim,
        dim,
        horizon,
        STRICTLY_CAUSAL,
        stream_factory=lambda: _DelayStream(dim, steps, gain),
        name=f"{gain:g}*delay{steps}",
    )


def pointwise(fn: Callable[[np.ndarray], np.ndarray], in_dim: int, out_dim: int,
              horizon: int) -> ComponentOperator:
    """Memoryless operator ``y_t = fn(x_t)``."""
    return ComponentOperator(
        lambda t, h: fn(h[0]),
        in_dim,
        out_dim,
        horizon,
        CAUSAL,
        stream_factory=lambda: _MemorylessStream(fn, out_dim),
        name=getattr(fn, "__name__", "pointwise"),
    )


def compose(a: ComponentOperator, b: ComponentOperator) -> ComponentOperator:
    """Operator ``x -> a(b(x))``."""
    if b.out_dim != a.in_dim:
        raise DimensionError(
            f"cannot compose: inner output dim {b.out_dim} != outer input dim {a.in_dim}"
        )
    strict = a.is_strict or b.is_strict
    return ComponentOperator(
        None,
        b.in_dim,
        a.out_dim,
        min(a.horizon, b.horizon),
        STRICTLY_CAUSAL if strict else CAUSAL,
        stream_factory=lambda: _ComposeStream(a.stream(), b.stream()),
        unit_feedthrough=a.unit_feedthrough and b.unit_feedthrough,
        name=f"({a.name})o({b.name})",
    )


def add(a: ComponentOperator, b: ComponentOperator) -> ComponentOperator:
    """Pointwise sum ``x -> a(x) + b(x)``."""
    _check_same_dims(a, b)
    strict = a.is_strict and b.is_strict
    unit = (a.unit_feedthrough and b.is_strict) or (b.unit_feedthrough and a.is_strict)
    return ComponentOperator(
        None,
        a.in_dim,
        a.out_dim,
        min(a.horizon, b.horizon),
        STRICTLY_CAUSAL if strict else CAUSAL,
        stream_factory=lambda: _SumStream(a.stream(), b.stream()),
        unit_feedthrough=unit,
        name=f"({a.name})+({b.name})",
    )


def scale(a: ComponentOperator, gain: float) -> ComponentOperator:
    """Operator ``x -> gain * a(x)``."""
    gain = float(gain)
    return ComponentOperator(
        None,
        a.in_dim,
        a.out_dim,
        a.horizon,
        a.strictness,
        stream_factory=lambda: _ScaleStream(a.stream(), gain),
        unit_feedthrough=a.unit_feedthrough and gain == 1.0,
        name=f"{gain:g}*({a.name})",
    )


def subtract(a: ComponentOperator, b: ComponentOperator) -> ComponentOperator:
    return add(a, scale(b, -1.0))


def stack(*ops: ComponentOperator) -> ComponentOperator:
    """Operator ``x -> (a(x), b(x), ...)`` with concatenated outputs."""
    if not ops:
        raise ValueError("stack needs at least one operator")
    in_dims = {op.in_dim for op in ops}
    if len(in_dims) != 1:
        raise DimensionError(f"stacked operators need equal input dims, got {in_dims}")
    strict = all(op.is_strict for op in ops)
    return ComponentOperator(
        None,
        ops[0].in_dim,
        sum(op.out_dim for op in ops),
        min(op.horizon for op in ops),
        STRICTLY_CAUSAL if strict else CAUSAL,
        stream_factory=lambda: _StackStream([op.stream() for op in ops]),
        name="[" + ", ".join(op.name for op in ops) + "]",
    )


def with_horizon(op: ComponentOperator, horizon: int) -> ComponentOperator:
    """Same operator restricted to (or declared on) a different horizon."""
    return ComponentOperator(
        op._component,
        op.in_dim,
        op.out_dim,
        horizon,
        op.strictness,
        stream_factory=op._stream_factory,
        unit_feedthrough=op.unit_feedthrough,
        name=op.name,
    )


def check_strictness(
    op: ComponentOperator,
    *,
    minus_identity: bool = False,
    samples: int = 3,
    seed: int = 0,
    tol: float = STRICTNESS_TOL,
) -> float:
    """Spot-check strict causality by replacing the current sample.

    Parameters
    ----------
    op : ComponentOperator
    minus_identity : bool
        Check ``op - I`` instead of ``op``.
    samples : int
        Number of random input sequences.
    seed : int
    tol : float
        Tolerance relative to ``max(1, |y|)``.

    Returns
    -------
    float
        Worst observed relative deviation.

    Raises
    ------
    StrictnessError
        If the deviation exceeds ``tol``.
    """
    if minus_identity and op.in_dim != op.out_dim:
        raise DimensionError("op - I requires a square operator")
    rng = np.random.default_rng(seed)
    horizon = min(op.horizon, 30)
    worst = 0.0
    for _ in range(samples):
        xs = rng.standard_normal((horizon + 1, op.in_dim))
        alt = rng.standard_normal((horizon + 1, op.in_dim))
        s = op.stream()
        for t in range(horizon + 1):
            y1 = s.peek(xs[t])
            y2 = s.peek(alt[t])
            if minus_identity:
                y1 = y1 - xs[t]
                y2 = y2 - alt[t]
            dev = float(np.max(np.abs(y1 - y2))) / max(1.0, float(np.max(np.abs(y1))))
            worst = max(worst, dev)
            if dev > tol:
                what = "op - I" if minus_identity else "op"
                raise StrictnessError(
                    f"{what} is not strictly causal at t={t} (deviation {dev:.3e})"
                )
            s.push(xs[t])
    return worst


def invert_causal(a: ComponentOperator, *, check: bool = True) -> ComponentOperator:
    """Causal inverse of an operator whose deviation from identity is strict.

    The inverse is evaluated by the forward recursion
    ``b_t = a_t - A_t(0, b_{t-1:0})``.

    Parameters
    ----------
    a : ComponentOperator
        Square operator with ``a - I`` strictly causal.
    check : bool
        Spot-check strictness by sampling unless ``a`` declares
        ``unit_feedthrough``.

    Raises
    ------
    DimensionError
        If ``a`` is not square.
    StrictnessError
        If sampling finds ``a - I`` not strictly causal.
    """
    if a.in_dim != a.out_dim:
        raise DimensionError("causal inversion requires a square operator")
    if check and not a.unit_feedthrough:
        check_strictness(a, minus_identity=True)
    dim = a.in_dim
    return ComponentOperator(
        None,
        dim,
        dim,
        a.horizon,
        CAUSAL,
        stream_factory=lambda: _InverseStream(a.stream(), dim),
        unit_feedthrough=True,
        name=f"inv({a.name})",
    )


# --------------------------------------------------------------------------
# Linear kernels
# --------------------------------------------------------------------------


class _KernelStream(Stream):
    def __init__(self, kernel: "LinearCausalKernel", offset: Optional[np.ndarray]):
        self._blocks = kernel.blocks
        self._kmax = kernel.num_blocks
        self._buf = np.zeros((kernel.horizon + 1, kernel.in_dim))
        self._offset = offset
        self.t = 0

    def _eval(self, x):
        t = self.t
        self._buf[t] = x
        kk = min(t + 1, self._kmax)
        # blocks[t, k-1] multiplies x_{t+1-k}
        hist = self._buf[t - kk + 1 : t + 1][::-1]
        y = np.einsum("koi,ki->o", self._blocks[t, :kk], hist)
        if self._offset is not None:
            y = y + self._offset[t]
        return y

    def peek(self, x):
        return self._eval(x)

    def push(self, x):
        y = self._eval(x)
        self.t += 1
        return y


class LinearCausalKernel:
    """Block lower-triangular representation of a linear causal operator.

    The operator acts as ``y_t = sum_{k=1}^{min(t+1, T)} K[t, k] x_{t+1-k}``.

    Parameters
    ----------
    blocks : array_like
        Array of shape ``(H + 1, K, out_dim, in_dim)``; ``blocks[t, k-1]``
        holds ``K[t, k]``. Entries with ``k > t + 1`` are structurally absent
        and are zeroed.
    fir_horizon : int or None
        FIR cutoff ``T``. Blocks with ``k > T`` are absent. ``None`` means
        unbounded. ``K`` must not exceed ``min(H + 1, T)``.
    identity_leading : bool
        Declare (and verify) that ``K[t, 1] = I`` for every ``t``.

    Notes
    -----
    Instances are immutable: ``blocks`` is a read-only array.
    """

    def __init__(self, blocks, fir_horizon: Optional[int] = None,
                 identity_leading: bool = False):
        arr = np.array(blocks, dtype=float)
        if arr.ndim != 4:
            raise DimensionError(
                f"kernel blocks must have shape (H+1, K, out, in), got {arr.shape}"
            )
        horizon = arr.shape[0] - 1
        if fir_horizon is not None:
            fir_horizon = int(fir_horizon)
            if fir_horizon < 1:
                raise ValueError("fir_horizon must be positive")
        cap = horizon + 1 if fir_horizon is None else min(horizon + 1, fir_horizon)
        if arr.shape[1] > cap:
            extra = arr[:, cap:]
            if np.any(extra != 0):
                raise ValueError("kernel has nonzero blocks beyond its FIR horizon")
            arr = arr[:, :cap]
        elif arr.shape[1] < cap:
            pad = np.zeros((arr.shape[0], cap - arr.shape[1]) + arr.shape[2:])
            arr = np.concatenate([arr, pad], axis=1)
        t_idx = np.arange(horizon + 1)[:, None]
        k_idx = np.arange(arr.shape[1])[None, :]
        arr[k_idx > t_idx] = 0.0
        if identity_leading:
            if arr.shape[2] != arr.shape[3]:
                raise DimensionError("identity-leading kernels must be square")
            if not np.array_equal(arr[:, 0], np.broadcast_to(np.eye(arr.shape[2]), arr[:, 0].shape)):
                raise ValueError("identity-leading kernel must have K[t,1] = I")
        arr.setflags(write=False)
        self.blocks = arr
        self.fir_horizon = fir_horizon
        self.identity_leading = bool(identity_leading)

    # -- constructors -----------------------------------------------------

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int, horizon: int,
              fir_horizon: Optional[int] = None) -> "LinearCausalKernel":
        cap = horizon + 1 if fir_horizon is None else min(horizon + 1, fir_horizon)
        return cls(np.zeros((horizon + 1, cap, out_dim, in_dim)), fir_horizon)

    @classmethod
    def identity(cls, dim: int, horizon: int,
                 fir_horizon: Optional[int] = None) -> "LinearCausalKernel":
        cap = horizon + 1 if fir_horizon is None else min(horizon + 1, fir_horizon)
        b = np.zeros((horizon + 1, cap, dim, dim))
        b[:, 0] = np.eye(dim)
        return cls(b, fir_horizon, identity_leading=True)

    @classmethod
    def time_invariant(cls, taps: _Seq, horizon: int,
                       fir_horizon: Optional[int] = None) -> "LinearCausalKernel":
        """Constant-along-diagonal kernel with ``K[t, k] = taps[k-1]``."""
        taps = [np.atleast_2d(np.asarray(tap, dtype=float)) for tap in taps]
        if fir_horizon is None:
            fir_horizon = len(taps) if len(taps) < horizon + 1 else None
        cap = horizon + 1 if fir_horizon is None else min(horizon + 1, fir_horizon)
        out_dim, in_dim = taps[0].shape
        b = np.zeros((horizon + 1, cap, out_dim, in_dim))
        for k, tap in enumerate(taps[:cap]):
            b[:, k] = tap
        return cls(b, fir_horizon)

    @classmethod
    def shift(cls, matrix, horizon: int) -> "LinearCausalKernel":
        """Kernel of ``y_t = matrix @ x_{t-1}``."""
        mat = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls.time_invariant([np.zeros_like(mat), mat], horizon, fir_horizon=2)

    # -- properties -------------------------------------------------------

    @property
    def horizon(self) -> int:
        return self.blocks.shape[0] - 1

    @property
    def num_blocks(self) -> int:
        return self.blocks.shape[1]

    @property
    def out_dim(self) -> int:
        return self.blocks.shape[2]

    @property
    def in_dim(self) -> int:
        return self.blocks.shape[3]

    def __repr__(self) -> str:
        fir = "inf" if self.fir_horizon is None else self.fir_horizon
        return (
            f"LinearCausalKernel({self.in_dim}->{self.out_dim}, H={self.horizon}, "
            f"T={fir})"
        )

    def block(self, t: int, k: int) -> np.ndarray:
        """``K[t, k]`` (zero when absent)."""
        if k < 1 or t < 0 or t > self.horizon:
            raise IndexError(f"no block at (t={t}, k={k})")
        if k > min(t + 1, self.num_blocks):
            return np.zeros((self.out_dim, self.in_dim))
        return self.blocks[t, k - 1]

    def is_strict(self) -> bool:
        return not np.any(self.blocks[:, 0])

    def with_blocks(self, blocks) -> "LinearCausalKernel":
        return LinearCausalKernel(blocks, self.fir_horizon)

    # -- evaluation -------------------------------------------------------

    def apply(self, x, offset=None) -> Sequence:
        """Evaluate ``y_t = sum_k K[t,k] x_{t+1-k} (+ offset_t)``."""
        x = as_sequence(x, self.in_dim)
        if x.horizon > self.horizon:
            raise DimensionError("input horizon exceeds kernel horizon")
        H = x.horizon
        xv = x.values
        y = np.zeros((H + 1, self.out_dim))
        for k in range(1, min(self.num_blocks, H + 1) + 1):
            y[k - 1 :] += np.einsum(
                "toi,ti->to", self.blocks[k - 1 : H + 1, k - 1], xv[: H + 2 - k]
            )
        if offset is not None:
            y += as_sequence(offset, self.out_dim).values[: H + 1]
        return Sequence(y)

    def as_operator(self, offset=None) -> ComponentOperator:
        """Wrap as a :class:`ComponentOperator` (optionally affine)."""
        off = None
        if offset is not None:
            off = as_sequence(offset, self.out_dim).values
            if off.shape[0] < self.horizon + 1:
                raise DimensionError("offset horizon shorter than kernel horizon")
        lead = self.blocks[:, 0]
        unit = self.in_dim == self.out_dim and bool(
            np.array_equal(lead, np.broadcast_to(np.eye(self.in_dim), lead.shape))
        )

        def comp(t, h):
            kk = min(t + 1, self.num_blocks)
            y = np.einsum("koi,ki->o", self.blocks[t, :kk], h[:kk])
            return y if off is None else y + off[t]

        # a constant offset does not depend on the current sample
        strict = self.is_strict()
        return ComponentOperator(
            comp,
            self.in_dim,
            self.out_dim,
            self.horizon,
            STRICTLY_CAUSAL if strict else CAUSAL,
            stream_factory=lambda: _KernelStream(self, off),
            unit_feedthrough=unit,
            name="kernel",
        )

    def dense(self) -> np.ndarray:
        """Full block lower-triangular matrix of shape ((H+1)out, (H+1)in)."""
        H, o, i = self.horizon, self.out_dim, self.in_dim
        mat = np.zeros(((H + 1) * o, (H + 1) * i))
        for t in range(H + 1):
            for k in range(1, min(t + 1, self.num_blocks) + 1):
                s = t + 1 - k
                mat[t * o : (t + 1) * o, s * i : (s + 1) * i] = self.blocks[t, k - 1]
        return mat

    # -- arithmetic -------------------------------------------------------

    def _aligned(self, other: "LinearCausalKernel"):
        if (self.out_dim, self.in_dim, self.horizon) != (
            other.out_dim,
            other.in_dim,
            other.horizon,
        ):
            raise DimensionError(f"kernel mismatch: {self!r} vs {other!r}")
        cap = max(self.num_blocks, other.num_blocks)
        fir = None
        if self.fir_horizon is not None and other.fir_horizon is not None:
            fir = max(self.fir_horizon, other.fir_horizon)
        a = np.zeros((self.horizon + 1, cap, self.out_dim, self.in_dim))
        b = np.zeros_like(a)
        a[:, : self.num_blocks] = self.blocks
        b[:, : other.num_blocks] = other.blocks
        return a, b, fir

    def __add__(self, other: "LinearCausalKernel") -> "LinearCausalKernel":
        a, b, fir = self._aligned(other)
        return LinearCausalKernel(a + b, fir)

    def __sub__(self, other: "LinearCausalKernel") -> "LinearCausalKernel":
        a, b, fir = self._aligned(other)
        return LinearCausalKernel(a - b, fir)

    def __neg__(self) -> "LinearCausalKernel":
        return LinearCausalKernel(-self.blocks, self.fir_horizon)

    def __mul__(self, scalar) -> "LinearCausalKernel":
        return LinearCausalKernel(float(scalar) * self.blocks, self.fir_horizon)

    __rmul__ = __mul__

    def __matmul__(self, other: "LinearCausalKernel") -> "LinearCausalKernel":
        return kernel_compose(self, other)

    def left_multiply(self, matrices) -> "LinearCausalKernel":
        """Kernel with blocks ``L_t @ K[t, k]`` for per-time matrices ``L_t``."""
        L = np.asarray(matrices, dtype=float)
        if L.ndim == 2:
            L = np.broadcast_to(L, (self.horizon + 1,) + L.shape)
        return LinearCausalKernel(
            np.einsum("tab,tkbc->tkac", L, self.blocks), self.fir_horizon
        )


def kernel_compose(a: LinearCausalKernel, b: LinearCausalKernel) -> LinearCausalKernel:
    """Kernel of the composition ``x -> a(b(x))``.

    ``C[t, k] = sum_{j + i - 1 = k} A[t, j] B[t + 1 - j, i]``.
    """
    if b.out_dim != a.in_dim or a.horizon != b.horizon:
        raise DimensionError(f"cannot compose {a!r} with {b!r}")
    H = a.horizon
    fir = None
    if a.fir_horizon is not None and b.fir_horizon is not None:
        fir = a.fir_horizon + b.fir_horizon - 1
    cap = H + 1 if fir is None else min(H + 1, fir)
    out = np.zeros((H + 1, cap, a.out_dim, b.in_dim))
    for j in range(1, a.num_blocks + 1):
        for i in range(1, b.num_blocks + 1):
            k = i + j - 1
            if k > cap:
                break
            # t ranges over j-1..H so that t+1-j >= 0
            out[j - 1 :, k - 1] += np.einsum(
                "tab,tbc->tac", a.blocks[j - 1 :, j - 1], b.blocks[: H + 2 - j, i - 1]
            )
    return LinearCausalKernel(out, fir)


def kernel_identity_like(kernel: LinearCausalKernel) -> LinearCausalKernel:
    return LinearCausalKernel.identity(kernel.out_dim, kernel.horizon, kernel.fir_horizon)


def max_abs_diff(a: Sequence, b: Sequence) -> float:
    """``max |a - b|`` over all entries; shapes must agree."""
    if a.values.shape != b.values.shape:
        raise DimensionError(f"shape mismatch {a.values.shape} vs {b.values.shape}")
    return float(np.max(np.abs(a.values - b.values)))


__all__ = [
    "CAUSAL",
    "STRICTLY_CAUSAL",
    "ComponentOperator",
    "DimensionError",
    "LinearCausalKernel",
    "Sequence",
    "Stream",
    "StrictnessError",
    "add",
    "as_sequence",
    "check_strictness",
    "compose",
    "delay",
    "evaluate",
    "identity",
    "invert_causal",
    "kernel_compose",
    "lp_norm",
    "max_abs_diff",
    "pointwise",
    "running_lp_norms",
    "scale",
    "stack",
    "stack_sequences",
    "subtract",
    "truncate",
    "with_horizon",
    "zero",
]
