"""Incremental gain estimates and small-gain robustness bounds.

For a residual operator ``Delta`` with incremental gain ``gamma < 1`` and
offset ``beta``, any solution of ``y = Delta(y) + w`` obeys

    ||y||_p <= (||w||_p + beta) / (1 - gamma),

globally when the gain holds everywhere and locally (``||w||_p <
(1 - gamma) rho - beta``) when it only holds on a ball of radius ``rho``.

Gains of black-box operators are estimated by sampling and are therefore
empirical under-estimates. Linear FIR kernels get their exact induced
``l_inf`` gain instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.optimize import linprog

from .clm import ClmPair, Plant, residual_operator
from .operators import (
    ComponentOperator,
    LinearCausalKernel,
    Sequence,
    _norm_id,
    add,
    as_sequence,
    evaluate,
    identity,
    invert_causal,
    lp_norm,
    scale,
    stack_sequences,
)
from .runtime import simulate_perturbed

RATIO_SUP = "ratio_sup"
AFFINE_FIT = "affine_fit"
EXACT_KERNEL = "exact_kernel"
GIVEN = "given"


@dataclass(frozen=True)
class GainCertificate:
    """Incremental gain record ``||A(a) - A(a')|| <= gamma ||a - a'|| + beta``.

    Attributes
    ----------
    p : float
        Sequence norm order (1, 2 or inf).
    gamma, beta : float
        Gain and offset, both nonnegative.
    rho : float
        Radius of the ball on which the estimate was made (``inf`` if global).
    sample_count : int
        Number of sampled pairs (0 for exact or given certificates).
    method : str
        ``"ratio_sup"``, ``"affine_fit"``, ``"exact_kernel"`` or ``"given"``.
    seed : int or None
        Seed of the sampling run.
    exact : bool
        True when the constants are proved rather than sampled.
    vec_norm : float
        Vector norm underlying the sequence norm.
    max_violation : float
        Largest sampled excess over the envelope (zero up to roundoff).
    """

    p: float
    gamma: float
    beta: float = 0.0
    rho: float = np.inf
    sample_count: int = 0
    method: str = GIVEN
    seed: Optional[int] = None
    exact: bool = False
    vec_norm: float = 2.0
    max_violation: float = 0.0

    def __post_init__(self):
        if self.gamma < 0 or self.beta < 0:
            raise ValueError("gamma and beta must be nonnegative")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        object.__setattr__(self, "p", _norm_id(self.p))

    @property
    def contractive(self) -> bool:
        return self.gamma < 1.0

    @property
    def status(self) -> str:
        if not self.contractive:
            return "NOT CERTIFIED"
        return "CONTRACTIVE (proved)" if self.exact else "CONTRACTIVE (empirical)"

    def to_text(self, label: str = "certificate") -> str:
        seed = "-" if self.seed is None else str(self.seed)
        return (
            f"[{label}]\n"
            f"  p = {self.p:g}\n"
            f"  vec_norm = {self.vec_norm:g}\n"
            f"  gamma = {self.gamma:.12g}\n"
            f"  beta = {self.beta:.12g}\n"
            f"  rho = {self.rho:g}\n"
            f"  method = {self.method}\n"
            f"  samples = {self.sample_count}\n"
            f"  seed = {seed}\n"
            f"  kind = {'exact' if self.exact else 'empirical'}\n"
            f"  status = {self.status}\n"
        )


@dataclass(frozen=True)
class GainSamples:
    """Raw numerators ``||A(a) - A(a')||`` and denominators ``||a - a'||``."""

    numerators: np.ndarray
    denominators: np.ndarray


def _scaled(rng, shape, p, vec_norm, radius) -> np.ndarray:
    a = rng.standard_normal(shape)
    nrm = lp_norm(Sequence(a), p, vec_norm)
    return a * (radius / nrm) if nrm > 0 else a


def _sample_pairs(rng, dim: int, horizon: int, p, vec_norm, cap: float, count: int):
    """Yield input pairs ``(a, a')`` inside the ball of radius ``cap``."""
    shape = (horizon + 1, dim)
    for i in range(count):
        kind = i % 5
        if kind == 0:
            a = _scaled(rng, shape, p, vec_norm, cap * rng.uniform(0.05, 1.0))
            b = _scaled(rng, shape, p, vec_norm, cap * rng.uniform(0.05, 1.0))
        elif kind == 1:
            a = _scaled(rng, shape, p, vec_norm, cap * rng.uniform(0.05, 1.0))
            b = np.zeros(shape)
        elif kind == 2:
            a = _scaled(rng, shape, p, vec_norm, cap * rng.uniform(0.05, 0.9))
            b = a + _scaled(rng, shape, p, vec_norm, cap * 10 ** rng.uniform(-3, -1))
            nb = lp_norm(Sequence(b), p, vec_norm)
            if nb > cap:
                b *= cap / nb
        elif kind == 3:
            # impulse probe: extremizes shift-like operators
            a = np.zeros(shape)
            a[rng.integers(0, horizon + 1)] = rng.standard_normal(dim)
            nrm = lp_norm(Sequence(a), p, vec_norm)
            a *= cap * rng.uniform(0.05, 1.0) / nrm
            b = np.zeros(shape)
        else:
            # constant probe
            a = np.tile(rng.standard_normal(dim), (horizon + 1, 1))
            nrm = lp_norm(Sequence(a), p, vec_norm)
            a *= cap * rng.uniform(0.05, 1.0) / nrm
            b = np.zeros(shape)
        yield a, b


def estimate_gain(
    op: ComponentOperator,
    p=2,
    rho: float = np.inf,
    samples: int = 200,
    seed: int = 0,
    *,
    method: str = RATIO_SUP,
    vec_norm=2,
    horizon: Optional[int] = None,
    return_samples: bool = False,
):
    """Sample the incremental ``l_p`` gain of an operator.

    Parameters
    ----------
    op : ComponentOperator
    p : {1, 2, inf}
    rho : float
        Radius of the input ball. With ``rho = inf`` inputs are drawn with
        norms up to 10.
    samples : int
        Number of input pairs, at least 2.
    seed : int
    method : {"ratio_sup", "affine_fit"}
        ``ratio_sup`` returns the largest ratio with ``beta = 0``;
        ``affine_fit`` solves a small LP for the tightest envelope
        ``gamma * d + beta`` with ``gamma`` weighted by the mean distance.
    vec_norm : {1, 2, inf}
    horizon : int, optional
        Horizon of the sampled sequences (default: the operator's).
    return_samples : bool
        Also return the raw :class:`GainSamples`.

    Returns
    -------
    GainCertificate or (GainCertificate, GainSamples)
        Always an empirical under-estimate of the true constants.
    """
    if samples < 2:
        raise ValueError("at least two samples are required")
    if not rho > 0:
        raise ValueError("rho must be positive")
    if method not in (RATIO_SUP, AFFINE_FIT):
        raise ValueError(f"unknown method {method!r}")
    p = _norm_id(p)
    vec_norm = _norm_id(vec_norm)
    H = op.horizon if horizon is None else horizon
    cap = rho if np.isfinite(rho) else 10.0
    rng = np.random.default_rng(seed)
    num = np.empty(samples)
    den = np.empty(samples)
    for i, (a, b) in enumerate(_sample_pairs(rng, op.in_dim, H, p, vec_norm, cap, samples)):
        ya = evaluate(op, Sequence(a))
        yb = evaluate(op, Sequence(b))
        num[i] = lp_norm(ya - yb, p, vec_norm)
        den[i] = lp_norm(Sequence(a - b), p, vec_norm)
    mask = den > 0
    num, den = num[mask], den[mask]
    if method == RATIO_SUP:
        gamma = float(np.max(num / den)) if num.size else 0.0
        beta = 0.0
    else:
        gamma, beta = _affine_envelope(num, den)
    viol = float(np.max(num - (gamma * den + beta), initial=0.0))
    cert = GainCertificate(
        p=p,
        gamma=gamma,
        beta=beta,
        rho=rho,
        sample_count=int(num.size),
        method=method,
        seed=seed,
        exact=False,
        vec_norm=vec_norm,
        max_violation=max(viol, 0.0),
    )
    if return_samples:
        return cert, GainSamples(num, den)
    return cert


def _affine_envelope(num: np.ndarray, den: np.ndarray):
    if not np.any(num > 0):
        return 0.0, 0.0
    res = linprog(
        c=[float(np.mean(den)), 1.0],
        A_ub=np.column_stack([-den, -np.ones_like(den)]),
        b_ub=-num,
        bounds=[(0, None), (0, None)],
        method="highs",
    )
    if not res.success:  # pragma: no cover - LP is always feasible
        raise RuntimeError(res.message)
    gamma, beta = (float(v) for v in res.x)
    # close the LP's numerical slack so every sample is enveloped
    slack = float(np.max(num - (gamma * den + beta)))
    if slack > 0:
        beta += slack
    return gamma, beta


def kernel_inf_gain(kernel: LinearCausalKernel) -> float:
    """Exact induced ``l_inf -> l_inf`` gain (vector inf-norm) of a kernel.

    Equal to the largest absolute row sum over all blocks of a time step.
    """
    row_sums = np.abs(kernel.blocks).sum(axis=(1, 3))
    return float(row_sums.max()) if row_sums.size else 0.0


def exact_kernel_certificate(kernel: LinearCausalKernel) -> GainCertificate:
    return GainCertificate(
        p=np.inf,
        gamma=kernel_inf_gain(kernel),
        beta=0.0,
        rho=np.inf,
        sample_count=0,
        method=EXACT_KERNEL,
        exact=True,
        vec_norm=np.inf,
    )


def small_gain_bound(cert, w_norm: float, beta: Optional[float] = None,
                     rho: Optional[float] = None) -> Optional[float]:
    """Bound ``(||w|| + beta) / (1 - gamma)`` or ``None`` when infeasible.

    Parameters
    ----------
    cert : GainCertificate or float
        Certificate, or the gain ``gamma`` itself.
    w_norm : float
        Norm of the exogenous input.
    beta, rho : float, optional
        Override the certificate's offset and validity radius (required
        when ``cert`` is a bare gain; defaults 0 and inf).

    Returns
    -------
    float or None
        ``None`` when ``gamma >= 1`` or when the local hypothesis
        ``w_norm < (1 - gamma) rho - beta`` fails.
    """
    if isinstance(cert, GainCertificate):
        gamma = cert.gamma
        beta = cert.beta if beta is None else beta
        rho = cert.rho if rho is None else rho
    else:
        gamma = float(cert)
        beta = 0.0 if beta is None else beta
        rho = np.inf if rho is None else rho
    if w_norm < 0:
        raise ValueError("w_norm must be nonnegative")
    if gamma >= 1.0:
        return None
    if np.isfinite(rho) and not w_norm < (1.0 - gamma) * rho - beta:
        return None
    return (w_norm + beta) / (1.0 - gamma)


def feedback_solution(delta: ComponentOperator, w) -> Sequence:
    """Solve ``y = Delta(y) + w`` for strictly causal ``Delta``."""
    w = as_sequence(w, delta.in_dim)
    op = add(identity(delta.in_dim, delta.horizon), scale(delta, -1.0))
    return evaluate(invert_causal(op), w)


@dataclass(frozen=True)
class TrialResult:
    index: int
    w_hat_norm: float
    eps_norm: float
    bound: Optional[float]
    identity_error: float
    passed: bool

    @property
    def margin(self) -> Optional[float]:
        return None if self.bound is None else self.bound - self.w_hat_norm


@dataclass(frozen=True)
class LoopReport:
    """Outcome of :func:`certify_loop`."""

    certificate: GainCertificate
    trials: tuple
    extra_certificates: dict = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(t.passed for t in self.trials)

    def to_text(self) -> str:
        lines = [self.certificate.to_text("residual")]
        for name, cert in self.extra_certificates.items():
            lines.append(cert.to_text(name))
        lines.append("[trials]")
        lines.append("  index  |w_hat|_p  |eps|_p  bound  margin  identity_err  result")
        for t in self.trials:
            bound = "infeasible" if t.bound is None else f"{t.bound:.6g}"
            margin = "-" if t.margin is None else f"{t.margin:.6g}"
            lines.append(
                f"  {t.index}  {t.w_hat_norm:.6g}  {t.eps_norm:.6g}  {bound}  "
                f"{margin}  {t.identity_error:.3e}  {'PASS' if t.passed else 'FAIL'}"
            )
        lines.append(f"overall = {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def reconstructed_disturbance(plant: Plant, psi: ClmPair, w_hat: Sequence, w: Sequence,
                              v: Sequence, d: Sequence) -> Sequence:
    """``eps = F(Psi(w_hat) - (v, -d)) - F(Psi(w_hat)) + w + v``.

    With this ``eps`` the internal state obeys ``w_hat = Delta(w_hat) + eps``.
    """
    x, u = psi.evaluate(w_hat)
    f_pert = evaluate(plant.dynamics, stack_sequences(x - v, u + d))
    f_nom = evaluate(plant.dynamics, stack_sequences(x, u))
    return f_pert - f_nom + w + v


def certify_loop(plant: Plant, psi: ClmPair, trials: Iterable, cert: GainCertificate,
                 *, extra_certificates: Optional[dict] = None,
                 rtol: float = 1e-9) -> LoopReport:
    """Check simulated perturbed loops against the small-gain bound.

    Each trial ``(w, v, d)`` is simulated; the bound is evaluated on the
    norm of the reconstructed disturbance ``eps`` (which already contains
    ``w + v``) and compared with the norm of the internal state.
    """
    delta = residual_operator(plant, psi)
    results = []
    for i, trial in enumerate(trials):
        w, v, d = trial
        H = as_sequence(w).horizon
        v = Sequence.zeros(plant.n, H) if v is None else as_sequence(v, plant.n)
        d = Sequence.zeros(plant.m, H) if d is None else as_sequence(d, plant.m)
        trace = simulate_perturbed(plant, psi, w, v, d)
        eps = reconstructed_disturbance(plant, psi, trace.w_hat, trace.w, v, d)
        ident = (evaluate(delta, trace.w_hat) + eps) - trace.w_hat
        w_hat_norm = lp_norm(trace.w_hat, cert.p, cert.vec_norm)
        eps_norm = lp_norm(eps, cert.p, cert.vec_norm)
        bound = small_gain_bound(cert, eps_norm)
        passed = bound is not None and w_hat_norm <= bound * (1 + rtol) + 1e-12
        results.append(
            TrialResult(i, w_hat_norm, eps_norm, bound, ident.max_abs(), passed)
        )
    return LoopReport(cert, tuple(results), dict(extra_certificates or {}))


__all__ = [
    "AFFINE_FIT",
    "EXACT_KERNEL",
    "GainCertificate",
    "GainSamples",
    "LoopReport",
    "RATIO_SUP",
    "TrialResult",
    "certify_loop",
    "estimate_gain",
    "exact_kernel_certificate",
    "feedback_solution",
    "kernel_inf_gain",
    "reconstructed_disturbance",
    "small_gain_bound",
]
