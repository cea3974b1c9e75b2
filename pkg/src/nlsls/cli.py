"""Command-line interface.

Every command reads an optional TOML config, writes its artifacts under
``--out-dir`` and finishes with ``manifest.json`` listing the artifacts, their
SHA-256 digests and the hash of the effective configuration.

Exit codes: 0 success, 2 configuration error, 3 infeasible synthesis,
4 certification failure.

Config schema (all sections optional unless the command needs them)::

    seed = 0
    p_norms = [1, 2, inf]

    [plant]
    kind = "lti"           # "lti", "ltv" or "cartpole"
    A = [[1.0]]            # (n, n) for lti, (H, n, n) for ltv
    B = [[1.0]]
    horizon = 3            # lti only

    [cartpole]
    m_c = 1.0              # physical parameters, SI units, radians
    reference = "ref.csv"  # omit to generate the swing-up heuristic
    duration = 6.0
    initial_offset = [0.0, 0.785, 0.0, 0.0]

    [synthesis]
    T = 2
    tail = "hold"          # or "truncate"

    [clm]
    dir = "out/clm"        # kernels from a previous synthesize run

    [noise]
    w_std = 0.1
    v_std = 0.0
    d_std = 0.0

    [certify]
    target = "clm"         # "clm", "delay" or "antiwindup"
    gamma = 0.5            # delay target
    samples = 200
    trials = 5
    rho = inf

    [antiwindup]
    A = [[0.9, 0.5], [0.0, 0.8]]
    B = [[0.0], [1.0]]
    horizon = 60
    T = 6
    W_radius = 0.5
    impulse = 5.0

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on older interpreters
    import tomli as tomllib

from . import __version__
from .blend import (
    ConvexSet,
    antiwindup_wrap,
    awp_bound,
    convergence_check,
    induced_norm,
    min_contraction_horizon,
    saturated_internal_dynamics,
    simulate_antiwindup,
    verify_containment,
)
from .cartpole import (
    CartPoleParams,
    NoiseConfig,
    build_tracking_model,
    heuristic_swingup_reference,
    load_reference_csv,
    run_tracking_experiment,
)
from .clm import Plant, residual_operator
from .io import load_affine_clm, save_affine_clm, write_columns_csv
from .ltv import (
    HOLD,
    InfeasibleSynthesisError,
    LtvModel,
    h2_cost,
    synthesize_h2_fir,
    verify_subspace,
)
from .operators import LinearCausalKernel, Sequence, delay, lp_norm, scale
from .runtime import SlController, simulate_nominal
from .stability import (
    GainCertificate,
    certify_loop,
    estimate_gain,
    feedback_solution,
    small_gain_bound,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NOT_CERTIFIED = 4

DEFAULT_P_NORMS = (1.0, 2.0, np.inf)


class ConfigError(ValueError):
    """Invalid or incomplete configuration."""


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


class RunConfig:
    """Effective configuration of one command.

    Parameters
    ----------
    data : dict
        Parsed TOML content with CLI overrides applied.
    base_dir : Path
        Directory against which relative paths are resolved.
    """

    def __init__(self, data: dict, base_dir: Path):
        self.data = data
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: Optional[str], seed: Optional[int],
             p_norms: Optional[list]) -> "RunConfig":
        data: dict = {}
        base = Path.cwd()
        if path is not None:
            cfg_path = Path(path)
            if not cfg_path.exists():
                raise ConfigError(f"config file not found: {cfg_path}")
            try:
                data = tomllib.loads(cfg_path.read_text())
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{cfg_path}: {exc}") from exc
            base = cfg_path.resolve().parent
        if seed is not None:
            data["seed"] = seed
        if p_norms:
            data["p_norms"] = p_norms
        cfg = cls(data, base)
        cfg._resolve_paths()
        return cfg

    def _resolve_paths(self) -> None:
        for section, key in (("cartpole", "reference"), ("clm", "dir")):
            sec = self.data.get(section, {})
            if key in sec:
                sec[key] = str((self.base_dir / sec[key]).resolve())

    def section(self, name: str) -> dict:
        sec = self.data.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    @property
    def seed(self) -> int:
        if "seed" not in self.data:
            raise ConfigError("a seed is required (config 'seed' or --seed)")
        return int(self.data["seed"])

    @property
    def p_norms(self) -> list:
        raw = self.data.get("p_norms", list(DEFAULT_P_NORMS))
        out = []
        for p in raw:
            p = float(p)
            if p not in (1.0, 2.0, np.inf):
                raise ConfigError(f"unsupported p-norm {p}")
            out.append(p)
        return out

    def digest(self) -> str:
        canon = json.dumps(self.data, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()


def _parse_p(text: str) -> float:
    if text.lower() in ("inf", "infinity"):
        return np.inf
    try:
        p = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid p-norm {text!r}") from None
    if p not in (1.0, 2.0):
        raise argparse.ArgumentTypeError("p-norm must be 1, 2 or inf")
    return p


def _matrix(value, name: str, ndim: int = 2) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not numeric") from exc
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise ConfigError(f"{name} must have {ndim} dimensions")
    return arr


def _params(cfg: RunConfig) -> CartPoleParams:
    sec = cfg.section("cartpole")
    fields = {k: float(sec[k]) for k in ("m_c", "m_p", "l", "g", "tau_s") if k in sec}
    try:
        return CartPoleParams(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _reference(cfg: RunConfig, params: CartPoleParams):
    sec = cfg.section("cartpole")
    if "reference" in sec:
        try:
            return load_reference_csv(sec["reference"])
        except (FileNotFoundError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return heuristic_swingup_reference(params, float(sec.get("duration", 6.0)))


def _linear_model(cfg: RunConfig) -> LtvModel:
    sec = cfg.section("plant")
    kind = sec.get("kind", "lti")
    if "A" not in sec or "B" not in sec:
        raise ConfigError("[plant] needs A and B")
    try:
        if kind == "lti":
            if "horizon" not in sec:
                raise ConfigError("[plant] horizon is required for lti plants")
            return LtvModel.from_lti(_matrix(sec["A"], "A"), _matrix(sec["B"], "B"),
                                     int(sec["horizon"]))
        if kind == "ltv":
            return LtvModel(_matrix(sec["A"], "A", 3), _matrix(sec["B"], "B", 3))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown plant kind {kind!r}")


def _plant_kind(cfg: RunConfig) -> str:
    return cfg.section("plant").get("kind", "lti")


def _synthesize(cfg: RunConfig, model: LtvModel):
    sec = cfg.section("synthesis")
    if "T" not in sec:
        raise ConfigError("[synthesis] T is required")
    return synthesize_h2_fir(model, int(sec["T"]), tail=sec.get("tail", HOLD))


# --------------------------------------------------------------------------
# Output handling
# --------------------------------------------------------------------------


class Outputs:
    """Collects written artifacts and writes the manifest."""

    def __init__(self, out_dir: str, command: str, cfg: RunConfig):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.paths: list = []

    def path(self, name: str) -> Path:
        p = self.root / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths) -> None:
        for p in paths:
            self.paths.append(Path(p))

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        self.add(p)
        return p

    def finish(self, status: str, exit_code: int) -> int:
        artifacts = []
        for p in sorted(set(self.paths)):
            artifacts.append({
                "path": str(p.relative_to(self.root)),
                "sha256": hashlib.sha256(p.read_bytes()).hexdigest(),
            })
        manifest = {
            "command": self.command,
            "version": __version__,
            "config_sha256": self.cfg.digest(),
            "status": status,
            "exit_code": exit_code,
            "artifacts": artifacts,
        }
        (self.root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return exit_code


def _fmt_p(p: float) -> str:
    return "inf" if p == np.inf else f"{p:g}"


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_synthesize(cfg: RunConfig, out: Outputs) -> int:
    """Synthesize H2-optimal FIR kernels for a linear or cart-pole model."""
    kind = _plant_kind(cfg)
    if kind == "cartpole":
        params = _params(cfg)
        ref = _reference(cfg, params)
        model = build_tracking_model(params, ref)
        out.add(ref.to_csv(out.path("reference.csv"), params.tau_s))
    else:
        model = _linear_model(cfg)
    try:
        clm = _synthesize(cfg, model)
    except InfeasibleSynthesisError as exc:
        out.text("synthesis_report.txt", f"status = INFEASIBLE\nh = {exc.h}\n{exc}\n")
        print(f"synthesis infeasible at h={exc.h}", file=sys.stderr)
        return out.finish("infeasible", EXIT_INFEASIBLE)
    out.add(*save_affine_clm(clm, out.path("clm"), {"T": clm.T, "tail": clm.tail}))
    residual = verify_subspace(clm, model)
    report = (
        f"status = OK\n"
        f"plant = {kind}\n"
        f"n = {model.n}\nm = {model.m}\nhorizon = {model.horizon}\n"
        f"T = {clm.T}\ntail = {clm.tail}\n"
        f"subspace_residual = {residual:.6e}\n"
        f"h2_cost = {h2_cost(clm):.12g}\n"
    )
    out.text("synthesis_report.txt", report)
    print(report, end="")
    return out.finish("ok", EXIT_OK)


def _load_or_synthesize(cfg: RunConfig, model: LtvModel):
    sec = cfg.section("clm")
    if "dir" in sec:
        try:
            return load_affine_clm(sec["dir"])
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
    return _synthesize(cfg, model)


def cmd_simulate(cfg: RunConfig, out: Outputs) -> int:
    """Closed-loop simulation with the SL controller of a CLM."""
    seed = cfg.seed
    kind = _plant_kind(cfg)
    noise_sec = cfg.section("noise")
    if kind == "cartpole":
        return _simulate_cartpole(cfg, out, seed)
    model = _linear_model(cfg)
    try:
        clm = _load_or_synthesize(cfg, model)
    except InfeasibleSynthesisError as exc:
        out.text("simulation_summary.txt", f"status = INFEASIBLE\nh = {exc.h}\n")
        return out.finish("infeasible", EXIT_INFEASIBLE)
    if clm.horizon != model.horizon:
        raise ConfigError("CLM horizon does not match the plant horizon")
    A_ker = _ltv_state_kernel(model)
    B_ker = _ltv_input_kernel(model)
    plant = Plant.from_kernels(A_ker, B_ker)
    rng = np.random.default_rng(seed)
    w = Sequence(float(noise_sec.get("w_std", 1.0)) *
                 rng.standard_normal((model.horizon + 1, model.n)))
    pair = clm.pair()
    trace = simulate_nominal(plant, SlController.from_clm(pair), w)
    x_ref, u_ref = pair.evaluate(w)
    out.add(trace.to_csv(out.path("trace.csv")))
    lines = [
        "status = OK",
        f"seed = {seed}",
        f"max_abs_x_minus_psi_x = {float(np.max(np.abs(trace.x.values - x_ref.values))):.6e}",
        f"max_abs_u_minus_psi_u = {float(np.max(np.abs(trace.u.values - u_ref.values))):.6e}",
    ]
    for p in cfg.p_norms:
        lines.append(f"w_hat_norm_p{_fmt_p(p)} = {lp_norm(trace.w_hat, p):.12g}")
    summary = "\n".join(lines) + "\n"
    out.text("simulation_summary.txt", summary)
    print(summary, end="")
    return out.finish("ok", EXIT_OK)


def _ltv_state_kernel(model: LtvModel) -> LinearCausalKernel:
    H, n = model.horizon, model.n
    blocks = np.zeros((H + 1, 2, n, n))
    blocks[1:, 1] = model.A[:H]
    return LinearCausalKernel(blocks, 2)


def _ltv_input_kernel(model: LtvModel) -> LinearCausalKernel:
    H, n, m = model.horizon, model.n, model.m
    blocks = np.zeros((H + 1, 2, n, m))
    blocks[1:, 1] = model.B[:H]
    return LinearCausalKernel(blocks, 2)


def _noise(cfg: RunConfig, default_offset) -> NoiseConfig:
    sec = cfg.section("noise")
    cp = cfg.section("cartpole")
    offset = tuple(float(v) for v in cp.get("initial_offset", default_offset))
    if len(offset) != 4:
        raise ConfigError("initial_offset must have four entries")
    return NoiseConfig(
        float(sec.get("w_std", 0.0)),
        float(sec.get("v_std", 0.0)),
        float(sec.get("d_std", 0.0)),
        offset,
    )


def _simulate_cartpole(cfg: RunConfig, out: Outputs, seed: int,
                       default_offset=(0.0, 0.0, 0.0, 0.0)) -> int:
    params = _params(cfg)
    ref = _reference(cfg, params)
    model = build_tracking_model(params, ref)
    sec = cfg.section("synthesis")
    if "T" not in sec and "dir" not in cfg.section("clm"):
        sec = dict(sec, T=60)
        cfg.data["synthesis"] = sec
    try:
        clm = _load_or_synthesize(cfg, model)
    except InfeasibleSynthesisError as exc:
        out.text("simulation_summary.txt", f"status = INFEASIBLE\nh = {exc.h}\n")
        return out.finish("infeasible", EXIT_INFEASIBLE)
    result = run_tracking_experiment(params, ref, clm, _noise(cfg, default_offset), seed)
    out.add(ref.to_csv(out.path("reference.csv"), params.tau_s))
    out.add(result.to_csv(out.path("trace.csv")))
    w_hat = result.trace.w_hat
    lines = [f"seed = {seed}", result.summary().rstrip("\n")]
    for p in cfg.p_norms:
        lines.append(f"w_hat_norm_p{_fmt_p(p)} = {lp_norm(w_hat, p):.12g}")
    summary = "\n".join(lines) + "\n"
    out.text("simulation_summary.txt", summary)
    print(summary, end="")
    return out.finish("diverged" if result.diverged else "ok", EXIT_OK)


def cmd_certify(cfg: RunConfig, out: Outputs) -> int:
    """Gain certificate of a residual operator and bound checks on trials."""
    sec = cfg.section("certify")
    target = sec.get("target", "clm")
    if target == "antiwindup":
        return _certify_antiwindup(cfg, out)
    seed = cfg.seed
    samples = int(sec.get("samples", 200))
    n_trials = int(sec.get("trials", 5))
    rho = float(sec.get("rho", np.inf))
    rng = np.random.default_rng(seed)
    reports = []
    ok = True
    if target == "delay":
        gamma = float(sec.get("gamma", 0.5))
        horizon = int(sec.get("horizon", 50))
        dim = int(sec.get("dim", 1))
        op = scale(delay(dim, horizon), gamma)
        for p in cfg.p_norms:
            cert = estimate_gain(op, p, rho, samples, seed)
            reports.append(cert.to_text(f"delay p={_fmt_p(p)}"))
            ok &= cert.contractive
            lines = ["[trials]"]
            for i in range(n_trials):
                w = Sequence(rng.standard_normal((horizon + 1, dim)))
                w_hat = feedback_solution(op, w)
                bound = small_gain_bound(GainCertificate(p, gamma, exact=True), lp_norm(w, p))
                w_norm = lp_norm(w_hat, p)
                passed = bound is not None and w_norm <= bound * (1 + 1e-12)
                ok &= passed
                b = "infeasible" if bound is None else f"{bound:.6g}"
                lines.append(f"  {i}  |w_hat|_p = {w_norm:.6g}  bound = {b}  "
                             f"{'PASS' if passed else 'FAIL'}")
            reports.append("\n".join(lines) + "\n")
    elif target == "clm":
        model = _linear_model(cfg)
        clm = _load_or_synthesize(cfg, model)
        plant = Plant.from_kernels(_ltv_state_kernel(model), _ltv_input_kernel(model))
        pair = clm.pair()
        delta = residual_operator(plant, pair)
        w_std = float(cfg.section("noise").get("w_std", 1.0))
        v_std = float(cfg.section("noise").get("v_std", 0.0))
        d_std = float(cfg.section("noise").get("d_std", 0.0))
        H = model.horizon
        for p in cfg.p_norms:
            cert = estimate_gain(delta, p, rho, samples, seed)
            trials = [
                (
                    Sequence(w_std * rng.standard_normal((H + 1, model.n))),
                    Sequence(v_std * rng.standard_normal((H + 1, model.n))),
                    Sequence(d_std * rng.standard_normal((H + 1, model.m))),
                )
                for _ in range(n_trials)
            ]
            report = certify_loop(plant, pair, trials, cert)
            reports.append(f"# p = {_fmt_p(p)}\n" + report.to_text())
            ok &= cert.contractive and report.all_passed
    else:
        raise ConfigError(f"unknown certify target {target!r}")
    text = "\n".join(reports) + f"overall = {'CERTIFIED' if ok else 'NOT CERTIFIED'}\n"
    out.text("certificate.txt", text)
    print(text, end="")
    if not ok:
        return out.finish("not certified", EXIT_NOT_CERTIFIED)
    return out.finish("ok", EXIT_OK)


# --------------------------------------------------------------------------
# Anti-windup
# --------------------------------------------------------------------------


_AW_DEFAULT_A = [[0.9, 0.5], [0.0, 0.8]]
_AW_DEFAULT_B = [[0.0], [1.0]]


def _antiwindup_setup(cfg: RunConfig):
    sec = cfg.section("antiwindup")
    A = _matrix(sec.get("A", _AW_DEFAULT_A), "antiwindup.A")
    B = _matrix(sec.get("B", _AW_DEFAULT_B), "antiwindup.B")
    H = int(sec.get("horizon", 60))
    T = int(sec.get("T", 6))
    norm = float(sec.get("vec_norm", np.inf))
    W = ConvexSet.ball(A.shape[0], float(sec.get("W_radius", 0.5)), np.inf)
    try:
        rm = synthesize_h2_fir(LtvModel.from_lti(A, B, H), T)
    except ValueError as exc:
        if isinstance(exc, InfeasibleSynthesisError):
            raise
        raise ConfigError(str(exc)) from exc
    T_bar = sec.get("T_bar")
    if T_bar is None:
        T_bar = min_contraction_horizon(A, norm)
        if T_bar is None:
            raise ConfigError("A has no contraction horizon; set antiwindup.T_bar")
    # actuator box sized to the worst-case input for W-valued estimates
    probe = verify_containment(rm, W, ConvexSet.symmetric_box(np.ones(B.shape[1])))
    u_half = np.max(1.0 / np.where(probe.u_margins > 0, probe.u_margins, np.inf), axis=0)
    u_half = np.where(u_half > 0, u_half, 1.0) * float(sec.get("U_slack", 1.05))
    U = ConvexSet.symmetric_box(u_half)
    X = ConvexSet.whole(A.shape[0])
    if "X_half_widths" in sec:
        X = ConvexSet.symmetric_box(np.array(sec["X_half_widths"], dtype=float))
    spec = antiwindup_wrap(A, B, rm, W, U, int(T_bar), norm=norm)
    return A, B, H, rm, W, U, X, spec, norm


def _certify_antiwindup(cfg: RunConfig, out: Outputs) -> int:
    try:
        A, B, H, rm, W, U, X, spec, norm = _antiwindup_setup(cfg)
    except InfeasibleSynthesisError as exc:
        out.text("certificate.txt", f"status = INFEASIBLE\nh = {exc.h}\n")
        return out.finish("infeasible", EXIT_INFEASIBLE)
    sec = cfg.section("antiwindup")
    gamma = sec.get("gamma")
    text, ok = _awp_report(A, spec, W, U, X, rm, cfg.p_norms, float(sec.get("w_norm", 1.0)),
                           None if gamma is None else float(gamma), norm)
    out.text("certificate.txt", text)
    print(text, end="")
    if not ok:
        return out.finish("not certified", EXIT_NOT_CERTIFIED)
    return out.finish("ok", EXIT_OK)


def _awp_report(A, spec, W, U, X, rm, p_norms, w_norm, gamma, norm) -> tuple:
    T_bar = spec.antiwindup_horizon
    cont = verify_containment(rm, W, U)
    lines = [
        f"T_bar = {T_bar}",
        f"contraction = {induced_norm(np.linalg.matrix_power(A, T_bar), norm):.12g}",
        f"eta_bar = {W.inscribed_radius(norm):.12g}",
        f"containment = {'OK' if cont.contained else 'FAIL'}",
        f"containment_min_margin = {cont.min_margin:.6g}",
    ]
    ok = cont.contained
    for p in p_norms:
        b = awp_bound(A, T_bar, W, p, w_norm, gamma, norm)
        bound = "none" if b.bound is None else f"{b.bound:.6g}"
        lines.append(f"p = {_fmt_p(p)}  branch = {b.branch}  bound = {bound}  "
                     f"admissible = {b.admissible:.6g}")
        ok &= b.branch != "infeasible"
    lines.append(f"overall = {'CERTIFIED' if ok else 'NOT CERTIFIED'}")
    return "\n".join(lines) + "\n", ok


def cmd_demo_antiwindup(cfg: RunConfig, out: Outputs) -> int:
    """Impulse and persistent disturbances through the anti-windup loop."""
    seed = int(cfg.data.get("seed", 0))
    cfg.data.setdefault("seed", seed)
    try:
        A, B, H, rm, W, U, X, spec, norm = _antiwindup_setup(cfg)
    except InfeasibleSynthesisError as exc:
        out.text("antiwindup_report.txt", f"status = INFEASIBLE\nh = {exc.h}\n")
        return out.finish("infeasible", EXIT_INFEASIBLE)
    sec = cfg.section("antiwindup")
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    impulse = np.zeros((H + 1, n))
    impulse[1] = float(sec.get("impulse", 5.0)) * np.ones(n)
    persistent = float(sec.get("persistent", 2.0)) * np.sign(rng.standard_normal((H + 1, n)))
    lines, _ = _awp_report(A, spec, W, U, X, rm, cfg.p_norms,
                           float(sec.get("w_norm", 1.0)), None, norm)
    lines = [lines.rstrip("\n")]
    for name, w in (("impulse", impulse), ("persistent", persistent)):
        w = Sequence(w)
        trace = simulate_antiwindup(A, B, spec, U, w)
        reduced = saturated_internal_dynamics(spec, A, w)
        conv = convergence_check(trace.w_hat, rm, W, X, spec.antiwindup_horizon, A)
        out.add(trace.to_csv(out.path(f"trace_{name}.csv")))
        out.add(write_columns_csv(out.path(f"reduced_{name}.csv"), {"w_hat": reduced}))
        t_prime = "none" if conv.t_prime is None else str(conv.t_prime)
        lines.append(f"[{name}]")
        gap = float(np.max(np.abs(trace.w_hat.values - reduced.values)))
        lines.append(f"  dual_path_error = {gap:.3e}")
        lines.append(f"  t_prime = {t_prime}")
        lines.append(f"  state_in_X_after_t_prime = {conv.holds}")
        for p in cfg.p_norms:
            lines.append(f"  w_norm_p{_fmt_p(p)} = {lp_norm(w, p, norm):.6g}  "
                         f"w_hat_norm_p{_fmt_p(p)} = {lp_norm(trace.w_hat, p, norm):.6g}")
    text = "\n".join(lines) + "\n"
    out.text("antiwindup_report.txt", text)
    print(text, end="")
    return out.finish("ok", EXIT_OK)


def cmd_demo_cartpole(cfg: RunConfig, out: Outputs) -> int:
    """Swing-up tracking from a 45 degree initial offset."""
    cfg.data.setdefault("seed", 0)
    return _simulate_cartpole(cfg, out, cfg.seed,
                              default_offset=(0.0, np.pi / 4, 0.0, 0.0))


COMMANDS = {
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "demo-cartpole": cmd_demo_cartpole,
    "demo-antiwindup": cmd_demo_antiwindup,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlsls", description="Nonlinear system level synthesis toolkit."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("--out-dir", default="nlsls-out", help="output directory")
        p.add_argument("--p-norm", type=_parse_p, action="append", dest="p_norms",
                       help="sequence norm order 1, 2 or inf (repeatable)")
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config, args.seed, args.p_norms)
        out = Outputs(args.out_dir, args.command, cfg)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
