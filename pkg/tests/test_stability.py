import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsls.clm import AffineClm, ClmPair, Plant, complete_clm, residual_operator
from nlsls.operators import (
    LinearCausalKernel,
    Sequence,
    delay,
    identity,
    lp_norm,
    running_lp_norms,
    zero,
)
from nlsls.stability import (
    AFFINE_FIT,
    GainCertificate,
    certify_loop,
    estimate_gain,
    exact_kernel_certificate,
    feedback_solution,
    kernel_inf_gain,
    reconstructed_disturbance,
    small_gain_bound,
)

from _factories import random_causal_operator, random_kernel, random_nonlinear_plant, random_sequence

P_NORMS = [1, 2, np.inf]


class TestEstimateGain:
    def test_zero_operator(self):
        cert = estimate_gain(zero(2, 2, 10), p=2, samples=20)
        assert (cert.gamma, cert.beta) == (0.0, 0.0)

    def test_scaled_delay_sup_norm(self):
        cert = estimate_gain(delay(1, 30, gain=0.7), p=np.inf, samples=100, seed=3)
        assert 0.69 <= cert.gamma <= 0.70 + 1e-12
        assert not cert.exact and cert.status == "CONTRACTIVE (empirical)"

    def test_exact_clm_residual_has_zero_gain(self):
        rng = np.random.default_rng(0)
        plant = random_nonlinear_plant(rng, horizon=15)
        psi = complete_clm(plant, random_causal_operator(rng, 3, 2, 15))
        cert = estimate_gain(residual_operator(plant, psi), p=2, samples=30)
        assert cert.gamma <= 1e-12 and cert.beta == 0.0

    def test_deterministic_for_seed(self):
        op = delay(2, 10, gain=0.4)
        assert estimate_gain(op, seed=5, samples=20) == estimate_gain(op, seed=5, samples=20)

    @pytest.mark.parametrize("p", P_NORMS)
    def test_affine_envelope_covers_samples(self, p):
        op = random_causal_operator(np.random.default_rng(1), 2, 2, 12)
        cert, samples = estimate_gain(op, p, rho=3.0, samples=60, method=AFFINE_FIT,
                                      return_samples=True)
        env = cert.gamma * samples.denominators + cert.beta
        assert np.all(samples.numerators <= env + 1e-12)
        assert cert.max_violation <= 1e-12

    def test_inputs_respect_radius(self):
        # a constant-output operator reveals nothing; a norm-reading one bounds the input size
        op = identity(1, 8)
        cert, s = estimate_gain(op, p=1, rho=0.5, samples=40, return_samples=True)
        assert np.all(s.denominators <= 1.0 + 1e-12)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            estimate_gain(zero(1, 1, 3), samples=1)
        with pytest.raises(ValueError):
            estimate_gain(zero(1, 1, 3), rho=0.0)

    def test_sampled_gain_below_exact_kernel_gain(self):
        K = random_kernel(np.random.default_rng(2), 2, 2, 10, fir=3)
        exact = exact_kernel_certificate(K)
        sampled = estimate_gain(K.as_operator(), p=np.inf, vec_norm=np.inf, samples=100)
        assert sampled.gamma <= exact.gamma + 1e-12
        assert exact.exact and exact.method == "exact_kernel"

    def test_kernel_gain_by_hand(self):
        blocks = np.zeros((3, 2, 1, 2))
        blocks[1:, 1] = [[0.5, -0.25]]
        assert kernel_inf_gain(LinearCausalKernel(blocks, 2)) == 0.75


class TestSmallGainBound:
    def test_half_gain(self):
        assert small_gain_bound(0.5, 1.0) == 2.0

    def test_zero_gain(self):
        assert small_gain_bound(GainCertificate(2, 0.0, beta=0.3), 1.2) == pytest.approx(1.5)

    def test_local_hypothesis_fails(self):
        cert = GainCertificate(2, 0.9, beta=0.1, rho=10.0)
        assert small_gain_bound(cert, 1.1) is None
        assert small_gain_bound(cert, 0.8) == pytest.approx(9.0)

    def test_non_contractive(self):
        assert small_gain_bound(1.0, 0.1) is None
        assert GainCertificate(2, 1.2).status == "NOT CERTIFIED"

    @settings(max_examples=60)
    @given(
        w=st.floats(0, 10), dw=st.floats(0, 5),
        g=st.floats(0, 0.95), dg=st.floats(0, 0.04),
        b=st.floats(0, 2), db=st.floats(0, 2),
    )
    def test_monotone(self, w, dw, g, dg, b, db):
        base = small_gain_bound(g, w, beta=b)
        assert small_gain_bound(g, w + dw, beta=b) >= base
        assert small_gain_bound(g + dg, w, beta=b) >= base
        assert small_gain_bound(g, w, beta=b + db) >= base

    def test_certificate_text(self):
        text = GainCertificate(np.inf, 0.25, seed=4, sample_count=10).to_text("delta")
        assert "gamma = 0.25" in text and "status = CONTRACTIVE (empirical)" in text


class TestSyntheticContraction:
    @pytest.mark.parametrize("p", P_NORMS)
    @pytest.mark.parametrize("steps", [1, 3])
    def test_bound_holds_and_running_norms(self, p, steps):
        rng = np.random.default_rng(steps)
        gamma = 0.8
        op = delay(2, 40, steps=steps, gain=gamma)
        for _ in range(20):
            w = random_sequence(rng, 2, 40)
            w_hat = feedback_solution(op, w)
            bound = small_gain_bound(gamma, lp_norm(w, p))
            assert lp_norm(w_hat, p) <= bound * (1 + 1e-12)
            run = running_lp_norms(w_hat, p)
            assert np.all(np.diff(run) >= 0) and run[-1] <= bound * (1 + 1e-12)

    def test_impulse_is_nearly_tight_in_l1(self):
        gamma, H = 0.5, 60
        w_hat = feedback_solution(delay(1, H, gain=gamma), Sequence.impulse(1, H))
        assert lp_norm(w_hat, 1) == pytest.approx(2.0 - 0.5**H, rel=1e-14)


class TestCertifyLoop:
    def test_exact_clm_passes_with_zero_gain(self):
        rng = np.random.default_rng(3)
        plant = random_nonlinear_plant(rng, horizon=20)
        psi = complete_clm(plant, random_causal_operator(rng, 3, 2, 20))
        cert = GainCertificate(2, 0.0)
        trials = [(random_sequence(rng, 3, 20), random_sequence(rng, 3, 20, 0.1), None)]
        report = certify_loop(plant, psi, trials, cert)
        assert report.all_passed
        assert report.trials[0].identity_error <= 1e-12

    def test_open_loop_half_residual(self):
        plant = Plant.lti_plant([[0.5]], [[1.0]], 40)
        psi = ClmPair(identity(1, 40), zero(1, 1, 40))
        cert = GainCertificate(1, 0.5, exact=True)
        report = certify_loop(plant, psi, [(Sequence.impulse(1, 40), None, None)], cert)
        trial = report.trials[0]
        assert trial.bound == 2.0
        assert trial.w_hat_norm == pytest.approx(2.0 - 0.5**40, rel=1e-14)
        assert report.all_passed and "overall = PASS" in report.to_text()

    def test_reconstructed_disturbance_identity_with_perturbations(self):
        rng = np.random.default_rng(4)
        A = np.array([[0.9, 0.3], [-0.2, 0.7]])
        plant = Plant.lti_plant(A, [[0.0], [1.0]], 25)
        # an inexact linear map leaves a nonzero residual
        clm = AffineClm(LinearCausalKernel.identity(2, 25, 2), random_kernel(rng, 1, 2, 25, fir=2) * 0.2)
        psi = clm.pair()
        cert = estimate_gain(residual_operator(plant, psi), p=2, samples=60)
        w, v = random_sequence(rng, 2, 25), random_sequence(rng, 2, 25, 0.1)
        d = random_sequence(rng, 1, 25, 0.1)
        report = certify_loop(plant, psi, [(w, v, d)], cert)
        assert report.trials[0].identity_error <= 1e-12

    def test_failing_certificate_reported(self):
        plant = Plant.lti_plant([[0.5]], [[1.0]], 10)
        psi = ClmPair(identity(1, 10), zero(1, 1, 10))
        report = certify_loop(plant, psi, [(Sequence.impulse(1, 10), None, None)],
                              GainCertificate(1, 1.5))
        assert not report.all_passed and report.trials[0].bound is None
        assert "infeasible" in report.to_text()

    def test_disturbance_reconstruction_by_hand(self):
        # no dynamics: eps = w + v exactly
        plant = Plant.from_function(lambda t, x, u: np.zeros(1), 1, 1, 3)
        psi = ClmPair(identity(1, 3), zero(1, 1, 3))
        w, v = Sequence([1.0, 2.0, 3.0, 4.0]), Sequence([0.5, 0.0, 0.0, -1.0])
        eps = reconstructed_disturbance(plant, psi, w + v, w, v, Sequence.zeros(1, 3))
        assert eps == w + v
