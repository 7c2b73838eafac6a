import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import qblue.services.estimators as estimators
from qblue.errors import (
    CoherenceError,
    DegenerateRecordError,
    FisherInformationError,
    NonPhysicalSigmaError,
)
from qblue.models import (
    ActiveQuantileSet,
    BlueSolution,
    DcModelKnownSigma,
    FallbackEstimator,
    InlKind,
    InlProfile,
    QuantizerSpec,
    SineDesign,
)
from qblue.services.counting import cumulative_and_active, histogram
from qblue.services.estimators import (
    arithmetic_mean,
    bin_probabilities,
    crlb_dc,
    cumulative_probabilities,
    estimate_dc_known_sigma,
    estimate_dc_unknown_sigma,
    estimate_sine,
    fit_known_sigma,
    fit_sine,
    fit_unknown_sigma,
    fold_coherent,
    histogram_mean,
    lse_sinefit,
    mean_output_oracle,
    single_bit_estimate,
)
from qblue.services.quantizer import apply_inl, make_comparator, make_uniform, quantize

SINE_THETA = np.array([3.7, 11.4, 23.1])


def exact_active(cp, total=500, lo=1e-6):
    """Active set built from exact cumulative probabilities inside (lo, 1 - lo)."""
    cp = np.asarray(cp)
    keep = (cp > lo) & (cp < 1 - lo)
    return ActiveQuantileSet(indices=np.flatnonzero(keep) + 1, values=cp[keep], total=total)


def shifted(spec, offset=0.0, scale=1.0):
    return QuantizerSpec(
        level_count=spec.level_count,
        step=spec.step * scale,
        transitions=spec.transitions * scale + offset,
    )


def perturbed(spec, rng, seed):
    """Random uniform INL of up to half a step."""
    profile = InlProfile(kind=InlKind.UNIFORM, half_width=rng.uniform(0.0, 0.5), seed=seed)
    return apply_inl(spec, profile)


class TestBaselines:
    def test_mean_of_center_code(self, spec10):
        assert arithmetic_mean([511] * 7, spec10) == pytest.approx(0.0, abs=1e-15)

    def test_mean_of_two_codes(self, spec10):
        assert arithmetic_mean([511, 512], spec10) == pytest.approx(0.5 * spec10.step)

    def test_mean_rejects_empty(self, spec10):
        with pytest.raises(ValueError):
            arithmetic_mean([], spec10)

    def test_histogram_mean_matches_record(self, spec10, rng):
        codes = rng.integers(500, 520, size=200)
        mean, variance = histogram_mean(histogram(codes, 1024), spec10)
        levels = spec10.output_levels[codes]
        assert mean == pytest.approx(np.mean(levels), rel=1e-12)
        assert variance == pytest.approx(np.var(levels, ddof=1) / codes.size, rel=1e-10)

    def test_single_bit_symmetric(self):
        assert single_bit_estimate(0.5, 0.3) == pytest.approx(0.0, abs=1e-15)

    def test_single_bit_phi_one(self):
        assert single_bit_estimate(0.841345, 0.1) == pytest.approx(0.1, abs=1e-5)

    @pytest.mark.parametrize("p1", [0.0, 1.0])
    def test_single_bit_degenerate(self, p1):
        with pytest.raises(DegenerateRecordError):
            single_bit_estimate(p1, 0.1)


class TestKnownSigma:
    def test_exact_injection_random_configs(self, spec10):
        rng = np.random.default_rng(99)
        delta = spec10.step
        for trial in range(100):
            spec = perturbed(spec10, rng, trial)
            theta = rng.uniform(-0.8, 0.8)
            sigma = rng.uniform(0.3, 4.0) * delta
            active = exact_active(cumulative_probabilities(theta, sigma, spec))
            solution = fit_known_sigma(active, spec, sigma)
            assert solution.theta_hat[0] == pytest.approx(theta, abs=1e-9)

    def test_single_transition(self):
        hist = histogram([0] * 158655 + [1] * 841345, 2)
        report = estimate_dc_known_sigma(hist, make_comparator(0.0), DcModelKnownSigma(sigma=0.1))
        assert report.theta_hat[0] == pytest.approx(0.1, abs=1e-5)
        assert report.lambda_used == 1
        assert not report.fallback
        assert report.parameter_names == ("theta1",)
        assert report.covariance.shape == (1, 1)

    def test_single_bin_falls_back_to_mean(self, spec10):
        hist = histogram([511] * 50, 1024)
        report = estimate_dc_known_sigma(hist, spec10, DcModelKnownSigma(sigma=0.0))
        assert report.fallback
        assert report.fallback_estimator == FallbackEstimator.ARITHMETIC_MEAN
        assert report.lambda_used == 0
        assert report.theta_hat[0] == pytest.approx(0.0, abs=1e-15)

    def test_zero_sigma_with_active_rows_rejected(self, spec10):
        hist = histogram([511, 512, 512], 1024)
        with pytest.raises(ValueError):
            estimate_dc_known_sigma(hist, spec10, DcModelKnownSigma(sigma=0.0))

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            DcModelKnownSigma(sigma=-0.1)

    def test_shift_equivariance(self, spec10, rng):
        delta = spec10.step
        sigma = 0.3 * delta
        codes = quantize(0.2 * delta + sigma * rng.standard_normal(300), spec10)
        hist = histogram(codes, 1024)
        offset = 7 * delta
        base = estimate_dc_known_sigma(hist, spec10, DcModelKnownSigma(sigma=sigma))
        moved = estimate_dc_known_sigma(
            hist, shifted(spec10, offset), DcModelKnownSigma(sigma=sigma)
        )
        assert moved.theta_hat[0] == pytest.approx(base.theta_hat[0] + offset, abs=1e-12)
        assert_allclose(moved.covariance, base.covariance, rtol=1e-9)

    def test_repeated_quantiles_are_deduplicated(self, spec10):
        hist = histogram([510] * 3 + [512] * 5, 1024)
        report = estimate_dc_known_sigma(
            hist, spec10, DcModelKnownSigma(sigma=0.5 * spec10.step)
        )
        assert report.lambda_used == 1
        assert not report.fallback


class TestUnknownSigma:
    def test_hand_example(self):
        sigma = 0.2
        spec = QuantizerSpec(level_count=4, step=sigma, transitions=[-sigma, sigma, 10 * sigma])
        cp = cumulative_probabilities(0.0, sigma, spec)
        active = exact_active(cp, total=1000)
        assert_array_equal(active.indices, [1, 2])
        theta, covariance, ridge = fit_unknown_sigma(active, spec)
        assert_allclose(theta, [0.0, sigma], atol=1e-12)
        assert covariance.shape == (2, 2)
        assert ridge == 0.0

    def test_exact_injection_random_configs(self, spec10):
        rng = np.random.default_rng(100)
        delta = spec10.step
        for trial in range(100):
            spec = perturbed(spec10, rng, trial)
            theta1 = rng.uniform(-0.8, 0.8)
            theta2 = rng.uniform(0.5, 4.0) * delta
            active = exact_active(cumulative_probabilities(theta1, theta2, spec))
            theta, _, _ = fit_unknown_sigma(active, spec)
            assert_allclose(theta, [theta1, theta2], atol=1e-9)

    def test_scale_equivariance(self, spec10, rng):
        delta = spec10.step
        codes = quantize(0.1 * delta + 0.6 * delta * rng.standard_normal(400), spec10)
        hist = histogram(codes, 1024)
        base = estimate_dc_unknown_sigma(hist, spec10)
        scaled = estimate_dc_unknown_sigma(hist, shifted(spec10, scale=3.0))
        assert_allclose(scaled.theta_hat, 3.0 * base.theta_hat, rtol=1e-9, atol=1e-15)
        assert scaled.parameter_names == ("theta1", "theta2")

    def test_covariance_symmetric_psd(self, spec10, rng):
        delta = spec10.step
        codes = quantize(0.6 * delta * rng.standard_normal(400), spec10)
        report = estimate_dc_unknown_sigma(histogram(codes, 1024), spec10)
        assert np.all(report.std > 0)
        assert_allclose(report.covariance, report.covariance.T)
        assert np.min(np.linalg.eigvalsh(report.covariance)) >= -1e-20

    def test_one_active_transition_falls_back(self, spec10):
        hist = histogram([511] * 4 + [512] * 6, 1024)
        report = estimate_dc_unknown_sigma(hist, spec10)
        assert report.fallback
        assert report.lambda_used == 1
        assert report.parameter_names == ("theta1",)
        assert report.theta_hat[0] == pytest.approx(0.6 * spec10.step)

    def test_non_physical_sigma(self, spec10, monkeypatch):
        def flipped(problem):
            return BlueSolution(
                theta_hat=np.array([-1.0, 0.2]), covariance=np.eye(2), ridge_used=0.0
            )

        monkeypatch.setattr(estimators, "solve_gauss_markov", flipped)
        active = ActiveQuantileSet(indices=[510, 511, 512], values=[0.2, 0.5, 0.8], total=100)
        with pytest.raises(NonPhysicalSigmaError):
            fit_unknown_sigma(active, spec10)


class TestFoldCoherent:
    def test_shape(self, rng):
        codes = rng.integers(0, 8, size=45)
        folded = fold_coherent(codes, 5, 9, 8)
        assert len(folded) == 5
        assert all(h.total == 9 for h in folded)
        assert_array_equal(folded[2].counts, np.bincount(codes[2::5], minlength=8))

    def test_period_permutation(self, rng):
        codes = rng.integers(0, 8, size=45)
        permuted = codes.reshape(9, 5)[rng.permutation(9)].reshape(-1)
        assert fold_coherent(codes, 5, 9, 8) == fold_coherent(permuted, 5, 9, 8)

    def test_constant_input(self):
        folded = fold_coherent([3] * 45, 5, 9, 8)
        assert all(h == folded[0] for h in folded)

    def test_incoherent_length(self):
        with pytest.raises(CoherenceError):
            fold_coherent(np.zeros(44, dtype=int), 5, 9, 8)


class TestSine:
    def _exact_actives(self, design, theta, spec):
        signal = design.reconstruct(theta)
        return [
            exact_active(cumulative_probabilities(s, design.sigma, spec), total=design.periods)
            for s in signal
        ]

    def test_canonical_design(self):
        design = SineDesign.canonical(20, 50, 0.01)
        assert design.record_length == 1000
        assert_allclose(design.x1**2 + design.x2**2, 1.0)
        assert design.regressors.shape == (20, 3)

    def test_design_coherence(self):
        with pytest.raises(CoherenceError):
            SineDesign(samples_per_period=4, periods=2, x1=[1, 0, -1], x2=[0, 1, 0, -1], sigma=0.1)

    def test_exact_injection(self, spec10):
        delta = spec10.step
        design = SineDesign.canonical(20, 50, 0.3 * delta)
        theta = SINE_THETA * delta
        solution = fit_sine(self._exact_actives(design, theta, spec10), design, spec10)
        assert_allclose(solution.theta_hat, theta, atol=1e-8 * delta)

    def test_exact_injection_random_configs(self, spec10):
        rng = np.random.default_rng(101)
        delta = spec10.step
        for trial in range(100):
            spec = perturbed(spec10, rng, trial)
            design = SineDesign.canonical(
                int(rng.integers(6, 25)), 10, rng.uniform(0.3, 2.0) * delta
            )
            theta = np.array(
                [rng.uniform(-50, 50), rng.uniform(-200, 200), rng.uniform(-200, 200)]
            ) * delta
            solution = fit_sine(self._exact_actives(design, theta, spec), design, spec)
            assert_allclose(solution.theta_hat, theta, atol=1e-9)

    def test_phase_with_single_bin_is_discarded(self, spec10, rng):
        delta = spec10.step
        design = SineDesign.canonical(5, 200, 0.5 * delta)
        theta = SINE_THETA * delta
        signal = design.reconstruct(theta)
        by_phase = quantize(
            signal[None, :] + design.sigma * rng.standard_normal((200, 5)), spec10
        )
        by_phase[:, 0] = 600
        folded = fold_coherent(by_phase.reshape(-1), 5, 200, 1024)
        report = estimate_sine(folded, design, spec10)
        expected_rows = sum(
            cumulative_and_active(h).deduplicated().cardinality for h in folded[1:]
        )
        assert not report.fallback
        assert report.lambda_used == expected_rows
        assert report.parameter_names == ("theta0", "theta1", "theta2")

    def test_noise_free_record_falls_back_to_lse(self, spec10):
        delta = spec10.step
        design = SineDesign.canonical(20, 10, 0.0)
        theta = SINE_THETA * delta
        codes = quantize(np.tile(design.reconstruct(theta), design.periods), spec10)
        report = estimate_sine(fold_coherent(codes, 20, 10, 1024), design, spec10)
        assert report.fallback
        assert report.fallback_estimator == FallbackEstimator.LSE_SINEFIT
        assert report.lambda_used == 0
        assert_allclose(report.theta_hat, lse_sinefit(codes, spec10, design), atol=1e-10 * delta)

    def test_folded_count_mismatch(self, spec10):
        design = SineDesign.canonical(5, 4, 0.001)
        folded = fold_coherent(np.full(20, 511), 5, 4, 1024)
        with pytest.raises(CoherenceError):
            estimate_sine(folded[:4], design, spec10)


class TestLseSinefit:
    def test_exact_on_levels(self, spec10):
        delta = spec10.step
        design = SineDesign.canonical(4, 3, 0.0)
        theta = np.array([2.0, 3.0, -5.0]) * delta
        codes = quantize(np.tile(design.reconstruct(theta), 3), spec10)
        assert_allclose(lse_sinefit(codes, spec10, design), theta, atol=1e-12)

    def test_constant_record(self, spec10):
        design = SineDesign.canonical(20, 10, 0.0)
        theta = lse_sinefit(np.full(200, 600), spec10, design)
        assert theta[0] == pytest.approx(spec10.output_levels[600])
        assert_allclose(theta[1:], 0.0, atol=1e-15)

    def test_length_mismatch(self, spec10):
        with pytest.raises(CoherenceError):
            lse_sinefit(np.full(199, 600), spec10, SineDesign.canonical(20, 10, 0.0))


class TestMeanOutputOracle:
    def test_zero_input(self, spec10):
        assert mean_output_oracle(0.0, 0.3 * spec10.step, spec10) == pytest.approx(0.0, abs=1e-13)

    @pytest.mark.parametrize("m", [-3, 1, 7])
    def test_multiples_of_step(self, spec10, m):
        delta = spec10.step
        assert mean_output_oracle(m * delta, 0.25 * delta, spec10) == pytest.approx(
            m * delta, abs=1e-13
        )

    def test_matches_bin_expectation(self, spec10):
        delta = spec10.step
        p = bin_probabilities(0.3 * delta, 0.25 * delta, spec10)
        assert math.fsum(p) == pytest.approx(1.0, abs=1e-14)
        expected = float(p @ spec10.output_levels)
        assert mean_output_oracle(0.3 * delta, 0.25 * delta, spec10) == pytest.approx(
            expected, abs=1e-14
        )

    @pytest.mark.parametrize("sigma_norm, bound", [(0.4, 0.015), (0.5, 0.01)])
    def test_bias_fades_with_noise(self, spec10, sigma_norm, bound):
        delta = spec10.step
        for t in np.linspace(-0.5, 0.5, 41):
            bias = mean_output_oracle(t * delta, sigma_norm * delta, spec10) - t * delta
            assert abs(bias) < bound * delta

    def test_noise_free(self, spec10):
        delta = spec10.step
        assert mean_output_oracle(0.3 * delta, 0.0, spec10) == pytest.approx(0.0, abs=1e-15)


class TestCrlb:
    def test_single_transition(self):
        sigma, n = 0.1, 100
        assert crlb_dc(0.0, sigma, make_comparator(0.0), n) == pytest.approx(
            math.pi / 2 * sigma**2 / n, rel=1e-12
        )

    def test_far_transitions_do_not_matter(self):
        sigma, n = 0.1, 100
        wide = QuantizerSpec(level_count=4, step=1.0, transitions=[-2.0, 0.0, 2.0])
        assert crlb_dc(0.03, sigma, wide, n) == pytest.approx(
            crlb_dc(0.03, sigma, make_comparator(0.0), n), rel=1e-12
        )

    def test_scales_with_record_length(self, spec10):
        delta = spec10.step
        short = crlb_dc(0.2 * delta, 0.2 * delta, spec10, 100)
        long = crlb_dc(0.2 * delta, 0.2 * delta, spec10, 400)
        assert short == pytest.approx(4 * long, rel=1e-12)
        assert long > 0

    def test_no_information(self):
        with pytest.raises(FisherInformationError):
            crlb_dc(100.0, 0.1, make_comparator(0.0), 100)

    def test_rejects_zero_sigma(self, spec10):
        with pytest.raises(ValueError):
            crlb_dc(0.0, 0.0, spec10, 100)

    def test_tail_bins_are_accurate(self):
        spec = make_uniform(2)
        p = bin_probabilities(-2.0, 0.1, spec)
        assert p[-1] > 0
        assert math.fsum(p) == pytest.approx(1.0, abs=1e-15)
