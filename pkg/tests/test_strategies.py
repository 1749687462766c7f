import csv

import numpy as np
import pytest

from majorant.errors import (
    AmbiguousMeanError,
    InvalidInputError,
    MethodSwitchError,
)
from majorant.kernels import ArccosKernel, gram_bundle, gram_from_matrix, min_norm_interpolate
from majorant.numerics import RngStream, project_hypersphere, sign_pm1
from majorant.strategies import (
    GaussianDensity,
    PosteriorSampler,
    UniformBox,
    extend_to_queries,
    grunbaum_estimate,
    inequality_report,
    sample_orthant,
    sample_spherised,
    strategy_errors,
    strategy_predict,
    write_predictions_csv,
)


def _sphere(gen, m, d):
    return project_hypersphere(gen.standard_normal((m, d)))


def _corr_gram(m, rho):
    K = np.full((m, m), rho)
    np.fill_diagonal(K, 1.0)
    return gram_from_matrix(K)


def _toy_sampler(seed=0, m=6, d=4, kind="spherised", tau=1.0):
    gen = np.random.default_rng(seed)
    X = _sphere(gen, m, d)
    gram = gram_bundle(ArccosKernel(2), X)
    Y = np.where(gen.standard_normal(m) > 0, 1.0, -1.0)
    return PosteriorSampler(kind, gram, Y, tau=tau), X, Y, gen


def test_sampler_validates_labels():
    gen = np.random.default_rng(1)
    gram = gram_bundle(ArccosKernel(2), _sphere(gen, 4, 3))
    with pytest.raises(InvalidInputError):
        PosteriorSampler("spherised", gram, np.array([1.0, 2.0, -1.0, 1.0]))
    with pytest.raises(InvalidInputError):
        PosteriorSampler("warped", gram, np.ones(4))


def test_spherised_draws_have_correct_signs_and_scale():
    sampler, _, Y, _ = _toy_sampler(2)
    draws = sample_spherised(sampler, 4000, RngStream(3))
    assert draws.shape == (4000, 6)
    assert np.all(sign_pm1(draws) == Y[None, :])
    # coordinate second moment is |K|^{1/m} (tau = 1)
    target = np.exp(sampler.gram.logdet / 6)
    second = np.mean(draws**2, axis=0)
    np.testing.assert_allclose(second, target, rtol=0.15)


def test_rejection_sampling_identity_gram_matches_half_normal():
    gram = gram_from_matrix(np.eye(5))
    sampler = PosteriorSampler("exact-orthant", gram, np.ones(5))
    draws = sample_orthant(sampler, 3000, RngStream(5), method="rejection")
    assert np.all(draws > 0)
    assert np.mean(draws) == pytest.approx(np.sqrt(2 / np.pi), rel=0.05)
    assert np.mean(draws**2) == pytest.approx(1.0, rel=0.08)


def test_gibbs_sampling_identity_gram_matches_half_normal():
    gram = gram_from_matrix(np.eye(5))
    sampler = PosteriorSampler("exact-orthant", gram, np.ones(5))
    draws = sample_orthant(sampler, 2000, RngStream(7), method="coordinate-gibbs")
    assert np.all(draws > 0)
    assert np.mean(draws) == pytest.approx(np.sqrt(2 / np.pi), rel=0.05)
    assert np.mean(draws**2) == pytest.approx(1.0, rel=0.08)


def test_rejection_and_gibbs_agree_on_correlated_gram():
    gram = _corr_gram(4, 0.5)
    Y = np.array([1.0, 1.0, -1.0, 1.0])
    sampler = PosteriorSampler("exact-orthant", gram, Y)
    rej = sample_orthant(sampler, 4000, RngStream(9), method="rejection")
    gib = sample_orthant(sampler, 4000, RngStream(11), method="coordinate-gibbs")
    np.testing.assert_allclose(np.mean(rej, axis=0), np.mean(gib, axis=0), rtol=0.1)
    assert np.all(sign_pm1(rej) == Y[None, :])
    assert np.all(sign_pm1(gib) == Y[None, :])


def test_forced_rejection_raises_on_hopeless_acceptance():
    gram = _corr_gram(20, 0.99)
    Y = np.where(np.arange(20) % 2 == 0, 1.0, -1.0)
    sampler = PosteriorSampler("exact-orthant", gram, Y)
    with pytest.raises(MethodSwitchError):
        sample_orthant(sampler, 100, RngStream(13), method="rejection")
    # auto mode escapes to the Gibbs chain instead
    draws = sample_orthant(sampler, 64, RngStream(13))
    assert np.all(sign_pm1(draws) == Y[None, :])


def test_auto_uses_rejection_for_small_m():
    gram = gram_from_matrix(np.eye(3))
    sampler = PosteriorSampler("exact-orthant", gram, np.ones(3))
    draws = sample_orthant(sampler, 500, RngStream(15))
    assert np.all(draws > 0)


def test_tau_scales_orthant_draws():
    gram = gram_from_matrix(np.eye(4))
    a = PosteriorSampler("exact-orthant", gram, np.ones(4), tau=1.0)
    b = PosteriorSampler("exact-orthant", gram, np.ones(4), tau=2.5)
    da = sample_orthant(a, 2000, RngStream(17), method="rejection")
    db = sample_orthant(b, 2000, RngStream(17), method="rejection")
    np.testing.assert_allclose(db, 2.5 * da, rtol=1e-12)


def test_extension_reproduces_training_values_at_training_points():
    sampler, X, _, _ = _toy_sampler(4)
    FX = sample_spherised(sampler, 8, RngStream(19))
    FQ = extend_to_queries(sampler, FX, X[:3], RngStream(21))
    np.testing.assert_allclose(FQ, FX[:, :3], atol=1e-4)


def test_strategy_predict_bpm_spherised_is_interpolator_sign():
    sampler, X, Y, gen = _toy_sampler(6)
    Xq = _sphere(gen, 10, 4)
    pred = strategy_predict(sampler, Xq, "bpm")
    predictor, _ = min_norm_interpolate(sampler.gram, Y)
    np.testing.assert_array_equal(pred, sign_pm1(predictor(Xq)))


def test_strategy_predict_validates_strategy():
    sampler, X, _, gen = _toy_sampler(7)
    with pytest.raises(InvalidInputError):
        strategy_predict(sampler, X, "oracle")


def test_strategy_predict_gibbs_is_deterministic_given_stream():
    sampler, X, _, gen = _toy_sampler(8)
    Xq = _sphere(gen, 5, 4)
    a = strategy_predict(sampler, Xq, "gibbs", rng=RngStream(23))
    b = strategy_predict(sampler, Xq, "gibbs", rng=RngStream(23))
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)).issubset({-1.0, 1.0})


def test_strategy_errors_fields_and_bayes_bpm_delta_inequality():
    sampler, _, _, gen = _toy_sampler(9, m=8)
    Xq = _sphere(gen, 40, 4)
    Yq = np.where(gen.standard_normal(40) > 0, 1.0, -1.0)
    errors = strategy_errors(sampler, Xq, Yq, n=101, rng=RngStream(25))
    assert errors.ensemble_size == 101
    for eps in (errors.eps_gibbs, errors.eps_bayes, errors.eps_bpm):
        assert 0.0 <= eps <= 1.0
    assert 0.0 <= errors.alpha_gibbs <= 1.0
    # deterministic per-point inequality on a shared ensemble
    assert errors.eps_bpm <= errors.eps_bayes + errors.delta + 1e-12
    assert set(errors.predictions) == {"gibbs", "bayes", "bpm"}
    assert errors.predictions["bayes"].shape == (40,)


def test_inequality_report_names_and_shapes():
    sampler, _, _, gen = _toy_sampler(10, m=8)
    Xq = _sphere(gen, 30, 4)
    Yq = np.where(gen.standard_normal(30) > 0, 1.0, -1.0)
    errors = strategy_errors(sampler, Xq, Yq, n=75, rng=RngStream(27))
    report = inequality_report(errors)
    names = [c.name for c in report]
    assert names == [
        "bayes-le-2-gibbs",
        "bayes-le-cbound",
        "bpm-le-e-gibbs",
        "bpm-le-bayes-plus-delta",
        "bpm-le-cbound-plus-delta",
    ]
    by_name = {c.name: c for c in report}
    assert by_name["bpm-le-e-gibbs"].conditional
    assert by_name["bpm-le-bayes-plus-delta"].passed
    for check in report:
        if not check.skipped:
            assert check.passed == (check.lhs <= check.rhs + check.slack)


def test_grunbaum_gaussian_unit_mean_matches_normal_cdf():
    # scalar Gaussian with mean 1, variance 1: agreement probability is
    # Phi(1) ~ 0.8413
    density = GaussianDensity(np.array([1.0]), np.array([[1.0]]))
    n = 40000
    est = grunbaum_estimate(density, np.array([1.0]), n, RngStream(29))
    se = np.sqrt(0.8413 * (1 - 0.8413) / n)
    assert est == pytest.approx(0.841345, abs=3 * se)


def test_grunbaum_uniform_box_fully_agreeing():
    density = UniformBox(np.zeros(2), np.ones(2))
    est = grunbaum_estimate(density, np.array([1.0, 1.0]), 5000, RngStream(31))
    assert est == 1.0


def test_grunbaum_ambiguous_mean():
    density = GaussianDensity(np.zeros(2), np.eye(2))
    with pytest.raises(AmbiguousMeanError):
        grunbaum_estimate(density, np.array([1.0, 0.0]), 1000, RngStream(33))


def test_grunbaum_floor_violation_raises():
    class Adversarial:
        """Not log-concave: all mass disagrees with the mean's side."""

        mean = np.array([1.0])

        def sample(self, n, rng):
            return np.full((n, 1), -1.0)

    with pytest.raises(InvalidInputError):
        grunbaum_estimate(Adversarial(), np.array([1.0]), 1000, RngStream(35))


def test_write_predictions_csv_layout(tmp_path):
    path = tmp_path / "preds.csv"
    write_predictions_csv(
        path,
        ids=[0, 1, 2],
        y_true=np.array([1.0, -1.0, 1.0]),
        predictions={
            "bayes": np.array([1, -1, -1]),
            "gibbs": np.array([1, 1, 1]),
            "bpm": np.array([-1, -1, 1]),
        },
    )
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "true", "gibbs", "bayes", "bpm"]
    assert rows[1] == ["0", "1", "1", "1", "-1"]
    assert rows[2] == ["1", "-1", "1", "-1", "-1"]
