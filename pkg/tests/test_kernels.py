import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from majorant.errors import DomainError, InvalidInputError, PsdViolationError
from majorant.kernels import (
    ArccosKernel,
    CallableKernel,
    GaussianKernel,
    concentration_sample,
    gaussian_kernel,
    gp_condition,
    gram_bundle,
    gram_from_matrix,
    interpolation_error_bound,
    margin_posterior,
    min_norm_interpolate,
    nngp_empirical_kernel,
    posterior_variance_distance,
    rkhs_norm,
)
from majorant.numerics import RngStream, project_hypersphere


def _sphere(gen, m, d):
    return project_hypersphere(gen.standard_normal((m, d)))


def test_gaussian_kernel_values():
    x = np.array([1.0, 0.0])
    xp = np.array([0.0, 1.0])
    assert gaussian_kernel(x, x, 1.0) == pytest.approx(1.0)
    assert gaussian_kernel(x, xp, 1.0) == pytest.approx(np.exp(-1.0))
    assert gaussian_kernel(x, xp, 2.0) == pytest.approx(np.exp(-2.0 / 8.0))


def test_gaussian_cross_is_broadcast_pairwise():
    gen = np.random.default_rng(0)
    A = gen.standard_normal((4, 3))
    B = gen.standard_normal((5, 3))
    K = GaussianKernel(1.3).cross(A, B)
    assert K.shape == (4, 5)
    for i in range(4):
        for j in range(5):
            assert K[i, j] == pytest.approx(gaussian_kernel(A[i], B[j], 1.3))


def test_arccos_depth_one_is_normalised_inner_product():
    gen = np.random.default_rng(1)
    X = _sphere(gen, 5, 6)
    K = ArccosKernel(1).cross(X, X)
    np.testing.assert_allclose(K, X @ X.T / 6, atol=1e-12)


def test_arccos_diagonal_is_one_at_any_depth():
    gen = np.random.default_rng(2)
    X = _sphere(gen, 4, 8)
    for depth in (1, 2, 3, 7):
        K = ArccosKernel(depth).cross(X, X)
        np.testing.assert_allclose(np.diag(K), 1.0, atol=1e-12)


def test_arccos_h_easy_values():
    # h(1) = 1, h(-1) = 0, h(0) = 1/pi
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]) * np.sqrt(2)
    K = ArccosKernel(2).cross(X, X)
    assert K[0, 0] == pytest.approx(1.0)
    assert K[0, 1] == pytest.approx(0.0, abs=1e-12)
    assert K[0, 2] == pytest.approx(1 / np.pi)


def test_arccos_rejects_inputs_off_the_sphere():
    X = np.ones((2, 4))  # norms 2 = sqrt(4): fine
    ArccosKernel(2).cross(X, X)
    with pytest.raises(InvalidInputError):
        ArccosKernel(2).cross(2 * X, 2 * X)


def test_arccos_domain_error_just_inside_sphere_tolerance():
    # passes the 1e-6 sphere check but overshoots the 1e-9 cosine clamp
    X = (1 + 5e-7) * np.sqrt(3) * np.eye(3)
    with pytest.raises(DomainError):
        ArccosKernel(2).cross(X, X)


def test_callable_kernel_agrees_with_gaussian():
    gen = np.random.default_rng(3)
    A = gen.standard_normal((3, 2))
    wrapped = CallableKernel(lambda a, b: gaussian_kernel(a, b, 0.8))
    np.testing.assert_allclose(
        wrapped.cross(A, A), GaussianKernel(0.8).cross(A, A), rtol=1e-12
    )


def test_gram_bundle_logdet_and_solve():
    gen = np.random.default_rng(4)
    X = gen.standard_normal((7, 3))
    gram = gram_bundle(GaussianKernel(1.1), X)
    sign, ref = np.linalg.slogdet(gram.K)
    assert sign > 0
    assert gram.logdet == pytest.approx(ref, rel=1e-9)
    b = gen.standard_normal(7)
    np.testing.assert_allclose(gram.K @ gram.solve(b), b, atol=1e-8)


def test_gram_bundle_default_jitter_scale():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    gram = gram_bundle(GaussianKernel(1.0), X)
    assert gram.jitter == pytest.approx(1e-10 * np.trace(gram.K) / 2, rel=1e-6)


def test_gram_from_matrix_checks_symmetry():
    with pytest.raises(InvalidInputError):
        gram_from_matrix(np.array([[1.0, 0.5], [0.4, 1.0]]))


def test_min_norm_interpolation_fits_and_norm_matches():
    gen = np.random.default_rng(5)
    X = _sphere(gen, 8, 4)
    gram = gram_bundle(ArccosKernel(2), X)
    Y = np.where(gen.standard_normal(8) > 0, 1.0, -1.0)
    predictor, alpha = min_norm_interpolate(gram, Y)
    np.testing.assert_allclose(predictor(X), Y, atol=1e-6)
    norm = rkhs_norm(gram, alpha)
    assert norm == pytest.approx(np.sqrt(Y @ np.linalg.solve(gram.K, Y)), rel=1e-6)


def test_rkhs_norm_rejects_concave_direction():
    K = np.array([[1.0, 0.0], [0.0, -1.0]])
    gram = gram_from_matrix(np.eye(2))
    gram.K = K  # doctored: not PSD
    with pytest.raises(PsdViolationError):
        rkhs_norm(gram, np.array([0.0, 1.0]))


@given(st.integers(0, 2**32 - 1))
def test_gp_condition_mean_equals_min_norm_interpolator(seed):
    gen = np.random.default_rng(seed)
    m, d = int(gen.integers(2, 10)), int(gen.integers(2, 6))
    X = _sphere(gen, m, d)
    kernel = ArccosKernel(2) if seed % 2 else GaussianKernel(1.0)
    gram = gram_bundle(kernel, X)
    Y = np.where(gen.standard_normal(m) > 0, 1.0, -1.0)
    predictor, _ = min_norm_interpolate(gram, Y)
    post = margin_posterior(gram, Y)
    Xq = _sphere(gen, 5, d)
    mean, cov = gp_condition(post, Xq)
    np.testing.assert_allclose(mean, predictor(Xq), atol=1e-8)
    # covariance symmetric PSD
    np.testing.assert_allclose(cov, cov.T, atol=1e-10)
    assert np.linalg.eigvalsh(cov).min() >= -1e-8


def test_gp_condition_interpolates_conditioning_values():
    gen = np.random.default_rng(6)
    X = _sphere(gen, 6, 3)
    gram = gram_bundle(ArccosKernel(3), X)
    Y = np.where(gen.standard_normal(6) > 0, 1.0, -1.0)
    post = margin_posterior(gram, Y, gamma=2.5)
    mean, cov = gp_condition(post, X)
    np.testing.assert_allclose(mean, 2.5 * Y, atol=1e-5)
    assert np.max(np.abs(cov)) <= 1e-4  # variance collapses on the data


def test_posterior_variance_distance_properties():
    gen = np.random.default_rng(7)
    X = _sphere(gen, 5, 4)
    gram = gram_bundle(ArccosKernel(2), X)
    on_data = posterior_variance_distance(gram, X[0])
    off_data = posterior_variance_distance(gram, _sphere(gen, 1, 4)[0])
    assert on_data <= 1e-4
    assert off_data >= -1e-12


def test_interpolation_error_bound_monotone_and_guarded():
    gen = np.random.default_rng(8)
    X = _sphere(gen, 5, 4)
    gram = gram_bundle(ArccosKernel(2), X)
    x = _sphere(gen, 1, 4)[0]
    small = interpolation_error_bound(gram, 1.0, 1.0, x)
    large = interpolation_error_bound(gram, 2.0, 1.0, x)
    assert small == pytest.approx(0.0, abs=1e-12)
    assert small <= large
    with pytest.raises(InvalidInputError):
        interpolation_error_bound(gram, 0.5, 1.0, x)


def test_concentration_sample_shrinks_like_one_over_gamma():
    gen = np.random.default_rng(9)
    X = _sphere(gen, 8, 4)
    gram = gram_bundle(ArccosKernel(2), X)
    Y = np.where(gen.standard_normal(8) > 0, 1.0, -1.0)
    Xq = _sphere(gen, 3, 4)
    spreads = []
    for gamma in (1.0, 10.0):
        post = margin_posterior(gram, Y, gamma=gamma)
        draws = concentration_sample(post, Xq, 4000, RngStream(17))
        spreads.append(float(np.std(draws, axis=0).mean()))
    assert spreads[1] == pytest.approx(spreads[0] / 10, rel=0.1)


def test_concentration_sample_mean_is_interpolator():
    gen = np.random.default_rng(10)
    X = _sphere(gen, 6, 4)
    gram = gram_bundle(ArccosKernel(2), X)
    Y = np.where(gen.standard_normal(6) > 0, 1.0, -1.0)
    predictor, _ = min_norm_interpolate(gram, Y)
    post = margin_posterior(gram, Y, gamma=100.0)
    Xq = _sphere(gen, 4, 4)
    draws = concentration_sample(post, Xq, 2000, RngStream(23))
    np.testing.assert_allclose(draws.mean(axis=0), predictor(Xq), atol=0.01)


def test_nngp_methods_agree_and_match_closed_form_loosely():
    gen = np.random.default_rng(11)
    X = project_hypersphere(gen.standard_normal((5, 6)))
    emp_p = nngp_empirical_kernel(128, 2, 3000, X, RngStream(29))
    emp_m = nngp_empirical_kernel(
        128, 2, 3000, X, RngStream(29), method="materialise"
    )
    closed = ArccosKernel(2).cross(X, X)
    assert np.max(np.abs(emp_p - closed)) < 0.15
    assert np.max(np.abs(emp_m - closed)) < 0.15
    np.testing.assert_allclose(emp_p, emp_p.T, atol=1e-12)


def test_nngp_depth_one_concentrates_on_inner_product():
    # no hidden layer: the estimator is a Wishart average around x.x'/d0
    gen = np.random.default_rng(12)
    X = project_hypersphere(gen.standard_normal((4, 5)))
    emp = nngp_empirical_kernel(64, 1, 4000, X, RngStream(31))
    assert np.max(np.abs(emp - X @ X.T / 5)) < 0.1
