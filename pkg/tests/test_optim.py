"""Single-step optimisers: each minimises a tangent upper bound, so the
step must descend on the bound and the bound must actually majorise.
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from majorant.errors import (
    DomainError,
    InvalidInputError,
    SingularCurvatureError,
    SubproblemError,
)
from majorant.optim import (
    MirrorMap,
    PredictorJacobian,
    SmoothObjective,
    cubic_newton_step,
    gauss_newton_step,
    gd_step,
    majorisation_gap,
    mirror_step,
    solve_cubic_subproblem,
)


def _quadratic(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return SmoothObjective(
        dim=b.size,
        value=lambda w: 0.5 * w @ A @ w + b @ w,
        gradient=lambda w: A @ w + b,
        hessian=lambda w: A,
    )


def test_gd_step_is_explicit_formula():
    obj = _quadratic(np.diag([2.0, 1.0]), np.array([1.0, -1.0]))
    w = np.array([0.5, 0.5])
    out = gd_step(obj, w, lam=4.0)
    np.testing.assert_allclose(out, w - obj.gradient(w) / 4.0)


def test_gd_step_descends_when_lam_covers_curvature():
    A = np.diag([3.0, 1.0])
    obj = _quadratic(A, np.array([0.3, -0.7]))
    w = np.array([1.0, 2.0])
    out = gd_step(obj, w, lam=3.0)  # lam = largest eigenvalue
    assert obj.value(out) <= obj.value(w)


def test_gd_step_rejects_nonpositive_lam():
    obj = _quadratic(np.eye(2), np.zeros(2))
    with pytest.raises(InvalidInputError):
        gd_step(obj, np.zeros(2), lam=0.0)


def test_euclidean_majorisation_tangent_and_valid():
    A = np.diag([3.0, 1.0])
    obj = _quadratic(A, np.array([1.0, 1.0]))
    w = np.array([0.2, -0.4])
    lhs0, rhs0 = majorisation_gap(obj, w, np.zeros(2), "euclidean", lam=3.0)
    assert lhs0 == pytest.approx(0.0, abs=1e-12)
    assert rhs0 == pytest.approx(0.0, abs=1e-12)
    gen = np.random.default_rng(1)
    for _ in range(50):
        dw = gen.standard_normal(2)
        lhs, rhs = majorisation_gap(obj, w, dw, "euclidean", lam=3.0)
        assert lhs <= rhs + 1e-12


def _entropy_map(dim):
    return MirrorMap(
        psi=lambda w: float(np.sum(w * np.log(w))),
        grad=lambda w: np.log(w) + 1.0,
        grad_inv=lambda th: np.exp(th - 1.0),
    )


def test_mirror_step_entropy_is_multiplicative_update():
    obj = _quadratic(np.eye(3), np.array([0.1, -0.2, 0.3]))
    w = np.array([0.5, 0.25, 0.25])
    out = mirror_step(obj, _entropy_map(3), w)
    np.testing.assert_allclose(out, w * np.exp(-obj.gradient(w)), rtol=1e-12)


def test_mirror_step_flags_domain_exit():
    mmap = MirrorMap(
        psi=lambda w: float(np.sum(w**2)),
        grad=lambda w: 2 * w,
        grad_inv=lambda th: np.full_like(th, np.nan),
    )
    obj = _quadratic(np.eye(2), np.zeros(2))
    with pytest.raises(DomainError):
        mirror_step(obj, mmap, np.ones(2))


def test_bregman_gap_for_entropy_on_simplex_interior():
    obj = SmoothObjective(
        dim=3,
        value=lambda w: float(np.sum(np.cos(w))),
        gradient=lambda w: -np.sin(w),
    )
    mmap = _entropy_map(3)
    w = np.array([0.4, 0.35, 0.25])
    # entropy Bregman divergence is the KL of w+dw from w; nonnegative
    gen = np.random.default_rng(2)
    for _ in range(20):
        dw = 0.05 * gen.standard_normal(3)
        _, rhs = majorisation_gap(obj, w, dw, "bregman", mirror=mmap)
        assert rhs >= -1e-12


def _cubic_value(g, H, lam, s):
    return g @ s + 0.5 * s @ H @ s + lam / 6.0 * np.linalg.norm(s) ** 3


@given(st.integers(0, 2**32 - 1), st.floats(0.5, 8.0))
def test_cubic_subproblem_beats_random_probes(seed, lam):
    gen = np.random.default_rng(seed)
    n = int(gen.integers(1, 6))
    g = gen.standard_normal(n)
    B = gen.standard_normal((n, n))
    H = 0.5 * (B + B.T)  # possibly indefinite
    s = solve_cubic_subproblem(g, H, lam)
    best = _cubic_value(g, H, lam, s)
    # stationarity-independent check: no probe near s or at random does better
    for _ in range(60):
        probe = s + 0.3 * gen.standard_normal(n)
        assert best <= _cubic_value(g, H, lam, probe) + 1e-9
    for _ in range(60):
        probe = gen.standard_normal(n)
        assert best <= _cubic_value(g, H, lam, probe) + 1e-9


def test_cubic_subproblem_first_order_conditions():
    gen = np.random.default_rng(5)
    g = gen.standard_normal(4)
    B = gen.standard_normal((4, 4))
    H = 0.5 * (B + B.T)
    lam = 2.0
    s = solve_cubic_subproblem(g, H, lam)
    r = np.linalg.norm(s)
    resid = g + H @ s + 0.5 * lam * r * s
    assert np.linalg.norm(resid) <= 1e-8 * max(1.0, np.linalg.norm(g))


def test_cubic_subproblem_hard_case():
    # gradient orthogonal to the bottom eigenvector: the minimiser needs
    # mass along that eigenvector to reach the critical radius
    H = np.diag([-2.0, 1.0])
    g = np.array([0.0, 0.1])
    lam = 1.0
    s = solve_cubic_subproblem(g, H, lam)
    r = np.linalg.norm(s)
    assert r == pytest.approx(4.0, rel=1e-6)  # r_crit = -2 lam_min / lam
    best = _cubic_value(g, H, lam, s)
    gen = np.random.default_rng(7)
    for _ in range(100):
        probe = s + 0.2 * gen.standard_normal(2)
        assert best <= _cubic_value(g, H, lam, probe) + 1e-9


def test_cubic_subproblem_zero_gradient_at_psd_curvature():
    s = solve_cubic_subproblem(np.zeros(3), np.eye(3), lam=1.0)
    np.testing.assert_array_equal(s, np.zeros(3))


def test_cubic_newton_step_descends_on_nonconvex_quartic():
    obj = SmoothObjective(
        dim=1,
        value=lambda w: float(w[0] ** 4 - w[0] ** 2),
        gradient=lambda w: np.array([4 * w[0] ** 3 - 2 * w[0]]),
        hessian=lambda w: np.array([[12 * w[0] ** 2 - 2]]),
    )
    w = np.array([0.1])  # negative curvature region
    out = cubic_newton_step(obj, w, lam=30.0)
    assert obj.value(out) < obj.value(w)


def test_cubic_gap_inequality_for_bounded_third_derivative():
    obj = SmoothObjective(
        dim=2,
        value=lambda w: float(np.sum(np.sin(w))),
        gradient=lambda w: np.cos(w),
        hessian=lambda w: np.diag(-np.sin(w)),
    )
    w = np.array([0.3, -0.8])
    gen = np.random.default_rng(11)
    for _ in range(40):
        dw = gen.standard_normal(2)
        lhs, rhs = majorisation_gap(obj, w, dw, "cubic", lam=2.0)
        assert lhs <= rhs + 1e-10  # |third derivative| of sin <= 1 < 2


def test_gauss_newton_solves_linear_least_squares_exactly():
    gen = np.random.default_rng(13)
    J = gen.standard_normal((12, 3))
    w_true = gen.standard_normal(3)
    y = J @ w_true
    w0 = np.zeros(3)
    pj = PredictorJacobian(outputs=J @ w0, jacobian=J)
    dw = gauss_newton_step(pj, y, reg=0.0)
    np.testing.assert_allclose(w0 + dw, w_true, atol=1e-8)


def test_gauss_newton_singular_needs_reg():
    J = np.array([[1.0, 0.0], [1.0, 0.0]])  # rank deficient
    pj = PredictorJacobian(outputs=np.zeros(2), jacobian=J)
    with pytest.raises(SingularCurvatureError):
        gauss_newton_step(pj, np.array([1.0, 1.0]), reg=0.0)
    out = gauss_newton_step(pj, np.array([1.0, 1.0]), reg=1e-8)
    assert np.isfinite(out).all()


def test_linreg_gap_on_hypersphere_inputs():
    # rows with norm sqrt(d): the quadratic coefficient d/2 dominates the
    # square-loss curvature lambda_max(X.T X / m) <= d
    gen = np.random.default_rng(17)
    m, d = 20, 6
    X = gen.standard_normal((m, d))
    X *= np.sqrt(d) / np.linalg.norm(X, axis=1, keepdims=True)
    y = gen.standard_normal(m)
    obj = SmoothObjective(
        dim=d,
        value=lambda w: float(0.5 / m * np.sum((X @ w - y) ** 2)),
        gradient=lambda w: X.T @ (X @ w - y) / m,
    )
    w = gen.standard_normal(d)
    for _ in range(40):
        dw = gen.standard_normal(d)
        lhs, rhs = majorisation_gap(obj, w, dw, "linreg", input_dim=d)
        assert lhs <= rhs + 1e-10


def test_majorisation_gap_rejects_unknown_kind():
    obj = _quadratic(np.eye(2), np.zeros(2))
    with pytest.raises(InvalidInputError):
        majorisation_gap(obj, np.zeros(2), np.zeros(2), "tightest")
