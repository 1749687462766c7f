"""Kernels, Gram-matrix plumbing, minimum-norm interpolation, and
Gaussian-process conditioning.

The two kernels that matter here are the Gaussian kernel and the
compositional arccosine kernel

    h(t) = (1/pi) * [sqrt(1 - t^2) + t * (pi - arccos t)],

applied (depth - 1) times to the normalised inner product x.x' / d_0.
The arccosine kernel is the infinite-width limit of a scaled-relu MLP
with variance-1/fan-in Gaussian weights on hypersphere inputs, which is
why ``nngp_empirical_kernel`` lives here too: it estimates the same
object from finite-width weight draws.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DomainError, InvalidInputError, PsdViolationError
from .numerics import RngStream, as_matrix, chol_logdet, require_hypersphere

__all__ = [
    "Kernel",
    "GaussianKernel",
    "ArccosKernel",
    "CallableKernel",
    "gaussian_kernel",
    "arccos_kernel",
    "GramBundle",
    "gram_bundle",
    "gram_from_matrix",
    "min_norm_interpolate",
    "rkhs_norm",
    "GpPosterior",
    "margin_posterior",
    "gp_condition",
    "posterior_variance_distance",
    "interpolation_error_bound",
    "concentration_sample",
    "nngp_empirical_kernel",
]

_CLAMP_TOL = 1e-9  # slack allowed on |t| - 1 before we call it a domain error


class Kernel:
    """Positive-definite kernel with a vectorised cross-Gram evaluator."""

    def pair(self, x, xp) -> float:
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        b = np.atleast_2d(np.asarray(xp, dtype=np.float64))
        return float(self.cross(a, b)[0, 0])

    def cross(self, A, B) -> np.ndarray:
        raise NotImplementedError

    __call__ = pair


@dataclass
class GaussianKernel(Kernel):
    """k(x, x') = exp(-|x - x'|^2 / (2 sigma^2))."""

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError("sigma must be positive")

    def cross(self, A, B) -> np.ndarray:
        A = as_matrix(A)
        B = as_matrix(B)
        if A.shape[1] != B.shape[1]:
            raise InvalidInputError("input dimensions differ")
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return np.exp(-sq / (2.0 * self.sigma**2))


def _relu_arc(t: np.ndarray) -> np.ndarray:
    # h(t) on [-1, 1]; h(1) = 1 exactly, h(-1) = 0.
    return (np.sqrt(np.maximum(1.0 - t * t, 0.0)) + t * (np.pi - np.arccos(t))) / np.pi


def _clamped(t: np.ndarray) -> np.ndarray:
    over = np.max(np.abs(t)) - 1.0
    if over > _CLAMP_TOL:
        raise DomainError(
            f"normalised inner product leaves [-1,1] by {over:.3e}; "
            "inputs are probably not on the hypersphere"
        )
    return np.clip(t, -1.0, 1.0)


@dataclass
class ArccosKernel(Kernel):
    """Compositional arccosine kernel of a depth-L scaled-relu network.

    depth 1 is the plain normalised inner product x.x'/d_0; each extra
    layer applies h once. Inputs must sit on the radius-sqrt(d_0)
    hypersphere (checked to 1e-6), which keeps k(x, x) = 1 at every
    depth since h(1) = 1.
    """

    depth: int = 2

    def __post_init__(self):
        if self.depth < 1:
            raise InvalidInputError("depth must be at least 1")

    def cross(self, A, B) -> np.ndarray:
        A = require_hypersphere(A, tol=1e-6)
        B = require_hypersphere(B, tol=1e-6)
        if A.shape[1] != B.shape[1]:
            raise InvalidInputError("input dimensions differ")
        t = _clamped(A @ B.T / A.shape[1])
        for _ in range(self.depth - 1):
            t = _clamped(_relu_arc(t))
        return t


@dataclass
class CallableKernel(Kernel):
    """Wraps an arbitrary symmetric pairwise function (x, x') -> real."""

    fn: Callable

    def cross(self, A, B) -> np.ndarray:
        A = as_matrix(A)
        B = as_matrix(B)
        out = np.empty((A.shape[0], B.shape[0]))
        for i, a in enumerate(A):
            for j, b in enumerate(B):
                out[i, j] = self.fn(a, b)
        return out


def gaussian_kernel(x, xp, sigma: float) -> float:
    return GaussianKernel(sigma).pair(x, xp)


def arccos_kernel(x, xp, depth: int) -> float:
    return ArccosKernel(depth).pair(x, xp)


# ---------------------------------------------------------------------------
# Gram bundles


@dataclass
class GramBundle:
    """A Gram matrix with its Cholesky factor, log-determinant and inputs.

    ``kernel`` may be None when the bundle was built from a raw matrix;
    operations that must evaluate the kernel at new points then refuse.
    """

    X: np.ndarray
    K: np.ndarray
    chol: np.ndarray  # lower-triangular factor of K + jitter*I
    logdet: float
    m: int
    kernel: Optional[Kernel] = None
    jitter: float = 0.0

    def solve(self, B) -> np.ndarray:
        """(K + jitter I)^{-1} B via the cached Cholesky factor."""
        return cho_solve((self.chol, True), np.asarray(B, dtype=np.float64))

    def cross_to(self, Xq) -> np.ndarray:
        """K_{Xq, X} for query rows Xq."""
        if self.kernel is None:
            raise InvalidInputError("bundle has no kernel to evaluate at new points")
        return self.kernel.cross(np.atleast_2d(np.asarray(Xq, dtype=np.float64)), self.X)

    def trace_inverse(self) -> float:
        """tr K^{-1} = |L^{-1}|_F^2 from the Cholesky factor."""
        Linv = solve_triangular(self.chol, np.eye(self.m), lower=True)
        return float(np.sum(Linv * Linv))


def _check_symmetric(K: np.ndarray) -> np.ndarray:
    scale = max(float(np.max(np.abs(K))), 1.0)
    if np.max(np.abs(K - K.T)) > 1e-12 * scale:
        raise InvalidInputError("Gram matrix is not symmetric to 1e-12")
    return (K + K.T) / 2.0


def gram_bundle(kernel: Kernel, X, jitter: Optional[float] = None) -> GramBundle:
    """Evaluate and factorise the Gram matrix of ``X`` under ``kernel``.

    jitter defaults to 1e-10 * trace / m; closely spaced inputs under
    smooth kernels produce Grams whose smallest eigenvalues underflow
    machine precision, and the factorisation escalates the jitter
    further if the first attempt fails.
    """
    X = as_matrix(X)
    K = _check_symmetric(kernel.cross(X, X))
    if jitter is None:
        jitter = 1e-10 * float(np.trace(K)) / K.shape[0]
    L, logdet = chol_logdet(K, jitter=jitter)
    return GramBundle(
        X=X, K=K, chol=L, logdet=logdet, m=K.shape[0], kernel=kernel, jitter=jitter
    )


def gram_from_matrix(K, X: Optional[np.ndarray] = None, kernel: Optional[Kernel] = None,
                     jitter: float = 0.0) -> GramBundle:
    """Bundle a caller-supplied Gram matrix (no kernel re-evaluation)."""
    K = _check_symmetric(as_matrix(K))
    if K.shape[0] != K.shape[1]:
        raise InvalidInputError("Gram matrix must be square")
    if X is None:
        X = np.eye(K.shape[0])
    X = as_matrix(X)
    if X.shape[0] != K.shape[0]:
        raise InvalidInputError("inputs and Gram matrix disagree on m")
    L, logdet = chol_logdet(K, jitter=jitter)
    return GramBundle(
        X=X, K=K, chol=L, logdet=logdet, m=K.shape[0], kernel=kernel, jitter=jitter
    )


def min_norm_interpolate(gram: GramBundle, Y):
    """Minimum-RKHS-norm interpolant of (X, Y).

    Returns (predictor, alpha) with alpha = K^{-1} Y; the predictor maps
    a query row-matrix to K_{qX} alpha (a single vector gives a float).
    """
    y = np.asarray(Y, dtype=np.float64).ravel()
    if y.shape[0] != gram.m:
        raise InvalidInputError("label count does not match the Gram bundle")
    alpha = gram.solve(y)

    def predictor(Xq):
        Xq = np.asarray(Xq, dtype=np.float64)
        single = Xq.ndim == 1
        values = gram.cross_to(np.atleast_2d(Xq)) @ alpha
        return float(values[0]) if single else values

    return predictor, alpha


def rkhs_norm(gram: GramBundle, alpha) -> float:
    """RKHS norm sqrt(alpha^T K alpha) of sum_i alpha_i k(., x_i)."""
    a = np.asarray(alpha, dtype=np.float64).ravel()
    if a.shape[0] != gram.m:
        raise InvalidInputError("coefficient count does not match the Gram bundle")
    q = float(a @ gram.K @ a)
    if q < -1e-10:
        raise PsdViolationError(f"quadratic form is negative ({q:.3e})")
    return float(np.sqrt(max(q, 0.0)))


# ---------------------------------------------------------------------------
# Gaussian-process conditioning


@dataclass
class GpPosterior:
    """A GP with kernel tau2*k conditioned on f_X = targets.

    ``gamma`` records the margin scale used to build the targets so that
    concentration draws can be reported as f/gamma.
    """

    gram: GramBundle
    targets: np.ndarray
    gamma: float = 1.0
    tau2: float = 1.0

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64).ravel()
        if self.targets.shape[0] != self.gram.m:
            raise InvalidInputError("targets length does not match the Gram bundle")
        if not (self.gamma > 0 and self.tau2 > 0):
            raise InvalidInputError("gamma and tau2 must be positive")


def margin_posterior(gram: GramBundle, Y, gamma: float = 1.0, tau2: float = 1.0) -> GpPosterior:
    """Posterior conditioned on f_X = gamma * Y (the margin construction)."""
    y = np.asarray(Y, dtype=np.float64).ravel()
    return GpPosterior(gram, gamma * y, gamma=gamma, tau2=tau2)


def gp_condition(post: GpPosterior, Xq):
    """Posterior mean and covariance at the query rows Xq.

    mean = K_qX K^{-1} targets; cov = tau2 * (K_qq - K_qX K^{-1} K_Xq).
    The kernel scale tau2 cancels in the mean but not the covariance.
    """
    gram = post.gram
    Xq = np.atleast_2d(np.asarray(Xq, dtype=np.float64))
    Kq = gram.cross_to(Xq)
    Kqq = gram.kernel.cross(Xq, Xq)
    mean = Kq @ gram.solve(post.targets)
    cov = post.tau2 * (Kqq - Kq @ gram.solve(Kq.T))
    return mean, (cov + cov.T) / 2.0


def posterior_variance_distance(gram: GramBundle, x) -> float:
    """K_xx - K_xX K^{-1} K_Xx: squared RKHS distance from k(., x) to the
    span of the training basis functions (= GP posterior variance at x)."""
    x = np.asarray(x, dtype=np.float64)
    kxX = gram.cross_to(np.atleast_2d(x)).ravel()
    kxx = float(gram.kernel.cross(np.atleast_2d(x), np.atleast_2d(x))[0, 0])
    return float(kxx - kxX @ gram.solve(kxX))


def interpolation_error_bound(gram: GramBundle, g_norm: float, fstar_norm: float, x) -> float:
    """|g(x) - f*(x)| bound for any interpolant g of the same data:
    sqrt(g_norm^2 - fstar_norm^2) * sqrt(posterior variance at x)."""
    if g_norm < fstar_norm:
        raise InvalidInputError(
            "the interpolant norm cannot be below the minimum-norm value"
        )
    gap = max(g_norm**2 - fstar_norm**2, 0.0)
    return float(np.sqrt(gap) * np.sqrt(max(posterior_variance_distance(gram, x), 0.0)))


def _psd_factor(cov: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Square root of a nearly-PSD symmetric matrix via eigen clamping."""
    evals, evecs = np.linalg.eigh(cov)
    floor = -tol * max(float(evals[-1]), 1.0)
    if evals[0] < floor:
        raise PsdViolationError(
            f"covariance eigenvalue {evals[0]:.3e} below tolerance"
        )
    return evecs * np.sqrt(np.maximum(evals, 0.0))


def concentration_sample(post: GpPosterior, Xq, n: int, rng: RngStream) -> np.ndarray:
    """Draw n joint samples of f(Xq)/gamma from the conditioned GP.

    Distribution: Normal(K_qX K^{-1} (targets/gamma), (tau2/gamma^2) * Schur),
    so draws collapse onto the interpolator as tau/gamma -> 0.
    """
    if n <= 0:
        raise InvalidInputError("need at least one draw")
    mean, cov = gp_condition(post, Xq)
    A = _psd_factor(cov)
    G = rng.generator.standard_normal((n, mean.shape[0]))
    return (mean[None, :] + G @ A.T) / post.gamma


# ---------------------------------------------------------------------------
# Finite-width empirical NNGP kernel


def _layer_factor(S: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(S)
    return evecs * np.sqrt(np.maximum(evals, 0.0))


def nngp_empirical_kernel(
    width: Union[int, Sequence[int]],
    depth: int,
    n_samples: int,
    X,
    rng: RngStream,
    method: str = "propagate",
) -> np.ndarray:
    """Empirical second-moment matrix (1/n) sum_s f_s(x_i) f_s(x_j) of a
    random scaled-relu MLP with iid Normal(0, 1/fan-in) weights.

    ``width`` is the common hidden width (or an explicit per-hidden-layer
    list of length depth-1); the output layer is scalar.

    method "materialise" draws every weight matrix and runs the forward
    pass — the definition, verbatim. method "propagate" (default) uses
    the fact that for a fixed layer input H, the pre-activations W @ H of
    an iid Gaussian weight matrix are themselves Gaussian with row
    covariance H^T H / fan-in, and samples that law directly layer by
    layer. The two methods draw from identical distributions; propagate
    just never materialises a width x width matrix, which is what makes
    width 4096 affordable.
    """
    X = require_hypersphere(X, tol=1e-6)
    m, d0 = X.shape
    if depth < 1:
        raise InvalidInputError("depth must be at least 1")
    if np.ndim(width) == 0:
        hidden = [int(width)] * (depth - 1)
    else:
        hidden = [int(w) for w in width]
        if len(hidden) != depth - 1:
            raise InvalidInputError("need one hidden width per hidden layer")
    if any(w <= 0 for w in hidden):
        raise InvalidInputError("hidden widths must be positive")
    if n_samples <= 0:
        raise InvalidInputError("need at least one weight draw")
    if method not in ("propagate", "materialise"):
        raise InvalidInputError(f"unknown method {method!r}")

    gen = rng.generator
    total = np.zeros((m, m))

    if method == "materialise":
        root2 = np.sqrt(2.0)
        for _ in range(n_samples):
            H = X.T  # (fan_in, m)
            for w in hidden:
                W = gen.standard_normal((w, H.shape[0])) / np.sqrt(H.shape[0])
                H = root2 * np.maximum(W @ H, 0.0)
            wout = gen.standard_normal(H.shape[0]) / np.sqrt(H.shape[0])
            f = wout @ H
            total += np.outer(f, f)
        return total / n_samples

    A0 = _layer_factor(X @ X.T / d0)
    chunk = 256
    done = 0
    root2 = np.sqrt(2.0)
    while done < n_samples:
        B = min(chunk, n_samples - done)
        A = np.broadcast_to(A0, (B, m, m))
        for w in hidden:
            Z = gen.standard_normal((B, w, m)) @ np.swapaxes(A, 1, 2)
            H = root2 * np.maximum(Z, 0.0)
            A = _layer_factor_batch(np.swapaxes(H, 1, 2) @ H / w)
        F = (A @ gen.standard_normal((B, m, 1)))[:, :, 0]
        total += F.T @ F
        done += B
    return total / n_samples


def _layer_factor_batch(S: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(S)
    return evecs * np.sqrt(np.maximum(evals, 0.0))[:, None, :]
