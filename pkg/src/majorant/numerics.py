"""Deterministic linear-algebra and sampling primitives.

Everything downstream (optimiser steps, perturbation bounds, Gram
machinery, Monte-Carlo estimators) funnels its matrix norms, Cholesky
factorisations and random draws through this module so that tolerances
and reproducibility conventions live in exactly one place.

Matrices are plain ``numpy.ndarray`` objects in row-major layout;
``as_matrix`` is the single validation gate (finite entries, 2-D shape).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, SingularGramError

__all__ = [
    "as_matrix",
    "sign_pm1",
    "require_hypersphere",
    "project_hypersphere",
    "spectral_norm",
    "frobenius_norm",
    "chol_logdet",
    "RngStream",
    "derive_stream_id",
    "gaussian_draws",
]


def as_matrix(m) -> np.ndarray:
    """Validate and return ``m`` as a 2-D float64 array.

    Parameters
    ----------
    m : array_like
        Anything ``numpy.asarray`` accepts, expected 2-D.

    Returns
    -------
    numpy.ndarray
        ``float64`` view/copy of ``m``.

    Raises
    ------
    InvalidInputError
        If ``m`` is empty, not 2-D, or contains NaN/Inf.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"expected a 2-D matrix, got ndim={a.ndim}")
    if a.size == 0:
        raise InvalidInputError("matrix is empty")
    if not np.isfinite(a).all():
        raise InvalidInputError("matrix has non-finite entries")
    return a


def sign_pm1(v):
    """Elementwise sign with the package-wide convention sign(0) = +1."""
    return np.where(np.asarray(v) >= 0.0, 1.0, -1.0)


def require_hypersphere(X, tol: float = 1e-8) -> np.ndarray:
    """Validate that every row of ``X`` lies on the radius-sqrt(d) sphere.

    Returns ``X`` as a 2-D float64 array (single vectors are promoted to
    one row). Raises :class:`InvalidInputError` when any row norm
    deviates from ``sqrt(d)`` by more than ``tol`` relative.
    """
    a = np.asarray(X, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    a = as_matrix(a)
    target = np.sqrt(a.shape[1])
    norms = np.linalg.norm(a, axis=1)
    worst = float(np.abs(norms - target).max()) / target
    if worst > tol:
        raise InvalidInputError(
            f"inputs must lie on the radius-sqrt(d) hypersphere "
            f"(worst relative deviation {worst:.3e} > {tol:.1e})"
        )
    return a


def project_hypersphere(X) -> np.ndarray:
    """Rescale every row of ``X`` onto the radius-sqrt(d) hypersphere."""
    a = as_matrix(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise InvalidInputError("cannot project a zero row onto the hypersphere")
    return a * (np.sqrt(a.shape[1]) / norms)


def _power_start(rows: int, cols: int) -> np.ndarray:
    # Deterministic start vector derived from the matrix dimensions only,
    # so repeated calls on equal-shaped inputs are reproducible.
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((rows, cols))))
    v = rng.standard_normal(cols)
    return v / np.linalg.norm(v)


def spectral_norm(m, tol: float = 1e-6, max_iter: int = 100) -> float:
    """Largest singular value by power iteration on ``m.T @ m``.

    Parameters
    ----------
    m : array_like
        Nonempty matrix.
    tol : float
        Relative change in the singular-value estimate at which the
        iteration stops.
    max_iter : int
        Iteration cap; the last estimate is returned if it is reached.

    Returns
    -------
    float
        Estimate of the spectral norm, certified on exit against the
        residual ``norm(B v - sigma^2 v)``.

    Notes
    -----
    The start vector is a fixed function of the matrix shape, so the
    result is deterministic. The estimate is a Rayleigh quotient and
    therefore approaches the true value from below; callers that feed
    the result into inequality certificates should pass a tighter
    ``tol`` (see the perturbation-bound code).
    """
    a = as_matrix(m)
    if tol <= 0.0:
        raise InvalidInputError("tol must be positive")
    # iterate on the smaller Gram square to halve the matvec cost
    work = a if a.shape[1] <= a.shape[0] else a.T
    v = _power_start(*work.shape)
    sigma2 = 0.0
    for _ in range(max_iter):
        w = work.T @ (work @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0  # v landed in the kernel => zero matrix (by start choice)
        new_sigma2 = float(v @ w)  # Rayleigh quotient of B = work.T work
        v = w / nw
        if abs(new_sigma2 - sigma2) <= tol * max(new_sigma2, np.finfo(float).tiny):
            sigma2 = new_sigma2
            break
        sigma2 = new_sigma2
    return float(np.sqrt(max(sigma2, 0.0)))


def frobenius_norm(m) -> float:
    """Square root of the sum of squared entries of ``m``."""
    return float(np.linalg.norm(as_matrix(m), "fro"))


def chol_logdet(psd, jitter: float = 0.0):
    """Lower Cholesky factor and log-determinant with jitter escalation.

    Parameters
    ----------
    psd : array_like
        Square matrix, symmetric up to 1e-10 relative asymmetry.
    jitter : float
        Initial diagonal jitter. On factorisation failure the jitter is
        escalated by factors of 10 (starting from ``1e-12 * trace/m``
        when the request was 0) up to ``1e-4 * trace/m``.

    Returns
    -------
    (numpy.ndarray, float)
        Lower-triangular ``L`` with ``L @ L.T == psd + jitter_used * I``
        and the log-determinant ``2 * sum(log(diag(L)))`` of that
        jittered matrix.

    Raises
    ------
    SingularGramError
        If no jitter up to the cap yields a successful factorisation.
    InvalidInputError
        If ``psd`` is not square or not symmetric within tolerance.
    """
    a = as_matrix(psd)
    n = a.shape[0]
    if a.shape[0] != a.shape[1]:
        raise InvalidInputError("matrix must be square")
    scale = float(np.abs(a).max())
    if scale > 0.0 and float(np.abs(a - a.T).max()) > 1e-10 * scale:
        raise InvalidInputError("matrix is asymmetric beyond 1e-10 relative")
    a = 0.5 * (a + a.T)
    if jitter < 0.0:
        raise InvalidInputError("jitter must be nonnegative")

    trace_scale = max(float(np.trace(a)) / n, np.finfo(float).tiny)
    cap = 1e-4 * trace_scale
    j = float(jitter)
    while True:
        try:
            chol = scipy.linalg.cholesky(
                a + j * np.eye(n) if j > 0.0 else a, lower=True
            )
            logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
            return chol, logdet
        except scipy.linalg.LinAlgError:
            j = 1e-12 * trace_scale if j == 0.0 else 10.0 * j
            if j > cap:
                raise SingularGramError(
                    f"cholesky failed with jitter escalated past {cap:.3e}"
                ) from None


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Identical keys give byte-identical draw sequences on every platform
    (numpy guarantees stream stability for a fixed bit generator);
    distinct ``stream_id`` values give independent-quality sequences.
    Each stream is single-owner: hand parallel workers their own ids.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence((int(self.seed) & _U64, int(self.stream_id) & _U64))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def generator(self) -> np.random.Generator:
        """The underlying ``numpy.random.Generator``."""
        return self._gen

    def substream(self, *ids) -> "RngStream":
        """A fresh stream whose id mixes this stream's id with ``ids``."""
        return RngStream(self.seed, derive_stream_id(self.stream_id, *ids))


_U64 = (1 << 64) - 1


def derive_stream_id(*coords) -> int:
    """Deterministic 64-bit stream id from hashable grid coordinates.

    Uses blake2b over the ``repr`` of the coordinate tuple; unlike
    ``hash()`` this is stable across processes and platforms, which is
    what keeps worker-count-independent reproducibility honest.
    """
    digest = hashlib.blake2b(repr(tuple(coords)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def gaussian_draws(rng: RngStream, n: int) -> np.ndarray:
    """``n`` independent standard-normal variates from ``rng``.

    ``n = 0`` returns an empty vector. Draw sequences are a pure
    function of the stream key.
    """
    if n < 0:
        raise InvalidInputError("n must be nonnegative")
    return rng.generator.standard_normal(int(n))
