"""One-step classic majorise-minimise optimisers and gap validators.

Each optimiser minimises a tangent upper bound (majorisation) of the
objective around the current iterate and returns the resulting single
step: gradient descent from the Euclidean quadratic, mirror descent
from a Bregman divergence, cubic-regularised Newton from the cubic
overestimate of the second-order model, and Gauss-Newton from the
square-loss functional expansion. ``majorisation_gap`` evaluates both
sides of the corresponding inequality so tests can assert it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import (
    DivergedError,
    DomainError,
    InvalidInputError,
    SingularCurvatureError,
    SubproblemError,
)

__all__ = [
    "SmoothObjective",
    "MirrorMap",
    "PredictorJacobian",
    "gd_step",
    "mirror_step",
    "cubic_newton_step",
    "solve_cubic_subproblem",
    "gauss_newton_step",
    "majorisation_gap",
]


@dataclass
class SmoothObjective:
    """Value/gradient (optionally Hessian) oracles for a smooth objective."""

    dim: int
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass
class MirrorMap:
    """Convex potential psi with gradient and inverse-gradient oracles."""

    psi: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    grad_inv: Callable[[np.ndarray], np.ndarray]


@dataclass
class PredictorJacobian:
    """Projected outputs f_X and their Jacobian for Gauss-Newton.

    ``outputs`` has length m; ``jacobian`` is the m-by-d matrix of
    per-sample output gradients in the weights.
    """

    outputs: np.ndarray
    jacobian: np.ndarray

    def __post_init__(self):
        self.outputs = np.asarray(self.outputs, dtype=np.float64).ravel()
        self.jacobian = np.asarray(self.jacobian, dtype=np.float64)
        if self.jacobian.ndim != 2 or self.jacobian.shape[0] != self.outputs.shape[0]:
            raise InvalidInputError("jacobian rows must match output length")


def gd_step(obj: SmoothObjective, w, lam: float) -> np.ndarray:
    """Gradient-descent step ``w - grad/lam`` from the Euclidean majorisation.

    ``lam`` is the quadratic coefficient (a gradient-Lipschitz constant
    makes the majorisation valid); it must be positive.
    """
    if lam <= 0.0:
        raise InvalidInputError("lambda must be positive")
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(obj.gradient(w), dtype=np.float64)
    if not np.isfinite(g).all():
        raise DivergedError("gradient is non-finite")
    return w - g / lam

def mirror_step(obj: SmoothObjective, mmap: MirrorMap, w) -> np.ndarray:
    """Mirror-descent step ``(grad psi)^-1(grad psi(w) - grad L(w))``."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(obj.gradient(w), dtype=np.float64)
    if not np.isfinite(g).all():
        raise DivergedError("gradient is non-finite")
    dual = np.asarray(mmap.grad(w), dtype=np.float64) - g
    try:
        out = np.asarray(mmap.grad_inv(dual), dtype=np.float64)
    except (ValueError, ArithmeticError, FloatingPointError) as exc:
        raise DomainError(f"inverse mirror map failed: {exc}") from exc
    if not np.isfinite(out).all():
        raise DomainError("inverse mirror map left the domain (non-finite result)")
    return out


def solve_cubic_subproblem(g, H, lam: float, max_bisect: int = 200) -> np.ndarray:
    """argmin over s of  g.s + s.H s/2 + (lam/6)|s|^3.

    Solved exactly via eigendecomposition of H plus bisection on the
    secular equation in the step radius r = |s|: the stationarity
    condition is (H + (lam/2) r I) s = -g with r = |s|, so define
    n(r) = |(H + (lam/2) r I)^{-1} g| and find the root of n(r) = r on
    (r_crit, inf), r_crit = max(0, -2 lambda_min / lam). The hard case
    (g orthogonal to the bottom eigenspace and n(r_crit) < r_crit) adds
    the missing mass along the bottom eigenvector.
    """
    if lam <= 0.0:
        raise InvalidInputError("lambda must be positive")
    g = np.asarray(g, dtype=np.float64).ravel()
    H = np.asarray(H, dtype=np.float64)
    evals, evecs = np.linalg.eigh(0.5 * (H + H.T))
    ghat = evecs.T @ g
    lam_min = float(evals[0])
    r_crit = max(0.0, -2.0 * lam_min / lam)

    def step_norm(r: float) -> float:
        denom = evals + 0.5 * lam * r
        if np.any(denom <= 0.0):
            return np.inf
        return float(np.linalg.norm(ghat / denom))

    if np.linalg.norm(ghat) == 0.0 and r_crit == 0.0:
        return np.zeros_like(g)

    # Hard case: no gradient mass on the bottom eigenspace and the
    # remaining components already fit inside the critical radius.
    bottom = np.abs(evals - lam_min) <= 1e-12 * max(1.0, abs(lam_min))
    if r_crit > 0.0 and float(np.linalg.norm(ghat[bottom])) <= 1e-14 * max(
        1.0, float(np.linalg.norm(ghat))
    ):
        denom = evals + 0.5 * lam * r_crit  # exactly 0 on the bottom eigenspace
        shat = np.where(bottom, 0.0, -ghat / np.where(bottom, 1.0, denom))
        interior = float(np.linalg.norm(shat))
        if interior <= r_crit:
            extra = np.sqrt(max(r_crit**2 - interior**2, 0.0))
            return evecs @ shat + extra * evecs[:, 0]

    # Regular case: phi(r) = n(r) - r is decreasing with a sign change.
    lo = r_crit
    hi = max(1.0, 2.0 * r_crit + 1.0)
    for _ in range(max_bisect):
        if step_norm(hi) < hi:
            break
        hi *= 2.0
    else:
        raise SubproblemError("bracketing the secular equation failed")
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if step_norm(mid) >= mid:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    denom = evals + 0.5 * lam * r
    if np.any(denom <= 0.0):
        raise SubproblemError("secular bisection ended outside the valid interval")
    return evecs @ (-ghat / denom)


def cubic_newton_step(obj: SmoothObjective, w, lam: float) -> np.ndarray:
    """Cubic-regularised Newton step: w plus the cubic-subproblem minimiser."""
    if obj.hessian is None:
        raise InvalidInputError("cubic_newton_step needs a Hessian oracle")
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(obj.gradient(w), dtype=np.float64)
    H = np.asarray(obj.hessian(w), dtype=np.float64)
    return w + solve_cubic_subproblem(g, H, lam)


def gauss_newton_step(pj: PredictorJacobian, labels, reg: Optional[float] = None) -> np.ndarray:
    """Gauss-Newton weight perturbation for the square loss.

    Returns ``-(F + reg I)^{-1} grad`` with ``F = J.T J / m`` and
    ``grad = J.T (f - Y) / m``. ``reg`` defaults to
    ``1e-10 * trace(F)/d``; an explicitly zero ``reg`` on a singular
    system raises :class:`SingularCurvatureError`.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    if y.shape != pj.outputs.shape:
        raise InvalidInputError("labels must match predictor outputs")
    m, d = pj.jacobian.shape
    F = pj.jacobian.T @ pj.jacobian / m
    grad = pj.jacobian.T @ (pj.outputs - y) / m
    if reg is None:
        reg = 1e-10 * float(np.trace(F)) / d
    if reg < 0.0:
        raise InvalidInputError("reg must be nonnegative")
    A = F + reg * np.eye(d)
    if reg == 0.0:
        evals = np.linalg.eigvalsh(A)
        if evals[0] <= 1e-12 * max(evals[-1], np.finfo(float).tiny):
            raise SingularCurvatureError(
                "squared Jacobian is singular; pass a positive reg"
            )
    return -np.linalg.solve(A, grad)


def majorisation_gap(
    obj: SmoothObjective,
    w,
    dw,
    kind: str,
    *,
    lam: Optional[float] = None,
    mirror: Optional[MirrorMap] = None,
    input_dim: Optional[int] = None,
):
    """Both sides of a majorisation inequality at perturbation ``dw``.

    ``kind`` selects the tangent model and the bound:

    - ``"euclidean"``: lhs = L(w+dw) - L(w) - g.dw,          rhs = (lam/2)|dw|^2
    - ``"cubic"``:     lhs = same minus the Hessian term,    rhs = (lam/6)|dw|^3
    - ``"bregman"``:   lhs as euclidean,                     rhs = Bregman divergence of ``mirror``
    - ``"linreg"``:    lhs as euclidean,                     rhs = (input_dim/2)|dw|^2

    Returns ``(lhs, rhs)``; a valid majorisation satisfies lhs <= rhs,
    and both vanish at dw = 0 (tangency).
    """
    w = np.asarray(w, dtype=np.float64)
    dw = np.asarray(dw, dtype=np.float64)
    if not np.isfinite(dw).all():
        raise InvalidInputError("dw has non-finite entries")
    g = np.asarray(obj.gradient(w), dtype=np.float64)
    base = float(obj.value(w)) + float(g @ dw)
    lhs = float(obj.value(w + dw)) - base

    if kind == "euclidean":
        if lam is None:
            raise InvalidInputError("euclidean kind needs lam")
        rhs = 0.5 * lam * float(dw @ dw)
    elif kind == "cubic":
        if lam is None or obj.hessian is None:
            raise InvalidInputError("cubic kind needs lam and a Hessian oracle")
        H = np.asarray(obj.hessian(w), dtype=np.float64)
        lhs -= 0.5 * float(dw @ (H @ dw))
        rhs = lam / 6.0 * float(np.linalg.norm(dw)) ** 3
    elif kind == "bregman":
        if mirror is None:
            raise InvalidInputError("bregman kind needs a mirror map")
        gpsi = np.asarray(mirror.grad(w), dtype=np.float64)
        rhs = float(mirror.psi(w + dw)) - float(mirror.psi(w)) - float(gpsi @ dw)
    elif kind == "linreg":
        if input_dim is None:
            raise InvalidInputError("linreg kind needs input_dim")
        rhs = 0.5 * input_dim * float(dw @ dw)
    else:
        raise InvalidInputError(f"unknown majorisation kind {kind!r}")
    return lhs, rhs
