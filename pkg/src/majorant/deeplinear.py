"""Deep linear networks, architectural perturbation bounds, and the
architecture-aware majorise-minimise update.

A deep linear network multiplies its input through L weight matrices.
Although the input-output map is linear, the loss is non-convex in the
weights, and the interesting structure is how a *weight* perturbation
propagates to a *function* perturbation: the product-form bounds
implemented here control both the function change and its
linearisation error layer by layer. Minimising the induced square-loss
majorisation under equal layerwise updates yields closed-form log
learning rates (spectral flavour eta*, conditioned flavour with
Frobenius proxies), and the resulting update is what the training
loops apply.

Weight tuples are plain lists of 2-D float64 arrays, W[l] of shape
(d_{l+1}, d_l) in forward order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DegenerateLayerError,
    DivergedError,
    InvalidInputError,
    ZeroGradientSignal,
)
from .numerics import frobenius_norm, require_hypersphere, spectral_norm

__all__ = [
    "DeepLinearNet",
    "PerturbationBoundReport",
    "dln_forward",
    "dln_outputs",
    "output_scale",
    "perturbation_bounds",
    "ansatz_bounds",
    "eta_star",
    "closed_form_eta",
    "architecture_aware_update",
    "square_loss_majorisation_rhs",
    "dln_gradient_square_loss",
    "dln_square_loss",
    "train_dln",
]

# Spectral norms that feed inequality certificates get a much tighter
# stopping rule than the public default; see spectral_norm's notes.
_TIGHT = {"tol": 1e-13, "max_iter": 3000}


def _check_chain(weights: Sequence[np.ndarray]) -> list:
    if len(weights) == 0:
        raise InvalidInputError("a network needs at least one layer")
    out = []
    for i, w in enumerate(weights):
        a = np.asarray(w, dtype=np.float64)
        if a.ndim != 2 or not np.isfinite(a).all():
            raise InvalidInputError(f"layer {i} is not a finite matrix")
        if out and a.shape[1] != out[-1].shape[0]:
            raise InvalidInputError(
                f"layer {i} expects width {a.shape[1]} but layer {i-1} "
                f"produces width {out[-1].shape[0]}"
            )
        out.append(a)
    return out


@dataclass
class DeepLinearNet:
    """An L-layer linear network; ``weights[l]`` maps width d_l to d_{l+1}."""

    weights: list

    def __post_init__(self):
        self.weights = _check_chain(self.weights)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def _weights_of(net) -> list:
    if hasattr(net, "weights"):
        return list(net.weights)
    return _check_chain(net)


def dln_forward(net, x) -> np.ndarray:
    """Apply the network to a single input vector."""
    weights = _weights_of(net)
    v = np.asarray(x, dtype=np.float64).ravel()
    if v.shape[0] != weights[0].shape[1]:
        raise InvalidInputError(
            f"input has length {v.shape[0]}, expected {weights[0].shape[1]}"
        )
    for w in weights:
        v = w @ v
    return v


def dln_outputs(net, X) -> np.ndarray:
    """Network outputs for a batch: rows of ``X`` in, rows of outputs out."""
    weights = _weights_of(net)
    H = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if H.shape[1] != weights[0].shape[1]:
        raise InvalidInputError("batch width does not match the first layer")
    for w in weights:
        H = H @ w.T
    return H


def output_scale(net, tol: float = 1e-6, max_iter: int = 100) -> float:
    """sqrt(d_0) times the product of layerwise spectral norms.

    This is the Lipschitz-style constant bounding the output magnitude
    over the radius-sqrt(d_0) input sphere.
    """
    weights = _weights_of(net)
    d0 = weights[0].shape[1]
    prod = 1.0
    for w in weights:
        prod *= spectral_norm(w, tol=tol, max_iter=max_iter)
    return float(np.sqrt(d0) * prod)


def _sym_tail_sums(r: np.ndarray):
    """Return (sum_{k>=1} e_k, sum_{k>=2} e_k) of elementary symmetric
    polynomials of the nonnegative values ``r``.

    Equivalent to (prod(1+r) - 1, prod(1+r) - 1 - sum(r)) but computed
    as sums of nonnegative terms so the second expression never suffers
    the catastrophic cancellation the naive difference would for small r.
    """
    coeffs = np.array([1.0])
    for ri in r:
        grown = np.zeros(len(coeffs) + 1)
        grown[: len(coeffs)] += coeffs
        grown[1:] += ri * coeffs
        coeffs = grown
    first = float(np.sum(coeffs[1:]))
    second = float(np.sum(coeffs[2:])) if len(coeffs) > 2 else 0.0
    return first, second


@dataclass
class PerturbationBoundReport:
    """Bounds and measurements for one (network, perturbation, inputs) triple.

    ``first_order`` bounds the stacked output change norm(delta f_X);
    ``second_order`` bounds the linearisation error
    norm(delta f_X - grad f_X @ delta w). ``measured_first`` and
    ``measured_second`` are the corresponding forward-pass measurements.
    """

    first_order: float
    second_order: float
    scale: float
    rel_sizes: np.ndarray
    measured_first: float
    measured_second: float


def perturbation_bounds(net, delta: Sequence[np.ndarray], X) -> PerturbationBoundReport:
    """Architectural perturbation bounds plus their measured counterparts.

    Parameters
    ----------
    net : DeepLinearNet or sequence of matrices
    delta : sequence of matrices
        Per-layer weight perturbations, shapes matching the network.
    X : array
        Input rows on the radius-sqrt(d_0) hypersphere (validated to
        1e-8 relative).

    Returns
    -------
    PerturbationBoundReport
        With bound values sqrt(m) * F * (prod(1+r_l) - 1) and
        sqrt(m) * F * (prod(1+r_l) - 1 - sum r_l), where
        r_l = specnorm(delta W_l)/specnorm(W_l), alongside the exact
        measured quantities.
    """
    weights = _weights_of(net)
    deltas = [np.asarray(d, dtype=np.float64) for d in delta]
    if len(deltas) != len(weights):
        raise InvalidInputError("perturbation must have one matrix per layer")
    for w, d in zip(weights, deltas):
        if d.shape != w.shape:
            raise InvalidInputError("perturbation shapes must match the weights")
    X = require_hypersphere(X, tol=1e-8)
    if X.shape[1] != weights[0].shape[1]:
        raise InvalidInputError("input width does not match the first layer")
    m = X.shape[0]

    w_norms = np.array([spectral_norm(w, **_TIGHT) for w in weights])
    if np.any(w_norms == 0.0):
        raise DegenerateLayerError("a layer has zero spectral norm")
    d_norms = np.array([spectral_norm(d, **_TIGHT) if np.any(d) else 0.0 for d in deltas])
    rel = d_norms / w_norms
    scale = float(np.sqrt(X.shape[1]) * np.prod(w_norms))

    first_poly, second_poly = _sym_tail_sums(rel)
    first_bound = np.sqrt(m) * scale * first_poly
    second_bound = np.sqrt(m) * scale * second_poly

    # Measured: exact forward difference and exact directional derivative.
    base = dln_outputs(weights, X)
    pert = dln_outputs([w + d for w, d in zip(weights, deltas)], X)
    df = pert - base

    # activations H_l and suffix products T_l = W_L ... W_{l+2} W_{l+1}
    H = [X]
    for w in weights:
        H.append(H[-1] @ w.T)
    d_last = weights[-1].shape[0]
    T = [None] * (len(weights) + 1)
    T[len(weights)] = np.eye(d_last)
    for l in range(len(weights) - 1, 0, -1):
        T[l] = T[l + 1] @ weights[l]
    jvp = np.zeros_like(base)
    for l, d in enumerate(deltas):
        jvp += (H[l] @ d.T) @ T[l + 1].T

    return PerturbationBoundReport(
        first_order=float(first_bound),
        second_order=float(second_bound),
        scale=scale,
        rel_sizes=rel,
        measured_first=float(np.linalg.norm(df)),
        measured_second=float(np.linalg.norm(df - jvp)),
    )


def _exp_minus_linear(eta: float) -> float:
    # e^eta - eta - 1, safe against cancellation for small eta
    if abs(eta) < 1e-4:
        return eta * eta * (0.5 + eta * (1.0 / 6.0 + eta / 24.0))
    return float(np.expm1(eta) - eta)


def ansatz_bounds(F: float, eta: float, m: int):
    """Perturbation bounds under equal layerwise updates of size eta/L.

    Returns ``(sqrt(m) F (e^eta - 1), sqrt(m) F (e^eta - eta - 1))`` —
    the depth-independent envelopes of the product-form bounds.
    """
    if eta < 0.0:
        raise InvalidInputError("eta must be nonnegative")
    root_m = np.sqrt(m)
    return (
        float(root_m * F * np.expm1(eta)),
        float(root_m * F * _exp_minus_linear(eta)),
    )


def _flavour_norms(weights, grads, flavour: str):
    """Per-layer (scale s_l, gradient normaliser n_l) for a flavour."""
    if flavour == "spectral":
        s = np.array([spectral_norm(w, **_TIGHT) for w in weights])
        n = np.array([spectral_norm(g, **_TIGHT) for g in grads])
    elif flavour == "conditioned":
        s = np.array(
            [frobenius_norm(w) / np.sqrt(min(w.shape)) for w in weights]
        )
        n = np.array([frobenius_norm(g) for g in grads])
    else:
        raise InvalidInputError(f"unknown flavour {flavour!r}")
    return s, n


def closed_form_eta(net, grads, Y, m: int, flavour: str = "spectral") -> float:
    """The log learning rate minimising the square-loss majorisation.

    0.5 * log(1 + [ (1/L) sum_l s_l |G_l|_F^2 / n_l ]
                    / [ F (F + |Y|_2 / sqrt(m)) ])

    with (s_l, n_l) the flavour's layer scale and gradient normaliser,
    and F = sqrt(d_0) prod_l s_l. Raises :class:`ZeroGradientSignal`
    when any layer gradient vanishes (the caller should skip the step).
    """
    weights = _weights_of(net)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if len(grads) != len(weights):
        raise InvalidInputError("need one gradient per layer")
    gfro = np.array([frobenius_norm(g) if np.any(g) else 0.0 for g in grads])
    if np.any(gfro == 0.0):
        raise ZeroGradientSignal("zero gradient at some layer; skip the update")
    s, n = _flavour_norms(weights, grads, flavour)
    if np.any(s == 0.0):
        raise DegenerateLayerError("a layer has zero norm")
    L = len(weights)
    d0 = weights[0].shape[1]
    F = float(np.sqrt(d0) * np.prod(s))
    y_rms = float(np.linalg.norm(np.asarray(Y, dtype=np.float64))) / np.sqrt(m)
    numer = float(np.sum(s * gfro**2 / n)) / L
    denom = F * (F + y_rms)
    return 0.5 * float(np.log1p(numer / denom))


def eta_star(net, grads, Y, m: int) -> float:
    """Spectral-flavour log learning rate (see :func:`closed_form_eta`)."""
    return closed_form_eta(net, grads, Y, m, flavour="spectral")


def architecture_aware_update(
    net,
    grads,
    Y,
    m: int,
    flavour: str = "spectral",
    eta: Optional[float] = None,
    depth_scale: bool = True,
) -> list:
    """One majorise-minimise step under equal layerwise updates.

    W_l <- W_l - eta * (1/L) * s_l * G_l / n_l

    with flavour "spectral" using (|W|_spec, |G|_spec) and flavour
    "conditioned" using (|W|_F / sqrt(min dims), |G|_F). When ``eta``
    is omitted it is the flavour's closed form. ``depth_scale=False``
    removes the 1/L factor (the lesioned variant used by the
    learning-rate-transfer experiment) and then requires an explicit
    ``eta``.

    All-zero gradients return the weights unchanged (the zero-gradient
    signal is caught here: skipping is the documented behaviour).
    """
    weights = _weights_of(net)
    grads = [np.asarray(g, dtype=np.float64) for g in grads]
    if eta is None:
        if not depth_scale:
            raise InvalidInputError("depth_scale=False requires an explicit eta")
        try:
            eta = closed_form_eta(weights, grads, Y, m, flavour)
        except ZeroGradientSignal:
            return [w.copy() for w in weights]
    else:
        gfro = [frobenius_norm(g) if np.any(g) else 0.0 for g in grads]
        if any(v == 0.0 for v in gfro):
            return [w.copy() for w in weights]
    s, n = _flavour_norms(weights, grads, flavour)
    if np.any(n == 0.0):
        return [w.copy() for w in weights]
    L = len(weights)
    step = eta / L if depth_scale else eta
    return [w - step * si * g / ni for w, g, si, ni in zip(weights, grads, s, n)]


def square_loss_majorisation_rhs(F: float, Ynorm: float, m: int, eta: float) -> float:
    """Majorisation gap bound 0.5 F (F + |Y|/sqrt(m)) (e^{2 eta} - 2 eta - 1)."""
    if eta < 0.0:
        raise InvalidInputError("eta must be nonnegative")
    return 0.5 * F * (F + Ynorm / np.sqrt(m)) * _exp_minus_linear(2.0 * eta)


def dln_square_loss(net, X, Y) -> float:
    """Square loss (1/2m) |f_X - Y|^2 with outputs stacked over the batch."""
    out = dln_outputs(net, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(out.shape)
    m = out.shape[0]
    return float(np.sum((out - Y) ** 2)) / (2.0 * m)


def dln_gradient_square_loss(net, X, Y) -> list:
    """Exact per-layer gradient of :func:`dln_square_loss`."""
    weights = _weights_of(net)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = [X]
    for w in weights:
        H.append(H[-1] @ w.T)
    out = H[-1]
    Y = np.asarray(Y, dtype=np.float64).reshape(out.shape)
    m = X.shape[0]
    B = (out - Y) / m  # m x d_L
    grads = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        grads[l] = B.T @ H[l]
        if l > 0:
            B = B @ weights[l]
    return grads


def train_dln(net, X, Y, steps: int, flavour: str = "spectral"):
    """Train a deep linear network with the architecture-aware update.

    Returns ``(trajectory, final_weights)`` where the trajectory is a
    list of ``(step, loss, eta)`` records; eta is None on skipped
    (zero-gradient) steps. Training halts early with
    :class:`DivergedError` recorded if the loss goes non-finite.
    """
    weights = _weights_of(net)
    X = require_hypersphere(X, tol=1e-8)
    m = X.shape[0]
    trajectory = []
    for step in range(steps):
        loss = dln_square_loss(weights, X, Y)
        if not np.isfinite(loss):
            raise DivergedError(f"loss became non-finite at step {step}")
        grads = dln_gradient_square_loss(weights, X, Y)
        try:
            eta = closed_form_eta(weights, grads, Y, m, flavour)
        except ZeroGradientSignal:
            trajectory.append((step, loss, None))
            continue
        weights = architecture_aware_update(weights, grads, Y, m, flavour, eta=eta)
        trajectory.append((step, loss, eta))
    return trajectory, weights
