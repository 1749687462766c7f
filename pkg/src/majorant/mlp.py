"""Finite-width multilayer perceptrons: forward/backward passes, losses,
normalised margins, and the two training loops the experiments need
(architecture-aware updates and margin-controlled projection training).

The last layer is always affine-free linear (no nonlinearity after it);
hidden layers apply the chosen elementwise nonlinearity. "scaled-relu"
is sqrt(2) * max(0, .), the variance-preserving choice under 1/fan-in
Gaussian weights.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .deeplinear import architecture_aware_update, closed_form_eta, _check_chain
from .errors import (
    DegenerateLayerError,
    InvalidInputError,
    NonInterpolationWarning,
    ZeroGradientSignal,
)
from .numerics import (
    RngStream,
    frobenius_norm,
    require_hypersphere,
    sign_pm1,
    spectral_norm,
)

__all__ = [
    "MlpNet",
    "MarginReport",
    "TrainResult",
    "mlp_forward",
    "mlp_outputs",
    "mlp_gradient",
    "loss_eval",
    "margins",
    "init_rms_one",
    "train_architecture_aware",
    "train_margin_projected",
    "save_checkpoint",
    "load_checkpoint",
]

_NONLINEARITIES = ("scaled-relu", "relu", "identity")
_ROOT2 = np.sqrt(2.0)


@dataclass
class MlpNet:
    weights: list
    nonlinearity: str = "scaled-relu"

    def __post_init__(self):
        self.weights = _check_chain(self.weights)
        if self.nonlinearity not in _NONLINEARITIES:
            raise InvalidInputError(f"unknown nonlinearity {self.nonlinearity!r}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> list:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def _phi(z, kind):
    if kind == "scaled-relu":
        return _ROOT2 * np.maximum(z, 0.0)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _phi_prime(z, kind):
    if kind == "scaled-relu":
        return _ROOT2 * (z > 0.0)
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def mlp_outputs(net: MlpNet, X) -> np.ndarray:
    """Batch forward pass: rows of X in, rows of outputs out."""
    H = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if H.shape[1] != net.weights[0].shape[1]:
        raise InvalidInputError("batch width does not match the first layer")
    last = len(net.weights) - 1
    for l, w in enumerate(net.weights):
        H = H @ w.T
        if l != last:
            H = _phi(H, net.nonlinearity)
    return H


def mlp_forward(net: MlpNet, x) -> np.ndarray:
    """Forward pass for one input vector."""
    return mlp_outputs(net, np.asarray(x, dtype=np.float64)[None, :])[0]


def _forward_cache(net: MlpNet, X):
    H = [np.atleast_2d(np.asarray(X, dtype=np.float64))]
    Z = []
    last = len(net.weights) - 1
    for l, w in enumerate(net.weights):
        z = H[-1] @ w.T
        Z.append(z)
        H.append(_phi(z, net.nonlinearity) if l != last else z)
    return H, Z


def _as_targets(Y, out_shape):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1 and out_shape[1] == 1:
        Y = Y[:, None]
    if Y.shape != out_shape:
        raise InvalidInputError(
            f"labels shaped {Y.shape} do not match outputs {out_shape}"
        )
    return Y


def loss_eval(net: MlpNet, X, Y, kind: str) -> float:
    """Evaluate a loss over the batch.

    kind "zero-one": mean misclassification with sign(0) = +1;
    kind "square": (1/2m) |f_X - Y|^2 (real or one-hot labels);
    kind "logistic": mean log(1 + exp(-y f)), labels in {+-1}.
    """
    out = mlp_outputs(net, X)
    m = out.shape[0]
    if kind == "square":
        Y = _as_targets(Y, out.shape)
        return float(np.sum((out - Y) ** 2)) / (2.0 * m)
    if out.shape[1] != 1:
        raise InvalidInputError(f"loss {kind!r} needs scalar outputs")
    f = out[:, 0]
    y = np.asarray(Y, dtype=np.float64).ravel()
    if y.shape[0] != m:
        raise InvalidInputError("label count does not match the batch")
    if kind == "zero-one":
        if not np.all(np.abs(y) == 1.0):
            raise InvalidInputError("zero-one loss needs labels in {+1,-1}")
        return float(np.mean(sign_pm1(f) != y))
    if kind == "logistic":
        if not np.all(np.abs(y) == 1.0):
            raise InvalidInputError("logistic loss needs labels in {+1,-1}")
        return float(np.mean(np.logaddexp(0.0, -y * f)))
    raise InvalidInputError(f"unknown loss kind {kind!r}")


def mlp_gradient(net: MlpNet, X, Y, kind: str = "square", l2_coeff: float = 0.0) -> list:
    """Exact batch-loss gradient for every layer by reverse accumulation.

    kind is "square", "logistic", or "square+l2" (which adds the
    penalty gradient 2 * l2_coeff * W_l to the square-loss gradient).
    """
    H, Z = _forward_cache(net, X)
    out = H[-1]
    m = out.shape[0]
    if kind in ("square", "square+l2"):
        Y = _as_targets(Y, out.shape)
        B = (out - Y) / m
    elif kind == "logistic":
        if out.shape[1] != 1:
            raise InvalidInputError("logistic loss needs scalar outputs")
        y = np.asarray(Y, dtype=np.float64).ravel()[:, None]
        B = -y * _sigmoid(-y * out) / m
    else:
        raise InvalidInputError(f"unknown loss kind {kind!r}")

    weights = net.weights
    grads = [None] * len(weights)
    for l in range(len(weights) - 1, -1, -1):
        grads[l] = B.T @ H[l]
        if l > 0:
            B = (B @ weights[l]) * _phi_prime(Z[l - 1], net.nonlinearity)
    if kind == "square+l2":
        grads = [g + 2.0 * l2_coeff * w for g, w in zip(grads, weights)]
    return grads


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class MarginReport:
    rho_spectral: float
    rho_frobenius: float
    raw_min: float
    spectral_norms: np.ndarray
    frobenius_scales: np.ndarray


def margins(net: MlpNet, X, Y) -> MarginReport:
    """Spectrally- and Frobenius-normalised margins of a scalar-output net.

    rho* = min_i y_i f(x_i) / (|x| prod_l |W_l|_spec); the Frobenius
    variant replaces each spectral norm by |W_l|_F / sqrt(min dims).
    Inputs are validated onto the radius-sqrt(d_0) hypersphere, so the
    |x| factor is sqrt(d_0) for every sample.
    """
    X = require_hypersphere(X)
    out = mlp_outputs(net, X)
    if out.shape[1] != 1:
        raise InvalidInputError("margins need a scalar-output network")
    y = np.asarray(Y, dtype=np.float64).ravel()
    if y.shape[0] != out.shape[0]:
        raise InvalidInputError("label count does not match the batch")
    raw = float(np.min(y * out[:, 0]))
    spec = np.array([spectral_norm(w) for w in net.weights])
    fro = np.array(
        [frobenius_norm(w) / np.sqrt(min(w.shape)) for w in net.weights]
    )
    if np.any(spec == 0.0) or np.any(fro == 0.0):
        raise DegenerateLayerError("a layer has zero norm")
    xnorm = np.sqrt(X.shape[1])
    return MarginReport(
        rho_spectral=raw / (xnorm * float(np.prod(spec))),
        rho_frobenius=raw / (xnorm * float(np.prod(fro))),
        raw_min=raw,
        spectral_norms=spec,
        frobenius_scales=fro,
    )


def init_rms_one(widths: Sequence[int], rng: RngStream, nonlinearity: str = "scaled-relu") -> MlpNet:
    """Gaussian init with root-mean-square singular value near 1 per layer.

    Entry variance is 1/max(d_l, d_{l-1}), which makes
    E ||W_l||_F^2 = min(d_l, d_{l-1}) — the number of singular values —
    whatever the layer's aspect ratio. (Plain 1/fan-in agrees on square
    and output layers but inflates fat input layers by d_l/d_{l-1}.)
    widths lists d_0 .. d_L. Reproducible given the stream key.
    """
    widths = [int(d) for d in widths]
    if len(widths) < 2 or any(d <= 0 for d in widths):
        raise InvalidInputError("widths must list at least d_0, d_1 and be positive")
    gen = rng.generator
    ws = [
        gen.standard_normal((widths[l + 1], widths[l]))
        / np.sqrt(max(widths[l], widths[l + 1]))
        for l in range(len(widths) - 1)
    ]
    return MlpNet(ws, nonlinearity)


@dataclass
class TrainResult:
    trajectory: list  # (step, loss, eta) records; loss measured before the step
    net: MlpNet
    diverged: bool = False
    final_loss: Optional[float] = None
    fitted: Optional[bool] = None


def train_architecture_aware(
    net: MlpNet,
    X,
    Y,
    steps: int,
    flavour: str = "conditioned",
    eta: Optional[float] = None,
    depth_scale: bool = True,
    batch_size: Optional[int] = None,
    rng: Optional[RngStream] = None,
) -> TrainResult:
    """Square-loss training with the architecture-aware update.

    ``eta=None`` recomputes the flavour's closed-form log learning rate
    every step; a float holds it constant. ``depth_scale=False`` drops
    the 1/L factor (lesion used by the transfer experiment; requires a
    fixed eta). Divergence (non-finite loss) halts the run and is
    recorded on the result rather than raised.
    """
    X = require_hypersphere(X)
    Yfull = np.asarray(Y, dtype=np.float64)
    m = X.shape[0]
    if batch_size is not None and (batch_size <= 0 or batch_size > m):
        raise InvalidInputError("batch size must be in 1..m")
    if batch_size is not None and batch_size < m and rng is None:
        raise InvalidInputError("minibatch training needs an rng for the batches")

    weights = [w.copy() for w in net.weights]
    trajectory = []
    for step in range(steps):
        if batch_size is None or batch_size == m:
            Xb, Yb = X, Yfull
        else:
            idx = rng.generator.choice(m, size=batch_size, replace=False)
            Xb, Yb = X[idx], Yfull[idx]
        current = MlpNet(weights, net.nonlinearity)
        loss = loss_eval(current, Xb, Yb, "square")
        if not np.isfinite(loss):
            trajectory.append((step, loss, None))
            return TrainResult(trajectory, current, diverged=True)
        grads = mlp_gradient(current, Xb, Yb, "square")
        step_eta = eta
        if step_eta is None:
            try:
                step_eta = closed_form_eta(weights, grads, Yb, Xb.shape[0], flavour)
            except ZeroGradientSignal:
                trajectory.append((step, loss, None))
                continue
        weights = architecture_aware_update(
            weights, grads, Yb, Xb.shape[0], flavour, eta=step_eta,
            depth_scale=depth_scale,
        )
        trajectory.append((step, loss, step_eta))
        if not all(np.isfinite(w).all() for w in weights):
            return TrainResult(trajectory, MlpNet(weights, net.nonlinearity), diverged=True)
    return TrainResult(trajectory, MlpNet(weights, net.nonlinearity))


def train_margin_projected(
    net: MlpNet,
    X,
    Y,
    gamma: float,
    steps: int,
    radii: Optional[Sequence[float]] = None,
    eta: Optional[float] = None,
    fit_tol: Optional[float] = None,
) -> TrainResult:
    """Margin-controlled training: fit rescaled labels gamma * Y under a
    fixed Frobenius-norm budget per layer.

    Minimises square loss against gamma * Y with the conditioned
    architecture-aware update, rescaling every weight matrix onto its
    Frobenius sphere (radius = its initial norm unless ``radii`` is
    given) after each step. The achieved Frobenius-normalised margin is
    then governed by gamma. A final square loss above ``fit_tol``
    (default 0.05 * gamma^2) flags the result as non-interpolating and
    emits :class:`NonInterpolationWarning`.
    """
    if gamma < 0.0:
        raise InvalidInputError("gamma must be nonnegative")
    X = require_hypersphere(X)
    y = np.asarray(Y, dtype=np.float64).ravel()
    targets = gamma * y
    m = X.shape[0]
    weights = [w.copy() for w in net.weights]
    if radii is None:
        radii = [frobenius_norm(w) for w in weights]
    radii = [float(r) for r in radii]
    if len(radii) != len(weights) or any(r <= 0.0 for r in radii):
        raise InvalidInputError("need one positive radius per layer")
    if fit_tol is None:
        fit_tol = 0.05 * gamma**2

    trajectory = []
    for step in range(steps):
        current = MlpNet(weights, net.nonlinearity)
        loss = loss_eval(current, X, targets, "square")
        if not np.isfinite(loss):
            return TrainResult(trajectory, current, diverged=True)
        grads = mlp_gradient(current, X, targets, "square")
        step_eta = eta
        if step_eta is None:
            try:
                step_eta = closed_form_eta(weights, grads, targets, m, "conditioned")
            except ZeroGradientSignal:
                trajectory.append((step, loss, None))
                break
        weights = architecture_aware_update(
            weights, grads, targets, m, "conditioned", eta=step_eta
        )
        weights = [
            w * (r / frobenius_norm(w)) for w, r in zip(weights, radii)
        ]
        trajectory.append((step, loss, step_eta))

    final = MlpNet(weights, net.nonlinearity)
    final_loss = loss_eval(final, X, targets, "square")
    result = TrainResult(trajectory, final)
    result.final_loss = final_loss
    result.fitted = bool(final_loss <= fit_tol)
    if not result.fitted:
        warnings.warn(
            f"margin-projected run ended at square loss {final_loss:.4g} "
            f"above fit tolerance {fit_tol:.4g}",
            NonInterpolationWarning,
        )
    return result


# ---------------------------------------------------------------------------
# checkpoint format: magic "PMM1", big-endian throughout; then u32 version,
# u32 layer count L, u32 widths d_0..d_L, u32 nonlinearity code, then each
# layer's row-major float64 payload in forward order.

_MAGIC = b"PMM1"
_NONLIN_CODE = {"scaled-relu": 0, "relu": 1, "identity": 2}
_NONLIN_NAME = {v: k for k, v in _NONLIN_CODE.items()}


def save_checkpoint(net: MlpNet, path) -> None:
    """Write the network to a versioned binary checkpoint."""
    widths = net.widths
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack(">II", 1, len(net.weights)))
        fh.write(struct.pack(f">{len(widths)}I", *widths))
        fh.write(struct.pack(">I", _NONLIN_CODE[net.nonlinearity]))
        for w in net.weights:
            fh.write(np.ascontiguousarray(w, dtype=">f8").tobytes())


def load_checkpoint(path) -> MlpNet:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise InvalidInputError("not a checkpoint file (bad magic)")
    version, depth = struct.unpack_from(">II", blob, 4)
    if version != 1:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    offset = 12
    widths = struct.unpack_from(f">{depth + 1}I", blob, offset)
    offset += 4 * (depth + 1)
    (code,) = struct.unpack_from(">I", blob, offset)
    offset += 4
    if code not in _NONLIN_NAME:
        raise InvalidInputError(f"unknown nonlinearity code {code}")
    weights = []
    for l in range(depth):
        n = widths[l + 1] * widths[l]
        end = offset + 8 * n
        if end > len(blob):
            raise InvalidInputError("checkpoint truncated")
        arr = np.frombuffer(blob[offset:end], dtype=">f8").astype(np.float64)
        weights.append(arr.reshape(widths[l + 1], widths[l]))
        offset = end
    if offset != len(blob):
        raise InvalidInputError("checkpoint has trailing bytes")
    return MlpNet(weights, _NONLIN_NAME[code])
