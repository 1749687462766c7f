"""Generalisation-bound calculators.

Covers the three classical templates (VC, uniform stability, PAC-Bayes
with binary-KL inversion) and the Gaussian-process-classification
specialisations built on the Gaussian orthant probability P_Y and the
kernel complexity A(k, X, Y). Everything probability-shaped is handled
in log space: P_Y decays like 2^-m and underflows float64 well before
the sample sizes of interest.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import xlogy

from .errors import InvalidInputError
from .kernels import GramBundle
from .numerics import RngStream, sign_pm1

__all__ = [
    "BoundInputs",
    "BoundReport",
    "OrthantEstimate",
    "vc_bound",
    "stability_bound",
    "kl_bernoulli",
    "pac_bayes_cap",
    "kl_inverse_bound",
    "orthant_prob",
    "kernel_complexity",
    "gp_pac_bayes_bounds",
    "kernel_bpm_bounds",
    "kl_values",
]


@dataclass
class BoundInputs:
    """Ingredients for the classical bounds; unused fields stay None."""

    m: int
    delta: float
    train_error: Optional[float] = None
    log_shatter: Optional[float] = None  # log N(f, 2m)
    beta: Optional[float] = None  # uniform stability
    kl: Optional[float] = None  # KL(Q || P)

    def __post_init__(self):
        if self.m < 1:
            raise InvalidInputError("m must be positive")
        if not 0.0 < self.delta < 1.0:
            raise InvalidInputError("delta must lie in (0, 1)")
        if self.train_error is not None and not 0.0 <= self.train_error <= 1.0:
            raise InvalidInputError("train error must lie in [0, 1]")


def _need(inputs: BoundInputs, *names):
    for name in names:
        if getattr(inputs, name) is None:
            raise InvalidInputError(f"bound needs the {name!r} field")


def vc_bound(inputs: BoundInputs) -> float:
    """train + sqrt((8/m) (log N(f, 2m) + log(4/delta)))."""
    _need(inputs, "train_error", "log_shatter")
    complexity = math.sqrt(
        (8.0 / inputs.m) * (inputs.log_shatter + math.log(4.0 / inputs.delta))
    )
    return inputs.train_error + complexity


def stability_bound(inputs: BoundInputs) -> float:
    """train + 2 beta + (4 m beta + 1) sqrt(log(1/delta) / (2m))."""
    _need(inputs, "train_error", "beta")
    if inputs.beta < 0:
        raise InvalidInputError("stability beta must be nonnegative")
    tail = (4.0 * inputs.m * inputs.beta + 1.0) * math.sqrt(
        math.log(1.0 / inputs.delta) / (2.0 * inputs.m)
    )
    return inputs.train_error + 2.0 * inputs.beta + tail


def kl_bernoulli(p: float, q: float) -> float:
    """Binary KL divergence kl(p || q) with the 0 log 0 = 0 convention."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise InvalidInputError("kl_bernoulli needs p, q in [0, 1]")
    val = (
        xlogy(p, p)
        - xlogy(p, q)
        + xlogy(1.0 - p, 1.0 - p)
        - xlogy(1.0 - p, 1.0 - q)
    )
    # a divergence cannot be negative; q near p leaves rounding noise
    return max(float(val), 0.0)


def pac_bayes_cap(kl: float, m: int, delta: float) -> float:
    """The PAC-Bayes budget (KL + log(2m/delta)) / (m - 1)."""
    if m < 2:
        raise InvalidInputError("PAC-Bayes cap needs m >= 2")
    if not 0.0 < delta < 1.0:
        raise InvalidInputError("delta must lie in (0, 1)")
    if kl < 0:
        raise InvalidInputError("KL must be nonnegative")
    return (kl + math.log(2.0 * m / delta)) / (m - 1)


def kl_inverse_bound(train_error: float, cap: float) -> float:
    """Largest q in [train_error, 1] with kl(train_error || q) <= cap.

    Bisection on q: the binary KL is monotone increasing in q above
    train_error. 200 halvings of the unit interval land far below the
    1e-10 target. cap = 0 returns train_error; train_error = 0 returns
    1 - exp(-cap) (since kl(0 || q) = -log(1 - q)).
    """
    if not 0.0 <= train_error <= 1.0:
        raise InvalidInputError("train error must lie in [0, 1]")
    if cap < 0.0:
        raise InvalidInputError("cap must be nonnegative")
    if cap == 0.0:
        return train_error
    lo, hi = train_error, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kl_bernoulli(train_error, mid) <= cap:
            lo = mid
        else:
            hi = mid
    return lo


# ---------------------------------------------------------------------------
# Gaussian orthant probability


@dataclass
class OrthantEstimate:
    """log P_Y with a delta-method standard error on the log scale."""

    log_prob: float
    se_log: float
    n: int
    method: str  # "monte-carlo" | "exact-diagonal"
    hits: int = 0
    zero_hits: bool = False


_ORTHANT_CHUNK = 1 << 15


def _orthant_chunk_hits(chol, Y, size, stream):
    G = stream.generator.standard_normal((size, chol.shape[0]))
    draws = G @ chol.T
    return int(np.sum(np.all(sign_pm1(draws) == Y[None, :], axis=1)))


def orthant_prob(
    gram: GramBundle,
    Y,
    n_samples: int = 10**6,
    rng: Optional[RngStream] = None,
    workers: int = 1,
) -> OrthantEstimate:
    """Estimate log P[sign f_X = Y] for f_X ~ Normal(0, K_XX).

    A diagonal Gram short-circuits to the exact value -m log 2 (the
    coordinates are independent and symmetric, so each sign constraint
    costs an exact factor of 2 whatever the variances are). Otherwise
    plain Monte Carlo over Cholesky draws, chunked so that the work
    decomposition — and hence the estimate — is identical for every
    worker count: chunk i always consumes substream i.

    Zero hits return the rule-of-three upper-confidence value log(3/n)
    with ``zero_hits`` set; callers must treat that as a bound, not an
    estimate.
    """
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.shape[0] != gram.m or not np.all(np.abs(Y) == 1.0):
        raise InvalidInputError("Y must be a +-1 vector of length m")
    K = gram.K
    diag = np.diag(K)
    off = K - np.diag(diag)
    if np.max(np.abs(off)) <= 1e-12 * max(float(np.max(diag)), 1e-300):
        return OrthantEstimate(
            log_prob=-gram.m * math.log(2.0),
            se_log=0.0,
            n=0,
            method="exact-diagonal",
        )
    if n_samples < 10**4:
        raise InvalidInputError("monte-carlo orthant estimation needs >= 1e4 samples")
    if rng is None:
        raise InvalidInputError("monte-carlo orthant estimation needs an rng")

    sizes = []
    left = n_samples
    while left > 0:
        sizes.append(min(_ORTHANT_CHUNK, left))
        left -= _ORTHANT_CHUNK
    streams = [rng.substream("orthant", i) for i in range(len(sizes))]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            counts = list(
                pool.map(
                    lambda args: _orthant_chunk_hits(gram.chol, Y, args[0], args[1]),
                    zip(sizes, streams),
                )
            )
    else:
        counts = [
            _orthant_chunk_hits(gram.chol, Y, size, stream)
            for size, stream in zip(sizes, streams)
        ]
    hits = int(sum(counts))

    if hits == 0:
        return OrthantEstimate(
            log_prob=math.log(3.0) - math.log(n_samples),
            se_log=0.0,
            n=n_samples,
            method="monte-carlo",
            hits=0,
            zero_hits=True,
        )
    p_hat = hits / n_samples
    se_p = math.sqrt(p_hat * (1.0 - p_hat) / n_samples)
    return OrthantEstimate(
        log_prob=math.log(p_hat),
        se_log=se_p / p_hat,
        n=n_samples,
        method="monte-carlo",
        hits=hits,
    )


def kernel_complexity(gram: GramBundle, Y) -> float:
    """A(k,X,Y) = m(log2 - 1/2) + |K|^(1/m) [(1/2 - 1/pi) tr K^-1 + (1/pi) Y K^-1 Y].

    |K|^(1/m) is exp(logdet/m), so the value survives determinants that
    would over- or underflow as plain products.
    """
    Y = np.asarray(Y, dtype=np.float64).ravel()
    if Y.shape[0] != gram.m or not np.all(np.abs(Y) == 1.0):
        raise InvalidInputError("Y must be a +-1 vector of length m")
    scale = math.exp(gram.logdet / gram.m)
    quad = float(Y @ gram.solve(Y))
    trace_inv = gram.trace_inverse()
    return gram.m * (math.log(2.0) - 0.5) + scale * (
        (0.5 - 1.0 / math.pi) * trace_inv + quad / math.pi
    )


# ---------------------------------------------------------------------------
# Bound reports


@dataclass
class BoundReport:
    """Named bound values with their inputs, JSON-serialisable."""

    entries: dict = field(default_factory=dict)

    def add(self, name: str, value: float, inputs: dict, vacuous: Optional[bool] = None):
        if vacuous is None:
            vacuous = not value < 1.0
        self.entries[name] = {
            "value": float(value),
            "inputs": inputs,
            "vacuous_flag": bool(vacuous),
        }

    def __getitem__(self, name: str) -> dict:
        return self.entries[name]

    def value(self, name: str) -> float:
        return self.entries[name]["value"]

    def to_json(self) -> dict:
        return dict(self.entries)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _gibbs_bound_value(kl: float, m: int, delta: float) -> float:
    # Realisable PAC-Bayes shape: 1 - exp(-cap). Always below 1.
    return 1.0 - math.exp(-pac_bayes_cap(kl, m, delta))


def gp_pac_bayes_bounds(
    gram: GramBundle,
    Y,
    orthant: OrthantEstimate,
    m: int,
    delta: float,
) -> BoundReport:
    """The three simultaneous Gibbs-error bounds for GP classification.

    "gibbs-orthant" uses the exact posterior's KL = log(1/P_Y);
    "gibbs-complexity" replaces it with the closed-form upper bound
    A(k,X,Y) (same posterior, weaker bound); "gibbs-spherised" certifies
    the spherised posterior, whose KL equals A exactly.
    """
    if m != gram.m:
        raise InvalidInputError("m does not match the Gram bundle")
    kl_gp = -orthant.log_prob
    a_val = kernel_complexity(gram, Y)
    report = BoundReport()
    common = {"m": m, "delta": delta}
    report.add(
        "gibbs-orthant",
        _gibbs_bound_value(kl_gp, m, delta),
        {**common, "kl": kl_gp, "posterior": "gp", "kl_source": "orthant",
         "orthant_method": orthant.method, "orthant_se_log": orthant.se_log,
         "orthant_zero_hits": orthant.zero_hits},
    )
    report.add(
        "gibbs-complexity",
        _gibbs_bound_value(a_val, m, delta),
        {**common, "kl": a_val, "posterior": "gp", "kl_source": "kernel-complexity"},
    )
    report.add(
        "gibbs-spherised",
        _gibbs_bound_value(a_val, m, delta),
        {**common, "kl": a_val, "posterior": "spherised",
         "kl_source": "kernel-complexity"},
    )
    return report


def kernel_bpm_bounds(
    gram: GramBundle,
    Y,
    orthant: OrthantEstimate,
    m: int,
    delta: float,
) -> BoundReport:
    """Factor-e aggregation bounds: e x each Gibbs bound, vacuous when >= 1."""
    gibbs = gp_pac_bayes_bounds(gram, Y, orthant, m, delta)
    report = BoundReport()
    for name, entry in gibbs.entries.items():
        bpm_name = name.replace("gibbs", "bpm")
        inputs = dict(entry["inputs"])
        inputs["gibbs_bound"] = entry["value"]
        report.add(bpm_name, math.e * entry["value"], inputs)
    return report


def kl_values(gram: GramBundle, Y, orthant: OrthantEstimate):
    """(kl_gp, kl_sph) = (log 1/P_Y, A(k,X,Y)).

    The exact posterior's KL can never exceed the spherised one's; a
    Monte-Carlo orthant estimate violating that beyond 3 standard errors
    means the estimate (or the Gram) is broken, so it raises.
    """
    kl_gp = -orthant.log_prob
    kl_sph = kernel_complexity(gram, Y)
    if not orthant.zero_hits and kl_gp - 3.0 * orthant.se_log > kl_sph:
        raise InvalidInputError(
            f"orthant estimate gives KL {kl_gp:.4f} above the complexity "
            f"value {kl_sph:.4f} beyond Monte-Carlo slack"
        )
    return kl_gp, kl_sph
