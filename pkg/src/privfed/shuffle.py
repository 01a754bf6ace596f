"""Shuffle-model vector summation: fixed-point encoding with binomial noise
per scalar, applied coordinate-wise to vectors.

Each contributor encodes a scalar x in [0, L] as g*x/L rounded stochastically,
adds Binomial(b, p) ones, and reports a 0/1 vector of length g + b.  The
analyzer only ever sums the bits, and a shuffler's permutation leaves that sum
invariant, so messages are stored as their ones-count.  This simulator
demonstrates the protocol's utility (unbiasedness, variance); it is NOT a
hardened deployment - privacy holds by the protocol's analysis, not by any
fidelity of this in-process simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PrivacyBudget
from .privacy import InfeasibleConfigError
from .rng import Stream

__all__ = [
    "P1DParams", "ScalarMessage",
    "randomize_scalar", "analyze_scalar", "randomize_vector", "analyze_vector",
    "randomize_matrix", "analyze_counts",
    "choose_params", "estimator_variance_bound",
]

_GRANULARITY_CAP = 2 ** 16


@dataclass(frozen=True)
class P1DParams:
    """Scalar-protocol parameters: fixed-point granularity g, binomial trial
    count b and bias p."""

    g: int
    b: int
    p: float

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("g must be >= 1")
        if self.b < 0:
            raise ValueError("b must be >= 0")
        if not (0.0 < self.p < 0.5):
            raise ValueError("p must lie in (0, 1/2)")


@dataclass(frozen=True)
class ScalarMessage:
    """Compact encoding of the {0,1}^(g+b) report: the number of ones."""

    ones_count: int

    def validate(self, params: P1DParams) -> "ScalarMessage":
        if not (0 <= self.ones_count <= params.g + params.b):
            raise ValueError(
                f"ones_count {self.ones_count} outside [0, {params.g + params.b}]")
        return self


def _check_scalar_range(x: float, L: float) -> float:
    if not (L > 0 and math.isfinite(L)):
        raise ValueError("range L must be positive and finite")
    if not math.isfinite(x):
        raise ValueError("input must be finite")
    if x < -1e-12 * L or x > L * (1.0 + 1e-12):
        raise ValueError(f"scalar {x} outside [0, {L}]")
    return min(max(x, 0.0), L)


def randomize_scalar(x: float, L: float, params: P1DParams,
                     stream: Stream) -> ScalarMessage:
    """Encode one scalar: floor(x*g/L) + Bernoulli(frac) + Binomial(b, p) ones."""
    x = _check_scalar_range(float(x), L)
    scaled = x * params.g / L
    base = int(math.floor(scaled))
    if base > params.g:  # guard against x == L rounding up
        base = params.g
    frac = scaled - base
    eta1 = int(stream.bernoulli(np.array(frac)))
    eta2 = int(stream.binomial(params.b, params.p)) if params.b > 0 else 0
    return ScalarMessage(ones_count=base + eta1 + eta2).validate(params)


def analyze_scalar(messages: Sequence[ScalarMessage], params: P1DParams,
                   n_contributors: int, L: float) -> float:
    """Debiased sum estimate (L/g) * (sum of ones - p*b*n_contributors)."""
    total = 0
    for m in messages:
        m.validate(params)
        total += m.ones_count
    return (L / params.g) * (total - params.p * params.b * n_contributors)


def randomize_vector(x: np.ndarray, L: float, params: P1DParams,
                     stream: Stream) -> list:
    """Per-coordinate encoding of a vector with ||x|| <= L.

    Coordinate j is shifted to x_j + L (non-negative) and encoded over the
    range [0, 2L]; messages come back labeled by coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    norm = float(np.linalg.norm(x))
    if norm > L * (1.0 + 1e-9):
        raise ValueError(f"vector norm {norm} exceeds the declared bound {L}")
    return [(j, randomize_scalar(float(x[j]) + L, 2.0 * L, params, stream))
            for j in range(x.shape[0])]


def analyze_vector(messages_by_coord: Sequence[Sequence[ScalarMessage]],
                   params: P1DParams, n_contributors: int, L: float) -> np.ndarray:
    """Per-coordinate analyze over the [0, 2L] range, then re-center by
    subtracting the shift L once per contributor; unbiased for sum_i x_i."""
    counts = [len(msgs) for msgs in messages_by_coord]
    if any(c != n_contributors for c in counts):
        raise ValueError(f"expected {n_contributors} messages per coordinate, got {counts}")
    out = np.empty(len(messages_by_coord))
    for j, msgs in enumerate(messages_by_coord):
        z = analyze_scalar(msgs, params, n_contributors, 2.0 * L)
        out[j] = z - n_contributors * L
    return out


# -- batched fast path (same distribution, used by the optimizers) -----------

def randomize_matrix(X: np.ndarray, L: float, params: P1DParams,
                     stream: Stream) -> np.ndarray:
    """Vectorized randomize_vector over rows of X (m, d): returns the (m, d)
    integer ones-counts. Row norms must be <= L."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms > L * (1.0 + 1e-9)):
        raise ValueError("a contributor's vector norm exceeds the declared bound")
    shifted = np.clip(X + L, 0.0, 2.0 * L)
    scaled = shifted * (params.g / (2.0 * L))
    base = np.floor(scaled)
    np.minimum(base, params.g, out=base)
    frac = scaled - base
    eta1 = stream.bernoulli(frac)
    counts = base.astype(np.int64) + eta1
    if params.b > 0:
        counts += stream.binomial(params.b, params.p, size=X.shape)
    return counts


def analyze_counts(counts: np.ndarray, params: P1DParams, n_contributors: int,
                   L: float) -> np.ndarray:
    """Analyzer for randomize_matrix output: vector estimate of the row sum."""
    if counts.shape[0] != n_contributors:
        raise ValueError(f"expected {n_contributors} rows, got {counts.shape[0]}")
    col = counts.sum(axis=0, dtype=np.int64)
    z = (2.0 * L / params.g) * (col - params.p * params.b * n_contributors)
    return z - n_contributors * L


# -- parameter selection ------------------------------------------------------

def choose_params(budget: PrivacyBudget, n_contributors: int, d: int,
                  L: float) -> P1DParams:
    """Deterministic (g, b, p) rule for the theorem's 0 < eps <= 15 range.

    p = 1/4; per-coordinate budget eps0 = eps/(2*sqrt(2*d*ln(2/delta))),
    delta0 = delta/(2d); g = ceil(sqrt(N))*ceil(1/eps0) capped at 2^16;
    b = ceil(64*g^2*ln(4/delta0)/(eps0^2*N)).  The resulting variance is
    validated empirically against the O(d L^2 log^2(d/delta)/eps^2) clause
    (constant recorded, not asserted a priori).
    """
    eps, delta = budget.epsilon, budget.delta
    if not (0.0 < eps <= 15.0):
        raise InfeasibleConfigError("0 < epsilon <= 15 (shuffle protocol range)",
                                    f"epsilon={eps}")
    if not (0.0 < delta < 0.5):
        raise InfeasibleConfigError("0 < delta < 1/2 (shuffle protocol range)",
                                    f"delta={delta}")
    if n_contributors < 1 or d < 1:
        raise ValueError("need n_contributors >= 1 and d >= 1")
    p = 0.25
    eps0 = eps / (2.0 * math.sqrt(2.0 * d * math.log(2.0 / delta)))
    delta0 = delta / (2.0 * d)
    g = min(_GRANULARITY_CAP,
            math.ceil(math.sqrt(n_contributors)) * math.ceil(1.0 / eps0))
    b = math.ceil(64.0 * g ** 2 * math.log(4.0 / delta0)
                  / (eps0 ** 2 * n_contributors))
    return P1DParams(g=int(g), b=int(b), p=p)


def estimator_variance_bound(params: P1DParams, n_contributors: int,
                             L: float) -> float:
    """Per-coordinate variance bound (2L/g)^2 * N * (1/4 + b*p*(1-p)):
    stochastic rounding contributes at most 1/4 per message, the binomial
    noise b*p*(1-p)."""
    unit = (2.0 * L / params.g) ** 2
    return unit * n_contributors * (0.25 + params.b * params.p * (1.0 - params.p))
