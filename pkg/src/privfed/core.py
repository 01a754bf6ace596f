"""Domain types shared by every module: datasets, losses, run configuration
and results.

Conventions used throughout the package:

* a model point is a finite 1-d float64 array of length d;
* the Lipschitz constant of the smooth loss part is operationalized as the
  gradient clip threshold (per-sample gradients are clipped to norm <= L, and
  every sensitivity formula uses that same L);
* all value types here are treated as immutable; arrays they hold must not be
  mutated after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "GAUSSIAN", "SHUFFLE", "NONE", "MECHANISMS",
    "clip_gradient", "as_model_point",
    "Regularizer", "PrivacyBudget", "FederatedDataset", "CompositeLoss",
    "Availability", "RunConfig", "RoundRecord", "RunResult",
]

# mechanism tags ({IsrlGaussian | ShuffleBinomial | NonPrivate})
GAUSSIAN = "gaussian"
SHUFFLE = "shuffle"
NONE = "none"
MECHANISMS = (GAUSSIAN, SHUFFLE, NONE)

# "inside the ball" comparisons allow a few ulp so clipping is idempotent
_CLIP_SLACK = 1.0 + 4.0 * np.finfo(np.float64).eps


def as_model_point(w, d: int | None = None) -> np.ndarray:
    """Validate and return w as a finite float64 vector."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"model point must be a 1-d vector, got shape {w.shape}")
    if d is not None and w.shape[0] != d:
        raise ValueError(f"model point has length {w.shape[0]}, expected {d}")
    if not np.all(np.isfinite(w)):
        raise ValueError("model point has non-finite entries")
    return w


def clip_gradient(g: np.ndarray, L: float) -> np.ndarray:
    """Project g onto the L2 ball of radius L: g if ||g|| <= L else g*(L/||g||)."""
    if L <= 0:
        raise ValueError("clip threshold L must be > 0")
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise ValueError("cannot clip a non-finite gradient")
    norm = float(np.linalg.norm(g))
    if norm <= L * _CLIP_SLACK:
        return g
    return g * (L / norm)


def clip_rows(G: np.ndarray, L: float) -> np.ndarray:
    """Row-wise version of clip_gradient for an (m, d) stack of gradients."""
    if not np.all(np.isfinite(G)):
        raise ValueError("cannot clip non-finite gradients")
    norms = np.linalg.norm(G, axis=1)
    scale = np.ones_like(norms)
    over = norms > L * _CLIP_SLACK
    scale[over] = L / norms[over]
    return G * scale[:, None]


@dataclass(frozen=True)
class Regularizer:
    """The proximable part f1 of the composite loss.

    Supported variants: Zero, L1(lam), BallIndicator(radius) and
    L1PlusBall(lam, radius).  `lam` >= 0 and `radius` > 0 (infinite radius
    means no ball constraint).
    """

    lam: float = 0.0
    radius: float = math.inf

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("l1 weight must be >= 0")
        if not self.radius > 0:
            raise ValueError("ball radius must be > 0")

    @classmethod
    def zero(cls) -> "Regularizer":
        return cls()

    @classmethod
    def l1(cls, lam: float) -> "Regularizer":
        return cls(lam=lam)

    @classmethod
    def ball(cls, radius: float) -> "Regularizer":
        return cls(radius=radius)

    @classmethod
    def l1_ball(cls, lam: float, radius: float) -> "Regularizer":
        return cls(lam=lam, radius=radius)

    @property
    def kind(self) -> str:
        has_l1 = self.lam > 0
        has_ball = math.isfinite(self.radius)
        if has_l1 and has_ball:
            return "l1_ball"
        if has_l1:
            return "l1"
        if has_ball:
            return "ball"
        return "zero"

    def value(self, w: np.ndarray) -> float:
        """f1(w); +inf outside the ball for indicator variants."""
        v = self.lam * float(np.sum(np.abs(w))) if self.lam > 0 else 0.0
        if math.isfinite(self.radius):
            # small tolerance: prox output may sit on the boundary up to rounding
            if float(np.linalg.norm(w)) > self.radius * (1 + 1e-9):
                return math.inf
        return v


@dataclass(frozen=True)
class PrivacyBudget:
    """(epsilon, delta) target. The Gaussian-mechanism path additionally needs
    epsilon <= 2 ln(1/delta); that precondition is checked at plan time."""

    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if not (0.0 < self.delta < 0.5):
            raise ValueError("delta must lie in (0, 1/2)")


class FederatedDataset:
    """N silos times n records each, stored as a dense (N, n, d) array.

    Labels are optional so the same type serves regression and
    classification; when present they form an (N, n) array.
    """

    def __init__(self, features: np.ndarray, labels: Optional[np.ndarray] = None):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 3:
            raise ValueError("features must have shape (N, n, d)")
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise ValueError("need N >= 1 silos and n >= 1 records per silo")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite values")
        if labels is not None:
            labels = np.asarray(labels, dtype=np.float64)
            if labels.shape != features.shape[:2]:
                raise ValueError("labels must have shape (N, n)")
            if not np.all(np.isfinite(labels)):
                raise ValueError("labels contain non-finite values")
        self.features = features
        self.labels = labels

    @property
    def n_silos(self) -> int:
        return self.features.shape[0]

    @property
    def records_per_silo(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    def silo(self, i: int):
        """(features, labels-or-None) of silo i."""
        return self.features[i], (None if self.labels is None else self.labels[i])

    def all_records(self):
        feats = self.features.reshape(-1, self.n_features)
        labels = None if self.labels is None else self.labels.reshape(-1)
        return feats, labels

    def replace_record(self, silo: int, j: int, feat: np.ndarray,
                       label: float | None = None) -> "FederatedDataset":
        """Copy with one record swapped (adjacency harness helper)."""
        feats = self.features.copy()
        feats[silo, j] = feat
        labels = None if self.labels is None else self.labels.copy()
        if labels is not None and label is not None:
            labels[silo, j] = label
        return FederatedDataset(feats, labels)


@dataclass(frozen=True)
class CompositeLoss:
    """f(w, x) = f0(w, x) + f1(w): a smooth per-sample part with constants
    plus a proximable regularizer.

    `f0_values(w, X, y)` returns per-sample losses (m,), `f0_grads(w, X, y)`
    per-sample gradients (m, d); y may be None for unlabeled losses.
    `lipschitz_L` doubles as the clip threshold: after clipping, per-sample
    gradients satisfy ||grad|| <= L exactly.
    """

    f0_values: Callable
    f0_grads: Callable
    lipschitz_L: float
    smooth_beta: float
    f1: Regularizer = field(default_factory=Regularizer.zero)
    name: str = "loss"

    def __post_init__(self):
        if not self.lipschitz_L > 0:
            raise ValueError("lipschitz_L must be > 0")
        if not self.smooth_beta > 0:
            raise ValueError("smooth_beta must be > 0")

    def with_clip(self, clip: float) -> "CompositeLoss":
        return replace(self, lipschitz_L=float(clip))

    # -- per-batch oracles -------------------------------------------------

    def per_sample_grads(self, w, feats, labels) -> np.ndarray:
        return np.asarray(self.f0_grads(w, feats, labels), dtype=np.float64)

    def clipped_grads(self, w, feats, labels) -> np.ndarray:
        return clip_rows(self.per_sample_grads(w, feats, labels), self.lipschitz_L)

    def clipped_grad_mean(self, w, feats, labels) -> np.ndarray:
        return self.clipped_grads(w, feats, labels).mean(axis=0)

    def clipped_diff_mean(self, w_new, w_old, feats, labels) -> np.ndarray:
        """Mean over the batch of clip(grad(w_new)) - clip(grad(w_old))."""
        return (self.clipped_grads(w_new, feats, labels)
                - self.clipped_grads(w_old, feats, labels)).mean(axis=0)

    def mean_value(self, w, feats, labels) -> float:
        return float(np.mean(self.f0_values(w, feats, labels)))

    # -- whole-dataset oracles ----------------------------------------------

    def empirical_risk(self, w, dataset: FederatedDataset) -> float:
        feats, labels = dataset.all_records()
        return self.mean_value(w, feats, labels) + self.f1.value(w)

    def full_grad(self, w, dataset: FederatedDataset) -> np.ndarray:
        """Unclipped empirical gradient of f0 over all N*n records."""
        feats, labels = dataset.all_records()
        return self.per_sample_grads(w, feats, labels).mean(axis=0)

    def full_clipped_grad(self, w, dataset: FederatedDataset) -> np.ndarray:
        feats, labels = dataset.all_records()
        return self.clipped_grad_mean(w, feats, labels)

    def silo_grad(self, w, dataset: FederatedDataset, i: int) -> np.ndarray:
        feats, labels = dataset.silo(i)
        return self.per_sample_grads(w, feats, labels).mean(axis=0)


@dataclass(frozen=True)
class Availability:
    """Which silos participate each round.

    Fixed(M): a uniformly random size-M subset per round.  Random(choices):
    M_r drawn uniformly from `choices` each round, then a uniform subset of
    that size (App-style random silo counts).
    """

    fixed: Optional[int] = None
    choices: Optional[tuple] = None

    def __post_init__(self):
        if self.fixed is not None and self.choices is not None:
            raise ValueError("give either a fixed M or a set of choices")
        if self.fixed is not None and self.fixed < 1:
            raise ValueError("M must be >= 1")
        if self.choices is not None:
            if len(self.choices) == 0 or any(m < 1 for m in self.choices):
                raise ValueError("availability choices must be positive")

    @classmethod
    def all(cls) -> "Availability":
        return cls()

    @classmethod
    def fixed_m(cls, m: int) -> "Availability":
        return cls(fixed=m)

    @classmethod
    def random_m(cls, choices: Sequence[int]) -> "Availability":
        return cls(choices=tuple(int(m) for m in choices))

    def resolve_m(self, n_silos: int) -> int:
        """Fixed M (or N when unset); random mode has no single M."""
        m = n_silos if self.fixed is None else self.fixed
        if m > n_silos:
            raise ValueError(f"M={m} exceeds the number of silos N={n_silos}")
        return m

    def min_m(self, n_silos: int) -> int:
        if self.choices is not None:
            return min(self.choices)
        return self.resolve_m(n_silos)

    def expected_inverse_m(self, n_silos: int) -> float:
        """E[1/M_r]; the harmonic-mean convention 1/M = E(1/M_r)."""
        if self.choices is not None:
            return float(np.mean([1.0 / m for m in self.choices]))
        return 1.0 / self.resolve_m(n_silos)

    def draw(self, stream, n_silos: int) -> np.ndarray:
        """Sorted indices of this round's available silos."""
        if self.choices is not None:
            for m in self.choices:
                if m > n_silos:
                    raise ValueError(f"availability choice {m} exceeds N={n_silos}")
            m = int(self.choices[stream.choice_index(len(self.choices))])
        else:
            m = self.resolve_m(n_silos)
        if m == n_silos:
            return np.arange(n_silos)
        return stream.subset(n_silos, m)


@dataclass(frozen=True)
class RunConfig:
    """Everything an optimizer run needs besides the problem itself.

    Symbols follow the usual round-structured FL conventions: R rounds,
    E epochs of Q inner steps, S restarts, batch sizes K/K1/K2, phase length
    q and step size eta.  `clip` overrides the loss's clip threshold; `eta`
    of None selects each algorithm's default step size.
    """

    rounds: int = 1
    epochs: int = 1
    epoch_length: Optional[int] = None  # Q; derived as floor(n/K) when None
    restarts: int = 1
    k: Optional[int] = None             # K (SVRG inner / baselines)
    k1: Optional[int] = None            # SPIDER anchor batch, default n
    k2: Optional[int] = None            # SPIDER diff batch, default n
    q: int = 1
    eta: Optional[float] = None
    availability: Availability = field(default_factory=Availability.all)
    clip: Optional[float] = None
    seed: int = 0
    privacy: Optional[PrivacyBudget] = None
    mechanism: str = GAUSSIAN
    w0: Optional[np.ndarray] = None
    local_steps: int = 1
    spider_slope: bool = True           # False = the "sigma2 = inf" path
    auto_config: bool = False
    delta_hat: Optional[float] = None   # user-supplied bound on F(w0) - F*
    diagnostics: bool = False
    record_iterates: bool = False

    def __post_init__(self):
        for name in ("rounds", "epochs", "restarts", "q", "local_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("k", "k1", "k2", "epoch_length"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1 when given")
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip must be > 0")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism != NONE and self.privacy is None:
            raise ValueError("a PrivacyBudget is required unless mechanism='none'")

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class RoundRecord:
    """One per-round row of a run trajectory.

    `wall_ms` is a deterministic simulated cost (per-sample gradient
    evaluations and protocol messages at fixed nominal unit costs), so reruns
    with the same seed are bit-identical; real timing lives in the harness
    sidecar.
    """

    round: int
    train_risk: float
    excess_risk: Optional[float]
    grad_mapping_norm_sq: float
    epsilon_spent: float
    wall_ms: float


@dataclass
class RunResult:
    algorithm: str
    records: list            # RoundRecords ordered by round
    final_model: np.ndarray
    w_priv: np.ndarray
    w_priv_index: int        # position in the recorded candidate-iterate list
    noise_plan: object = None
    diagnostics: object = None
    iterates: Optional[list] = None

    def validate(self):
        rounds = [rec.round for rec in self.records]
        if rounds != sorted(rounds):
            raise AssertionError("records must be ordered by round")
        eps = [rec.epsilon_spent for rec in self.records]
        if any(b < a for a, b in zip(eps, eps[1:])):
            raise AssertionError("epsilon_spent must be non-decreasing")
        return self
