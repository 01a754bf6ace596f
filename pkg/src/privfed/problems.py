"""Synthetic heterogeneous problem generators with known optima and certified
constants, a generic CSV dataset loader, and evaluation metrics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import CompositeLoss, FederatedDataset, Regularizer
from .prox import gradient_mapping
from .rng import derive_rng

__all__ = [
    "KnownOptimum", "ProblemInstance", "HeterogeneityReport", "Metrics",
    "make_quadratic", "make_least_squares", "make_logistic",
    "save_csv", "load_csv", "dataset_from_arrays",
    "evaluate", "heterogeneity", "problem_descriptor",
]


@dataclass(frozen=True)
class KnownOptimum:
    f_star: float
    minimizer: np.ndarray
    mu: float
    beta: float

    @property
    def kappa(self) -> float:
        return self.beta / self.mu


@dataclass
class ProblemInstance:
    loss: CompositeLoss
    dataset: FederatedDataset
    known: Optional[KnownOptimum] = None
    # population: callable (stream, silo, size) -> (features, labels|None)
    population: Optional[Callable] = None
    aux: dict = field(default_factory=dict)
    descriptor: dict = field(default_factory=dict)

    def validate(self):
        if self.known is not None:
            got = self.loss.empirical_risk(self.known.minimizer, self.dataset)
            if abs(got - self.known.f_star) > 1e-10 * max(1.0, abs(self.known.f_star)):
                raise AssertionError(
                    f"known optimum inconsistent: risk(minimizer)={got!r} vs f_star={self.known.f_star!r}")
        return self


@dataclass(frozen=True)
class HeterogeneityReport:
    upsilon_sq: float
    per_probe: tuple = ()


@dataclass(frozen=True)
class Metrics:
    empirical_risk: float
    grad_mapping_norm_sq: float
    excess_risk: Optional[float] = None
    population_risk: Optional[float] = None
    population_se: Optional[float] = None


# ---------------------------------------------------------------------------
# loss families
# ---------------------------------------------------------------------------

def _quadratic_loss(A: np.ndarray, L: float, beta: float,
                    f1: Regularizer) -> CompositeLoss:
    # f0(w, x) = 0.5 * (w - x)^T A (w - x)
    def values(w, X, y):
        D = w[None, :] - X
        return 0.5 * np.einsum("md,md->m", D @ A, D)

    def grads(w, X, y):
        return (w[None, :] - X) @ A

    return CompositeLoss(f0_values=values, f0_grads=grads, lipschitz_L=L,
                         smooth_beta=beta, f1=f1, name="quadratic")


def _least_squares_loss(L: float, beta: float, f1: Regularizer) -> CompositeLoss:
    # f0(w, (a, y)) = 0.5 * (a.w - y)^2
    def values(w, X, y):
        r = X @ w - y
        return 0.5 * r * r

    def grads(w, X, y):
        return (X @ w - y)[:, None] * X

    return CompositeLoss(f0_values=values, f0_grads=grads, lipschitz_L=L,
                         smooth_beta=beta, f1=f1, name="least_squares")


def _logistic_loss(L: float, beta: float, f1: Regularizer) -> CompositeLoss:
    # f0(w, (x, y)) = log(1 + exp(-y * w.x)),  y in {-1, +1}
    def values(w, X, y):
        m = -y * (X @ w)
        # stable log(1 + e^m)
        return np.where(m > 0, m + np.log1p(np.exp(-m)), np.log1p(np.exp(m)))

    def grads(w, X, y):
        m = -y * (X @ w)
        s = 1.0 / (1.0 + np.exp(-m))  # sigmoid(m)
        return (-y * s)[:, None] * X

    return CompositeLoss(f0_values=values, f0_grads=grads, lipschitz_L=L,
                         smooth_beta=beta, f1=f1, name="logistic")


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def _random_orthogonal(d: int, stream) -> np.ndarray:
    m = stream.normal((d, d))
    q, r = np.linalg.qr(m)
    return q * np.sign(np.diag(r))


def make_quadratic(N: int, n: int, d: int, mu: float, beta: float,
                   hetero_scale: float, seed: int,
                   within_scale: float = 0.5) -> ProblemInstance:
    """Strongly convex quadratic silo problems with exactly known optimum.

    Per-silo centers c_i are drawn with spread hetero_scale; records are
    c_i plus mean-centered jitter so each silo's record mean equals c_i
    exactly (hetero_scale=0 then gives zero heterogeneity).  The Hessian A
    has spectrum spanning [mu, beta] exactly, so the reported PL constant is
    lambda_min(A) and the smoothness constant lambda_max(A).
    """
    if not (0 < mu <= beta):
        raise ValueError("need 0 < mu <= beta")
    if d == 1 and mu != beta:
        raise ValueError("d=1 forces mu == beta (a single eigenvalue)")
    stream = derive_rng(seed, "gen_quadratic")
    eigs = np.linspace(mu, beta, d) if d > 1 else np.array([mu])
    Q = _random_orthogonal(d, stream)
    A = (Q * eigs) @ Q.T
    A = 0.5 * (A + A.T)

    centers = hetero_scale * stream.normal((N, d))
    jitter = within_scale * stream.normal((N, n, d))
    jitter -= jitter.mean(axis=1, keepdims=True)
    feats = centers[:, None, :] + jitter
    dataset = FederatedDataset(feats)

    xbar = feats.reshape(-1, d).mean(axis=0)
    max_dev = float(np.max(np.linalg.norm(feats.reshape(-1, d) - xbar, axis=1)))
    # clip threshold: sup gradient norm over the ball the iterates live in,
    # with a 2x margin so private noise rarely pushes trajectories into clipping
    L = 2.0 * beta * (float(np.linalg.norm(xbar)) + max_dev + 1.0)

    loss = _quadratic_loss(A, L=L, beta=beta, f1=Regularizer.zero())
    f_star = loss.mean_value(xbar, *dataset.all_records())

    def population(stream_, silo, size):
        x = centers[silo] + within_scale * stream_.normal((size, d))
        return x, None

    descriptor = {"generator": "quadratic", "N": N, "n": n, "d": d, "mu": mu,
                  "beta": beta, "hetero_scale": hetero_scale, "seed": seed,
                  "within_scale": within_scale, "L": L}
    return ProblemInstance(
        loss=loss, dataset=dataset,
        known=KnownOptimum(f_star=f_star, minimizer=xbar, mu=mu, beta=beta),
        population=population,
        aux={"A": A, "centers": centers, "xbar": xbar},
        descriptor=descriptor).validate()


def make_least_squares(N: int, n: int, d: int, rank_deficit: int,
                       seed: int, hetero_scale: float = 0.5,
                       noise_scale: float = 0.1) -> ProblemInstance:
    """Least squares with a controlled rank deficiency: PL but not strongly
    convex when rank_deficit > 0.  The PL constant is the smallest nonzero
    eigenvalue of the empirical Hessian; Fhat* comes from the pseudoinverse
    solution."""
    if not (0 <= rank_deficit < d):
        raise ValueError("rank_deficit must lie in [0, d)")
    stream = derive_rng(seed, "gen_least_squares")
    k = d - rank_deficit
    V = _random_orthogonal(d, stream)[:, :k]
    P = V @ V.T

    centers = hetero_scale * stream.normal((N, d))
    rows = (centers[:, None, :] + stream.normal((N, n, d))) @ P
    w_true = stream.normal(d)
    y = rows @ w_true + noise_scale * stream.normal((N, n))
    dataset = FederatedDataset(rows, y)

    flat = rows.reshape(-1, d)
    yflat = y.reshape(-1)
    H = flat.T @ flat / flat.shape[0]
    eigvals = np.linalg.eigvalsh(H)
    tol = max(eigvals.max(), 1.0) * 1e-10
    mu = float(eigvals[eigvals > tol].min())
    beta = float(np.max(np.einsum("md,md->m", flat, flat)))  # max ||a||^2

    w_star, *_ = np.linalg.lstsq(flat, yflat, rcond=None)
    rho_dom = 2.0 * (float(np.linalg.norm(w_star)) + 1.0)
    row_norms = np.linalg.norm(flat, axis=1)
    L = float(np.max(row_norms * (row_norms * rho_dom + np.abs(yflat)))) + 1.0

    loss = _least_squares_loss(L=L, beta=beta, f1=Regularizer.zero())
    f_star = loss.mean_value(w_star, flat, yflat)
    descriptor = {"generator": "least_squares", "N": N, "n": n, "d": d,
                  "rank_deficit": rank_deficit, "seed": seed,
                  "hetero_scale": hetero_scale, "noise_scale": noise_scale,
                  "L": L, "mu": mu, "beta": beta}
    return ProblemInstance(
        loss=loss, dataset=dataset,
        known=KnownOptimum(f_star=f_star, minimizer=w_star, mu=mu, beta=beta),
        aux={"hessian": H, "w_true": w_true, "rank": k},
        descriptor=descriptor).validate()


def make_logistic(N: int, n: int, d: int, label_by_silo: bool, radius: float,
                  seed: int, margin: float = 1.0) -> ProblemInstance:
    """Binary logistic regression constrained to a ball of the given radius.

    label_by_silo=True assigns each silo a single label and its own feature
    center (maximal heterogeneity, one class per silo; the silo optima
    genuinely conflict, so the global problem is not separable); otherwise
    all silos share one distribution and labels follow a planted logistic
    model.  The reported constants are certified on the realized data:
    beta = max ||x||^2 / 4 and L = max sigmoid(radius*||x||)*||x||.
    """
    if not radius > 0:
        raise ValueError("radius must be > 0")
    stream = derive_rng(seed, "gen_logistic")
    base = stream.normal((N, n, d)) / math.sqrt(d)
    if label_by_silo:
        labels = np.ones((N, n))
        labels[1::2] = -1.0
        silo_means = margin * stream.normal((N, d)) / math.sqrt(d)
        feats = base + silo_means[:, None, :]
    else:
        w_plant = stream.normal(d)
        w_plant *= margin / np.linalg.norm(w_plant)
        logits = base @ w_plant
        u = stream.random((N, n))
        labels = np.where(u < 1.0 / (1.0 + np.exp(-logits)), 1.0, -1.0)
        feats = base
    dataset = FederatedDataset(feats, labels)

    norms = np.linalg.norm(feats.reshape(-1, d), axis=1)
    beta = float(np.max(norms) ** 2 / 4.0)
    L = float(np.max(norms / (1.0 + np.exp(-radius * norms))))
    loss = _logistic_loss(L=L, beta=beta, f1=Regularizer.ball(radius))

    def population(stream_, silo, size):
        x = stream_.normal((size, d)) / math.sqrt(d)
        if label_by_silo:
            y = np.full(size, 1.0 if silo % 2 == 0 else -1.0)
            x = x + silo_means[silo][None, :]
        else:
            logits_ = x @ w_plant
            y = np.where(stream_.random(size) < 1.0 / (1.0 + np.exp(-logits_)), 1.0, -1.0)
        return x, y

    descriptor = {"generator": "logistic", "N": N, "n": n, "d": d,
                  "label_by_silo": label_by_silo, "radius": radius,
                  "seed": seed, "margin": margin, "L": L, "beta": beta}
    return ProblemInstance(loss=loss, dataset=dataset, population=population,
                           aux={"radius": radius}, descriptor=descriptor)


# ---------------------------------------------------------------------------
# CSV dataset format: silo_id, f0, ..., f{d-1} [, label]
# ---------------------------------------------------------------------------

def save_csv(dataset: FederatedDataset, path) -> None:
    d = dataset.n_features
    header = ["silo_id"] + [f"f{j}" for j in range(d)]
    if dataset.labels is not None:
        header.append("label")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n_silos):
            feats, labels = dataset.silo(i)
            for j in range(dataset.records_per_silo):
                row = [str(i)] + [repr(float(v)) for v in feats[j]]
                if labels is not None:
                    row.append(repr(float(labels[j])))
                writer.writerow(row)


def load_csv(path, truncate: bool = False) -> FederatedDataset:
    """Parse the silo CSV format; silos must hold equal record counts unless
    `truncate` trims every silo to the minimum count."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"empty dataset file: {path}")
        if len(header) < 2 or header[0] != "silo_id":
            raise ValueError("expected header silo_id,f0,...[,label]")
        has_label = header[-1] == "label"
        d = len(header) - 1 - (1 if has_label else 0)
        if d < 1:
            raise ValueError("dataset needs at least one feature column")
        by_silo: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                silo = int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric cell ({exc})")
            by_silo.setdefault(silo, []).append(vals)
    if not by_silo:
        raise ValueError(f"dataset file has no records: {path}")
    silos = sorted(by_silo)
    counts = {i: len(by_silo[i]) for i in silos}
    n = min(counts.values())
    if not truncate and any(c != n for c in counts.values()):
        raise ValueError(f"ragged silos {counts}; pass truncate=True to trim to {n}")
    feats = np.array([[r[:d] for r in by_silo[i][:n]] for i in silos])
    labels = (np.array([[r[d] for r in by_silo[i][:n]] for i in silos])
              if has_label else None)
    return FederatedDataset(feats, labels)


def dataset_from_arrays(features, labels=None) -> FederatedDataset:
    return FederatedDataset(np.asarray(features, dtype=np.float64),
                            None if labels is None else np.asarray(labels, dtype=np.float64))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def evaluate(problem: ProblemInstance, w: np.ndarray, eta: float,
             population_samples: int = 0, seed: int = 0) -> Metrics:
    """Empirical risk, gradient-mapping norm, excess risk when the optimum is
    known, and a Monte-Carlo population risk (with its standard error) when a
    population spec is attached."""
    risk = problem.loss.empirical_risk(w, problem.dataset)
    gm = gradient_mapping(problem.loss, w, eta, problem.dataset)
    excess = None
    if problem.known is not None:
        excess = risk - problem.known.f_star
    pop = pop_se = None
    if problem.population is not None and population_samples > 0:
        vals = []
        for i in range(problem.dataset.n_silos):
            st = derive_rng(seed, "population_eval", 0, i)
            X, y = problem.population(st, i, population_samples)
            per = problem.loss.f0_values(w, X, y)
            vals.append(np.asarray(per))
        allv = np.concatenate(vals)
        pop = float(allv.mean()) + problem.loss.f1.value(w)
        pop_se = float(allv.std(ddof=1) / math.sqrt(allv.size))
    return Metrics(empirical_risk=risk, grad_mapping_norm_sq=gm.norm_sq,
                   excess_risk=excess, population_risk=pop, population_se=pop_se)


def heterogeneity(problem: ProblemInstance,
                  probe_points: Sequence[np.ndarray]) -> HeterogeneityReport:
    """max over probes of (1/N) sum_i ||grad Fhat_i(w) - grad Fhat(w)||^2,
    computed on raw (unclipped) gradients."""
    ds, loss = problem.dataset, problem.loss
    per_probe = []
    for w in probe_points:
        g_all = loss.full_grad(w, ds)
        acc = 0.0
        for i in range(ds.n_silos):
            diff = loss.silo_grad(w, ds, i) - g_all
            acc += float(diff @ diff)
        per_probe.append(acc / ds.n_silos)
    return HeterogeneityReport(upsilon_sq=max(per_probe) if per_probe else 0.0,
                               per_probe=tuple(per_probe))


def problem_descriptor(problem: ProblemInstance) -> dict:
    """JSON-able reproducibility dump: generator parameters plus certified
    constants."""
    out = dict(problem.descriptor)
    out["n_silos"] = problem.dataset.n_silos
    out["records_per_silo"] = problem.dataset.records_per_silo
    out["n_features"] = problem.dataset.n_features
    out["lipschitz_L"] = problem.loss.lipschitz_L
    out["smooth_beta"] = problem.loss.smooth_beta
    out["regularizer"] = {"kind": problem.loss.f1.kind, "lam": problem.loss.f1.lam,
                          "radius": (problem.loss.f1.radius
                                     if math.isfinite(problem.loss.f1.radius) else "inf")}
    if problem.known is not None:
        out["known"] = {"f_star": problem.known.f_star, "mu": problem.known.mu,
                        "beta": problem.known.beta, "kappa": problem.known.kappa}
    return out


_GENERATORS = {
    "quadratic": make_quadratic,
    "least_squares": make_least_squares,
    "logistic": make_logistic,
}


def build_problem(generator: str, params: dict) -> ProblemInstance:
    if generator not in _GENERATORS:
        raise ValueError(f"unknown generator {generator!r}; "
                         f"choose from {sorted(_GENERATORS)}")
    return _GENERATORS[generator](**params)
