"""Experiment harness: JSON-configured sweeps over epsilon grids, CSV/JSON
results persistence, the adjacency probe and the privacy-plan printer.

Result CSV schema (one golden header, pinned by tests):
algorithm,epsilon,seed,round,train_risk,excess_risk,grad_map_norm_sq,
epsilon_spent,wall_ms,status.  Infeasible cells are recorded as explicit
rows (round = -1, status = "infeasible:<constraint>"), never skipped.
Rows are sorted before writing so output is independent of execution order;
real timing goes to the JSON sidecar (wall_ms in rows is the deterministic
cost proxy).
"""

from __future__ import annotations

import concurrent.futures
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import optimizers
from .core import NONE, Availability, PrivacyBudget, RunConfig
from .privacy import InfeasibleConfigError, plan_noise, update_sensitivity
from .problems import build_problem, problem_descriptor, save_csv
from .rng import derive_rng

__all__ = ["ExperimentSpec", "run_experiment", "adjacency_probe", "gen_data",
           "check_privacy", "CSV_HEADER", "result_rows"]

CSV_HEADER = ("algorithm,epsilon,seed,round,train_risk,excess_risk,"
              "grad_map_norm_sq,epsilon_spent,wall_ms,status")

SCHEMA_VERSION = 1

_RUN_KEYS = {
    "rounds", "epochs", "epoch_length", "restarts", "k", "k1", "k2", "q",
    "eta", "clip", "availability", "local_steps", "spider_slope",
    "auto_config", "delta_hat", "mechanism", "diagnostics",
}
_TOP_KEYS = {"schema_version", "problem", "algorithms", "epsilon_grid",
             "delta", "repeats", "seeds", "output", "run"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown keys {sorted(unknown)} in {where}; "
                         f"allowed: {sorted(allowed)}")


@dataclass(frozen=True)
class AlgorithmEntry:
    name: str
    label: str
    overrides: dict = field(default_factory=dict)


@dataclass
class ExperimentSpec:
    """Validated sweep description: problem spec, algorithm list, epsilon
    grid, delta rule, repeats and seeds."""

    problem: dict
    algorithms: list
    epsilon_grid: list
    delta_rule: str
    delta_value: Optional[float]
    repeats: int
    seeds: list
    run: dict
    output: Optional[str] = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentSpec":
        _reject_unknown(raw, _TOP_KEYS, "experiment spec")
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"schema_version must be {SCHEMA_VERSION}")
        problem = raw.get("problem")
        if not isinstance(problem, dict):
            raise ValueError("spec needs a problem section")
        _reject_unknown(problem, {"generator", "params"}, "problem")
        if "generator" not in problem:
            raise ValueError("problem needs a generator name")

        algs_raw = raw.get("algorithms")
        if not algs_raw:
            raise ValueError("algorithm list must be non-empty")
        algorithms = []
        for entry in algs_raw:
            if isinstance(entry, str):
                algorithms.append(AlgorithmEntry(entry, entry))
            else:
                _reject_unknown(entry, {"name", "label", "overrides"},
                                "algorithm entry")
                overrides = dict(entry.get("overrides", {}))
                _reject_unknown(overrides, _RUN_KEYS, "algorithm overrides")
                algorithms.append(AlgorithmEntry(
                    entry["name"], entry.get("label", entry["name"]), overrides))
        names = [a.label for a in algorithms]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate algorithm labels: {names}")
        for a in algorithms:
            if a.name not in optimizers.ALGORITHMS:
                raise ValueError(f"unknown algorithm {a.name!r}")

        grid = raw.get("epsilon_grid")
        if not grid or any(not (isinstance(e, (int, float)) and e > 0) for e in grid):
            raise ValueError("epsilon_grid must be a non-empty list of positives")

        delta = raw.get("delta", {"rule": "one_over_n_sq"})
        _reject_unknown(delta, {"rule", "value"}, "delta")
        rule = delta.get("rule")
        if rule == "fixed":
            value = delta.get("value")
            if not (isinstance(value, (int, float)) and 0 < value < 0.5):
                raise ValueError("fixed delta rule needs value in (0, 1/2)")
        elif rule == "one_over_n_sq":
            value = None
        else:
            raise ValueError("delta rule must be 'fixed' or 'one_over_n_sq'")

        repeats = raw.get("repeats", 1)
        if not (isinstance(repeats, int) and repeats >= 1):
            raise ValueError("repeats must be an integer >= 1")
        seeds = raw.get("seeds", [0])
        if not seeds or any(not isinstance(s, int) for s in seeds):
            raise ValueError("seeds must be a non-empty list of integers")

        run = dict(raw.get("run", {}))
        _reject_unknown(run, _RUN_KEYS, "run")
        return cls(problem=problem, algorithms=algorithms,
                   epsilon_grid=[float(e) for e in grid], delta_rule=rule,
                   delta_value=value, repeats=repeats, seeds=list(seeds),
                   run=run, output=raw.get("output"))

    @classmethod
    def from_path(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build_problem(self):
        return build_problem(self.problem["generator"],
                             dict(self.problem.get("params", {})))

    def delta_for(self, n: int) -> float:
        if self.delta_rule == "fixed":
            return float(self.delta_value)
        return 1.0 / n ** 2

    def cells(self):
        for alg in self.algorithms:
            for eps in self.epsilon_grid:
                for seed in self.seeds:
                    for rep in range(self.repeats):
                        yield alg, eps, seed, rep


def _availability_from(raw) -> Availability:
    if raw in (None, "all"):
        return Availability.all()
    _reject_unknown(raw, {"fixed", "choices"}, "availability")
    if "fixed" in raw:
        return Availability.fixed_m(int(raw["fixed"]))
    return Availability.random_m(raw["choices"])


def build_config(spec: ExperimentSpec, alg: AlgorithmEntry, eps: float,
                 seed: int, n: int, diagnostics: bool = False) -> RunConfig:
    merged = {**spec.run, **alg.overrides}
    availability = _availability_from(merged.pop("availability", None))
    mechanism = merged.pop("mechanism", "gaussian")
    if merged.pop("diagnostics", False):
        diagnostics = True
    delta = spec.delta_for(n)
    privacy = None if mechanism == NONE else PrivacyBudget(eps, delta)
    return RunConfig(availability=availability, mechanism=mechanism,
                     seed=seed, privacy=privacy, diagnostics=diagnostics,
                     **merged)


def result_rows(label: str, eps: float, seed: int, result) -> list:
    rows = []
    for rec in result.records:
        excess = "" if rec.excess_risk is None else repr(float(rec.excess_risk))
        rows.append((label, repr(float(eps)), str(seed), str(rec.round),
                     repr(float(rec.train_risk)), excess,
                     repr(float(rec.grad_mapping_norm_sq)),
                     repr(float(rec.epsilon_spent)), repr(float(rec.wall_ms)),
                     "ok"))
    return rows


def _infeasible_row(label: str, eps: float, seed: int, constraint: str):
    return [(label, repr(float(eps)), str(seed), "-1", "", "", "", "", "",
             f"infeasible:{constraint}")]


# worker-side problem cache for process pools
_WORKER_PROBLEM = None
_WORKER_SPEC = None


def _init_worker(spec_dict: dict):
    global _WORKER_PROBLEM, _WORKER_SPEC
    _WORKER_SPEC = ExperimentSpec.from_dict(spec_dict)
    _WORKER_PROBLEM = _WORKER_SPEC.build_problem()


def _run_cell_in_worker(cell):
    name, label, overrides, eps, seed, rep = cell
    alg = AlgorithmEntry(name, label, overrides)
    return _execute_cell(_WORKER_SPEC, _WORKER_PROBLEM, alg, eps, seed, rep)


def _execute_cell(spec, problem, alg, eps, seed, rep):
    n = problem.dataset.records_per_silo
    started = time.perf_counter()
    meta = {"algorithm": alg.name, "label": alg.label, "epsilon": eps,
            "seed": seed, "repeat": rep}
    try:
        config = build_config(spec, alg, eps, seed, n)
        result = optimizers.run(alg.name, problem, config)
        rows = result_rows(alg.label, eps, seed, result)
        meta["status"] = "ok"
        meta["noise_plan"] = result.noise_plan.as_dict()
        meta["w_priv_index"] = result.w_priv_index
    except InfeasibleConfigError as exc:
        rows = _infeasible_row(alg.label, eps, seed, exc.constraint)
        meta["status"] = f"infeasible:{exc.constraint}"
    meta["elapsed_s"] = time.perf_counter() - started
    return rows, meta


@dataclass
class ExperimentSummary:
    csv_path: Path
    sidecar_path: Path
    n_cells: int
    n_infeasible: int
    rows: list


def run_experiment(spec, out_path, threads: int = 1) -> ExperimentSummary:
    """Run every (algorithm, epsilon, seed, repeat) cell and persist a sorted
    CSV plus a JSON sidecar of resolved configs and real timings."""
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    cells = list(spec.cells())
    all_rows = []
    metas = []
    problem = spec.build_problem()
    if threads > 1:
        spec_dict = _spec_to_dict(spec)
        packed = [(a.name, a.label, a.overrides, eps, seed, rep)
                  for a, eps, seed, rep in cells]
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=threads, initializer=_init_worker,
                initargs=(spec_dict,)) as pool:
            for rows, meta in pool.map(_run_cell_in_worker, packed):
                all_rows.extend(rows)
                metas.append(meta)
    else:
        for alg, eps, seed, rep in cells:
            rows, meta = _execute_cell(spec, problem, alg, eps, seed, rep)
            all_rows.extend(rows)
            metas.append(meta)

    all_rows.sort(key=lambda r: (r[0], float(r[1]), int(r[2]), int(r[3])))
    with open(out_path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in all_rows:
            fh.write(",".join(row) + "\n")
    metas.sort(key=lambda m: (m["label"], m["epsilon"], m["seed"], m["repeat"]))
    sidecar = out_path.with_suffix(out_path.suffix + ".meta.json")
    with open(sidecar, "w") as fh:
        json.dump({"spec": _spec_to_dict(spec),
                   "problem": problem_descriptor(problem),
                   "cells": metas}, fh, indent=2, sort_keys=True, default=str)
    n_inf = sum(1 for m in metas if m["status"] != "ok")
    return ExperimentSummary(csv_path=out_path, sidecar_path=sidecar,
                             n_cells=len(metas), n_infeasible=n_inf,
                             rows=all_rows)


def _spec_to_dict(spec: ExperimentSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "problem": spec.problem,
        "algorithms": [{"name": a.name, "label": a.label,
                        "overrides": a.overrides} for a in spec.algorithms],
        "epsilon_grid": spec.epsilon_grid,
        "delta": ({"rule": "fixed", "value": spec.delta_value}
                  if spec.delta_rule == "fixed" else {"rule": "one_over_n_sq"}),
        "repeats": spec.repeats,
        "seeds": spec.seeds,
        "run": spec.run,
    }


# ---------------------------------------------------------------------------
# adjacency probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeEntry:
    kind: str
    max_diff: float
    bound_at_max: float
    max_ratio: float
    swaps: int


@dataclass
class AdjacencyReport:
    algorithm: str
    entries: list
    worst_case: Optional[dict] = None

    def ok(self, tol: float = 1e-9) -> bool:
        return all(e.max_ratio <= 1.0 + tol for e in self.entries)

    def as_dict(self) -> dict:
        return {"algorithm": self.algorithm,
                "entries": [e.__dict__ for e in self.entries],
                "worst_case": self.worst_case,
                "ok": self.ok()}


def _probe_kinds(algorithm: str, n: int, config: RunConfig) -> list:
    """(kind, uses_prev_iterate, batch_size) triples probed per algorithm."""
    K_sgd = max(1, n // config.rounds)
    K = config.k if config.k is not None else n
    K1 = config.k1 if config.k1 is not None else n
    K2 = config.k2 if config.k2 is not None else n
    table = {
        "isrl_prox_sgd": [("sgd_batch", False, K_sgd)],
        "sdp_prox_sgd": [("sgd_batch", False, K_sgd)],
        "isrl_prox_svrg": [("spider_full", False, n), ("svrg_diff", True, K)],
        "isrl_prox_pl_svrg": [("spider_full", False, n), ("svrg_diff", True, K)],
        "sdp_prox_svrg": [("spider_full", False, n), ("svrg_diff", True, K)],
        "sdp_prox_pl_svrg": [("spider_full", False, n), ("svrg_diff", True, K)],
        "isrl_spider": [("spider_full", False, K1), ("spider_diff", True, K2)],
        "sdp_spider": [("spider_full", False, K1), ("spider_diff", True, K2)],
        "isrl_spider_alt": [("sgd_batch", False, K2), ("svrg_diff", True, K1)],
        "mb_sgd": [("sgd_batch", False, K)],
        "isrl_mb_sgd": [("sgd_batch", False, K)],
        "local_sgd": [("sgd_batch", False, K)],
        "isrl_local_sgd": [("sgd_batch", False, K)],
    }
    if algorithm not in table:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return table[algorithm]


def _kind_bound(kind: str, L: float, beta: float, batch: int, n: int,
                step_norm: float) -> float:
    if kind == "sgd_batch":
        return update_sensitivity("sgd_batch", L, K=batch)
    if kind == "svrg_diff":
        return update_sensitivity("svrg_diff", L, K=batch)
    if kind == "spider_full":
        return update_sensitivity("spider_full", L, n=batch)
    if kind == "spider_diff":
        return update_sensitivity("spider_diff", L, n=batch, beta=beta,
                                  step_norm=step_norm)
    raise ValueError(kind)


def adjacency_probe(algorithm: str, problem, swaps: int = 100, seed: int = 0,
                    config: Optional[RunConfig] = None) -> AdjacencyReport:
    """Replay one round's pre-noise message on datasets differing in a single
    record (shared batch indices, no noise) and compare the observed
    difference norm against the declared sensitivity of each message kind.

    For with-replacement batches the swapped record occupies exactly one
    batch slot, matching the proofs' conditioning on the sampling pattern
    (each draw is its own slot in the adjacency relation)."""
    from .optimizers import messages as msg

    config = config or RunConfig(rounds=5, mechanism=NONE)
    loss = problem.loss if config.clip is None else problem.loss.with_clip(config.clip)
    ds = problem.dataset
    N, n, d = ds.n_silos, ds.records_per_silo, ds.n_features
    L, beta = loss.lipschitz_L, loss.smooth_beta
    feat_scale = float(np.abs(ds.features).max()) + 1.0

    entries = []
    for kind, uses_prev, batch in _probe_kinds(algorithm, n, config):
        max_ratio = 0.0
        max_diff = 0.0
        bound_at_max = math.inf
        for s in range(swaps):
            st = derive_rng(seed, "adjacency", s, 0, kind)
            i = st.choice_index(N)
            j = st.choice_index(n)
            feats, labels = ds.silo(i)
            idx = st.integers(0, n, size=batch) if batch < n else np.arange(n)
            idx = np.array(idx, copy=True)
            idx[idx == j] = (j + 1) % n  # one slot only (see docstring)
            idx[0] = j
            w = st.normal(d)
            step = st.normal(d, scale=float(st.random()) + 1e-3)
            w_prev = w - step
            # the replacement record; occasionally huge so clipping engages
            scale = feat_scale * (10.0 if s % 3 == 0 else 1.0)
            feats2 = feats.copy()
            feats2[j] = st.normal(d, scale=scale)
            labels2 = labels
            if labels is not None:
                labels2 = labels.copy()
                labels2[j] = -labels[j] if s % 2 == 0 else labels[j]

            if uses_prev:
                m1 = msg.diff_message(loss, w, w_prev, feats, labels, idx)
                m2 = msg.diff_message(loss, w, w_prev, feats2, labels2, idx)
            else:
                m1 = msg.sgd_message(loss, w, feats, labels, idx)
                m2 = msg.sgd_message(loss, w, feats2, labels2, idx)
            diff = float(np.linalg.norm(m1 - m2))
            step_norm = float(np.linalg.norm(step))
            bound = _kind_bound(kind, L, beta, batch, n, step_norm)
            ratio = diff / bound if bound > 0 else (0.0 if diff == 0 else math.inf)
            if ratio > max_ratio:
                max_ratio, max_diff, bound_at_max = ratio, diff, bound
        entries.append(ProbeEntry(kind=kind, max_diff=max_diff,
                                  bound_at_max=bound_at_max,
                                  max_ratio=max_ratio, swaps=swaps))

    worst = None
    if any(k == "sgd_batch" for k, _, _ in _probe_kinds(algorithm, n, config)) \
            and "A" in problem.aux:
        worst = _constructed_worst_case(problem, loss,
                                        next(b for k, _, b in
                                             _probe_kinds(algorithm, n, config)
                                             if k == "sgd_batch"), seed)
    return AdjacencyReport(algorithm=algorithm, entries=entries,
                           worst_case=worst)


def _constructed_worst_case(problem, loss, K: int, seed: int) -> dict:
    """Adversarial record pair whose clipped gradients are antipodal at norm
    L, achieving the sgd_batch bound 2L/K exactly (quadratic loss)."""
    from .optimizers import messages as msg

    A = problem.aux["A"]
    ds = problem.dataset
    n, d = ds.records_per_silo, ds.n_features
    L = loss.lipschitz_L
    st = derive_rng(seed, "adjacency", 0, 0, "worst_case")
    u = st.normal(d)
    u /= np.linalg.norm(u)
    w = st.normal(d)
    t = 2.0 * L  # gradient norm before clipping; >= L so clipping saturates
    a_inv_u = np.linalg.solve(A, u)
    x_plus = w - t * a_inv_u
    x_minus = w + t * a_inv_u
    feats, labels = ds.silo(0)
    idx = np.arange(min(K, n))
    feats1 = feats.copy()
    feats1[0] = x_plus
    feats2 = feats.copy()
    feats2[0] = x_minus
    m1 = msg.sgd_message(loss, w, feats1, labels, idx)
    m2 = msg.sgd_message(loss, w, feats2, labels, idx)
    achieved = float(np.linalg.norm(m1 - m2))
    bound = update_sensitivity("sgd_batch", L, K=len(idx))
    return {"kind": "sgd_batch", "achieved": achieved, "bound": bound,
            "ratio": achieved / bound}


# ---------------------------------------------------------------------------
# data generation + privacy check
# ---------------------------------------------------------------------------

def gen_data(generator: str, params: dict, out_path) -> dict:
    """Generate a synthetic problem, save its dataset as CSV and a JSON
    problem descriptor alongside; returns the descriptor."""
    problem = build_problem(generator, params)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(problem.dataset, out_path)
    desc = problem_descriptor(problem)
    desc_path = out_path.with_suffix(out_path.suffix + ".descriptor.json")
    with open(desc_path, "w") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True, default=str)
    return desc


def check_privacy(spec) -> dict:
    """Resolve every algorithm's noise plan at the first grid epsilon and
    report it plus the accountant trace; infeasible configs report the
    binding constraint instead of failing."""
    if isinstance(spec, dict):
        spec = ExperimentSpec.from_dict(spec)
    problem = spec.build_problem()
    ds = problem.dataset
    n = ds.records_per_silo
    eps = spec.epsilon_grid[0]
    out = {"epsilon": eps, "delta": spec.delta_for(n),
           "delta_rule": spec.delta_rule, "plans": []}
    for alg in spec.algorithms:
        try:
            config = build_config(spec, alg, eps, spec.seeds[0], n)
            loss = problem.loss if config.clip is None else \
                problem.loss.with_clip(config.clip)
            plan = plan_noise(alg.name, config, n=n, d=ds.n_features,
                              L=loss.lipschitz_L, beta=loss.smooth_beta,
                              n_silos=ds.n_silos)
            entry = plan.as_dict()
            entry["label"] = alg.label
            entry["availability"] = {
                "min_M": config.availability.min_m(ds.n_silos),
                "expected_inverse_M": config.availability.expected_inverse_m(
                    ds.n_silos),
            }
            entry["accountant"] = {
                "style": ("zCDP ledger" if plan.mechanism == "gaussian" else
                          "per-line shuffle budgets" if plan.mechanism == "shuffle"
                          else "none"),
                "rho_budget": plan.rho_budget,
                "end_to_end_epsilon": entry["end_to_end_epsilon"],
            }
            if plan.shuffle_budgets:
                entry["protocol_trace"] = _shuffle_protocol_trace(plan, config,
                                                                  ds, loss)
        except InfeasibleConfigError as exc:
            entry = {"label": alg.label, "algorithm": alg.name,
                     "status": f"infeasible:{exc.constraint}"}
        out["plans"].append(entry)
    return out


def _shuffle_protocol_trace(plan, config, ds, loss) -> dict:
    """Resolved per-call protocol parameters (g, b, p) for each message kind
    of an SDP plan; the diff kind's range depends on the realized step norm,
    so a unit step norm is used for the trace."""
    from .shuffle import choose_params

    M = config.availability.min_m(ds.n_silos)
    trace = {}
    for kind, (eps_b, delta_b, rng_range) in plan.shuffle_budgets.items():
        per_silo = {"round": plan.batch_size, "anchor": ds.records_per_silo,
                    "inner": plan.batch_size,
                    "full": plan.inputs.get("K1"),
                    "diff": plan.inputs.get("K2")}[kind]
        contributors = M * int(per_silo)
        rng_used = rng_range
        if rng_used is None:  # spider diff: min(2L, beta * step_norm)
            rng_used = min(2.0 * loss.lipschitz_L, loss.smooth_beta)
        try:
            params = choose_params(PrivacyBudget(eps_b, delta_b), contributors,
                                   ds.n_features, rng_used)
            trace[kind] = {"epsilon": eps_b, "delta": delta_b,
                           "range": rng_used, "contributors": contributors,
                           "g": params.g, "b": params.b, "p": params.p}
        except InfeasibleConfigError as exc:
            trace[kind] = {"epsilon": eps_b, "delta": delta_b,
                           "status": f"infeasible:{exc.constraint}"}
    return trace
