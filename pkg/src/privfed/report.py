"""Render summary figures from a sweep results CSV.

Figures land next to the delimited output: final stationarity versus epsilon
(median over seeds, per algorithm), risk trajectories, and a summary CSV of
the medians.  The results CSV stays the data interface; these plots are a
convenience view of it.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import CSV_HEADER  # noqa: E402

__all__ = ["load_results", "render_report"]


def load_results(csv_path) -> list:
    """Parse a sweep CSV back into typed row dicts (ok rows only)."""
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER.split(","):
            raise ValueError(f"unexpected results header: {header}")
        for raw in reader:
            row = dict(zip(header, raw))
            if not row["status"].startswith("ok"):
                rows.append({"algorithm": row["algorithm"],
                             "epsilon": float(row["epsilon"]),
                             "seed": int(row["seed"]), "round": -1,
                             "status": row["status"]})
                continue
            rows.append({
                "algorithm": row["algorithm"],
                "epsilon": float(row["epsilon"]),
                "seed": int(row["seed"]),
                "round": int(row["round"]),
                "train_risk": float(row["train_risk"]),
                "excess_risk": (float(row["excess_risk"])
                                if row["excess_risk"] else None),
                "grad_map_norm_sq": float(row["grad_map_norm_sq"]),
                "epsilon_spent": float(row["epsilon_spent"]),
                "status": "ok",
            })
    return rows


def _median(values):
    values = sorted(values)
    m = len(values)
    if m == 0:
        return math.nan
    mid = m // 2
    return values[mid] if m % 2 else 0.5 * (values[mid - 1] + values[mid])


def final_metric_medians(rows, metric: str = "grad_map_norm_sq") -> dict:
    """{(algorithm, epsilon): median over seeds of the last-round metric}."""
    finals = defaultdict(dict)
    for row in rows:
        if row.get("status") != "ok":
            continue
        key = (row["algorithm"], row["epsilon"], row["seed"])
        prev = finals[key].get("round", -1)
        if row["round"] >= prev:
            finals[key] = row
    by_cell = defaultdict(list)
    for (alg, eps, _seed), row in finals.items():
        by_cell[(alg, eps)].append(row[metric])
    return {cell: _median(vals) for cell, vals in by_cell.items()}


def render_report(csv_path, out_dir=None) -> list:
    """Write the report figures and the medians summary next to the CSV;
    returns the created paths."""
    csv_path = Path(csv_path)
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = load_results(csv_path)
    created = []

    medians = final_metric_medians(rows)
    algorithms = sorted({alg for alg, _ in medians})

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for alg in algorithms:
        pts = sorted((eps, v) for (a, eps), v in medians.items() if a == alg)
        if not pts:
            continue
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=alg)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("final gradient-mapping norm^2 (median over seeds)")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    path = out_dir / (csv_path.stem + "_gradmap_vs_epsilon.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    created.append(path)

    # risk trajectories at the extreme epsilons, first seed
    ok_rows = [r for r in rows if r.get("status") == "ok"]
    if ok_rows:
        eps_values = sorted({r["epsilon"] for r in ok_rows})
        picks = {eps_values[0], eps_values[-1]}
        seed0 = min(r["seed"] for r in ok_rows)
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for alg in sorted({r["algorithm"] for r in ok_rows}):
            for eps in sorted(picks):
                traj = sorted((r["round"], r["train_risk"]) for r in ok_rows
                              if r["algorithm"] == alg and r["epsilon"] == eps
                              and r["seed"] == seed0)
                if traj:
                    ax.plot([t[0] for t in traj], [t[1] for t in traj],
                            label=f"{alg} eps={eps:g}")
        ax.set_xlabel("round")
        ax.set_ylabel("train risk")
        ax.legend(fontsize=7)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / (csv_path.stem + "_risk_trajectories.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        created.append(path)

    summary = out_dir / (csv_path.stem + "_summary.csv")
    with open(summary, "w") as fh:
        fh.write("algorithm,epsilon,median_final_grad_map_norm_sq\n")
        for (alg, eps) in sorted(medians):
            fh.write(f"{alg},{eps!r},{medians[(alg, eps)]!r}\n")
    created.append(summary)
    return created
