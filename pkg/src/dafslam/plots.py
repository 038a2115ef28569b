"""Figure rendering for sweep results: median curves with IQR bands.

Figures are written straight to files (Agg backend); the CSV stays the
machine-readable contract and these are its visual companions.
"""

from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_COLORS = {
    "odom": "tab:gray",
    "ml": "tab:orange",
    "oracle": "tab:green",
    "kslam": "tab:blue",
}


def _by_method_and_value(rows):
    grouped = defaultdict(list)
    for row in rows:
        grouped[(row["method"], float(row["param_value"]))].append(row)
    return grouped


def _series(rows, field):
    grouped = _by_method_and_value(rows)
    methods = sorted({m for m, _ in grouped}, key=lambda m: list(METHOD_COLORS).index(m)
                     if m in METHOD_COLORS else 99)
    out = {}
    for method in methods:
        values = sorted(v for m, v in grouped if m == method)
        med, q1, q3 = [], [], []
        for v in values:
            data = np.array([float(r[field]) for r in grouped[(method, v)]])
            med.append(np.median(data))
            q1.append(np.percentile(data, 25))
            q3.append(np.percentile(data, 75))
        out[method] = (np.array(values), np.array(med), np.array(q1), np.array(q3))
    return out


def _plot_metric(rows, field, ylabel, title, out_path, skip_methods=()):
    fig, ax = plt.subplots(figsize=(5.0, 3.4), constrained_layout=True)
    for method, (x, med, q1, q3) in _series(rows, field).items():
        if method in skip_methods:
            continue
        color = METHOD_COLORS.get(method, None)
        ax.plot(x, med, marker="o", label=method, color=color)
        ax.fill_between(x, q1, q3, alpha=0.2, color=color)
    param = rows[0]["param_name"] if rows else ""
    ax.set_xlabel(param)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_sweep_figures(rows, out_dir) -> list:
    """ATE and landmark-count-error figures for one sweep; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    if not rows:
        return []
    dataset = rows[0].get("dataset", "dataset")
    param = rows[0]["param_name"]
    written = []
    written.append(_plot_metric(
        rows, "ate_rmse", "ATE RMSE (m)",
        f"{dataset}: trajectory error vs {param}",
        os.path.join(out_dir, f"ate_vs_{param}.png")))
    with_k = [r for r in rows
              if int(r["k_est"]) > 0 and r["method"] not in ("odom", "oracle")]
    for r in with_k:
        r.setdefault("k_delta", int(r["k_est"]) - int(r["k_true"]))
    if with_k:
        written.append(_plot_metric(
            with_k, "k_delta", "estimated minus true landmark count",
            f"{dataset}: landmark-count error vs {param}",
            os.path.join(out_dir, f"k_delta_vs_{param}.png")))
    return written


def summarize_rows(rows) -> list:
    """Per (method, param value) medians: the summary CSV's contents."""
    grouped = _by_method_and_value(rows)
    out = []
    for (method, value), group in sorted(grouped.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        ates = np.array([float(r["ate_rmse"]) for r in group])
        deltas = np.array([int(r["k_est"]) - int(r["k_true"]) for r in group])
        runtimes = np.array([float(r["runtime_sec"]) for r in group])
        out.append({
            "method": method,
            "param_name": group[0]["param_name"],
            "param_value": value,
            "trials": len(group),
            "ate_median": float(np.median(ates)),
            "ate_q1": float(np.percentile(ates, 25)),
            "ate_q3": float(np.percentile(ates, 75)),
            "k_delta_median": float(np.median(deltas)),
            "runtime_median": float(np.median(runtimes)),
        })
    return out
