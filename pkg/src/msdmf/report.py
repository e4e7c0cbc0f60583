"""Aggregate replicate evaluation rows into a summary table and figures.

The summary groups replicates by (n, p, q) and reports column means, matching
the layout used for simulation-accuracy tables; figures are rendered to PNG
files next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["summarize", "render_figures"]

GROUP_KEYS = ("n", "p", "q")


def _numeric_cols(rows: list[dict]) -> list[str]:
    cols = []
    for row in rows:
        for key, val in row.items():
            if key in GROUP_KEYS or key in cols:
                continue
            if isinstance(val, (int, float)) and val is not None:
                cols.append(key)
    return cols


def summarize(rows: list[dict]) -> list[dict]:
    """Column means per (n, p, q) group, with a replicate count."""
    if not rows:
        return []
    cols = _numeric_cols(rows)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row.get(k) for k in GROUP_KEYS)
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups, key=lambda k: tuple(x or 0 for x in k)):
        members = groups[key]
        rec: dict = dict(zip(GROUP_KEYS, key))
        rec["replicates"] = len(members)
        for col in cols:
            vals = [m[col] for m in members
                    if isinstance(m.get(col), (int, float)) and np.isfinite(m[col])]
            rec[col] = float(np.mean(vals)) if vals else float("nan")
        out.append(rec)
    return out


def _collect(rows, col):
    return [(row.get("n"), row[col]) for row in rows
            if isinstance(row.get(col), (int, float)) and np.isfinite(row[col])]


def render_figures(rows: list[dict], outdir) -> list[Path]:
    """Render replicate-level figures to PNG files; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if not rows:
        return written
    summary = summarize(rows)
    dist_cols = sorted(c for c in rows[0] if c.startswith(("dist_R_", "dist_C_")))

    if dist_cols:
        fig, ax = plt.subplots(figsize=(7, 4))
        x = np.arange(len(dist_cols))
        width = 0.8 / len(summary)
        for g, rec in enumerate(summary):
            vals = [rec.get(c, np.nan) for c in dist_cols]
            ax.bar(x + g * width, vals, width, label=f"n={int(rec['n'])}")
        ax.set_xticks(x + 0.4 - width / 2)
        ax.set_xticklabels(dist_cols, rotation=30, ha="right")
        ax.set_ylabel("mean loading-space distance")
        ax.legend()
        fig.tight_layout()
        path = outdir / "loading_distances.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    rand_pts = _collect(rows, "rand")
    if rand_pts:
        fig, ax = plt.subplots(figsize=(6, 4))
        ns = sorted({n for n, _ in rand_pts})
        for i, n in enumerate(ns):
            ys = [v for nn, v in rand_pts if nn == n]
            ax.plot(np.full(len(ys), i) + np.linspace(-0.15, 0.15, len(ys)),
                    ys, "o", alpha=0.6)
        ax.set_xticks(range(len(ns)))
        ax.set_xticklabels([f"n={int(n)}" for n in ns])
        ax.set_ylabel("Rand index")
        ax.set_ylim(min(0.45, min(v for _, v in rand_pts)) - 0.02, 1.01)
        fig.tight_layout()
        path = outdir / "rand_index.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    if len(summary) > 1 and dist_cols:
        fig, ax = plt.subplots(figsize=(6, 4))
        ns = [rec["n"] for rec in summary]
        for col in dist_cols:
            ax.plot(ns, [rec.get(col, np.nan) for rec in summary],
                    marker="o", label=col)
        ax.set_xlabel("n")
        ax.set_ylabel("mean loading-space distance")
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = outdir / "metrics_vs_n.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    return written
