"""Report files for harness experiments: JSON, flat CSV and one PNG figure each."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

CONDITIONS = ("in-domain", "workspace", "viewpoint", "embodiment", "workspace+viewpoint", "all")

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "savefig.dpi": 120,
}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


def rows_to_csv(rows):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    lines = [",".join(cols)]
    lines += [",".join(_cell(r.get(c)) for c in cols) for r in rows]
    return "\n".join(lines) + "\n"


def _grouped_bars(ax, labels, series, ylabel):
    width = 0.8 / max(len(series), 1)
    x = np.arange(len(labels))
    for i, (name, vals) in enumerate(series.items()):
        vals = [np.nan if v is None else v for v in vals]
        ax.bar(x + (i - (len(series) - 1) / 2) * width, vals, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel(ylabel)
    ax.legend()


def _figure_invariance(ax, rep):
    rows = rep["rows"]
    labels = [r["family"] for r in rows]
    series = {
        "raw": [r["raw_discrepancy"] for r in rows],
        "aligned": [r["aligned_discrepancy"] for r in rows],
        "aligned, no overlay": [r["aligned_no_overlay_discrepancy"] for r in rows],
    }
    _grouped_bars(ax, labels, series, "mean L1 discrepancy")
    ax.set_title("Observation change under shift")


def _conditions(rows):
    return [c for c in CONDITIONS if c in rows[0]]


def _figure_retrieval(ax, rep, title):
    rows = rep["rows"]
    conds = _conditions(rows)
    series = {r["variant"]: [r[c] for c in conds] for r in rows}
    _grouped_bars(ax, conds, series, "mean action error (m)")
    ax.set_title(title)


def _figure_crop_size(ax, rep):
    rows = rep["rows"]
    k = [r["kappa"] for r in rows]
    for c in _conditions(rows) + ["ood_mean"]:
        ax.plot(k, [r[c] for r in rows], marker="o", lw=1.5 if c in ("in-domain", "ood_mean") else 0.8,
                label=c)
    ax.set_xlabel("crop size (px)")
    ax.set_ylabel("mean action error (m)")
    ax.set_xticks(k)
    ax.legend(ncol=2)
    ax.set_title("Retrieval error vs crop size")


TITLES = {
    "retrieval": "1-NN action retrieval",
    "calibration": "Retrieval under calibration error",
    "motion-encoding": "Hidden gripper, height-only proprio",
}


def render_figure(rep: dict, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 3.6))
        name = rep["experiment"]
        if name == "invariance":
            _figure_invariance(ax, rep)
        elif name == "crop-size":
            _figure_crop_size(ax, rep)
        else:
            _figure_retrieval(ax, rep, TITLES.get(name, name))
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def write_report(report, out_dir, figure=True):
    """Write ``report.json``, ``<name>.csv`` and (optionally) ``<name>.png`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rep = report.to_dict()
    (out / "report.json").write_text(json.dumps(rep, indent=2) + "\n", encoding="utf-8")
    (out / f"{report.name}.csv").write_text(rows_to_csv(rep["rows"]), encoding="utf-8")
    paths = [out / "report.json", out / f"{report.name}.csv"]
    if figure and rep["rows"]:
        render_figure(rep, out / f"{report.name}.png")
        paths.append(out / f"{report.name}.png")
    return paths
