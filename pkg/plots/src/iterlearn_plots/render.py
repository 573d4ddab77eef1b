"""Render accuracy/length curves and stacked utterance-type bars from the
simulator's metrics CSVs.

Consumes exactly the metrics.csv schema:
generation,seed,experiment,speak_acc,listen_acc,avg_len,<seven type columns>.
Curve panels plot the per-generation mean over seeds, one series per
pressure level (parsed from experiment names like "...-ell3") or per
experiment; type bars show one named seed of one experiment.
"""
from __future__ import annotations

import csv
import os
import re
import tempfile
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

METRICS_COLUMNS = (
    "generation", "seed", "experiment",
    "speak_acc", "listen_acc", "avg_len",
    "fix", "fix_marker", "free", "free_marker", "fix_drop", "free_drop", "other",
)
TYPE_LABELS = METRICS_COLUMNS[6:]

CURVE_PANELS = ("speak_acc", "listen_acc", "avg_len")
PANELS = CURVE_PANELS + ("type_bars",)

PANEL_YLABEL = {
    "speak_acc": "speaking accuracy",
    "listen_acc": "listening accuracy",
    "avg_len": "average utterance length",
    "type_bars": "utterance count",
}

TYPE_COLORS = {
    "fix": "#1f77b4",
    "fix_marker": "#ff7f0e",
    "free": "#2ca02c",
    "free_marker": "#d62728",
    "fix_drop": "#9467bd",
    "free_drop": "#8c564b",
    "other": "#7f7f7f",
}

_ELL_RE = re.compile(r"^(?P<base>.+)-ell(?P<ell>\d+)$")


@dataclass
class PlotSpec:
    metrics_paths: list
    panel: str
    out_path: str
    seed: str | None = None  # type_bars only; defaults to the first seed
    experiment: str | None = None  # narrow multi-experiment inputs

    def __post_init__(self):
        if self.panel not in PANELS:
            raise ValueError(f"unknown panel {self.panel!r}; expected one of {PANELS}")
        if not self.metrics_paths:
            raise ValueError("at least one metrics CSV is required")


def read_metrics(paths):
    """Parse and schema-validate metrics rows from one or more CSVs."""
    rows = []
    for path in paths:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            missing = [c for c in METRICS_COLUMNS if c not in header]
            if missing:
                raise ValueError(f"{path}: missing metrics columns {missing}")
            for raw in reader:
                row = {"seed": raw["seed"], "experiment": raw["experiment"]}
                row["generation"] = int(raw["generation"])
                for col in METRICS_COLUMNS[3:]:
                    row[col] = float(raw[col])
                rows.append(row)
    if not rows:
        raise ValueError("no metrics rows found in " + ", ".join(str(p) for p in paths))
    return rows


def seed_mean_curve(rows, column):
    """Per-generation mean over seeds; seeds averaged in sorted order."""
    by_gen = {}
    for row in rows:
        by_gen.setdefault(row["generation"], []).append((row["seed"], row[column]))
    gens = sorted(by_gen)
    means = []
    for g in gens:
        vals = [v for _, v in sorted(by_gen[g])]
        means.append(sum(vals) / len(vals))
    return gens, means


def _series_label(experiment, all_experiments):
    matches = {e: _ELL_RE.match(e) for e in all_experiments}
    if all(m is not None for m in matches.values()) and len({m.group("base") for m in matches.values()}) == 1:
        return f"$\\ell$={matches[experiment].group('ell')}"
    return experiment


def _filter_experiment(rows, experiment):
    if experiment is not None:
        rows = [r for r in rows if r["experiment"] == experiment]
        if not rows:
            raise ValueError(f"no rows for experiment {experiment!r}")
    return rows


def build_curve_figure(spec, rows):
    rows = _filter_experiment(rows, spec.experiment)
    experiments = sorted({r["experiment"] for r in rows})
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    for experiment in experiments:
        sub = [r for r in rows if r["experiment"] == experiment]
        gens, means = seed_mean_curve(sub, spec.panel)
        ax.plot(gens, means, marker="o", markersize=3,
                label=_series_label(experiment, experiments))
    ax.set_xlabel("generation")
    ax.set_ylabel(PANEL_YLABEL[spec.panel])
    if spec.panel.endswith("_acc"):
        ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return fig


def build_type_bars_figure(spec, rows):
    rows = _filter_experiment(rows, spec.experiment)
    experiments = sorted({r["experiment"] for r in rows})
    if len(experiments) != 1:
        raise ValueError(
            f"type_bars needs a single experiment, found {experiments}; pass --experiment"
        )
    seeds = sorted({r["seed"] for r in rows})
    seed = spec.seed if spec.seed is not None else seeds[0]
    sub = sorted((r for r in rows if r["seed"] == seed), key=lambda r: r["generation"])
    if not sub:
        raise ValueError(f"no rows for seed {seed!r} (have {seeds})")

    # conservation: the seven categories partition the evaluated trajectories
    totals = [sum(r[label] for label in TYPE_LABELS) for r in sub]
    if max(totals) - min(totals) > 1e-6 * max(totals):
        raise ValueError("type histogram mass differs across generations; corrupt metrics")

    gens = [r["generation"] for r in sub]
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    bottom = [0.0] * len(sub)
    for label in TYPE_LABELS:
        heights = [r[label] for r in sub]
        ax.bar(gens, heights, bottom=bottom, width=0.8, label=label,
               color=TYPE_COLORS[label])
        bottom = [b + h for b, h in zip(bottom, heights)]
    ax.set_xlabel("generation")
    ax.set_ylabel(PANEL_YLABEL["type_bars"])
    ax.set_title(f"{experiments[0]} (seed {seed})", fontsize=9)
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def build_figure(spec, rows=None):
    if rows is None:
        rows = read_metrics(spec.metrics_paths)
    if spec.panel == "type_bars":
        return build_type_bars_figure(spec, rows)
    return build_curve_figure(spec, rows)


def render(spec: PlotSpec):
    """Write one image for the requested panel; no partial file on failure."""
    fig = build_figure(spec)
    out_dir = os.path.dirname(os.path.abspath(spec.out_path)) or "."
    fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=os.path.splitext(spec.out_path)[1])
    os.close(fd)
    try:
        fig.savefig(tmp, dpi=150, metadata={"Software": None})
        os.replace(tmp, spec.out_path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    finally:
        plt.close(fig)
    return spec.out_path
