"""Result tables, run persistence, and forecast plots.

Markdown tables mark the best value per column in bold and the second
best with an underline (ties all share the higher rank). CSVs carry
full-precision values so reruns can be compared byte for byte.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import AlignedCorpus
from .harness import LOWER_BETTER, CellResult, RunResult

__all__ = [
    "emit_tables",
    "write_run_json",
    "load_run_json",
    "run_to_dict",
    "PlotSpec",
    "plot_forecasts",
    "MatplotlibRenderer",
    "StubRenderer",
]


def _rank_annotations(values: dict[str, float | None], lower_better: bool) -> dict[str, str]:
    """model -> '' | 'best' | 'second'; ties share the higher rank."""
    present = {m: v for m, v in values.items() if v is not None}
    if not present:
        return {m: "" for m in values}
    ordered = sorted(set(present.values()), reverse=not lower_better)
    best = ordered[0]
    second = ordered[1] if len(ordered) > 1 else None
    out = {}
    for m, v in values.items():
        if v is None:
            out[m] = ""
        elif v == best:
            out[m] = "best"
        elif second is not None and v == second:
            out[m] = "second"
        else:
            out[m] = ""
    return out


def _fmt(v: float | None, digits: int = 3) -> str:
    return "—" if v is None else f"{v:.{digits}f}"


def emit_tables(result: RunResult, out_dir, formats: tuple[str, ...] = ("csv", "markdown")) -> list[Path]:
    """One table per metric: rows are models, columns are k-k labels.

    Also writes a flat `results.csv` with one row per (model, k, metric)
    carrying full-precision values and parse-failure counts.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for metric in result.metrics:
        table = result.table(metric)
        cols = result.ks
        if "csv" in formats:
            lines = ["model," + ",".join(f"{k}-{k}" for k in cols)]
            for mid in result.model_order:
                cells = [repr(table[mid][k]) if table[mid][k] is not None else "" for k in cols]
                lines.append(",".join([mid] + cells))
            path = out_dir / f"table_{metric}.csv"
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(path)
        if "markdown" in formats:
            md = [f"# {metric} — {result.dataset_id}", ""]
            md.append("| Model | " + " | ".join(f"{k}-{k}" for k in cols) + " |")
            md.append("|" + "---|" * (len(cols) + 1))
            per_col = {k: _rank_annotations({m: table[m][k] for m in result.model_order},
                                            metric in LOWER_BETTER) for k in cols}
            for mid in result.model_order:
                row = [mid]
                for k in cols:
                    text = _fmt(table[mid][k])
                    rank = per_col[k][mid]
                    if rank == "best":
                        text = f"**{text}**"
                    elif rank == "second":
                        text = f"<u>{text}</u>"
                    row.append(text)
                md.append("| " + " | ".join(row) + " |")
            failures = [c for c in result.cells if c.error]
            if failures:
                md.append("")
                for c in failures:
                    md.append(f"- missing {c.model_id} at {c.k}-{c.k}: {c.error}")
            path = out_dir / f"table_{metric}.md"
            path.write_text("\n".join(md) + "\n", encoding="utf-8")
            written.append(path)
    flat = ["model,k,metric,value,n_parse_failures"]
    for cell in result.cells:
        for metric in result.metrics:
            value = cell.scores.get(metric)
            flat.append(",".join([
                cell.model_id,
                str(cell.k),
                metric,
                "" if value is None else repr(value),
                str(cell.parse_failures),
            ]))
    path = out_dir / "results.csv"
    path.write_text("\n".join(flat) + "\n", encoding="utf-8")
    written.append(path)
    return written


def run_to_dict(result: RunResult, corpus: AlignedCorpus | None = None) -> dict:
    payload = {
        "config_digest": result.config_digest,
        "dataset_id": result.dataset_id,
        "model_order": result.model_order,
        "ks": result.ks,
        "metrics": result.metrics,
        "cells": [
            {
                "model_id": c.model_id,
                "k": c.k,
                "scores": c.scores,
                "parse_failures": c.parse_failures,
                "judge_failures": c.judge_failures,
                "error": c.error,
                "forecasts": c.forecasts,
            }
            for c in result.cells
        ],
    }
    if corpus is not None:
        payload["target_series"] = {
            "dates": [r.date.isoformat() for r in corpus.records],
            "values": [float(r.values[corpus.target_index]) for r in corpus.records],
        }
    return payload


def write_run_json(result: RunResult, corpus: AlignedCorpus, out_dir) -> Path:
    path = Path(out_dir) / "run.json"
    path.write_text(json.dumps(run_to_dict(result, corpus), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def load_run_json(run_dir) -> dict:
    return json.loads((Path(run_dir) / "run.json").read_text(encoding="utf-8"))


def result_from_dict(payload: dict) -> RunResult:
    cells = [
        CellResult(
            model_id=c["model_id"], k=c["k"], scores=c.get("scores", {}),
            parse_failures=c.get("parse_failures", 0),
            judge_failures=c.get("judge_failures", {}),
            error=c.get("error"), forecasts=c.get("forecasts", []),
        )
        for c in payload["cells"]
    ]
    return RunResult(
        config_digest=payload["config_digest"], dataset_id=payload["dataset_id"],
        cells=cells, model_order=payload["model_order"], ks=payload["ks"],
        metrics=payload["metrics"],
    )


# --------------------------------------------------------------------------
# Plots


@dataclass
class PlotSpec:
    """Renderer-independent description of one line chart."""

    title: str
    xlabel: str = "date"
    ylabel: str = "target"
    series: list[dict] = field(default_factory=list)  # {label, x: [iso], y: [float]}
    notes: list[str] = field(default_factory=list)


class StubRenderer:
    """Writes the canonical JSON of the plot spec; deterministic bytes."""

    suffix = ".json"

    def save(self, spec: PlotSpec, path) -> None:
        payload = {
            "title": spec.title,
            "xlabel": spec.xlabel,
            "ylabel": spec.ylabel,
            "series": spec.series,
            "notes": spec.notes,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


class MatplotlibRenderer:
    suffix = ".png"

    def save(self, spec: PlotSpec, path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(10, 4.5))
        for s in spec.series:
            x = [dt.date.fromisoformat(d) for d in s["x"]]
            ax.plot(x, s["y"], label=s["label"], linewidth=1.2)
        ax.set_title(spec.title)
        ax.set_xlabel(spec.xlabel)
        ax.set_ylabel(spec.ylabel)
        if spec.notes:
            ax.annotate("\n".join(spec.notes), xy=(0.01, 0.01), xycoords="axes fraction", fontsize=7)
        ax.legend(fontsize=8)
        fig.autofmt_xdate()
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)


def plot_forecasts(run: dict, k: int, models: list[str], out_path,
                   renderer: StubRenderer | MatplotlibRenderer | None = None) -> PlotSpec:
    """First-day-ahead predictions of each model against the truth line.

    Models without numeric forecasts are skipped with a legend note;
    raises when nothing numeric is available at this k.
    """
    renderer = renderer or MatplotlibRenderer()
    series = []
    notes = []
    target = run.get("target_series")
    cells = {(c["model_id"], c["k"]): c for c in run["cells"]}
    plotted_dates: set[str] = set()
    for mid in models:
        cell = cells.get((mid, k))
        if cell is None or cell.get("error"):
            notes.append(f"{mid}: missing cell")
            continue
        xs, ys = [], []
        for f in cell["forecasts"]:
            if f["values"] is None:
                break
            xs.append(f["dates"][0])
            ys.append(f["values"][0])
        if not xs:
            notes.append(f"{mid}: no numeric forecast")
            continue
        series.append({"label": mid, "x": xs, "y": ys})
        plotted_dates.update(xs)
    if not series:
        raise ValueError(f"no numeric forecasts available at k={k}")
    if target is not None:
        keep = [i for i, d in enumerate(target["dates"]) if d in plotted_dates]
        if keep:
            series.insert(0, {
                "label": "input series",
                "x": [target["dates"][i] for i in keep],
                "y": [target["values"][i] for i in keep],
            })
    spec = PlotSpec(title=f"{run['dataset_id']}: {k}-{k} forecasts", series=series, notes=notes)
    renderer.save(spec, out_path)
    return spec
