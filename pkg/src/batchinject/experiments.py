"""Multi-seed ablation studies: overfit-gap vs data fraction, g sweep,
passive-dataset substitution.

Each report cell is defined by a set of flat config overrides; every
(cell, seed) run re-resolves the base config with those overrides, so a cell
is exactly reproducible from the report alone. Failed (diverged) runs are
recorded per cell, never dropped.
"""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import RunConfig, resolve_config
from .errors import DivergedRunError
from .training import train

REPORT_VERSION = 1


@dataclass(frozen=True)
class CellRun:
    """Outcome of one seeded run inside one report cell."""

    seed: int
    train_acc: float | None
    test_acc: float | None
    failed: bool = False
    error: str | None = None

    @property
    def gap(self) -> float | None:
        if self.train_acc is None or self.test_acc is None:
            return None
        return self.train_acc - self.test_acc


@dataclass
class ReportCell:
    label: str
    overrides: tuple[tuple[str, str], ...]
    runs: list[CellRun] = field(default_factory=list)

    def _values(self, attr):
        return [getattr(r, attr) for r in self.runs if not r.failed]

    def mean(self, attr) -> float | None:
        values = self._values(attr)
        return statistics.fmean(values) if values else None

    def std(self, attr) -> float | None:
        values = self._values(attr)
        return statistics.stdev(values) if len(values) >= 2 else None

    @property
    def failures(self) -> int:
        return sum(1 for r in self.runs if r.failed)


@dataclass
class AblationReport:
    axis: str  # "g", "fraction" or "passive"
    base_config: tuple[tuple[str, str], ...]
    cells: list[ReportCell] = field(default_factory=list)


def _run_cell(base_flat: tuple, overrides: tuple, seed: int) -> CellRun:
    cfg = resolve_config(dict(base_flat), {**dict(overrides), "seed": str(seed)})
    try:
        _, history = train(cfg)
    except DivergedRunError as exc:
        return CellRun(seed=seed, train_acc=None, test_acc=None, failed=True, error=str(exc))
    last = history.epochs[-1]
    return CellRun(seed=seed, train_acc=last.train_acc, test_acc=last.test_acc)


def _run_cells(report: AblationReport, seeds, jobs: int) -> AblationReport:
    work = [
        (cell, seed) for cell in report.cells for seed in seeds
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_cell, report.base_config, cell.overrides, seed)
                for cell, seed in work
            ]
            for (cell, _), future in zip(work, futures):
                cell.runs.append(future.result())
    else:
        for cell, seed in work:
            cell.runs.append(_run_cell(report.base_config, cell.overrides, seed))
    return report


def _format_g(g) -> str:
    return "inf" if g == math.inf else str(g)


def g_sweep(cfg: RunConfig, g_values=None, seeds=None, jobs: int = 1) -> AblationReport:
    """One injection run per (g, seed); g = inf rows are the baseline."""
    g_values = cfg.ablate_g_values if g_values is None else tuple(g_values)
    seeds = cfg.ablate_seeds if seeds is None else tuple(seeds)
    report = AblationReport(axis="g", base_config=cfg.flat)
    for g in g_values:
        overrides = {"policy.g": _format_g(g)}
        if g == math.inf:
            overrides["passive.source"] = "none"
        report.cells.append(ReportCell(label=f"g={_format_g(g)}", overrides=tuple(sorted(overrides.items()))))
    return _run_cells(report, seeds, jobs)


def gap_study(cfg: RunConfig, fractions=None, seeds=None, jobs: int = 1) -> AblationReport:
    """Baseline vs injection overfit gap at each training-data fraction."""
    fractions = cfg.ablate_fractions if fractions is None else tuple(fractions)
    seeds = cfg.ablate_seeds if seeds is None else tuple(seeds)
    report = AblationReport(axis="fraction", base_config=cfg.flat)
    for fraction in fractions:
        for variant, overrides in (
            ("baseline", {"passive.source": "none", "data.fraction": repr(fraction)}),
            ("injection", {"data.fraction": repr(fraction)}),
        ):
            report.cells.append(
                ReportCell(
                    label=f"fraction={fraction:g}/{variant}",
                    overrides=tuple(sorted(overrides.items())),
                )
            )
    return _run_cells(report, seeds, jobs)


def passive_study(cfg: RunConfig, styles=None, seeds=None, jobs: int = 1) -> AblationReport:
    """Swap the passive dataset's generative style; 'none' rows are baseline."""
    styles = cfg.ablate_passive_styles if styles is None else tuple(styles)
    seeds = cfg.ablate_seeds if seeds is None else tuple(seeds)
    report = AblationReport(axis="passive", base_config=cfg.flat)
    for style in styles:
        if style == "none":
            overrides = {"passive.source": "none"}
        else:
            overrides = {"passive.source": "synth", "passive.synth.style": style}
        report.cells.append(
            ReportCell(label=f"passive={style}", overrides=tuple(sorted(overrides.items())))
        )
    return _run_cells(report, seeds, jobs)


def report_to_json(report: AblationReport) -> dict:
    return {
        "format_version": REPORT_VERSION,
        "axis": report.axis,
        "base_config": {k: v for k, v in report.base_config},
        "cells": [
            {
                "label": cell.label,
                "overrides": {k: v for k, v in cell.overrides},
                "runs": [
                    {
                        "seed": r.seed,
                        "train_acc": r.train_acc,
                        "test_acc": r.test_acc,
                        "gap": r.gap,
                        "failed": r.failed,
                        "error": r.error,
                    }
                    for r in cell.runs
                ],
                "mean_test_acc": cell.mean("test_acc"),
                "std_test_acc": cell.std("test_acc"),
                "mean_gap": cell.mean("gap"),
                "std_gap": cell.std("gap"),
                "failures": cell.failures,
            }
            for cell in report.cells
        ],
    }


def report_from_json(obj: dict) -> AblationReport:
    if obj.get("format_version") != REPORT_VERSION:
        raise ValueError(f"unsupported report format version {obj.get('format_version')!r}")
    report = AblationReport(
        axis=obj["axis"], base_config=tuple(sorted(obj["base_config"].items()))
    )
    for cell_obj in obj["cells"]:
        cell = ReportCell(
            label=cell_obj["label"], overrides=tuple(sorted(cell_obj["overrides"].items()))
        )
        for r in cell_obj["runs"]:
            cell.runs.append(
                CellRun(
                    seed=r["seed"],
                    train_acc=r["train_acc"],
                    test_acc=r["test_acc"],
                    failed=r["failed"],
                    error=r["error"],
                )
            )
        report.cells.append(cell)
    return report


def _fmt(value, pct=True) -> str:
    if value is None:
        return "-"
    return f"{100.0 * value:.2f}" if pct else f"{value:.4f}"


def render_text(report: AblationReport) -> str:
    """Aligned plain-text table (accuracies and gaps in percent)."""
    rows = [("cell", "runs", "test acc %", "gap %", "failed")]
    for cell in report.cells:
        std_acc, std_gap = cell.std("test_acc"), cell.std("gap")
        rows.append(
            (
                cell.label,
                str(len(cell.runs)),
                _fmt(cell.mean("test_acc"))
                + (f" ± {100.0 * std_acc:.2f}" if std_acc is not None else ""),
                _fmt(cell.mean("gap")) + (f" ± {100.0 * std_gap:.2f}" if std_gap is not None else ""),
                str(cell.failures),
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = [f"axis: {report.axis}"]
    for i, row in enumerate(rows):
        lines.append("  ".join(col.ljust(widths[j]) for j, col in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(len(widths))))
    return "\n".join(lines) + "\n"


def write_report(report: AblationReport, json_path, text_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report_to_json(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if text_path is not None:
        with open(text_path, "w", encoding="utf-8") as fh:
            fh.write(render_text(report))


def read_report(json_path) -> AblationReport:
    with open(json_path, "r", encoding="utf-8") as fh:
        return report_from_json(json.load(fh))
