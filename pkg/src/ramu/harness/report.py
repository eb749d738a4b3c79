"""Per-cell and summary reports over raw rollout results.

A *cell* is one (sweep value, seed) pair. Its safety flag compares the mean
episodic cost over the cell's rollouts with the episodic budget, using
:func:`ramu.envs.is_safe`. Normalized columns divide each cell by the baseline
run's mean over seeds at the same sweep value, then average over cells.

CSV schemas (UTF-8, header row first):

* raw: ``run,parameter,value,seed,rollout,total_reward,total_cost,budget,safe,length``
* cells: ``run,parameter,value,seed,rollouts,mean_reward,mean_cost,budget,safe``
* summary: ``run,parameter,values,seeds,cells,pct_safe,mean_reward,mean_cost,
  baseline,normalized_reward,normalized_cost,reward_skipped,cost_skipped``
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from ..envs import is_safe

__all__ = [
    "RAW_FIELDS",
    "CELL_FIELDS",
    "SUMMARY_FIELDS",
    "ReportError",
    "Cell",
    "AggregateReport",
    "cells_from_raw",
    "aggregate",
    "compare",
    "format_table",
    "read_csv",
    "write_csv",
    "write_rows",
    "report_row",
]

RAW_FIELDS = ("run", "parameter", "value", "seed", "rollout", "total_reward", "total_cost", "budget", "safe", "length")
CELL_FIELDS = ("run", "parameter", "value", "seed", "rollouts", "mean_reward", "mean_cost", "budget", "safe")
SUMMARY_FIELDS = (
    "run",
    "parameter",
    "values",
    "seeds",
    "cells",
    "pct_safe",
    "mean_reward",
    "mean_cost",
    "baseline",
    "normalized_reward",
    "normalized_cost",
    "reward_skipped",
    "cost_skipped",
)


class ReportError(ValueError):
    """Raw or summary data that cannot be aggregated or compared."""


@dataclass(frozen=True)
class Cell:
    run: str
    parameter: str
    value: float
    seed: int
    rollouts: int
    mean_reward: float
    mean_cost: float
    budget: float
    safe: bool

    @property
    def key(self) -> tuple:
        return (self.value, self.seed)


@dataclass(frozen=True)
class AggregateReport:
    run: str
    parameter: str
    cells: tuple
    pct_safe: float
    mean_reward: float
    mean_cost: float
    baseline: str | None = None
    normalized_reward: float = math.nan
    normalized_cost: float = math.nan
    reward_skipped: int = 0
    cost_skipped: int = 0

    @property
    def values(self) -> tuple:
        return tuple(sorted({c.value for c in self.cells}))

    @property
    def seeds(self) -> tuple:
        return tuple(sorted({c.seed for c in self.cells}))


def _fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


def write_rows(fh: TextIO, fields: Sequence[str], rows: Iterable[dict]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row[f]) for f in fields])


def write_csv(path, fields: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_rows(fh, fields, rows)


def read_csv(path, fields: Sequence[str]) -> list[dict]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(fields) - set(reader.fieldnames or ())
            if missing:
                raise ReportError(f"{path}: missing columns {sorted(missing)}")
            return list(reader)
    except OSError as exc:
        raise ReportError(f"{path}: cannot read: {exc.strerror}") from None


def cells_from_raw(rows: Sequence[dict]) -> list[Cell]:
    """Group raw rollout rows into cells, sorted by (value, seed)."""
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = (row["run"], row["parameter"], float(row["value"]), int(row["seed"]))
        groups.setdefault(key, []).append(row)
    cells = []
    for (run, parameter, value, seed), members in groups.items():
        # fixed summation order keeps results independent of input row order
        members = sorted(members, key=lambda m: int(m["rollout"]))
        indices = [int(m["rollout"]) for m in members]
        if len(set(indices)) != len(indices):
            raise ReportError(f"cell (value={value}, seed={seed}) repeats rollout indices")
        budgets = {float(m["budget"]) for m in members}
        if len(budgets) != 1:
            raise ReportError(f"cell (value={value}, seed={seed}) mixes budgets {sorted(budgets)}")
        budget = budgets.pop()
        mean_cost = float(np.mean([float(m["total_cost"]) for m in members]))
        cells.append(
            Cell(
                run=run,
                parameter=parameter,
                value=value,
                seed=seed,
                rollouts=len(members),
                mean_reward=float(np.mean([float(m["total_reward"]) for m in members])),
                mean_cost=mean_cost,
                budget=budget,
                safe=is_safe(mean_cost, budget),
            )
        )
    return sorted(cells, key=lambda c: (c.run, c.value, c.seed))


def _single_run(cells: list[Cell], what: str) -> tuple[str, str]:
    if not cells:
        raise ReportError(f"{what} contains no cells")
    runs = {(c.run, c.parameter) for c in cells}
    if len(runs) != 1:
        raise ReportError(f"{what} mixes runs {sorted(runs)}")
    return runs.pop()


def _check_grid(a: set, b: set, a_name: str, b_name: str) -> None:
    only_a, only_b = sorted(a - b), sorted(b - a)
    if only_a or only_b:
        parts = []
        if only_b:
            parts.append(f"missing from {a_name}: {only_b}")
        if only_a:
            parts.append(f"missing from {b_name}: {only_a}")
        raise ReportError("(value, seed) grids differ; " + "; ".join(parts))


def _normalized(cells: list[Cell], base: list[Cell], attr: str) -> tuple[float, int]:
    """Mean over cells of value / baseline mean at the same sweep value.

    Cells whose baseline mean is exactly zero have no defined ratio; they are
    skipped and counted.
    """
    by_value: dict[float, list[float]] = {}
    for c in base:
        by_value.setdefault(c.value, []).append(getattr(c, attr))
    denom = {v: float(np.mean(xs)) for v, xs in by_value.items()}
    ratios = [getattr(c, attr) / denom[c.value] for c in cells if denom[c.value] != 0.0]
    skipped = len(cells) - len(ratios)
    return (float(np.mean(ratios)) if ratios else math.nan), skipped


def aggregate(raw_rows: Sequence[dict], baseline_rows: Sequence[dict] | None = None) -> AggregateReport:
    """Summarize one run; with a baseline, add normalized reward and cost."""
    cells = cells_from_raw(raw_rows)
    run, parameter = _single_run(cells, "raw results")
    report = dict(
        run=run,
        parameter=parameter,
        cells=tuple(cells),
        pct_safe=100.0 * float(np.mean([c.safe for c in cells])),
        mean_reward=float(np.mean([c.mean_reward for c in cells])),
        mean_cost=float(np.mean([c.mean_cost for c in cells])),
    )
    if baseline_rows is not None:
        base = cells_from_raw(baseline_rows)
        base_run, base_parameter = _single_run(base, "baseline results")
        if base_parameter != parameter:
            raise ReportError(f"baseline sweeps {base_parameter!r}, run sweeps {parameter!r}")
        _check_grid({c.key for c in cells}, {c.key for c in base}, "run", "baseline")
        nr, rs = _normalized(cells, base, "mean_reward")
        nc, cs = _normalized(cells, base, "mean_cost")
        report.update(baseline=base_run, normalized_reward=nr, normalized_cost=nc, reward_skipped=rs, cost_skipped=cs)
    return AggregateReport(**report)


def report_row(report: AggregateReport) -> dict:
    return {
        "run": report.run,
        "parameter": report.parameter,
        "values": ";".join(repr(v) for v in report.values),
        "seeds": ";".join(str(s) for s in report.seeds),
        "cells": len(report.cells),
        "pct_safe": report.pct_safe,
        "mean_reward": report.mean_reward,
        "mean_cost": report.mean_cost,
        "baseline": report.baseline or "",
        "normalized_reward": report.normalized_reward,
        "normalized_cost": report.normalized_cost,
        "reward_skipped": report.reward_skipped,
        "cost_skipped": report.cost_skipped,
    }


def _num(text) -> float:
    return math.nan if text in ("", None) else float(text)


def compare(rows: Sequence[dict]) -> list[dict]:
    """Order summary rows by % safe (descending), ties by normalized reward.

    All rows must share the sweep parameter, values and seeds.
    """
    if not rows:
        raise ReportError("nothing to compare")
    grids = {(r["parameter"], r["values"], r["seeds"]) for r in rows}
    if len(grids) != 1:
        raise ReportError(f"summaries use different sweep grids: {sorted(grids)}")
    if not rows[0]["values"] or int(rows[0]["cells"]) == 0:
        raise ReportError("summaries have an empty grid")

    def key(row):
        nr = _num(row["normalized_reward"])
        return (-_num(row["pct_safe"]), -(nr if not math.isnan(nr) else -math.inf), row["run"])

    return sorted(rows, key=key)


def format_table(rows: Sequence[dict]) -> str:
    """Fixed-width text rendering of compared summary rows."""
    header = f"{'run':<24}{'% safe':>8}{'norm. reward':>14}{'norm. cost':>12}{'mean reward':>13}{'mean cost':>11}"
    lines = [header, "-" * len(header)]
    for r in rows:
        nr, nc = _num(r["normalized_reward"]), _num(r["normalized_cost"])
        lines.append(
            f"{r['run']:<24}{_num(r['pct_safe']):>7.1f}%"
            f"{'-' if math.isnan(nr) else f'{nr:.2f}':>14}{'-' if math.isnan(nc) else f'{nc:.2f}':>12}"
            f"{_num(r['mean_reward']):>13.3f}{_num(r['mean_cost']):>11.3f}"
        )
    return "\n".join(lines)
