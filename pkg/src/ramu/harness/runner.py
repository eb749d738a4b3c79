"""Train on the nominal environment, evaluate across the sweep, write artifacts."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import __version__
from ..envs import is_safe, make_sweep, rollout
from ..learn import LOG_FIELDS, train
from .config import ExperimentConfig
from .report import CELL_FIELDS, RAW_FIELDS, SUMMARY_FIELDS, aggregate, read_csv, report_row, write_csv

__all__ = ["OutputError", "run_seed", "run_experiment", "EVAL_STREAM"]

log = logging.getLogger(__name__)

# salt for evaluation streams, kept apart from the training streams of a seed
EVAL_STREAM = 7


class OutputError(OSError):
    """The artifact directory cannot be created or written."""


def run_seed(cfg: ExperimentConfig, seed: int) -> tuple[list[dict], list[dict]]:
    """Train one seed on the nominal environment and roll it out on every sweep point.

    Rollouts for sweep point ``j`` draw from ``default_rng([EVAL_STREAM, seed, j])``,
    so runs that share seeds see common evaluation randomness.
    """
    nominal = cfg.env.with_param(cfg.sweep.parameter, cfg.sweep.nominal)
    result = train(nominal, cfg.learner.replace(seed=seed))
    agent = result.agent()
    rows = []
    for j, point in enumerate(make_sweep(nominal, cfg.sweep)):
        rng = np.random.default_rng([EVAL_STREAM, seed, j])
        for k in range(cfg.rollouts):
            ro = rollout(point.env, agent, point.env.horizon, rng)
            rows.append(
                {
                    "run": cfg.name,
                    "parameter": cfg.sweep.parameter,
                    "value": float(point.value),
                    "seed": seed,
                    "rollout": k,
                    "total_reward": ro.total_reward,
                    "total_cost": ro.total_cost,
                    "budget": float(point.env.budget),
                    "safe": is_safe(ro.total_cost, point.env.budget),
                    "length": len(ro.rewards),
                }
            )
    return rows, result.log


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare(out: Path) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OutputError(f"{out}: output directory is not writable: {exc.strerror or exc}") from None


def _task(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def run_experiment(cfg: ExperimentConfig, out: Path | None = None, jobs: int = 1) -> Path:
    """Run every seed and write raw, cell, summary, log and manifest files.

    Output ordering is fixed (sweep value, seed, rollout) regardless of
    ``jobs``; worker results are collected before anything is written.
    """
    out = Path(out if out is not None else (cfg.output or Path("runs") / cfg.name))
    _prepare(out)
    baseline_rows = read_csv(cfg.baseline, RAW_FIELDS) if cfg.baseline is not None else None

    tasks = [(cfg, seed) for seed in cfg.seeds]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]

    raw = sorted((row for rows, _ in results for row in rows), key=lambda r: (r["value"], r["seed"], r["rollout"]))
    report = aggregate(_as_text(raw), baseline_rows)
    files = {}
    try:
        write_csv(out / "raw.csv", RAW_FIELDS, raw)
        write_csv(out / "cells.csv", CELL_FIELDS, (_cell_row(c) for c in report.cells))
        write_csv(out / "summary.csv", SUMMARY_FIELDS, [report_row(report)])
        files.update({name: _sha256(out / name) for name in ("raw.csv", "cells.csv", "summary.csv")})
        for seed, (_, train_log) in zip(cfg.seeds, results):
            name = f"train_seed{seed}.csv"
            write_csv(out / name, LOG_FIELDS, train_log)
            files[name] = _sha256(out / name)
        manifest = {
            "name": cfg.name,
            "config_sha256": cfg.digest(),
            "seeds": list(cfg.seeds),
            "version": __version__,
            "files": files,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"{out}: cannot write artifacts: {exc.strerror or exc}") from None
    log.info("wrote %s (%d cells, %.1f%% safe)", out, len(report.cells), report.pct_safe)
    return out


def _as_text(rows: list[dict]) -> list[dict]:
    # aggregate consumes rows as read back from CSV, so numbers go through the same repr
    return [{k: (repr(v) if isinstance(v, float) else str(v)) for k, v in row.items()} for row in rows]


def _cell_row(cell) -> dict:
    return {f: getattr(cell, f) for f in CELL_FIELDS}
