"""Post-hoc aggregation of evaluation logs across seeds."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import ConfigurationError

PLOT_COLUMNS = ("episode", "method", "mean", "stderr")


@dataclass
class MethodSummary:
    method: str
    episodes: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_seeds: int


def smooth(values, window: int = 10) -> np.ndarray:
    """Centered moving average, truncated at the edges.

    Point i averages indices i - window//2 .. i + (window - 1)//2 that exist.
    """
    values = np.asarray(values, dtype=np.float64)
    if window <= 1:
        return values.copy()
    lo, hi = window // 2, (window - 1) // 2
    out = np.empty_like(values)
    for i in range(values.shape[0]):
        out[i] = values[max(0, i - lo): i + hi + 1].mean()
    return out


def aggregate_curves(method: str, curves: list[tuple[np.ndarray, np.ndarray]],
                     window: int = 10) -> MethodSummary:
    """Mean and standard error over seeds of per-seed smoothed curves."""
    if not curves:
        raise ConfigurationError(f"no runs for {method}")
    grid = curves[0][0]
    for episodes, _ in curves[1:]:
        if episodes.shape != grid.shape or np.any(episodes != grid):
            raise ConfigurationError(f"{method}: runs have mismatched evaluation grids")
    Y = np.stack([smooth(v, window) for _, v in curves])
    n = Y.shape[0]
    se = Y.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(Y.shape[1])
    return MethodSummary(method, grid.copy(), Y.mean(axis=0), se, n)


def aggregate(run_dirs, window: int = 10) -> list[MethodSummary]:
    """Group run directories by method and summarize each group."""
    from .trial import CSV_NAME, load_run_config, read_eval_csv

    groups: dict[str, list] = {}
    for d in run_dirs:
        cfg = load_run_config(d)
        groups.setdefault(cfg.method, []).append(read_eval_csv(Path(d) / CSV_NAME))
    return [aggregate_curves(m, groups[m], window) for m in sorted(groups)]


def write_summary(summaries: list[MethodSummary], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(["method", "episode", "mean", "stderr", "n_seeds"])
        for s in summaries:
            for e, m, se in zip(s.episodes, s.mean, s.stderr):
                w.writerow([s.method, int(e), repr(float(m)), repr(float(se)), s.n_seeds])


def read_summary(path) -> list[MethodSummary]:
    groups: dict[str, list] = {}
    with open(path, encoding="utf-8") as fp:
        for r in csv.DictReader(fp):
            groups.setdefault(r["method"], []).append(r)
    out = []
    for method, rows in groups.items():
        out.append(MethodSummary(
            method,
            np.array([int(r["episode"]) for r in rows], dtype=np.int64),
            np.array([float(r["mean"]) for r in rows]),
            np.array([float(r["stderr"]) for r in rows]),
            int(rows[0]["n_seeds"]),
        ))
    return out


def emit_plotdata(summaries: list[MethodSummary], path) -> None:
    """Plot-ready CSV: episode, method, mean, stderr."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for s in summaries:
            for e, m, se in zip(s.episodes, s.mean, s.stderr):
                w.writerow([int(e), s.method, repr(float(m)), repr(float(se))])


def read_plotdata(path) -> list[tuple[int, str, float, float]]:
    with open(path, encoding="utf-8") as fp:
        return [(int(r["episode"]), r["method"], float(r["mean"]), float(r["stderr"]))
                for r in csv.DictReader(fp)]
