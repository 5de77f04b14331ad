"""Result tables and plot data.

Output files (all under the run directory):

``results_<metric>.csv`` / ``.json``
    one row per target type: ``target_type,count,censored,mean,std,ks``.
    ``count`` is uncensored detections; empty cells mean undefined.
``plots_<metric>.json``
    per target type: ``bin_edges``, ``counts`` and cumulative ``cdf``
    over uncensored steps (histogram + cumulative-frequency panels).
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import DataError, InputError
from ..metrics import StepDistribution, dist_stats, ks_statistic

ROW_FIELDS = ("target_type", "count", "censored", "mean", "std", "ks")


@dataclass(frozen=True)
class ResultRow:
    target_type: str
    count: int
    censored: int
    mean: float | None
    std: float | None
    ks: float | None


@dataclass(frozen=True)
class ResultsTable:
    metric: str
    rows: tuple[ResultRow, ...]

    def row(self, target_type: str) -> ResultRow:
        for r in self.rows:
            if r.target_type == target_type:
                return r
        raise KeyError(target_type)

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ROW_FIELDS)
            for r in self.rows:
                w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                            for v in (getattr(r, f) for f in ROW_FIELDS)])

    @classmethod
    def read_csv(cls, path: str | os.PathLike, metric: str) -> ResultsTable:
        def num(s, kind):
            return None if s == "" else kind(s)

        try:
            with open(path, newline="") as fh:
                rows = tuple(
                    ResultRow(d["target_type"], int(d["count"]), int(d["censored"]),
                              num(d["mean"], float), num(d["std"], float), num(d["ks"], float))
                    for d in csv.DictReader(fh)
                )
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read results table {path}: {exc}") from exc
        return cls(metric, rows)

    def to_json(self) -> str:
        return json.dumps({"metric": self.metric, "rows": [asdict(r) for r in self.rows]},
                          indent=2, sort_keys=True) + "\n"


def results_table(metric: str, dists: Mapping[str, StepDistribution], reference: str) -> ResultsTable:
    """Mean/std/KS per target type; KS against ``reference``."""
    if not dists:
        raise InputError("no target types to tabulate")
    if reference not in dists:
        raise InputError(f"reference type {reference!r} missing")
    ref = dists[reference]
    rows = []
    for label, d in dists.items():
        if d.steps:
            s = dist_stats(d)
            mean, std = s.mean, s.std
        else:
            mean = std = None
        ks = ks_statistic(ref, d) if (d.steps and ref.steps) else None
        rows.append(ResultRow(label, len(d.steps), d.censored_count, mean, std, ks))
    return ResultsTable(metric, tuple(rows))


def plot_data(dists: Mapping[str, StepDistribution], steps: int, bin_width: int = 5) -> dict:
    edges = np.arange(0, steps + bin_width + 1, bin_width)
    out = {}
    for label, d in dists.items():
        counts, _ = np.histogram(np.asarray(d.steps, dtype=np.float64), bins=edges)
        total = counts.sum()
        cdf = (np.cumsum(counts) / total) if total else np.zeros(counts.size)
        out[label] = {"bin_edges": edges.tolist(), "counts": counts.tolist(), "cdf": cdf.tolist(),
                      "censored": d.censored_count}
    return out


def emit_tables(out_dir: str | os.PathLike, tables: Sequence[ResultsTable],
                dists: Mapping[str, Mapping[str, StepDistribution]], steps: int, bin_width: int = 5,
                formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write every table (and its plot data) to ``out_dir``; returns written paths."""
    if not tables:
        raise InputError("no results to write")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    written = []
    for t in tables:
        if "csv" in formats:
            p = out / f"results_{t.metric}.csv"
            t.write_csv(p)
            written.append(p)
        if "json" in formats:
            p = out / f"results_{t.metric}.json"
            p.write_text(t.to_json())
            written.append(p)
        p = out / f"plots_{t.metric}.json"
        p.write_text(json.dumps(plot_data(dists[t.metric], steps, bin_width), sort_keys=True) + "\n")
        written.append(p)
    return written
