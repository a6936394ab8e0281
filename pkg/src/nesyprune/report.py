"""Aggregate training run directories into a per-mode summary table.

A run directory holds ``run.json`` (with at least ``mode``, ``seed`` and
``config``) and the ``metrics.csv`` written by :func:`nesyprune.trainer.train`.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .trainer import METRIC_COLUMNS, MODES

FLAG_PP = 1.0
REPORT_COLUMNS = (
    "mode",
    "n_runs",
    "accuracy_mean",
    "accuracy_std",
    "retained_pct",
    "gold_retained_pct",
    "prune_seconds_per_epoch",
    "overhead_pct",
    "delta_vs_baseline_pp",
    "flag",
)


@dataclass
class RunMetrics:
    path: str
    mode: str
    seed: int
    rows: list[dict]

    @property
    def final_accuracy(self) -> float:
        return self.rows[-1]["accuracy"]


@dataclass
class RunReport:
    rows: list[dict]
    runs: list[RunMetrics]
    problems: list[dict] = field(default_factory=list)

    def by_mode(self) -> dict[str, dict]:
        return {r["mode"]: r for r in self.rows}

    def to_json(self) -> dict:
        return {
            "modes": self.rows,
            "runs": [{"path": r.path, "mode": r.mode, "seed": r.seed, "epochs": len(r.rows)} for r in self.runs],
            "problems": self.problems,
        }


def _num(text: str) -> float:
    return float(text) if text != "" else math.nan


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(METRIC_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [{c: int(r[c]) if c == "epoch" else _num(r[c]) for c in METRIC_COLUMNS} for r in reader]


def load_run(run_dir: str | Path) -> RunMetrics:
    d = Path(run_dir)
    meta = json.loads((d / "run.json").read_text(encoding="utf-8"))
    return RunMetrics(str(d), meta["mode"], int(meta["seed"]), read_metrics(d / "metrics.csv"))


def _mean(values: Sequence[float]) -> float | None:
    vals = [v for v in values if not math.isnan(v)]
    return statistics.fmean(vals) if vals else None


def _mean_of_runs(group: Sequence[RunMetrics], column: str) -> float | None:
    """Mean over runs of each run's per-epoch mean."""
    per_run = [_mean([x[column] for x in r.rows]) for r in group]
    return _mean([math.nan if v is None else v for v in per_run])


def overhead_pct(rows: Sequence[dict]) -> float | None:
    """100 * total pruning time / total epoch time over the given metric rows."""
    prune = [r["prune_seconds"] for r in rows]
    epoch = [r["epoch_seconds"] for r in rows]
    if any(math.isnan(v) for v in prune + epoch) or sum(epoch) <= 0:
        return None
    return 100.0 * sum(prune) / sum(epoch)


def _expected_epochs(run_dir: Path) -> int | None:
    try:
        return int(json.loads((run_dir / "run.json").read_text(encoding="utf-8"))["config"]["epochs"])
    except (OSError, KeyError, TypeError, ValueError):
        return None


def report(run_dirs: Sequence[str | Path]) -> RunReport:
    runs: list[RunMetrics] = []
    problems: list[dict] = []
    for d in run_dirs:
        d = Path(d)
        try:
            run = load_run(d)
        except (OSError, ValueError, KeyError) as exc:
            problems.append({"path": str(d), "problem": f"missing or unreadable: {exc}"})
            continue
        expected = _expected_epochs(d)
        if not run.rows:
            problems.append({"path": str(d), "problem": "no epochs recorded"})
            continue
        if expected is not None and len(run.rows) < expected:
            problems.append({"path": str(d), "problem": f"short run: {len(run.rows)} of {expected} epochs"})
            continue
        runs.append(run)

    modes = [m for m in MODES if any(r.mode == m for r in runs)]
    modes += sorted({r.mode for r in runs} - set(modes))
    rows = []
    for mode in modes:
        group = [r for r in runs if r.mode == mode]
        accs = [r.final_accuracy for r in group]
        all_rows = [row for r in group for row in r.rows]
        rows.append(
            {
                "mode": mode,
                "n_runs": len(group),
                "accuracy_mean": _mean(accs),
                "accuracy_std": statistics.stdev(accs) if len(accs) >= 2 else None,
                "retained_pct": _mean_of_runs(group, "retained_pct"),
                "gold_retained_pct": _mean_of_runs(group, "gold_retained_pct"),
                "prune_seconds_per_epoch": _mean([x["prune_seconds"] for x in all_rows]),
                "overhead_pct": overhead_pct(all_rows),
            }
        )
    base = next((r["accuracy_mean"] for r in rows if r["mode"] == "baseline"), None)
    for r in rows:
        if base is None or r["accuracy_mean"] is None:
            r["delta_vs_baseline_pp"], r["flag"] = None, False
        else:
            delta = 100.0 * (r["accuracy_mean"] - base)
            r["delta_vs_baseline_pp"], r["flag"] = delta, abs(delta) > FLAG_PP
    return RunReport(rows, runs, problems)


def _cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report(rep: RunReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "report.csv", "json": out / "report.json"}
    lines = [",".join(REPORT_COLUMNS)] + [",".join(_cell(r[c]) for c in REPORT_COLUMNS) for r in rep.rows]
    paths["csv"].write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["json"].write_text(json.dumps(rep.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths
