"""Serialization of sweep results: CSV, JSON mirror, comparison report, flash logs."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np

from .simulation import SweepResult

__all__ = [
    "CSV_COLUMNS",
    "MissingBaselineError",
    "sweep_rows",
    "write_sweep_csv",
    "write_sweep_json",
    "compare_to_baseline",
    "write_comparison_report",
    "write_flash_logs",
]

CSV_COLUMNS = (
    "paradigm",
    "dprime",
    "trials",
    "accuracy",
    "acc_ci95",
    "est_scored",
    "est_presented",
    "est_ci95",
    "stop_tmax_fraction",
)
BASELINE = "rc-random"
COLLAPSE_ACCURACY = 0.15


class MissingBaselineError(LookupError):
    """A comparison was requested without an rc-random sweep to compare against."""


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def sweep_rows(result: SweepResult) -> list[dict]:
    """One dict per (paradigm, d') cell, values formatted to 6 significant digits."""
    rows = []
    for c in result.rows():
        row = {name: getattr(c, name) for name in CSV_COLUMNS}
        rows.append({k: (v if k in ("paradigm", "trials") else _fmt(v)) for k, v in row.items()})
    return rows


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(sweep_rows(result))
    return path


def write_sweep_json(result: SweepResult, path, run: Optional[dict] = None) -> Path:
    """JSON mirror of the CSV plus the run configuration that produced it."""
    path = Path(path)
    rows = [
        {k: (v if k in ("paradigm", "trials") else float(v)) for k, v in row.items()}
        for row in sweep_rows(result)
    ]
    doc = {"label": result.label, "run": run or {}, "columns": list(CSV_COLUMNS), "rows": rows}
    path.write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")
    return path


def compare_to_baseline(
    result: SweepResult,
    baseline: Optional[SweepResult] = None,
    dprime_below: Optional[float] = None,
) -> dict:
    """Per-d' accuracy gains and relative EST reductions of every paradigm versus rc-random.

    Accuracy gains are absolute differences (fraction correct); EST
    reductions are ``1 - est / est_baseline``. Maxima are taken over d'
    values strictly below ``dprime_below`` when it is given.

    Raises
    ------
    MissingBaselineError
        If neither ``result`` nor ``baseline`` holds an rc-random sweep.
    """
    base = baseline if baseline is not None else result
    if BASELINE not in base.paradigms:
        raise MissingBaselineError(f"comparison needs a {BASELINE} sweep")
    dprimes = [d for d in result.dprime_values if (BASELINE, d) in base.cells]
    if not dprimes:
        raise MissingBaselineError(f"{BASELINE} sweep shares no d' values with the compared sweep")
    base_acc = np.array([base.cell(BASELINE, d).accuracy for d in dprimes])
    base_est = np.array([base.cell(BASELINE, d).est_scored for d in dprimes])
    in_range = np.array([dprime_below is None or d < dprime_below for d in dprimes])

    out = {"baseline": BASELINE, "dprime_below": dprime_below, "paradigms": {}}
    for p in result.paradigms:
        acc = np.array([result.cell(p, d).accuracy for d in dprimes])
        est = np.array([result.cell(p, d).est_scored for d in dprimes])
        gain = acc - base_acc
        reduction = 1.0 - est / base_est
        entry = {
            "per_dprime": [
                {
                    "dprime": d,
                    "accuracy": float(a),
                    "baseline_accuracy": float(ba),
                    "accuracy_gain": float(g),
                    "est": float(e),
                    "baseline_est": float(be),
                    "est_reduction": float(r),
                }
                for d, a, ba, g, e, be, r in zip(dprimes, acc, base_acc, gain, est, base_est, reduction)
            ],
            "peak_accuracy": float(acc.max()),
            "accuracy_collapse": bool(acc.max() <= COLLAPSE_ACCURACY),
        }
        if in_range.any():
            i = int(np.argmax(np.where(in_range, gain, -np.inf)))
            j = int(np.argmax(np.where(in_range, reduction, -np.inf)))
            entry.update(
                max_accuracy_gain=float(gain[i]),
                max_accuracy_gain_dprime=dprimes[i],
                max_est_reduction=float(reduction[j]),
                max_est_reduction_dprime=dprimes[j],
            )
        out["paradigms"][p] = entry
    return out


def write_comparison_report(
    results: Union[SweepResult, Mapping[str, SweepResult]],
    path,
    baseline: Optional[SweepResult] = None,
    dprime_below: Optional[float] = None,
) -> Path:
    """Write :func:`compare_to_baseline` for one or several conditions as JSON.

    ``results`` may be a single sweep or a mapping from condition label to
    sweep; a sweep lacking its own rc-random cells is compared against
    ``baseline``.
    """
    if isinstance(results, SweepResult):
        results = {results.label or "sweep": results}
    doc = {}
    for label, sweep in results.items():
        base = sweep if BASELINE in sweep.paradigms else baseline
        if base is None:
            raise MissingBaselineError(f"condition {label!r} has no {BASELINE} baseline")
        doc[label] = compare_to_baseline(sweep, base, dprime_below)
    path = Path(path)
    path.write_text(json.dumps({"conditions": doc}, indent=2) + "\n")
    return path


def write_flash_logs(result: SweepResult, directory) -> list[Path]:
    """One tab-separated file per (paradigm, d') cell, one line per presented flash.

    Needs a sweep run with ``keep_results=True``. Unscored flashes (still in
    flight when the trial stopped) carry ``NA`` as their score.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for cell in result.rows():
        path = directory / f"{cell.paradigm}_d{cell.dprime:.2f}.tsv"
        with open(path, "w") as fh:
            fh.write("trial\tstep\tmembers\tscore\tposterior_max\n")
            for trial, res in enumerate(cell.results):
                for rec in res.flash_log:
                    members = " ".join(map(str, rec.flash.members))
                    score = "NA" if rec.score is None else repr(rec.score)
                    fh.write(f"{trial}\t{rec.step}\t{members}\t{score}\t{rec.posterior_max!r}\n")
        written.append(path)
    return written
