"""Fold per-run diagnostics into table-shaped CSV/JSON reports."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import PSNR_CAP

CSV_HEADER = ["scenario", "label", "psnr", "ssim", "time_s", "hole_frac", "top1_score"]
LPIPS_NOTE = "LPIPS needs a pretrained perceptual network and is not computed"


@dataclass(frozen=True)
class RunRecord:
    scenario: str
    label: str
    psnr: tuple[float, ...]
    ssim: tuple[float, ...]
    time_s: float
    hole_fracs: tuple[float, ...]
    top1_scores: tuple[float, ...]


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    label: str
    psnr: float
    ssim: float
    time_s: float
    hole_frac: float
    top1_score: float


def load_run(run_dir) -> RunRecord:
    """Read ``diagnostics.json``, ``metrics.csv`` and (optionally) ``manifest.json``."""
    run_dir = Path(run_dir)
    diag = json.loads((run_dir / "diagnostics.json").read_text())
    with open(run_dir / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    manifest = run_dir / "manifest.json"
    time_s = 0.0
    if manifest.exists():
        time_s = float(json.loads(manifest.read_text()).get("timings", {}).get("total_s", 0.0))
    return RunRecord(
        diag["scenario"],
        diag["label"],
        tuple(float(r["psnr"]) for r in rows),
        tuple(float(r["ssim"]) for r in rows),
        time_s,
        tuple(s["mean_hole_before"] for s in diag["segments"]),
        tuple(s["top1_score"] for s in diag["segments"]),
    )


def aggregate(runs: Sequence[RunRecord]) -> list[ReportRow]:
    """One row per (scenario, label), sorted; runs in a group are pooled."""
    if not runs:
        raise ValueError("aggregate needs at least one run")
    groups: dict[tuple[str, str], list[RunRecord]] = defaultdict(list)
    for r in runs:
        if len(r.psnr) != len(r.ssim):
            raise ValueError(f"run {r.scenario}/{r.label}: {len(r.psnr)} PSNR vs {len(r.ssim)} SSIM values")
        groups[(r.scenario, r.label)].append(r)
    rows = []
    for (scenario, label), members in sorted(groups.items()):
        counts = {len(m.psnr) for m in members}
        if len(counts) != 1:
            raise ValueError(f"runs of {scenario}/{label} have inconsistent image counts {sorted(counts)}")
        psnr = np.concatenate([m.psnr for m in members])
        ssim = np.concatenate([m.ssim for m in members])
        rows.append(
            ReportRow(
                scenario,
                label,
                float(min(PSNR_CAP, psnr.mean())),
                float(ssim.mean()),
                float(np.mean([m.time_s for m in members])),
                float(np.mean(np.concatenate([m.hole_fracs for m in members]))),
                float(np.mean(np.concatenate([m.top1_scores for m in members]))),
            )
        )
    return rows


def diffs(rows: Iterable[ReportRow]) -> list[dict]:
    """Metric deltas of every row against the first row of its scenario."""
    out, base = [], {}
    for r in rows:
        b = base.setdefault(r.scenario, r)
        out.append(
            {
                "scenario": r.scenario,
                "label": r.label,
                "baseline": b.label,
                "d_psnr": r.psnr - b.psnr,
                "d_ssim": r.ssim - b.ssim,
                "d_hole_frac": r.hole_frac - b.hole_frac,
            }
        )
    return out


def write_report(rows: Sequence[ReportRow], csv_path=None, json_path=None) -> None:
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([r.scenario, r.label] + [repr(getattr(r, c)) for c in CSV_HEADER[2:]])
    if json_path is not None:
        doc = {
            "rows": [dict(asdict(r), lpips=None) for r in rows],
            "lpips_note": LPIPS_NOTE,
            "diffs": diffs(rows),
        }
        Path(json_path).write_text(json.dumps(doc, indent=1) + "\n")
