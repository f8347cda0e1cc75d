#!/usr/bin/env python3
"""
Run Records and Metrics

JSON-lines run records written by ``editcert certify`` and the metrics
computed from them: clean accuracy, abstain rate, certified accuracy per
radius, median certified radius (absolute and normalised by length) and
class-specific certified rates.

Metrics are a pure function of the records and labels, so recomputing a
report reproduces it byte for byte.

Author: EditCert Project
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .certify import NOT_CERTIFIABLE, UNBOUNDED, CertifiedVerdict, Radius, nu_threshold, radius_upper_bound
from .seqcore import EditOpSet

logger = logging.getLogger(__name__)

RadiusValue = Union[int, str, None]


class JoinError(ValueError):
    """Run records cannot be matched to manifest labels."""


def radius_to_json(radius: Radius) -> RadiusValue:
    if radius == UNBOUNDED:
        return "unbounded"
    if radius == NOT_CERTIFIABLE:
        return None
    return int(radius)


def radius_from_json(value: RadiusValue) -> float:
    """Numeric radius for comparisons: inf when unbounded, NaN when not certified."""
    if value is None:
        return math.nan
    if value == "unbounded":
        return math.inf
    return float(value)


@dataclass
class RunRecord:
    """One certified (or failed) manifest row."""
    path: str
    length: Optional[int]
    pred: Optional[int]
    abstain: bool
    mu_hat: Optional[float]
    mu_lcb: Optional[float]
    radius: Dict[str, RadiusValue]
    ncr_pct: Dict[str, Optional[float]]
    seed: int
    error: Optional[str] = None
    elapsed_s: Optional[float] = None

    def to_dict(self) -> Dict:
        data = {
            "path": self.path,
            "len": self.length,
            "pred": self.pred,
            "abstain": self.abstain,
            "mu_hat": self.mu_hat,
            "mu_lcb": self.mu_lcb,
            "radius": self.radius,
            "ncr_pct": self.ncr_pct,
            "seed": self.seed,
        }
        if self.error is not None:
            data["error"] = self.error
        if self.elapsed_s is not None:
            data["elapsed_s"] = self.elapsed_s
        return data

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, data: Dict) -> "RunRecord":
        return cls(
            path=data["path"],
            length=data.get("len"),
            pred=data.get("pred"),
            abstain=bool(data.get("abstain", False)),
            mu_hat=data.get("mu_hat"),
            mu_lcb=data.get("mu_lcb"),
            radius=dict(data.get("radius") or {}),
            ncr_pct=dict(data.get("ncr_pct") or {}),
            seed=int(data.get("seed", 0)),
            error=data.get("error"),
            elapsed_s=data.get("elapsed_s"),
        )


def record_from_verdict(path: str, verdict: CertifiedVerdict, seed: int) -> RunRecord:
    radius = {ops.key: radius_to_json(r) for ops, r in verdict.radius.items()}
    ncr = {
        key: (100.0 * value / verdict.length if isinstance(value, int) and verdict.length else None)
        for key, value in radius.items()
    }
    return RunRecord(
        path=path,
        length=verdict.length,
        pred=None if verdict.abstain else verdict.prediction,
        abstain=verdict.abstain,
        mu_hat=verdict.mu_hat_predicted,
        mu_lcb=verdict.mu_lcb,
        radius=radius,
        ncr_pct=ncr,
        seed=seed,
    )


def error_record(path: str, ops_list: Sequence[EditOpSet], seed: int, error: str) -> RunRecord:
    return RunRecord(
        path=path, length=None, pred=None, abstain=False, mu_hat=None, mu_lcb=None,
        radius={ops.key: None for ops in ops_list}, ncr_pct={ops.key: None for ops in ops_list},
        seed=seed, error=error,
    )


def read_records(path: Path) -> List[RunRecord]:
    records = []
    with open(path, 'r') as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as e:
                raise ValueError(f"Malformed run record at {path}:{line_num}: {e}")
    return records


def _median(values: List[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


@dataclass
class MetricsReport:
    """Aggregate metrics over a set of run records."""
    total: int
    clean_accuracy: float
    abstain_rate: float
    error_count: int
    radius_grid: List[int]
    certified_accuracy: Dict[str, List[float]]
    median_cr: Dict[str, Optional[float]]
    median_ncr: Dict[str, Optional[float]]
    median_cr_by_class: Dict[int, Dict[str, Optional[float]]]
    certified_rate_by_class: Dict[int, Dict[str, List[float]]]
    class_counts: Dict[int, int]
    upper_bound: Dict[int, Dict[str, RadiusValue]] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """Certified accuracy curve (and class-specific curves) as a tidy table."""
        rows = []
        for key, curve in self.certified_accuracy.items():
            for i, r in enumerate(self.radius_grid):
                row = {"ops": key, "radius": r, "cert_acc": curve[i]}
                for cls, rates in self.certified_rate_by_class.items():
                    row[f"cert_rate_class{cls}"] = rates[key][i]
                rows.append(row)
        return pd.DataFrame(rows)


def compute_metrics(records: Sequence[RunRecord], labels: Dict[str, int],
                    radius_grid: Sequence[int], p_del: Optional[float] = None,
                    eta: Optional[Sequence[float]] = None) -> MetricsReport:
    """
    Metrics over ``records`` joined to ``labels`` by path. Abstentions and
    failed rows count as incorrect; medians are taken over rows that carry a
    certificate.
    """
    missing = [r.path for r in records if r.path not in labels]
    if missing:
        raise JoinError(f"{len(missing)} records have no label, e.g. {missing[0]}")

    grid = sorted(int(r) for r in radius_grid)
    n = len(records)
    y_true = np.array([labels[r.path] for r in records], dtype=np.int64)
    correct = np.array([r.pred is not None and r.pred == labels[r.path] for r in records], dtype=bool)
    abstain = np.array([r.abstain for r in records], dtype=bool)
    keys = sorted({key for r in records for key in r.radius})
    classes = sorted(set(labels.values()))

    def rate(mask: np.ndarray, subset: np.ndarray) -> float:
        size = int(subset.sum())
        return float((mask & subset).sum()) / size if size else 0.0

    everyone = np.ones(n, dtype=bool)
    cert_acc: Dict[str, List[float]] = {}
    median_cr: Dict[str, Optional[float]] = {}
    median_ncr: Dict[str, Optional[float]] = {}
    by_class_cr: Dict[int, Dict[str, Optional[float]]] = {c: {} for c in classes}
    by_class_rate: Dict[int, Dict[str, List[float]]] = {c: {} for c in classes}

    for key in keys:
        radii = np.array([radius_from_json(r.radius.get(key)) for r in records], dtype=float)
        certified = ~np.isnan(radii)
        cert_acc[key] = [rate(correct & certified & (radii >= g), everyone) for g in grid]
        median_cr[key] = _median([v for v in radii if not math.isnan(v)])
        median_ncr[key] = _median([
            r.ncr_pct[key] for r in records if r.ncr_pct.get(key) is not None
        ])
        for c in classes:
            in_class = y_true == c
            by_class_cr[c][key] = _median([v for v, m in zip(radii, in_class) if m and not math.isnan(v)])
            by_class_rate[c][key] = [rate(correct & certified & (radii >= g), in_class) for g in grid]

    upper: Dict[int, Dict[str, RadiusValue]] = {}
    if p_del is not None and eta is not None and len(eta) >= 2:
        for c in range(len(eta)):
            nu = nu_threshold(eta, c, len(eta))
            upper[c] = {key: radius_to_json(radius_upper_bound(nu, p_del, EditOpSet.parse(key))) for key in keys}

    return MetricsReport(
        total=n,
        clean_accuracy=float(correct.mean()) if n else 0.0,
        abstain_rate=float(abstain.mean()) if n else 0.0,
        error_count=sum(1 for r in records if r.error is not None),
        radius_grid=grid,
        certified_accuracy=cert_acc,
        median_cr=median_cr,
        median_ncr=median_ncr,
        median_cr_by_class=by_class_cr,
        certified_rate_by_class=by_class_rate,
        class_counts={c: int((y_true == c).sum()) for c in classes},
        upper_bound=upper,
    )


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return "-"
    if math.isinf(value):
        return "unbounded"
    return f"{value:.2f}"


def format_report(report: MetricsReport) -> str:
    """Human-readable report; deterministic for a given MetricsReport."""
    lines = ["=" * 60, "Certification Metrics Report", "=" * 60, ""]
    lines.append(f"Records:             {report.total:>8}")
    lines.append(f"Failed rows:         {report.error_count:>8}")
    lines.append(f"Clean accuracy:      {report.clean_accuracy:>8.4f}")
    lines.append(f"Abstain rate:        {report.abstain_rate:>8.4f}")
    for cls, count in report.class_counts.items():
        lines.append(f"Class {cls} rows:        {count:>8}")

    for key in report.certified_accuracy:
        lines.append("")
        lines.append(f"Edit ops: {key}")
        lines.append(f"  median CR:  {_fmt(report.median_cr[key])}")
        lines.append(f"  median NCR: {_fmt(report.median_ncr[key])}%")
        for cls in report.median_cr_by_class:
            ub = report.upper_bound.get(cls, {}).get(key, "-")
            lines.append(f"  class {cls}: median CR {_fmt(report.median_cr_by_class[cls][key])}"
                         f"  UB {ub if ub is not None else '-'}")
        header = "  radius  cert_acc" + "".join(f"  rate_c{cls}" for cls in report.certified_rate_by_class)
        lines.append(header)
        for i, r in enumerate(report.radius_grid):
            row = f"  {r:>6}  {report.certified_accuracy[key][i]:>8.4f}"
            row += "".join(f"  {report.certified_rate_by_class[cls][key][i]:>8.4f}"
                           for cls in report.certified_rate_by_class)
            lines.append(row)
    return "\n".join(lines) + "\n"


def write_metrics_csv(report: MetricsReport, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, index=False, float_format="%.6f")
    logger.info(f"Wrote certified accuracy curve to {path}")
