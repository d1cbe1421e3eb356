"""Regression metrics, pose error and report files.

Metric names follow the comparison-table convention: MAE is the maximum
absolute error, AE the mean absolute error, Loss the mean squared error and
E>0.01 the percentage of individual error components whose magnitude
strictly exceeds the threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, ParseError, ShapeError

SCHEMA_VERSION = 1
TABLE_COLUMNS = ("Model", "MAE", "AE", "Loss", "E>0.01")
UNIT_TOL = 1e-6


@dataclass
class MetricsReport:
    model_name: str
    mae: float
    ae: float
    loss: float
    pct_gt_threshold: float
    sample_count: int
    threshold: float = 0.01
    pose_error_mean: Optional[float] = None
    # the same four metrics on standardised targets, when available
    normalized: Optional[dict] = None
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = {
            "Model": self.model_name,
            "MAE": self.mae,
            "AE": self.ae,
            "Loss": self.loss,
            "E>0.01": self.pct_gt_threshold,
            "pose_error_mean": self.pose_error_mean,
            "sample_count": self.sample_count,
            "threshold": self.threshold,
        }
        if self.normalized is not None:
            d["normalized"] = dict(self.normalized)
        if self.extra:
            d["extra"] = dict(self.extra)
        return d

    @classmethod
    def from_row(cls, d) -> "MetricsReport":
        try:
            return cls(
                model_name=str(d["Model"]),
                mae=float(d["MAE"]),
                ae=float(d["AE"]),
                loss=float(d["Loss"]),
                pct_gt_threshold=float(d["E>0.01"]),
                sample_count=int(d["sample_count"]),
                threshold=float(d.get("threshold", 0.01)),
                pose_error_mean=None if d.get("pose_error_mean") is None else float(d["pose_error_mean"]),
                normalized=d.get("normalized"),
                extra=dict(d.get("extra", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"malformed report row: {e}") from None


def _errors(preds, targets):
    P = np.asarray(preds, dtype=float)
    T = np.asarray(targets, dtype=float)
    if P.shape != T.shape:
        raise ShapeError(f"predictions {P.shape} and targets {T.shape} differ in shape")
    if P.size == 0:
        raise InputError("cannot score an empty prediction set")
    return P - T


def regression_metrics(preds, targets, threshold: float = 0.01, model_name: str = "model") -> MetricsReport:
    e = _errors(preds, targets)
    a = np.abs(e)
    return MetricsReport(
        model_name=model_name,
        mae=float(a.max()),
        ae=float(a.mean()),
        loss=float(np.mean(e * e)),
        pct_gt_threshold=100.0 * np.count_nonzero(a > threshold) / a.size,
        sample_count=int(e.shape[0]) if e.ndim > 1 else int(e.size),
        threshold=float(threshold),
    )


def _unit(q, name):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ShapeError(f"{name} must have 4 components")
    n = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(n - 1.0) > UNIT_TOL):
        raise InputError(f"{name} is not a unit quaternion (norm {np.max(np.abs(n - 1.0)) + 1:.9g})")
    return q


def quaternion_distance(q1, q2):
    """Geodesic angle ``2 arccos(min(1, |<q1, q2>|))`` in radians; broadcasts
    over leading axes.

    Evaluated as ``4 atan2(|q1 - s q2|, |q1 + s q2|)`` with ``s`` the sign of
    the dot product, which is the same angle for unit inputs but stays exact
    near zero where arccos loses half the digits.
    """
    q1 = _unit(q1, "q1")
    q2 = _unit(q2, "q2")
    s = np.where(np.sum(q1 * q2, axis=-1) < 0, -1.0, 1.0)[..., None]
    d = 4.0 * np.arctan2(np.linalg.norm(q1 - s * q2, axis=-1), np.linalg.norm(q1 + s * q2, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


def pose_error(pred, truth):
    """``||dp_pred - dp_true|| + d(q_pred, q_true)`` for 7-component actions
    ``(dp, q)``. Mixed units (metres plus radians)."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.shape[-1] != 7:
        raise ShapeError("actions must be 7-vectors of matching shape")
    e = np.linalg.norm(pred[..., :3] - truth[..., :3], axis=-1) + quaternion_distance(pred[..., 3:], truth[..., 3:])
    return float(e) if np.ndim(e) == 0 else e


def project_actions(A) -> np.ndarray:
    """Rescale the quaternion part of predicted actions to unit norm (a zero
    quaternion becomes the identity)."""
    A = np.array(A, dtype=float)
    q = A[..., 3:]
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    ident = np.zeros_like(q)
    ident[..., 0] = 1.0
    A[..., 3:] = np.where(n > 0, q / np.where(n > 0, n, 1.0), ident)
    return A


def mean_pose_error(preds, truths) -> float:
    return float(np.mean(pose_error(project_actions(preds), truths)))


def export_report(reports: Sequence[MetricsReport], path) -> Path:
    reports = list(reports)
    if not reports:
        raise InputError("no reports to export")
    path = Path(path)
    doc = {"schema_version": SCHEMA_VERSION, "columns": list(TABLE_COLUMNS), "reports": [r.row() for r in reports]}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_report(path) -> list:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: not a report file ({e})") from None
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: unsupported report schema version {doc.get('schema_version') if isinstance(doc, dict) else None!r}")
    return [MetricsReport.from_row(r) for r in doc["reports"]]


def format_table(reports: Sequence[MetricsReport]) -> str:
    rows = [list(TABLE_COLUMNS)]
    for r in reports:
        rows.append([r.model_name, f"{r.mae:.6g}", f"{r.ae:.6g}", f"{r.loss:.6g}", f"{r.pct_gt_threshold:.2f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"


def write_trajectory(path, demo_ids, ts, truth, pred, ci_low=None, ci_high=None) -> Path:
    """Per-timestep TSV: ``t``, ``demo_id`` and, for each output dimension k,
    ``truth_k pred_k ci_low_k ci_high_k``. Without an interval the bounds
    equal the prediction."""
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise ShapeError("truth and prediction must be matching 2-D arrays")
    lo = pred if ci_low is None else np.asarray(ci_low, dtype=float)
    hi = pred if ci_high is None else np.asarray(ci_high, dtype=float)
    k = truth.shape[1]
    head = ["t", "demo_id"]
    for j in range(k):
        head += [f"truth_{j}", f"pred_{j}", f"ci_low_{j}", f"ci_high_{j}"]
    lines = ["\t".join(head)]
    for i in range(truth.shape[0]):
        cells = [str(int(ts[i])), str(demo_ids[i])]
        for j in range(k):
            cells += [repr(float(truth[i, j])), repr(float(pred[i, j])), repr(float(lo[i, j])), repr(float(hi[i, j]))]
        lines.append("\t".join(cells))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_trajectory(path) -> dict:
    lines = Path(path).read_text().splitlines()
    head = lines[0].split("\t")
    cols = {h: [] for h in head}
    for line in lines[1:]:
        for h, c in zip(head, line.split("\t")):
            cols[h].append(c)
    out = {"t": np.array([int(v) for v in cols["t"]]), "demo_id": cols["demo_id"]}
    for h in head[2:]:
        out[h] = np.array([float(v) for v in cols[h]])
    return out
