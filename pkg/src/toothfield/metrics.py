"""Evaluation: landmark distance error, axis angular error, success rates, reports.

Landmark errors are converted to model units (mm) through the stored
normalization transform; both success-rate definitions use inclusive
thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .errors import EmptyInput, EmptyPrediction
from .fields import AXIS_KINDS, LANDMARK_KINDS, LandmarkSet, ToothAxis
from .geometry import NormalizationTransform

POINT_THRESHOLDS_MM = (0.2, 0.4, 0.6, 0.8, 1.0)
AXIS_THRESHOLDS_DEG = (2.0, 4.0, 6.0, 8.0, 10.0)

LANDMARK_BIN_MM = 0.2
AXIS_BIN_DEG = 2.0
N_LANDMARK_BINS = 10   # 0..2 mm, then overflow
N_AXIS_BINS = 10       # 0..20 deg, then overflow


def landmark_error(pred: np.ndarray, gt: LandmarkSet,
                   transform: NormalizationTransform) -> np.ndarray:
    """Per-GT-landmark Euclidean error in mm, nearest predicted point per GT.

    Both inputs live in the normalized frame; the transform scale converts the
    distances back to model units. Extra predictions are left unmatched.
    """
    gt_pts = np.stack([lm.position for lm in gt.landmarks]) if gt.landmarks else np.zeros((0, 3))
    if len(gt_pts) == 0:
        return np.zeros(0)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    if len(pred) == 0:
        raise EmptyPrediction("no predicted landmarks for a non-empty ground truth")
    d = np.linalg.norm(gt_pts[:, None, :] - pred[None, :, :], axis=2)
    nearest = d.min(axis=1)
    return nearest / transform.scale


def success_rate_points(errors: Sequence[float], r: float) -> float:
    """Percentage of landmark errors <= r (mm); the boundary counts as success."""
    if r <= 0:
        raise EmptyInput(f"threshold must be positive, got {r}")
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise EmptyInput("no landmark errors to score")
    return float(100.0 * np.count_nonzero(errs <= r) / errs.size)


def axis_error(pred: ToothAxis, gt: ToothAxis, mode: str = "directed") -> float:
    """Angle in degrees between two unit axis directions.

    directed: arccos(clamp(p . g, -1, 1)); undirected: arccos(clamp(|p . g|, 0, 1)).
    """
    p = np.asarray(pred.direction, dtype=np.float64)
    g = np.asarray(gt.direction, dtype=np.float64)
    dot = float(p @ g)
    if mode == "directed":
        dot = min(1.0, max(-1.0, dot))
    elif mode == "undirected":
        dot = min(1.0, max(0.0, abs(dot)))
    else:
        raise EmptyInput(f"unknown axis-angle mode {mode!r}")
    return float(np.degrees(np.arccos(dot)))


def success_rate_axes(errors: Sequence[float], dg: float) -> float:
    """Percentage of axis errors <= dg (degrees)."""
    if dg <= 0:
        raise EmptyInput(f"threshold must be positive, got {dg}")
    errs = np.asarray(list(errors), dtype=np.float64)
    if errs.size == 0:
        raise EmptyInput("no axis errors to score")
    return float(100.0 * np.count_nonzero(errs <= dg) / errs.size)


@dataclass
class ToothEvalResult:
    tooth_id: str
    landmark_errors_mm: Dict[str, List[float]] = field(default_factory=dict)
    axis_errors_deg: Dict[str, float] = field(default_factory=dict)
    axis_mode: str = "directed"


@dataclass
class EvalReport:
    axis_mode: str
    mean_landmark_mm: Dict[str, float]
    mean_axis_deg: Dict[str, float]
    sr_points: Dict[float, float]
    sr_axes: Dict[float, float]
    landmark_hist: np.ndarray
    axis_hist: np.ndarray
    n_teeth: int
    n_landmarks: int
    n_axes: int

    def to_text(self) -> str:
        lines = [
            "evaluation report",
            f"axis-mode: {self.axis_mode}",
            f"teeth: {self.n_teeth}  landmarks: {self.n_landmarks}  axes: {self.n_axes}",
            "",
            "mean landmark error (mm) per kind:",
        ]
        for kind in (*LANDMARK_KINDS, "ALL"):
            if kind in self.mean_landmark_mm:
                lines.append(f"  {kind}: {self.mean_landmark_mm[kind]:.6f}")
        lines.append("mean axis error (deg) per kind:")
        for kind in (*AXIS_KINDS, "ALL"):
            if kind in self.mean_axis_deg:
                lines.append(f"  {kind}: {self.mean_axis_deg[kind]:.6f}")
        lines.append("")
        lines.append("landmark success rate (%) at r (mm):")
        for r in POINT_THRESHOLDS_MM:
            lines.append(f"  r={r:.1f}: {self.sr_points[r]:.2f}")
        lines.append("axis success rate (%) at dg (deg):")
        for dg in AXIS_THRESHOLDS_DEG:
            lines.append(f"  dg={dg:.0f}: {self.sr_axes[dg]:.2f}")
        return "\n".join(lines) + "\n"


def _histogram(errors: np.ndarray, bin_width: float, n_bins: int) -> np.ndarray:
    """Counts per bin plus an overflow bin appended at the end."""
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    for e in errors:
        b = int(e / bin_width)
        counts[min(b, n_bins)] += 1
    return counts


def build_report(results: Sequence[ToothEvalResult]) -> EvalReport:
    """Aggregate per-tooth results into per-kind means, SR tables, histograms."""
    results = list(results)
    if not results:
        raise EmptyInput("no per-tooth results to aggregate")
    axis_mode = results[0].axis_mode
    by_kind_lm: Dict[str, List[float]] = {k: [] for k in LANDMARK_KINDS}
    by_kind_ax: Dict[str, List[float]] = {k: [] for k in AXIS_KINDS}
    for r in results:
        for kind, errs in r.landmark_errors_mm.items():
            by_kind_lm[kind].extend(float(e) for e in errs)
        for kind, err in r.axis_errors_deg.items():
            by_kind_ax[kind].append(float(err))
    all_lm = np.asarray([e for v in by_kind_lm.values() for e in v])
    all_ax = np.asarray([e for v in by_kind_ax.values() for e in v])
    mean_lm = {k: float(np.mean(v)) for k, v in by_kind_lm.items() if v}
    mean_ax = {k: float(np.mean(v)) for k, v in by_kind_ax.items() if v}
    if all_lm.size:
        mean_lm["ALL"] = float(np.mean(all_lm))
    if all_ax.size:
        mean_ax["ALL"] = float(np.mean(all_ax))
    sr_p = {r: success_rate_points(all_lm, r) for r in POINT_THRESHOLDS_MM} \
        if all_lm.size else {r: float("nan") for r in POINT_THRESHOLDS_MM}
    sr_a = {dg: success_rate_axes(all_ax, dg) for dg in AXIS_THRESHOLDS_DEG} \
        if all_ax.size else {dg: float("nan") for dg in AXIS_THRESHOLDS_DEG}
    return EvalReport(
        axis_mode=axis_mode,
        mean_landmark_mm=mean_lm,
        mean_axis_deg=mean_ax,
        sr_points=sr_p,
        sr_axes=sr_a,
        landmark_hist=_histogram(all_lm, LANDMARK_BIN_MM, N_LANDMARK_BINS),
        axis_hist=_histogram(all_ax, AXIS_BIN_DEG, N_AXIS_BINS),
        n_teeth=len(results),
        n_landmarks=int(all_lm.size),
        n_axes=int(all_ax.size),
    )


def write_per_tooth_csv(path, results: Sequence[ToothEvalResult]) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("tooth_id,kind,metric,value\n")
        for r in results:
            for kind in LANDMARK_KINDS:
                for e in r.landmark_errors_mm.get(kind, []):
                    fh.write(f"{r.tooth_id},{kind},landmark_mm,{float(e)!r}\n")
            for kind in AXIS_KINDS:
                if kind in r.axis_errors_deg:
                    fh.write(f"{r.tooth_id},{kind},axis_deg,{float(r.axis_errors_deg[kind])!r}\n")


def write_histogram_csv(path, hist: np.ndarray, bin_width: float, label: str) -> None:
    total = int(hist.sum())
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# {label}\n")
        fh.write("bin_start,bin_end,count,percent\n")
        for i, c in enumerate(hist):
            lo = i * bin_width
            hi = (i + 1) * bin_width if i < len(hist) - 1 else float("inf")
            pct = 100.0 * c / total if total else 0.0
            fh.write(f"{lo!r},{hi!r},{int(c)},{pct!r}\n")
