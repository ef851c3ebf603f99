"""Pore-map peak extraction and TDR/FDR detection scoring.

TDR = TP / (TP + FN) and FDR = FP / (TP + FP), with empty-set conventions
making both NaN-free: no truth and no misses gives TDR 1, no detections
gives FDR 0.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .imagedata import PoreIntensityMap, PorePointSet

DEFAULT_THRESHOLD = 0.5
DEFAULT_NMS_RADIUS = 2.0
# match tolerance in pixels at the reference resolution, scaled with ppi
MATCH_RADIUS_AT_REF = 5.0
REF_PPI = 1200.0

CSV_FIELDS = ("image_id", "threshold", "radius", "tp", "fp", "fn", "tdr", "fdr")


def match_radius_for_ppi(ppi: float) -> float:
    return MATCH_RADIUS_AT_REF * ppi / REF_PPI


@dataclass
class DetectionResult:
    """Extracted pore centers with per-point confidences, strongest first."""

    detected: PorePointSet
    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 1 or len(self.scores) != len(self.detected):
            raise ValueError(
                f"{len(self.scores)} scores for {len(self.detected)} points"
            )
        if len(self.scores) > 1 and np.any(np.diff(self.scores) > 0):
            raise ValueError("scores must be sorted descending")

    def __len__(self) -> int:
        return len(self.detected)


@dataclass
class DetectionMetrics:
    tdr: float
    fdr: float
    true_positives: int
    false_positives: int
    false_negatives: int
    match_radius: float


def _strict_local_maxima(values: np.ndarray) -> np.ndarray:
    """Boolean mask of pixels strictly greater than all existing 8-neighbors."""
    padded = np.full((values.shape[0] + 2, values.shape[1] + 2), -np.inf)
    padded[1:-1, 1:-1] = values
    out = np.ones(values.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbor = padded[1 + dr : 1 + dr + values.shape[0],
                              1 + dc : 1 + dc + values.shape[1]]
            out &= values > neighbor
    return out


def extract_pore_coords(
    pore_map: PoreIntensityMap,
    threshold: float = DEFAULT_THRESHOLD,
    nms_radius: float = DEFAULT_NMS_RADIUS,
) -> DetectionResult:
    """Detect pores as thresholded strict local maxima with radius suppression.

    Candidates at or above `threshold` are ranked by descending score with
    row-major tie-breaking, then greedily suppressed so no two kept points
    lie within `nms_radius` of each other (inclusive).
    """
    values = pore_map.values
    h, w = values.shape
    mask = _strict_local_maxima(values) & (values >= threshold)
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        return DetectionResult(PorePointSet(np.empty((0, 2)), h, w), np.empty(0))
    scores = values[rows, cols]
    order = np.lexsort((cols, rows, -scores))
    coords = np.column_stack([rows, cols]).astype(np.float64)[order]
    scores = scores[order]
    keep = kernels.suppress_sorted(np.ascontiguousarray(coords), float(nms_radius))
    keep = keep.astype(bool)
    return DetectionResult(PorePointSet(coords[keep], h, w), scores[keep])


def match_detections(
    detected: PorePointSet, truth: PorePointSet, radius: float
) -> Tuple[int, int, int, List[Tuple[int, int]]]:
    """Greedy nearest-first one-to-one matching within `radius` (inclusive).

    Candidate pairs are taken in ascending distance, ties broken by detected
    index then truth index. Returns (tp, fp, fn, pairs) where pairs holds
    (detected_index, truth_index) correspondences.
    """
    if (detected.image_height, detected.image_width) != (
        truth.image_height,
        truth.image_width,
    ):
        raise ValueError("detected and truth sets live in different image frames")
    n_a, n_b = len(detected), len(truth)
    if n_a == 0 or n_b == 0:
        return 0, n_a, n_b, []
    diff = detected.points[:, None, :] - truth.points[None, :, :]
    d2 = (diff**2).sum(axis=2)
    ai, bj = np.nonzero(d2 <= radius * radius)
    if len(ai) == 0:
        return 0, n_a, n_b, []
    order = np.lexsort((bj, ai, d2[ai, bj]))
    assign = kernels.match_scan(
        np.ascontiguousarray(ai[order].astype(np.int64)),
        np.ascontiguousarray(bj[order].astype(np.int64)),
        n_a,
        n_b,
    )
    pairs = [(int(i), int(assign[i])) for i in range(n_a) if assign[i] >= 0]
    tp = len(pairs)
    return tp, n_a - tp, n_b - tp, pairs


def detection_metrics(tp: int, fp: int, fn: int, radius: float) -> DetectionMetrics:
    if min(tp, fp, fn) < 0:
        raise ValueError(f"negative count in (tp={tp}, fp={fp}, fn={fn})")
    tdr = tp / (tp + fn) if tp + fn > 0 else 1.0
    fdr = fp / (tp + fp) if tp + fp > 0 else 0.0
    return DetectionMetrics(
        tdr=tdr,
        fdr=fdr,
        true_positives=int(tp),
        false_positives=int(fp),
        false_negatives=int(fn),
        match_radius=float(radius),
    )


def evaluate_detection(
    pore_map: PoreIntensityMap,
    truth: PorePointSet,
    threshold: float = DEFAULT_THRESHOLD,
    nms_radius: float = DEFAULT_NMS_RADIUS,
    match_radius: Optional[float] = None,
) -> DetectionMetrics:
    """Extract pores from a map and score them against ground truth."""
    if match_radius is None:
        match_radius = DEFAULT_NMS_RADIUS + 1.0
    result = extract_pore_coords(pore_map, threshold, nms_radius)
    tp, fp, fn, _ = match_detections(result.detected, truth, match_radius)
    return detection_metrics(tp, fp, fn, match_radius)


def sweep_thresholds(
    pore_map: PoreIntensityMap,
    truth: PorePointSet,
    thresholds: Sequence[float],
    nms_radius: float = DEFAULT_NMS_RADIUS,
    match_radius: float = MATCH_RADIUS_AT_REF,
) -> List[Tuple[float, DetectionMetrics]]:
    """Evaluate detection at each threshold, yielding (threshold, metrics) rows."""
    out = []
    for t in thresholds:
        m = evaluate_detection(pore_map, truth, t, nms_radius, match_radius)
        out.append((float(t), m))
    return out


# ---------------------------------------------------------------------------
# reporting


def metrics_row(image_id: str, threshold: float, m: DetectionMetrics) -> dict:
    return {
        "image_id": image_id,
        "threshold": threshold,
        "radius": m.match_radius,
        "tp": m.true_positives,
        "fp": m.false_positives,
        "fn": m.false_negatives,
        "tdr": m.tdr,
        "fdr": m.fdr,
    }


def write_metrics_csv(rows: Iterable[dict], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def summarize_metrics(per_image: Sequence[DetectionMetrics]) -> dict:
    """Pool raw counts across images and recompute rates on the pooled counts."""
    tp = sum(m.true_positives for m in per_image)
    fp = sum(m.false_positives for m in per_image)
    fn = sum(m.false_negatives for m in per_image)
    pooled = detection_metrics(tp, fp, fn, per_image[0].match_radius if per_image else 0.0)
    return {
        "images": len(per_image),
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "tdr": pooled.tdr,
        "fdr": pooled.fdr,
        "mean_tdr": float(np.mean([m.tdr for m in per_image])) if per_image else 1.0,
        "mean_fdr": float(np.mean([m.fdr for m in per_image])) if per_image else 0.0,
    }


def write_summary_json(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=1, sort_keys=True), encoding="utf-8")
