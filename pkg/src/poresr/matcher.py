"""Multi-level fingerprint matching and recognition evaluation.

Three simplified matchers cover the classic feature levels: band-pass image
correlation (ridge pattern), crossing-number minutiae with rigid alignment,
and pore constellations matched by local descriptors plus robust geometry.
Scores are min-max normalized and fused by the mean, and ROC/EER machinery
evaluates genuine/imposter protocols.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import fft, ndimage
from scipy.spatial.distance import cdist
from skimage.filters import threshold_otsu
from skimage.morphology import skeletonize

from . import kernels
from .imagedata import FingerprintImage, Manifest, ManifestRecord, PorePointSet
from .poreeval import DetectionResult

LEVELS = ("L1L2_corr", "L2_minutiae", "L3_pore", "fused")

MINUTIA_KINDS = ("ending", "bifurcation")
BORDER_MARGIN = 8  # px; minutiae closer to the edge are discarded
POSITION_TOL = 10.0  # px; minutiae pairing tolerance after alignment
ANGLE_TOL = math.pi / 8.0

CORR_MAX_SHIFT = 16  # px translation search window
NOMINAL_RIDGE_PERIOD = 9.0  # px at the 1000 ppi reference
MATCH_REF_PPI = 1000.0

RANSAC_ITERS = 1000
RANSAC_INLIER_AT_REF = 4.0  # px at 1000 ppi
DESCRIPTOR_RADIUS = 7  # half-width of the pore intensity descriptor patch

SCORE_CSV_FIELDS = ("probe", "gallery", "genuine", "level", "value")
ROC_CSV_FIELDS = ("threshold", "far", "tar")


# ---------------------------------------------------------------------------
# domain types


@dataclass
class Minutia:
    """A ridge ending or bifurcation with its local ridge direction."""

    row: float
    col: float
    orientation: float  # radians in [0, pi)
    kind: str

    def __post_init__(self):
        if self.kind not in MINUTIA_KINDS:
            raise ValueError(f"kind must be one of {MINUTIA_KINDS}, got {self.kind!r}")
        if self.row < 0 or self.col < 0:
            raise ValueError(f"negative coordinates ({self.row}, {self.col})")
        self.orientation = float(self.orientation) % math.pi


@dataclass
class MatchScore:
    value: float
    level: str
    pair: Tuple[str, str]
    genuine: bool

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level!r}")
        self.value = float(self.value)
        if self.level == "fused" and not (0.0 <= self.value <= 1.0):
            raise ValueError(f"fused score {self.value} outside [0, 1]")


@dataclass
class RocCurve:
    """Operating points swept over score thresholds, with EER and AUC."""

    points: List[Tuple[float, float, float]]  # (threshold, FAR, TAR)
    eer: float
    auc: float

    def __post_init__(self):
        fars = [p[1] for p in self.points]
        tars = [p[2] for p in self.points]
        if any(b > a + 1e-12 for a, b in zip(fars, fars[1:])):
            raise ValueError("FAR must be non-increasing in threshold")
        if any(b > a + 1e-12 for a, b in zip(tars, tars[1:])):
            raise ValueError("TAR must be non-increasing in threshold")
        if not 0.0 <= self.eer <= 1.0:
            raise ValueError(f"EER {self.eer} outside [0, 1]")


# ---------------------------------------------------------------------------
# minutiae extraction (crossing number on a thinned skeleton)

# 8-neighborhood in cyclic order for the crossing-number transition count
_CYCLE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _crossing_number(skeleton: np.ndarray) -> np.ndarray:
    padded = np.pad(skeleton.astype(np.int8), 1)
    rings = [
        padded[1 + dr : padded.shape[0] - 1 + dr, 1 + dc : padded.shape[1] - 1 + dc]
        for dr, dc in _CYCLE
    ]
    total = np.zeros(skeleton.shape, dtype=np.int16)
    for k in range(8):
        total += np.abs(rings[k] - rings[(k + 1) % 8])
    return total // 2


def _local_direction(skeleton: np.ndarray, row: int, col: int, radius: int = 4) -> float:
    """Principal-axis angle of the skeleton pixels near (row, col), in [0, pi)."""
    r0, r1 = max(row - radius, 0), min(row + radius + 1, skeleton.shape[0])
    c0, c1 = max(col - radius, 0), min(col + radius + 1, skeleton.shape[1])
    rr, cc = np.nonzero(skeleton[r0:r1, c0:c1])
    if len(rr) < 2:
        return 0.0
    dr = rr - rr.mean()
    dc = cc - cc.mean()
    mu20 = np.sum(dc * dc)
    mu02 = np.sum(dr * dr)
    mu11 = np.sum(dc * dr)
    return 0.5 * math.atan2(2.0 * mu11, mu20 - mu02) % math.pi


def extract_minutiae(image: FingerprintImage) -> List[Minutia]:
    """Ridge endings and bifurcations from the thinned binary ridge map.

    Ridges are the dark phase, so the Otsu split keeps pixels below the
    threshold. Skeleton pixels with crossing number 1 are endings, 3 are
    bifurcations; anything within 8 px of the border is dropped as unreliable.
    """
    pixels = image.pixels
    if float(pixels.max()) - float(pixels.min()) < 1e-6:
        raise ValueError("blank image: no ridge structure to binarize")
    ridges = pixels < threshold_otsu(pixels)
    skeleton = skeletonize(ridges)
    if not skeleton.any():
        raise ValueError("empty skeleton: image has no ridge structure")
    cn = _crossing_number(skeleton)
    h, w = skeleton.shape
    out = []
    for row, col in zip(*np.nonzero(skeleton)):
        if cn[row, col] not in (1, 3):
            continue
        if (row < BORDER_MARGIN or col < BORDER_MARGIN
                or row >= h - BORDER_MARGIN or col >= w - BORDER_MARGIN):
            continue
        kind = "ending" if cn[row, col] == 1 else "bifurcation"
        out.append(
            Minutia(float(row), float(col), _local_direction(skeleton, row, col), kind)
        )
    return out


# ---------------------------------------------------------------------------
# minutiae matching (coarse rigid search + iterative refinement)


_KEY_OFFSET = 1 << 20  # bounds |translation| / bin_size in the vote packing


def _angle_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.abs(a - b) % math.pi
    return np.minimum(d, math.pi - d)


def _count_matches(pa: np.ndarray, oa: np.ndarray, pb: np.ndarray, ob: np.ndarray,
                   position_tol: float, angle_tol: float) -> Tuple[int, np.ndarray]:
    """Greedy one-to-one pairing of aligned minutiae within both tolerances."""
    d = cdist(pa, pb)
    ok = (d <= position_tol) & (_angle_diff(oa[:, None], ob[None, :]) <= angle_tol)
    ii, jj = np.nonzero(ok)
    if len(ii) == 0:
        return 0, np.full(len(pa), -1, dtype=np.int64)
    order = np.lexsort((jj, ii, d[ii, jj]))
    assign = kernels.match_scan(
        np.ascontiguousarray(ii[order], dtype=np.int64),
        np.ascontiguousarray(jj[order], dtype=np.int64),
        len(pa), len(pb),
    )
    assign = np.asarray(assign)
    return int(np.sum(assign >= 0)), assign


def _rotate(points: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return points @ rot.T


def minutiae_match_score(
    a: Sequence[Minutia],
    b: Sequence[Minutia],
    position_tol: float = POSITION_TOL,
    angle_tol: float = ANGLE_TOL,
    rotation_range: float = math.pi / 6.0,
    rotation_steps: int = 13,
) -> float:
    """Best-rigid-alignment minutiae agreement, 2*matched / (|a| + |b|).

    For each candidate rotation, translation hypotheses are voted by all
    minutia pairs into coarse bins; the best bin is refined by re-estimating
    the translation from the currently matched pairs.
    """
    if not a or not b:
        return 0.0
    pa = np.array([[m.row, m.col] for m in a], dtype=np.float64)
    pb = np.array([[m.row, m.col] for m in b], dtype=np.float64)
    oa = np.array([m.orientation for m in a])
    ob = np.array([m.orientation for m in b])

    best = 0
    bin_size = position_tol / 2.0
    for theta in np.linspace(-rotation_range, rotation_range, rotation_steps):
        ra = _rotate(pa, theta)
        roa = (oa + theta) % math.pi
        votes = pb[None, :, :] - ra[:, None, :]  # (|a|, |b|, 2) translations
        flat = votes.reshape(-1, 2)
        keys2 = np.round(flat / bin_size).astype(np.int64)
        # pack the 2-d bin key into one int64; the shift keeps packing
        # monotone in (row, col) so the unique order matches the 2-d version
        packed = (keys2[:, 0] + _KEY_OFFSET) * (2 * _KEY_OFFSET) + (
            keys2[:, 1] + _KEY_OFFSET
        )
        _, inverse = np.unique(packed, return_inverse=True)
        counts = np.bincount(inverse)
        for key_idx in np.argsort(counts)[::-1][:3]:
            t = flat[inverse == key_idx].mean(axis=0)
            matched, assign = _count_matches(
                ra + t, roa, pb, ob, position_tol, angle_tol
            )
            # refine: re-estimate translation from the matched pairs
            for _ in range(3):
                ii = np.nonzero(assign >= 0)[0]
                if len(ii) == 0:
                    break
                t = (pb[assign[ii]] - ra[ii]).mean(axis=0)
                prev = assign
                matched, assign = _count_matches(
                    ra + t, roa, pb, ob, position_tol, angle_tol
                )
                if np.array_equal(assign, prev):
                    break
            best = max(best, matched)
        if best == min(len(a), len(b)):
            break
    return 2.0 * best / (len(a) + len(b))


# ---------------------------------------------------------------------------
# correlation matching (band-pass + translation-search NCC)


def _bandpass(pixels: np.ndarray, period: float) -> np.ndarray:
    """Difference of Gaussians passing the ridge spatial frequency."""
    return ndimage.gaussian_filter(pixels, period / 6.0) - ndimage.gaussian_filter(
        pixels, period / 2.0
    )


def _filter_margin(period: float) -> int:
    # support radius of the wider Gaussian at scipy's default truncation
    return int(4.0 * (period / 2.0) + 0.5)


def correlation_match_score(
    a: FingerprintImage,
    b: FingerprintImage,
    max_shift: int = CORR_MAX_SHIFT,
    ridge_period: Optional[float] = None,
) -> float:
    """Translation-searched normalized cross-correlation of band-passed images.

    The shift with the largest correlation magnitude decides; its signed value
    maps from [-1, 1] to [0, 1], so a perfect anti-correlation (an inverted
    copy) scores 0 rather than whatever a weaker positive shift would give.
    """
    if abs(a.ppi - b.ppi) > 1e-9:
        raise ValueError(f"resolution mismatch: {a.ppi} vs {b.ppi} ppi")
    if (abs(a.height - b.height) > max_shift or abs(a.width - b.width) > max_shift):
        raise ValueError(
            f"size mismatch {a.height}x{a.width} vs {b.height}x{b.width} "
            f"exceeds the +/-{max_shift} px search window"
        )
    period = ridge_period
    if period is None:
        period = NOMINAL_RIDGE_PERIOD * a.ppi / MATCH_REF_PPI
    fa = _bandpass(a.pixels, period)
    fb = _bandpass(b.pixels, period)
    # drop the boundary band the filter contaminated, so equal content gives
    # equal filtered values regardless of how each image was cropped
    side = min(fa.shape + fb.shape)
    trim = max(min(_filter_margin(period), (side - 8) // 2), 0)
    if trim:
        fa = fa[trim:-trim, trim:-trim]
        fb = fb[trim:-trim, trim:-trim]

    if fa.shape == fb.shape:
        found, best_val = _corr_search_same_shape(fa, fb, max_shift)
    else:
        found, best_val = _corr_search_loop(fa, fb, max_shift)
    if not found:
        return 0.5  # no overlap carried signal; neutral score
    return float(np.clip((best_val + 1.0) / 2.0, 0.0, 1.0))


def _corr_search_loop(
    fa: np.ndarray, fb: np.ndarray, max_shift: int
) -> Tuple[bool, float]:
    """Reference search: exact per-shift NCC over the overlap window."""
    best_mag = -1.0
    best_val = 0.0
    found = False
    for dr in range(-max_shift, max_shift + 1):
        for dc in range(-max_shift, max_shift + 1):
            ar0, br0 = max(0, dr), max(0, -dr)
            ac0, bc0 = max(0, dc), max(0, -dc)
            hh = min(fa.shape[0] - ar0, fb.shape[0] - br0)
            ww = min(fa.shape[1] - ac0, fb.shape[1] - bc0)
            if hh < 8 or ww < 8:
                continue
            x = fa[ar0 : ar0 + hh, ac0 : ac0 + ww]
            y = fb[br0 : br0 + hh, bc0 : bc0 + ww]
            x = x - x.mean()
            y = y - y.mean()
            nx = np.sqrt(np.sum(x * x))
            ny = np.sqrt(np.sum(y * y))
            if nx < 1e-12 or ny < 1e-12:
                continue
            v = float(np.sum(x * y) / (nx * ny))
            found = True
            if abs(v) > best_mag:
                best_mag = abs(v)
                best_val = v
    return found, best_val


def _window_sums(arr: np.ndarray, max_shift: int) -> np.ndarray:
    """Sum of `arr` over the overlap window for every shift in the search.

    Entry [dr + max_shift, dc + max_shift] covers rows [max(0, dr), ...) of
    the array that stays fixed; the caller flips the lag sign for the moving
    one. Computed from 2-d prefix sums, so the values match direct summation
    up to accumulation order.
    """
    h, w = arr.shape
    p = np.zeros((h + 1, w + 1))
    np.cumsum(arr, axis=0, out=p[1:, 1:])
    np.cumsum(p[1:, 1:], axis=1, out=p[1:, 1:])
    d = np.arange(-max_shift, max_shift + 1)
    r0 = np.maximum(0, d)
    r1 = r0 + (h - np.abs(d))
    c0 = np.maximum(0, d)
    c1 = c0 + (w - np.abs(d))
    return (
        p[r1[:, None], c1[None, :]]
        - p[r0[:, None], c1[None, :]]
        - p[r1[:, None], c0[None, :]]
        + p[r0[:, None], c0[None, :]]
    )


def _corr_search_same_shape(
    fa: np.ndarray, fb: np.ndarray, max_shift: int
) -> Tuple[bool, float]:
    """Equal-shape search via window prefix sums and one FFT cross term.

    Mathematically identical to `_corr_search_loop`; float rounding differs
    at the 1e-12 level because the cross term goes through an FFT.
    """
    h, w = fa.shape
    s = max_shift
    d = np.arange(-s, s + 1)
    hh = h - np.abs(d)
    ww = w - np.abs(d)
    valid = (hh[:, None] >= 8) & (ww[None, :] >= 8)
    if not valid.any():
        return False, 0.0
    # entries outside `valid` are discarded; keep their divisor harmless
    n = np.where(valid, hh[:, None].astype(np.float64) * ww[None, :], 1.0)

    sx = _window_sums(fa, s)
    sxx = _window_sums(fa * fa, s)
    # fb's overlap window sits at the mirrored lag
    sy = _window_sums(fb, s)[::-1, ::-1]
    syy = _window_sums(fb * fb, s)[::-1, ::-1]

    # cross term for all lags at once: correlate(fa, fb)[dr, dc]
    fh = fft.next_fast_len(h + s)
    fw = fft.next_fast_len(w + s)
    spec = fft.rfft2(fa, (fh, fw)) * np.conj(fft.rfft2(fb, (fh, fw)))
    cc = fft.irfft2(spec, (fh, fw))
    sxy = cc[np.ix_(d % fh, d % fw)]

    var_x = np.maximum(sxx - sx * sx / n, 0.0)
    var_y = np.maximum(syy - sy * sy / n, 0.0)
    valid &= (var_x >= 1e-24) & (var_y >= 1e-24)
    if not valid.any():
        return False, 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        v = (sxy - sx * sy / n) / np.sqrt(var_x * var_y)
    mag = np.where(valid, np.abs(v), -1.0)
    idx = int(np.argmax(mag))  # first max in (dr, dc) order, like the loop
    return True, float(v.flat[idx])


# ---------------------------------------------------------------------------
# pore matching (descriptors + mutual NN + consensus alignment)


def _pore_points(obj) -> np.ndarray:
    if isinstance(obj, DetectionResult):
        return obj.detected.points
    if isinstance(obj, PorePointSet):
        return obj.points
    return np.asarray(obj, dtype=np.float64)


def _pore_descriptors(points: np.ndarray, image: FingerprintImage,
                      radius: int) -> np.ndarray:
    padded = np.pad(image.pixels, radius, mode="edge")
    out = np.empty((len(points), (2 * radius + 1) ** 2))
    for k, (pr, pc) in enumerate(points):
        r = int(round(pr)) + radius
        c = int(round(pc)) + radius
        patch = padded[r - radius : r + radius + 1, c - radius : c + radius + 1]
        flat = patch.ravel() - patch.mean()
        norm = np.linalg.norm(flat)
        out[k] = flat / norm if norm > 1e-12 else 0.0
    return out


def pore_match_score(
    pores_a,
    image_a: FingerprintImage,
    pores_b,
    image_b: FingerprintImage,
    descriptor_radius: int = DESCRIPTOR_RADIUS,
    ransac_iters: int = RANSAC_ITERS,
    inlier_radius: Optional[float] = None,
    seed: int = 0,
) -> float:
    """Pore-constellation agreement: inliers / min(|a|, |b|).

    Tentative pore correspondences come from mutual nearest neighbors of
    normalized intensity patches; a rigid transform is then estimated by
    2-point consensus sampling and scored by correspondences it brings within
    the inlier radius.
    """
    pa = _pore_points(pores_a)
    pb = _pore_points(pores_b)
    if len(pa) < 4 or len(pb) < 4:
        return 0.0
    if inlier_radius is None:
        inlier_radius = RANSAC_INLIER_AT_REF * image_a.ppi / MATCH_REF_PPI

    da = _pore_descriptors(pa, image_a, descriptor_radius)
    db = _pore_descriptors(pb, image_b, descriptor_radius)
    dist = cdist(da, db)
    a_best = np.argmin(dist, axis=1)
    b_best = np.argmin(dist, axis=0)
    mutual = np.nonzero(b_best[a_best] == np.arange(len(pa)))[0]
    if len(mutual) < 2:
        return 0.0
    src = pa[mutual]
    dst = pb[a_best[mutual]]

    rng = np.random.default_rng(seed)
    best_inliers = 0
    n = len(src)
    for _ in range(ransac_iters):
        i, j = rng.choice(n, size=2, replace=False)
        va = src[j] - src[i]
        vb = dst[j] - dst[i]
        la = np.linalg.norm(va)
        if la < 1e-9:
            continue
        theta = math.atan2(vb[1], vb[0]) - math.atan2(va[1], va[0])
        moved = _rotate(src - src[i], theta) + dst[i]
        residual = np.linalg.norm(moved - dst, axis=1)
        inliers = int(np.sum(residual <= inlier_radius))
        if inliers > best_inliers:
            best_inliers = inliers
            if best_inliers == n:
                break
    return best_inliers / min(len(pa), len(pb))


# ---------------------------------------------------------------------------
# normalization and fusion


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    """(s - min)/(max - min); degenerate all-equal populations map to 0.5."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty score list")
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < 1e-300:
        return np.full(arr.shape, 0.5)
    return (arr - lo) / (hi - lo)


def fuse_scores(per_level: Sequence[Sequence[MatchScore]]) -> List[MatchScore]:
    """Min-max normalize each level over its whole population, then average
    the levels per pair. Pair order follows the first level."""
    if not per_level or any(not lvl for lvl in per_level):
        raise ValueError("need at least one non-empty level")
    ref = [(s.pair, s.genuine) for s in per_level[0]]
    ref_set = set(ref)
    if len(ref_set) != len(ref):
        raise ValueError("duplicate pairs within a level")
    normalized: List[Dict[Tuple[str, str], float]] = []
    for level_scores in per_level:
        keys = [(s.pair, s.genuine) for s in level_scores]
        if set(keys) != ref_set or len(keys) != len(ref):
            raise ValueError("levels cover different pair sets")
        values = minmax_normalize([s.value for s in level_scores])
        normalized.append({k: v for k, v in zip(keys, values)})
    fused = []
    for pair, genuine in ref:
        mean = float(np.mean([lvl[(pair, genuine)] for lvl in normalized]))
        fused.append(MatchScore(mean, "fused", pair, genuine))
    return fused


# ---------------------------------------------------------------------------
# pairing protocol


def record_id(rec: ManifestRecord) -> str:
    return f"{rec.subject_id}/s{rec.session_id}/i{rec.impression}"


def make_pairs(
    manifest: Manifest,
) -> List[Tuple[ManifestRecord, ManifestRecord, bool]]:
    """Genuine pairs: every session-1 impression against every session-2
    impression of the same subject. Imposter pairs: each subject's first
    session-2 impression against every other subject's first session-1
    impression (ordered, so S subjects give S*(S-1) imposter pairs)."""
    by_subject: Dict[str, Dict[int, List[ManifestRecord]]] = {}
    for rec in manifest.records:
        if rec.session_id is None:
            raise ValueError(f"record {rec.image} has no session label")
        by_subject.setdefault(rec.subject_id, {}).setdefault(
            rec.session_id, []
        ).append(rec)
    subjects = sorted(by_subject)
    for sid in subjects:
        missing = {1, 2} - set(by_subject[sid])
        if missing:
            raise ValueError(f"subject {sid} lacks session(s) {sorted(missing)}")
        for session in by_subject[sid]:
            by_subject[sid][session].sort(key=lambda r: r.impression)

    pairs: List[Tuple[ManifestRecord, ManifestRecord, bool]] = []
    for sid in subjects:
        for probe in by_subject[sid][1]:
            for gallery in by_subject[sid][2]:
                pairs.append((probe, gallery, True))
    for sid in subjects:
        probe = by_subject[sid][2][0]
        for other in subjects:
            if other == sid:
                continue
            pairs.append((probe, by_subject[other][1][0], False))
    return pairs


# ---------------------------------------------------------------------------
# ROC / EER


def roc_and_eer(scores: Sequence[MatchScore]) -> RocCurve:
    """Sweep every distinct score value as a threshold; FAR is the imposter
    rate at or above it, FRR the genuine rate below it. The EER comes from
    linear interpolation where FAR - FRR changes sign, the AUC from the
    trapezoid rule over the swept operating points."""
    genuine = np.array([s.value for s in scores if s.genuine], dtype=np.float64)
    imposter = np.array([s.value for s in scores if not s.genuine], dtype=np.float64)
    if len(genuine) == 0 or len(imposter) == 0:
        raise ValueError("need both genuine and imposter scores")
    thresholds = np.unique(np.concatenate([genuine, imposter]))
    points = []
    for t in thresholds:
        far = float(np.mean(imposter >= t))
        frr = float(np.mean(genuine < t))
        points.append((float(t), far, 1.0 - frr))
    # sentinel above the maximum: everything rejected
    points.append((float(thresholds[-1]) + 1.0, 0.0, 0.0))

    eer = None
    for (t0, far0, tar0), (t1, far1, tar1) in zip(points, points[1:]):
        d0 = far0 - (1.0 - tar0)
        d1 = far1 - (1.0 - tar1)
        if d0 >= 0.0 >= d1:
            frac = 0.0 if d0 == d1 else d0 / (d0 - d1)
            eer = far0 + frac * (far1 - far0)
            break
    if eer is None:  # FAR > FRR everywhere until the sentinel flips it
        eer = points[-1][1]

    # FAR is non-increasing in threshold, so the reversed sweep traces the
    # ROC path with non-decreasing x, as the trapezoid rule needs
    fars = np.array([p[1] for p in points])[::-1]
    tars = np.array([p[2] for p in points])[::-1]
    auc = float(np.trapezoid(tars, fars))
    return RocCurve(points=points, eer=float(eer), auc=auc)


# ---------------------------------------------------------------------------
# artifact output


def write_scores_csv(scores: Sequence[MatchScore], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_CSV_FIELDS)
        for s in scores:
            writer.writerow(
                [s.pair[0], s.pair[1], int(s.genuine), s.level, f"{s.value:.6f}"]
            )


def write_roc_csv(curve: RocCurve, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROC_CSV_FIELDS)
        for t, far, tar in curve.points:
            writer.writerow([f"{t:.6f}", f"{far:.6f}", f"{tar:.6f}"])


def recognition_summary(curves: Dict[str, RocCurve]) -> Dict[str, Dict[str, float]]:
    return {
        level: {"eer": curve.eer, "auc": curve.auc}
        for level, curve in sorted(curves.items())
    }


def write_recognition_summary(curves: Dict[str, RocCurve], path) -> None:
    Path(path).write_text(
        json.dumps(recognition_summary(curves), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
