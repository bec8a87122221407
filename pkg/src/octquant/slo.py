"""En face vessel morphology from SLO segmentation masks."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from skimage import measure, morphology, transform

from .errors import (
    EmptyDiscMask,
    EmptyMask,
    EmptySkeleton,
    NonSquareInput,
    NoUsableSegments,
    NoVessels,
    UnderCount,
    ZoneExceedsImage,
)

SEGMENTATION_SIDE = 768
KNUDTSON_K = {"artery": 0.88, "vein": 0.95}
_EIGHT = np.ones((3, 3), dtype=bool)


# --------------------------------------------------------------------------
# whole-mask metrics


def box_sizes(side: int) -> list[int]:
    """Powers of two from 2 up to a quarter of ``side``."""
    out, s = [], 2
    while s <= side / 4:
        out.append(s)
        s *= 2
    return out


def box_counts(mask: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    """Occupied boxes per size, with the grid anchored at the mask's bounding box."""
    m = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(m)
    m = m[rows.min():, cols.min():]
    counts = []
    for s in sizes:
        h = -(-m.shape[0] // s) * s
        w = -(-m.shape[1] // s) * s
        p = np.zeros((h, w), bool)
        p[: m.shape[0], : m.shape[1]] = m
        counts.append(np.count_nonzero(p.reshape(h // s, s, w // s, s).any(axis=(1, 3))))
    return np.asarray(counts)


def fractal_dimension(mask: np.ndarray) -> float:
    """Minkowski-Bouligand dimension by box counting.

    Anchoring the box grid at the mask's bounding box makes the estimate
    independent of where the structure sits inside the image.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMask("fractal dimension of an empty mask")
    sizes = box_sizes(min(m.shape))
    if len(sizes) < 2:
        raise ValueError("image too small for a box-count ladder")
    n = box_counts(m, sizes)
    slope, _ = np.polyfit(np.log(1.0 / np.asarray(sizes, float)), np.log(n), 1)
    return float(slope)


def vessel_density(mask: np.ndarray) -> float:
    m = np.asarray(mask, dtype=bool)
    return float(m.mean()) if m.size else 0.0


def skeleton_of(mask: np.ndarray) -> np.ndarray:
    return morphology.skeletonize(np.asarray(mask, dtype=bool))


def global_calibre(mask: np.ndarray) -> float:
    """Vessel pixels per skeleton pixel, i.e. mean width in pixels."""
    m = np.asarray(mask, dtype=bool)
    sk = skeleton_of(m)
    n = np.count_nonzero(sk)
    if n == 0:
        raise EmptySkeleton("no skeleton pixels")
    return float(np.count_nonzero(m) / n)


# --------------------------------------------------------------------------
# segments


@dataclass(frozen=True)
class VesselSkeleton:
    """Skeleton split into ordered centreline segments.

    ``labels`` assigns every skeleton pixel (branch pixels included) to one
    segment id (1-based, index ``id - 1`` into ``segments``). Segments shorter
    than the length floor are kept but excluded from ``usable``.
    """

    skeleton: np.ndarray
    labels: np.ndarray
    segments: list[np.ndarray]
    widths: np.ndarray
    min_length: int
    branch_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))

    @property
    def usable(self) -> list[int]:
        return [i for i, s in enumerate(self.segments) if len(s) >= self.min_length]


def _neighbour_count(sk: np.ndarray) -> np.ndarray:
    return ndimage.convolve(sk.astype(np.int32), _EIGHT.astype(np.int32), mode="constant") - sk


def _order_path(pixels: np.ndarray) -> np.ndarray:
    """Order the pixels of a simple 8-connected path from one end to the other."""
    if len(pixels) <= 2:
        return pixels
    index = {tuple(p): i for i, p in enumerate(pixels)}
    nbrs: list[list[int]] = [[] for _ in pixels]
    for i, (r, c) in enumerate(pixels):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if (dr or dc) and (r + dr, c + dc) in index:
                    nbrs[i].append(index[(r + dr, c + dc)])
    ends = [i for i, nb in enumerate(nbrs) if len(nb) == 1]
    start = ends[0] if ends else 0
    order, seen, cur = [start], {start}, start
    while True:
        # prefer 4-connected steps so corners are not skipped
        cand = [j for j in nbrs[cur] if j not in seen]
        if not cand:
            break
        cand.sort(key=lambda j: abs(pixels[j][0] - pixels[cur][0]) + abs(pixels[j][1] - pixels[cur][1]))
        cur = cand[0]
        order.append(cur)
        seen.add(cur)
    if len(order) < len(pixels):
        rest = [i for i in range(len(pixels)) if i not in seen]
        order.extend(rest)
    return pixels[order]


def decompose_segments(mask: np.ndarray, min_length: int | None = None) -> VesselSkeleton:
    """Thin, split at branch pixels and measure each segment's mean width.

    Width is the vessel area nearest to a segment's skeleton pixels divided by
    its skeleton length.
    """
    m = np.asarray(mask, dtype=bool)
    if min_length is None:
        min_length = max(3, int(round(10 * max(m.shape) / SEGMENTATION_SIDE)))
    sk = skeleton_of(m)
    if not sk.any():
        return VesselSkeleton(sk, np.zeros(m.shape, np.int32), [], np.zeros(0), min_length)
    branch = sk & (_neighbour_count(sk) >= 3)
    lab, nseg = ndimage.label(sk & ~branch, structure=_EIGHT)
    # isolated branch clusters with no arms become their own segments
    extra, nextra = ndimage.label(branch, structure=_EIGHT)
    if nseg:
        _, (ii, jj) = ndimage.distance_transform_edt(lab == 0, return_indices=True)
        nearest = lab[ii, jj]
    else:
        nearest = np.zeros_like(lab)
    labels = lab.copy()
    for k in range(1, nextra + 1):
        cl = extra == k
        touching = np.unique(lab[ndimage.binary_dilation(cl, _EIGHT)])
        touching = touching[touching > 0]
        if touching.size:
            labels[cl] = nearest[cl]
        else:
            nseg += 1
            labels[cl] = nseg
    segments = []
    n_arm = int(lab.max())
    for sid, sl in enumerate(ndimage.find_objects(labels), start=1):
        src = lab if sid <= n_arm else labels
        pix = np.argwhere(src[sl] == sid) + np.array([sl[0].start, sl[1].start])
        segments.append(_order_path(pix) if sid <= n_arm else pix)
    # width: vessel area nearest each skeleton pixel, pooled per segment
    _, (vi, vj) = ndimage.distance_transform_edt(~sk, return_indices=True)
    owner = labels[vi, vj][m]
    area = np.bincount(owner, minlength=nseg + 1)[1:]
    length = np.bincount(labels[sk], minlength=nseg + 1)[1:]
    widths = area / np.maximum(length, 1)
    bp = np.argwhere(branch)
    return VesselSkeleton(sk, labels, segments, widths.astype(float), min_length, bp)


# --------------------------------------------------------------------------
# summary calibres


def knudtson_equivalent(widths: Sequence[float], vessel_type: str) -> float:
    """Knudtson summary calibre from up to the six largest widths.

    Each round sorts the widths, combines smallest with largest as
    ``k * sqrt(w1**2 + w2**2)`` and carries the middle one when the count is odd.
    """
    k = KNUDTSON_K[vessel_type]
    w = sorted((float(x) for x in widths), reverse=True)
    if not w:
        raise NoVessels("no vessel widths")
    if any(x <= 0 for x in w):
        raise ValueError("widths must be positive")
    if len(w) < 6:
        warnings.warn(f"only {len(w)} {vessel_type} widths available", UnderCount, stacklevel=2)
    cur = np.sort(np.asarray(w[:6]))
    while cur.size > 1:
        half = cur.size // 2
        lo, hi = cur[:half], cur[::-1][:half]
        nxt = k * np.sqrt(lo**2 + hi**2)
        if cur.size % 2:
            nxt = np.append(nxt, cur[half])
        cur = np.sort(nxt)
    return float(cur[0])


# --------------------------------------------------------------------------
# tortuosity


def smooth_path(points: np.ndarray, window: int = 5) -> np.ndarray:
    """Centred moving average along a pixel path, shrinking at the ends."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 3 or window <= 1:
        return p
    h = window // 2
    c = np.vstack([np.zeros((1, 2)), np.cumsum(p, axis=0)])
    i = np.arange(len(p))
    lo, hi = np.maximum(i - h, 0), np.minimum(i + h + 1, len(p))
    # symmetric shrink keeps end points fixed
    span = np.minimum(i - lo, hi - 1 - i)
    lo, hi = i - span, i + span + 1
    return (c[hi] - c[lo]) / (hi - lo)[:, None]


def _arc(p: np.ndarray) -> float:
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def _chord(p: np.ndarray) -> float:
    return float(np.hypot(*(p[-1] - p[0])))


def curvature_subsegments(points: np.ndarray, tol: float = 1e-9) -> list[np.ndarray]:
    """Split a path where the turning direction changes sign."""
    p = np.asarray(points, dtype=np.float64)
    d = np.diff(p, axis=0)
    turn = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    sign = np.where(np.abs(turn) > tol, np.sign(turn), 0.0)
    cuts, last = [], 0.0
    for i, s in enumerate(sign):
        if s == 0:
            continue
        if last and s != last:
            cuts.append(i + 1)  # vertex shared by both subsegments
        last = s
    bounds = [0] + cuts + [len(p) - 1]
    return [p[a : b + 1] for a, b in zip(bounds[:-1], bounds[1:])]


def segment_tortuosity_density(points: np.ndarray) -> float:
    """Tortuosity density of one centreline.

    ``(n - 1) / n + (1 / L) * sum(arc_i / chord_i - 1)`` over the ``n``
    constant-curvature-sign subsegments, ``L`` the total arc length.
    """
    p = np.asarray(points, dtype=np.float64)
    length = _arc(p)
    if len(p) < 3 or length == 0:
        return 0.0
    subs = curvature_subsegments(p)
    n = len(subs)
    excess = sum(_arc(s) / _chord(s) - 1.0 for s in subs if _chord(s) > 0)
    return (n - 1) / n + excess / length


def tortuosity_density(segments: VesselSkeleton | Sequence[np.ndarray], smooth: int = 5) -> float:
    """Mean tortuosity density over segments with at least three points."""
    if isinstance(segments, VesselSkeleton):
        paths = [segments.segments[i] for i in segments.usable]
    else:
        paths = list(segments)
    paths = [np.asarray(s) for s in paths if len(s) >= 3]
    if not paths:
        raise NoUsableSegments("no segment with three or more points")
    return float(np.mean([segment_tortuosity_density(smooth_path(s, smooth)) for s in paths]))


# --------------------------------------------------------------------------
# optic disc and zones


@dataclass(frozen=True)
class DiscEllipse:
    center: tuple[float, float]  # (x, y)
    major: float
    minor: float
    orientation_degrees: float

    @property
    def diameter(self) -> float:
        return 0.5 * (self.major + self.minor)

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


def fit_disc_ellipse(mask: np.ndarray) -> DiscEllipse:
    """Second-moment ellipse of the largest connected component."""
    m = np.asarray(mask, dtype=bool)
    lab, n = ndimage.label(m, structure=_EIGHT)
    if n == 0:
        raise EmptyDiscMask("optic disc mask is empty")
    sizes = np.bincount(lab.ravel())[1:]
    props = measure.regionprops((lab == int(np.argmax(sizes)) + 1).astype(np.uint8))[0]
    r, c = props.centroid
    major, minor = props.axis_major_length, props.axis_minor_length
    if minor <= 0:
        minor = major = max(major, 1.0)
    return DiscEllipse((float(c), float(r)), float(major), float(minor), float(np.degrees(props.orientation)))


class Zone(str, enum.Enum):
    B = "B"
    C = "C"


ZONE_RADII = {Zone.B: (0.5, 1.0), Zone.C: (0.5, 2.0)}  # in disc diameters beyond the margin


@dataclass(frozen=True)
class ZoneMask:
    mask: np.ndarray
    inner_radius: float
    outer_radius: float
    clipped: bool


def zone_mask(disc: DiscEllipse, zone: Zone | str, image_shape: tuple[int, int]) -> ZoneMask:
    """Annulus around the disc: ``R + a*D < d <= R + b*D``."""
    zone = Zone(zone)
    a, b = ZONE_RADII[zone]
    r, d = disc.radius, disc.diameter
    inner, outer = r + a * d, r + b * d
    h, w = image_shape
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(xx - disc.center[0], yy - disc.center[1])
    cx, cy = disc.center
    clipped = cx - outer < 0 or cy - outer < 0 or cx + outer > w - 1 or cy + outer > h - 1
    if clipped:
        warnings.warn(f"zone {zone.value} extends beyond the image", ZoneExceedsImage, stacklevel=2)
    return ZoneMask((dist > inner) & (dist <= outer), inner, outer, clipped)


# --------------------------------------------------------------------------
# resizing


@dataclass(frozen=True)
class ResizeTransform:
    native_shape: tuple[int, int]
    side: int

    def inverse(self, arr: np.ndarray) -> np.ndarray:
        a = np.asarray(arr, dtype=np.float64)
        if a.shape == self.native_shape:
            return a
        return transform.resize(a, self.native_shape, order=1, preserve_range=True, anti_aliasing=False)


def resize_for_segmentation(image: np.ndarray, side: int = SEGMENTATION_SIDE) -> tuple[np.ndarray, ResizeTransform]:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise NonSquareInput(f"expected a square image, got {img.shape}")
    tf = ResizeTransform(img.shape, side)
    if img.shape[0] == side:
        return img, tf
    down = img.shape[0] > side
    out = transform.resize(img, (side, side), order=1, preserve_range=True, anti_aliasing=down)
    return out, tf


# --------------------------------------------------------------------------
# feature collation


def vessel_features(mask: np.ndarray, slo_scale_xy: float, region: np.ndarray | None = None,
                    vessel_type: str | None = None) -> dict[str, float]:
    """Metrics for one vessel mask, optionally restricted to ``region``.

    Lengths are reported in microns via ``slo_scale_xy``.
    """
    m = np.asarray(mask, dtype=bool)
    if region is not None:
        m = m & region
    out: dict[str, float] = {}
    area_px = m.size if region is None else int(np.count_nonzero(region))
    out["vessel_density"] = float(np.count_nonzero(m) / area_px) if area_px else math.nan
    out["fractal_dimension"] = fractal_dimension(m) if m.any() else math.nan
    try:
        out["average_global_calibre"] = global_calibre(m) * slo_scale_xy
    except EmptySkeleton:
        out["average_global_calibre"] = math.nan
    vs = decompose_segments(m)
    use = vs.usable
    widths = vs.widths[use] * slo_scale_xy if use else np.zeros(0)
    out["average_local_calibre"] = float(widths.mean()) if widths.size else math.nan
    try:
        out["tortuosity_density"] = tortuosity_density(vs)
    except NoUsableSegments:
        out["tortuosity_density"] = math.nan
    if vessel_type in KNUDTSON_K:
        key = "CRAE_Knudtson" if vessel_type == "artery" else "CRVE_Knudtson"
        out[key] = knudtson_equivalent(widths, vessel_type) if widths.size else math.nan
    return out
