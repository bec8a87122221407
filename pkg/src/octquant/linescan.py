"""Per-B-scan measurements: thickness profiles, subfoveal thickness, area and CVI."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .container import BoundaryCurve
from .errors import (
    EmptyRegionInRoi,
    EmptyRoi,
    FoveaColumnInvalid,
    NegativeThickness,
    NoIntersection,
    RoiClipped,
)

DEFAULT_ROI_HALF_WIDTH = 3000.0
DEFAULT_TANGENT_WINDOW = 5


class ThicknessMode(str, enum.Enum):
    PER_ASCAN = "vertical"
    PERPENDICULAR = "perpendicular"


@dataclass(frozen=True)
class ThicknessProfile:
    """Thickness per column in microns; NaN where ``valid`` is false."""

    values: np.ndarray
    valid: np.ndarray
    layer: str = ""
    mode: ThicknessMode = ThicknessMode.PER_ASCAN

    def __len__(self) -> int:
        return len(self.values)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.valid, self.values, fill)


@dataclass(frozen=True)
class RoiSpec:
    center_column: int
    half_width_microns: float = DEFAULT_ROI_HALF_WIDTH

    def __post_init__(self) -> None:
        if not self.half_width_microns > 0:
            raise ValueError("RoI half width must be positive")

    def columns(self, scale_x: float, width: int) -> slice:
        """Column slice covered by the RoI, clipped to ``[0, width)``."""
        hw = int(round(self.half_width_microns / scale_x))
        lo, hi = self.center_column - hw, self.center_column + hw + 1
        if lo < 0 or hi > width:
            warnings.warn(f"RoI [{lo}, {hi}) clipped to image width {width}", RoiClipped, stacklevel=2)
        lo, hi = max(lo, 0), min(hi, width)
        if hi <= lo:
            raise EmptyRoi("RoI does not overlap the image")
        return slice(lo, hi)


def thickness_per_ascan(upper: BoundaryCurve, lower: BoundaryCurve, scale_y: float,
                        layer: str = "") -> ThicknessProfile:
    """Vertical micron distance between two boundaries, column by column."""
    if len(upper) != len(lower):
        raise ValueError("boundary lengths differ")
    diff = lower.rows - upper.rows
    valid = upper.valid & lower.valid
    crossed = valid & (diff < 0)
    if crossed.any():
        warnings.warn(f"{layer}: {int(crossed.sum())} columns with crossed boundaries", NegativeThickness,
                      stacklevel=2)
        valid = valid & ~crossed
    values = np.where(valid, diff * scale_y, np.nan)
    return ThicknessProfile(values, valid, layer, ThicknessMode.PER_ASCAN)


def _local_slopes(x: np.ndarray, y: np.ndarray, ok: np.ndarray, window: int) -> np.ndarray:
    """Least-squares slope dy/dx over a centred window of valid samples."""
    k = np.ones(window)
    w = ok.astype(np.float64)
    xs, ys = np.where(ok, x, 0.0), np.where(ok, y, 0.0)
    conv = lambda a: ndimage.convolve1d(a, k, mode="constant")  # noqa: E731
    n, sx, sy = conv(w), conv(xs), conv(ys)
    sxx, sxy = conv(xs * xs), conv(xs * ys)
    den = n * sxx - sx * sx
    with np.errstate(divide="ignore", invalid="ignore"):
        m = (n * sxy - sx * sy) / den
    return np.where((n >= 2) & (den > 0), m, np.nan)


def _ray_polyline(ox: np.ndarray, oy: np.ndarray, dx: np.ndarray, dy: np.ndarray,
                  px: np.ndarray, py: np.ndarray, seg_ok: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Smallest non-negative ray parameter hitting the polyline, NaN if none.

    Rays are ``o + s*d``; segments join consecutive polyline points and are
    skipped where ``seg_ok`` is false.
    """
    ax, ay = px[:-1][seg_ok], py[:-1][seg_ok]
    ex, ey = (px[1:] - px[:-1])[seg_ok], (py[1:] - py[:-1])[seg_ok]
    out = np.full(len(ox), np.nan)
    if len(ax) == 0:
        return out
    eps = 1e-9
    for s0 in range(0, len(ox), chunk):
        sl = slice(s0, s0 + chunk)
        rx = ax[None, :] - ox[sl, None]
        ry = ay[None, :] - oy[sl, None]
        den = dx[sl, None] * ey[None, :] - dy[sl, None] * ex[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (rx * ey[None, :] - ry * ex[None, :]) / den
            u = (rx * dy[sl, None] - ry * dx[sl, None]) / den
        hit = (den != 0) & (s >= -eps) & (u >= -eps) & (u <= 1 + eps)
        s = np.where(hit, np.maximum(s, 0.0), np.inf)
        best = s.min(axis=1)
        out[sl] = np.where(np.isfinite(best), best, np.nan)
    return out


def thickness_perpendicular(upper: BoundaryCurve, lower: BoundaryCurve, scale_x: float, scale_y: float,
                            tangent_window: int = DEFAULT_TANGENT_WINDOW, layer: str = "") -> ThicknessProfile:
    """Thickness measured along the local normal of the upper boundary.

    Geometry is handled in microns so anisotropic pixels give the correct
    physical angle. The lower boundary is treated as a polyline.
    """
    if len(upper) != len(lower):
        raise ValueError("boundary lengths differ")
    if tangent_window < 3 or tangent_window % 2 == 0:
        raise ValueError("tangent_window must be odd and >= 3")
    cols = np.arange(len(upper), dtype=np.float64)
    ux, uy = cols * scale_x, upper.rows * scale_y
    lx, ly = cols * scale_x, lower.rows * scale_y
    m = _local_slopes(ux, uy, upper.valid, tangent_window)
    norm = np.sqrt(1.0 + m * m)
    dx, dy = -m / norm, 1.0 / norm  # unit normal pointing down the image
    start_ok = upper.valid & np.isfinite(m)
    seg_ok = lower.valid[:-1] & lower.valid[1:]
    s = np.full(len(upper), np.nan)
    idx = np.flatnonzero(start_ok)
    s[idx] = _ray_polyline(ux[idx], uy[idx], dx[idx], dy[idx], lx, np.where(lower.valid, ly, 0.0), seg_ok)
    missed = start_ok & ~np.isfinite(s)
    if missed.any():
        warnings.warn(f"{layer}: {int(missed.sum())} normals miss the lower boundary", NoIntersection,
                      stacklevel=2)
    valid = np.isfinite(s)
    return ThicknessProfile(np.where(valid, s, np.nan), valid, layer, ThicknessMode.PERPENDICULAR)


def subfoveal_thickness(profile: ThicknessProfile, fovea_column: int) -> float:
    if not 0 <= fovea_column < len(profile) or not profile.valid[fovea_column]:
        raise FoveaColumnInvalid(f"column {fovea_column} has no valid thickness")
    return float(profile.values[fovea_column])


def mask_from_boundaries(upper: BoundaryCurve, lower: BoundaryCurve, height: int) -> np.ndarray:
    """Rasterise the band between two boundaries: rows r with ceil(upper) <= r < ceil(lower)."""
    rows = np.arange(height)[:, None]
    top = np.where(upper.valid, np.ceil(upper.rows), np.inf)
    bot = np.where(lower.valid, np.ceil(lower.rows), -np.inf)
    return (rows >= top[None, :]) & (rows < bot[None, :])


def boundaries_from_mask(mask: np.ndarray) -> tuple[BoundaryCurve, BoundaryCurve]:
    """Top (first foreground row) and bottom (last foreground row + 1) per column."""
    m = np.asarray(mask, dtype=bool)
    any_ = m.any(axis=0)
    top = np.where(any_, m.argmax(axis=0), np.nan).astype(np.float64)
    bot = np.where(any_, m.shape[0] - m[::-1].argmax(axis=0), np.nan).astype(np.float64)
    return BoundaryCurve.from_rows("BM", top), BoundaryCurve.from_rows("CHOR", bot)


def layer_area(layer: np.ndarray | tuple[BoundaryCurve, BoundaryCurve], roi: RoiSpec, scale_x: float,
               scale_y: float, height: int | None = None) -> float:
    """Layer area inside the RoI in mm².

    ``layer`` is either a binary mask or an (upper, lower) boundary pair; the
    pair form needs ``height``.
    """
    if isinstance(layer, tuple):
        if height is None:
            raise ValueError("height required for boundary input")
        mask = mask_from_boundaries(layer[0], layer[1], height)
    else:
        mask = np.asarray(layer, dtype=bool)
    cols = roi.columns(scale_x, mask.shape[1])
    return float(np.count_nonzero(mask[:, cols])) * scale_x * scale_y * 1e-6


def choroid_vascular_index(vessel: np.ndarray, region: np.ndarray, roi: RoiSpec, scale_x: float) -> float:
    """Probability-weighted vessel fraction of the choroid region inside the RoI."""
    vessel = np.asarray(vessel, dtype=np.float64)
    region = np.asarray(region, dtype=bool)
    if vessel.shape != region.shape:
        raise ValueError("vessel and region shapes differ")
    cols = roi.columns(scale_x, region.shape[1])
    reg = region[:, cols]
    n = np.count_nonzero(reg)
    if n == 0:
        raise EmptyRegionInRoi("choroid region empty inside RoI")
    return float(vessel[:, cols][reg].sum() / n)


def roi_mean_thickness(profile: ThicknessProfile, roi: RoiSpec, scale_x: float) -> float:
    cols = roi.columns(scale_x, len(profile))
    v = profile.values[cols][profile.valid[cols]]
    return float(v.mean()) if v.size else math.nan
