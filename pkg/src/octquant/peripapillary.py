"""Circular peripapillary scans: profile, sector grid and disc-overlap index."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .container import Eye, ScanRecord
from .errors import AllZeroSector, DiscUndetected, MissingLandmark, WindowExceedsLength

OVERLAP_WARNING_PERCENT = 15.0
DEFAULT_SMOOTHING_WINDOW = 51

# half-open [lo, hi) spans in degrees, positive towards superior
SECTORS: dict[str, tuple[float, float]] = {
    "temporal": (-45.0, 45.0),
    "supero_temporal": (45.0, 90.0),
    "supero_nasal": (90.0, 135.0),
    "nasal": (135.0, 225.0),
    "infero_nasal": (-135.0, -90.0),
    "infero_temporal": (-90.0, -45.0),
}
PM_BUNDLE = (-30.0, 30.0)


@dataclass(frozen=True)
class CircleGeometry:
    """Acquisition circle in SLO pixels.

    Column ``j`` samples the circle at the anticlockwise image angle
    ``start_angle + direction * 360 * j / width`` (degrees, y axis up).
    """

    center: tuple[float, float]
    radius: float
    start_angle: float
    direction: int
    width: int

    @classmethod
    def from_record(cls, record: ScanRecord) -> "CircleGeometry":
        md = record.metadata
        s, c = record.bscan_line_px(0)
        ang = math.degrees(math.atan2(-(s[1] - c[1]), s[0] - c[0]))
        # temporal -> superior -> nasal -> inferior for either eye
        direction = -1 if md.eye is Eye.RIGHT else 1
        return cls((float(c[0]), float(c[1])), float(np.hypot(*(s - c))), ang, direction, md.bscan_resolution_x)

    def column_angle(self, j) -> np.ndarray:
        return self.start_angle + self.direction * 360.0 * np.asarray(j, float) / self.width

    def point(self, j) -> tuple[np.ndarray, np.ndarray]:
        a = np.radians(self.column_angle(j))
        return self.center[0] + self.radius * np.cos(a), self.center[1] - self.radius * np.sin(a)

    def column_of_angle(self, angle: float) -> int:
        j = self.direction * (angle - self.start_angle) * self.width / 360.0
        return int(round(j)) % self.width


def temporal_center(disc_center: tuple[float, float] | None, fovea: tuple[float, float] | None,
                    circle: CircleGeometry) -> int:
    """Column where the disc-to-fovea ray crosses the acquisition circle.

    Falls back to the lateral centre when either landmark is missing.
    """
    if disc_center is None or fovea is None:
        warnings.warn("no SLO landmarks; temporal centre set to lateral centre", MissingLandmark, stacklevel=2)
        return circle.width // 2
    d = np.asarray(disc_center, float)
    ray = np.asarray(fovea, float) - d
    norm = np.linalg.norm(ray)
    if norm == 0:
        return circle.width // 2
    ray /= norm
    c = np.asarray(circle.center, float)
    # |d + t*ray - c| = r, take the forward root
    oc = d - c
    b = float(ray @ oc)
    disc = b * b - (float(oc @ oc) - circle.radius**2)
    t = -b + math.sqrt(max(disc, 0.0))
    p = d + t * ray
    ang = math.degrees(math.atan2(-(p[1] - c[1]), p[0] - c[0]))
    return circle.column_of_angle(ang)


def relative_angles(width: int, temporal_column: int) -> np.ndarray:
    """Angle of every column from the temporal centre in [-180, 180)."""
    j = np.arange(width, dtype=np.float64)
    return ((j - temporal_column) * 360.0 / width + 180.0) % 360.0 - 180.0


def sector_of(angles: np.ndarray, span: tuple[float, float]) -> np.ndarray:
    lo, hi = span
    a = np.asarray(angles)
    if hi > 180.0:
        return (a >= lo) | (a < hi - 360.0)
    return (a >= lo) & (a < hi)


@dataclass(frozen=True)
class PeripapillaryProfile:
    values: np.ndarray
    angles: np.ndarray
    temporal_center_column: int
    zero_filled: np.ndarray

    @property
    def zero_filled_fraction(self) -> float:
        return float(self.zero_filled.mean())

    @classmethod
    def from_thickness(cls, values: np.ndarray, valid: np.ndarray, temporal_column: int) -> "PeripapillaryProfile":
        valid = np.asarray(valid, bool) & np.isfinite(values)
        v = np.where(valid, values, 0.0)
        return cls(v, relative_angles(len(v), temporal_column), temporal_column, ~valid)


@dataclass(frozen=True)
class PeripapillarySummary:
    sectors: dict[str, float]
    pm_bundle: float
    whole: float
    nt_ratio: float

    def row(self, layer: str) -> dict[str, float]:
        out = {f"peripapillary_{layer}_{k}": v for k, v in self.sectors.items()}
        out[f"peripapillary_{layer}_pm_bundle"] = self.pm_bundle
        out[f"peripapillary_{layer}_all"] = self.whole
        out[f"peripapillary_{layer}_nt_ratio"] = self.nt_ratio
        return out


def _masked_mean(values: np.ndarray, sel: np.ndarray, name: str) -> float:
    if not sel.any():
        warnings.warn(f"sector {name} has no segmented columns", AllZeroSector, stacklevel=3)
        return math.nan
    return float(values[sel].mean())


def sectorize(profile: PeripapillaryProfile) -> PeripapillarySummary:
    ok = ~profile.zero_filled
    a = profile.angles
    sectors = {k: _masked_mean(profile.values, ok & sector_of(a, span), k) for k, span in SECTORS.items()}
    pmb = _masked_mean(profile.values, ok & (a >= PM_BUNDLE[0]) & (a < PM_BUNDLE[1]), "pm_bundle")
    whole = _masked_mean(profile.values, ok, "all")
    t, n = sectors["temporal"], sectors["nasal"]
    nt = n / t if (t and math.isfinite(t) and math.isfinite(n)) else math.nan
    return PeripapillarySummary(sectors, pmb, whole, nt)


def overlap_index(acq_center: tuple[float, float], disc_center: tuple[float, float] | None,
                  disc_diameter_px: float | None) -> tuple[float, bool]:
    """Acquisition-centre offset as a percentage of disc diameter and the warning flag."""
    if disc_center is None or not disc_diameter_px or disc_diameter_px <= 0:
        warnings.warn("optic disc not detected; overlap index unavailable", DiscUndetected, stacklevel=2)
        return math.nan, False
    dist = math.hypot(acq_center[0] - disc_center[0], acq_center[1] - disc_center[1])
    idx = 100.0 * dist / disc_diameter_px
    return idx, idx > OVERLAP_WARNING_PERCENT


def moving_average_profile(values: np.ndarray, window: int = DEFAULT_SMOOTHING_WINDOW,
                           zero_filled: np.ndarray | None = None) -> np.ndarray:
    """Circular moving mean that ignores zero-filled columns."""
    v = np.asarray(values, dtype=np.float64)
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be odd")
    if window > len(v):
        raise WindowExceedsLength(f"window {window} > profile length {len(v)}")
    ok = np.ones(len(v), bool) if zero_filled is None else ~np.asarray(zero_filled, bool)
    num = ndimage.uniform_filter1d(np.where(ok, v, 0.0), window, mode="wrap")
    den = ndimage.uniform_filter1d(ok.astype(np.float64), window, mode="wrap")
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 1e-12, num / den, np.nan)
