"""En face maps from volume scans and their ETDRS-grid summaries."""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .container import Eye, ScanRecord
from .errors import FoveaOutsideMap, FoveaTie, NoFoveaAnywhere, SingleBscanVolume
from .preprocess import FoveaDetection

ETDRS_DIAMETERS_MM = (1.0, 3.0, 6.0)
QUADRANTS = ("superior", "nasal", "inferior", "temporal")
SUBFIELDS = ("central",) + tuple(f"{ring}_{q}" for ring in ("inner", "outer") for q in QUADRANTS)


class MapKind(str, enum.Enum):
    THICKNESS = "thickness"
    VESSEL_DENSITY = "vessel_density"
    CVI = "vascular_index"


@dataclass(frozen=True)
class ScanGrid:
    """Affine placement of a raster of parallel B-scans on the SLO.

    A sample at B-scan ``i`` and column ``c`` lies at
    ``origin + c * col_step * u + i * row_step * v`` in SLO pixels (x, y).
    """

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    col_step: float
    row_step: float
    n: int
    width: int

    @property
    def angle_degrees(self) -> float:
        return math.degrees(math.atan2(-self.u[1], self.u[0]))

    def to_slo(self, idx, col):
        idx, col = np.asarray(idx, float), np.asarray(col, float)
        x = self.origin[0] + col * self.col_step * self.u[0] + idx * self.row_step * self.v[0]
        y = self.origin[1] + col * self.col_step * self.u[1] + idx * self.row_step * self.v[1]
        return x, y

    def to_grid(self, x, y):
        """Inverse of :meth:`to_slo`; ``u`` and ``v`` need not be orthogonal."""
        dx = np.asarray(x, float) - self.origin[0]
        dy = np.asarray(y, float) - self.origin[1]
        a = np.array([[self.u[0] * self.col_step, self.v[0] * self.row_step],
                      [self.u[1] * self.col_step, self.v[1] * self.row_step]])
        inv = np.linalg.inv(a)
        col = inv[0, 0] * dx + inv[0, 1] * dy
        idx = inv[1, 0] * dx + inv[1, 1] * dy
        return idx, col

    @classmethod
    def from_record(cls, record: ScanRecord) -> "ScanGrid":
        md = record.metadata
        n, w = record.num_bscans, md.bscan_resolution_x
        s0, e0 = record.bscan_line_px(0)
        along = e0 - s0
        u = along / np.linalg.norm(along)
        col_step = md.bscan_scale_x / md.slo_scale_xy
        if n > 1:
            sl, _ = record.bscan_line_px(n - 1)
            step = (sl - s0) / (n - 1)
            row_step = float(np.linalg.norm(step))
            v = step / row_step
        else:
            row_step = md.bscan_scale_z / md.slo_scale_xy or 1.0
            v = np.array([-u[1], u[0]])
        return cls(np.asarray(s0, float), u, v, float(col_step), row_step, n, w)


@dataclass(frozen=True)
class EnFaceMap:
    values: np.ndarray
    valid: np.ndarray
    kind: MapKind
    fovea: tuple[float, float]  # (x, y) SLO pixels
    angle_degrees: float = 0.0


def select_fovea_bscan(
    detections: Sequence[FoveaDetection | float | None],
) -> tuple[int, FoveaDetection | None]:
    """Index of the B-scan with the strongest fovea response.

    Ties resolve to the lowest index with a :class:`FoveaTie` warning.
    """
    scores = np.array(
        [np.nan if d is None else (d.score if isinstance(d, FoveaDetection) else float(d)) for d in detections]
    )
    if scores.size == 0 or np.all(np.isnan(scores)):
        raise NoFoveaAnywhere("no B-scan has a fovea detection")
    best = np.nanmax(scores)
    top = np.flatnonzero(scores == best)
    if len(top) > 1:
        warnings.warn(f"fovea score tie between B-scans {top.tolist()}; using {top[0]}", FoveaTie, stacklevel=2)
    i = int(top[0])
    det = detections[i]
    return i, det if isinstance(det, FoveaDetection) else None


def _fill_nearest(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace invalid entries with the nearest valid one (edge duplication)."""
    if valid.all():
        return values.astype(np.float64)
    if not valid.any():
        return np.zeros_like(values, dtype=np.float64)
    _, (ii, jj) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return values[ii, jj].astype(np.float64)


def build_enface_map(
    values: np.ndarray,
    valid: np.ndarray,
    grid: ScanGrid,
    slo_shape: tuple[int, int],
    fovea_xy: tuple[float, float],
    kind: MapKind = MapKind.THICKNESS,
    sigma: float | None = None,
) -> EnFaceMap:
    """Resample per-B-scan profiles onto the localiser grid.

    Parameters
    ----------
    values, valid : ndarray, shape (n_bscans, width)
        Per-column measurement of every B-scan and its validity.
    grid : ScanGrid
        Placement of the raster on the SLO.
    fovea_xy : tuple
        SLO fovea, carried on the map for grid summaries.
    sigma : float, optional
        Gaussian smoothing in SLO pixels; defaults to the B-scan spacing.
        Zero disables smoothing.

    Notes
    -----
    Invalid columns are first filled from their nearest valid neighbour, the
    grid is sampled bilinearly with edge duplication at every SLO pixel, and
    the result is blurred and zeroed outside the segmented coverage. Sampling
    through the true scan geometry applies the acquisition rotation directly.
    """
    values = np.asarray(values, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool) & np.isfinite(values)
    if values.shape[0] < 2:
        raise SingleBscanVolume("en face map needs at least two B-scans")
    h, w = slo_shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    idx, col = grid.to_grid(xx, yy)
    filled = _fill_nearest(values, valid)
    out = ndimage.map_coordinates(filled, [idx, col], order=1, mode="nearest")
    sigma = grid.row_step if sigma is None else sigma
    if sigma > 0:
        out = ndimage.gaussian_filter(out, sigma, truncate=3.0, mode="nearest")
    ri, rc = np.rint(idx).astype(np.int64), np.rint(col).astype(np.int64)
    inside = (ri >= 0) & (ri < values.shape[0]) & (rc >= 0) & (rc < values.shape[1])
    cover = np.zeros((h, w), bool)
    cover[inside] = valid[ri[inside], rc[inside]]
    out = np.where(cover, out, 0.0)
    return EnFaceMap(out, cover, kind, (float(fovea_xy[0]), float(fovea_xy[1])), grid.angle_degrees)


def vessel_density_profile(vessel: np.ndarray, region: np.ndarray, scale_x: float, scale_y: float) -> np.ndarray:
    """Vessel cross-sectional area per A-scan in µm²."""
    v = np.asarray(vessel, dtype=np.float64) * np.asarray(region, dtype=bool)
    return v.sum(axis=0) * scale_x * scale_y


def cvi_profile(vessel: np.ndarray, region: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column vascular index and validity (columns with choroid)."""
    reg = np.asarray(region, dtype=bool)
    n = reg.sum(axis=0)
    s = (np.asarray(vessel, dtype=np.float64) * reg).sum(axis=0)
    ok = n > 0
    return np.where(ok, s / np.maximum(n, 1), np.nan), ok


@dataclass(frozen=True)
class EtdrsSummary:
    means: dict[str, float]
    missing_percent: dict[str, float]
    pixel_area_mm2: dict[str, float]
    volumes: dict[str, float] | None = None

    def row(self, prefix: str, metric: str) -> dict[str, float]:
        out = {f"{prefix}_{k}_{metric}": v for k, v in self.means.items()}
        if self.volumes is not None:
            out.update({f"{prefix}_{k}_volume": v for k, v in self.volumes.items()})
        return out


def etdrs_masks(shape: tuple[int, int], fovea_xy: tuple[float, float], slo_scale_xy: float,
                angle_degrees: float = 0.0, eye: Eye = Eye.RIGHT) -> dict[str, np.ndarray]:
    """Pixel-centre membership of the nine subfields plus the whole 6 mm disc (``all``)."""
    h, w = shape
    fx, fy = fovea_xy
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.hypot(xx - fx, yy - fy) * slo_scale_xy
    r1, r3, r6 = (500.0 * dm for dm in ETDRS_DIAMETERS_MM)
    phi = np.degrees(np.arctan2(-(yy - fy), xx - fx)) - angle_degrees
    phi = (phi + 180.0) % 360.0 - 180.0
    right = (phi >= -45) & (phi < 45)
    sup = (phi >= 45) & (phi < 135)
    inf = (phi >= -135) & (phi < -45)
    left = ~(right | sup | inf)
    nasal, temporal = (right, left) if eye is Eye.RIGHT else (left, right)
    quad = {"superior": sup, "nasal": nasal, "inferior": inf, "temporal": temporal}
    central = d <= r1
    inner = (d > r1) & (d <= r3)
    outer = (d > r3) & (d <= r6)
    masks = {"central": central}
    for q in QUADRANTS:
        masks[f"inner_{q}"] = inner & quad[q]
    for q in QUADRANTS:
        masks[f"outer_{q}"] = outer & quad[q]
    masks["all"] = d <= r6
    return masks


def etdrs_summarize(emap: EnFaceMap, slo_scale_xy: float, eye: Eye = Eye.RIGHT,
                    with_volume: bool | None = None) -> EtdrsSummary:
    """Subfield means, missing fractions and (for thickness) volumes."""
    h, w = emap.values.shape
    fx, fy = emap.fovea
    if not (0 <= fx < w and 0 <= fy < h):
        raise FoveaOutsideMap(f"fovea ({fx:.1f}, {fy:.1f}) outside {w}x{h} map")
    masks = etdrs_masks((h, w), emap.fovea, slo_scale_xy, emap.angle_degrees, eye)
    disc = masks["all"]
    valid = emap.valid
    vals = emap.values.astype(np.float64)
    if valid[disc].any():
        filled = _fill_nearest(vals, valid)
        vals = np.where(disc & ~valid, filled, vals)
    else:
        vals = np.where(disc, np.nan, vals)
    px_mm2 = (slo_scale_xy / 1000.0) ** 2
    means, missing, areas = {}, {}, {}
    for name, m in masks.items():
        npx = int(m.sum())
        means[name] = float(vals[m].mean()) if npx else math.nan
        missing[name] = 100.0 * float((m & ~valid).sum()) / npx if npx else 100.0
        areas[name] = npx * px_mm2
    if with_volume is None:
        with_volume = emap.kind is MapKind.THICKNESS
    volumes = {k: means[k] * areas[k] / 1000.0 for k in masks} if with_volume else None
    return EtdrsSummary(means, missing, areas, volumes)
