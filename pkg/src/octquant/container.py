"""Scan containers: Heidelberg ``.vol`` RAW exports and a portable fixture format.

A :class:`ScanRecord` keeps the raw header values (millimetre geometry, opaque
vendor fields) so that writing it back out reproduces the input exactly.
Derived, micron-based metadata is exposed through :attr:`ScanRecord.metadata`.
"""
from __future__ import annotations

import base64
import datetime as _dt
import enum
import io
import json
import logging
import math
import os
import struct
import zipfile
from dataclasses import dataclass, field, fields, asdict
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    LayerUnavailable,
    MissingField,
    ShapeMismatch,
    TruncatedFile,
    UnrecognizedMagic,
    UnsupportedVariant,
)

logger = logging.getLogger(__name__)

MAGIC = b"HSF-OCT-"
KNOWN_VERSIONS = (b"HSF-OCT-101", b"HSF-OCT-102", b"HSF-OCT-103")
FLT_MAX = np.finfo(np.float32).max
HEADER_SIZE = 2048
BSCAN_FIXED_SIZE = 256

_HEADER_FMT = "<12s3i3d2i2did4sqii16s16si21s3sdi24sd4i34s1790s"
_BSCAN_FMT = "<12si4diifi6f"
_BSCAN_SPARE = BSCAN_FIXED_SIZE - struct.calcsize(_BSCAN_FMT)
_HEADER_BYTES = {
    "version": 12,
    "scan_position": 4,
    "id": 16,
    "reference_id": 16,
    "patient_id": 21,
    "pad": 3,
    "visit_id": 24,
    "prog_id": 34,
    "spare": 1790,
}

# Surface row index inside the per-B-scan segmentation block.
SURFACE_INDEX: dict[str, int] = {
    "ILM": 0,
    "BM": 1,
    "RNFL": 2,
    "GCL": 3,
    "IPL": 4,
    "INL": 5,
    "OPL": 6,
    "ELM": 8,
    "PR1": 14,
    "PR2": 15,
    "RPE": 16,
}
SURFACES = tuple(SURFACE_INDEX)

# layer name -> (upper surface, lower surface); CHOR is supplied by a mask.
LAYERS: dict[str, tuple[str, str]] = {
    "ILM_RNFL": ("ILM", "RNFL"),
    "RNFL_GCL": ("RNFL", "GCL"),
    "GCL_IPL": ("GCL", "IPL"),
    "IPL_INL": ("IPL", "INL"),
    "INL_OPL": ("INL", "OPL"),
    "OPL_ELM": ("OPL", "ELM"),
    "ELM_PR1": ("ELM", "PR1"),
    "PR1_PR2": ("PR1", "PR2"),
    "PR2_RPE": ("PR2", "RPE"),
    "RPE_BM": ("RPE", "BM"),
    "ILM_ELM": ("ILM", "ELM"),
    "ELM_BM": ("ELM", "BM"),
    "ILM_BM": ("ILM", "BM"),
    "CHOROID": ("BM", "CHOR"),
}
RETINAL_LAYERS = tuple(k for k in LAYERS if k != "CHOROID")


def _canonical_layer(name: str) -> str:
    key = name.upper().replace("–", "_").replace("-", "_")
    if key in ("BM_CHOR", "CHOR", "CHOROID"):
        return "CHOROID"
    return key


class Eye(str, enum.Enum):
    RIGHT = "Right"
    LEFT = "Left"


class BscanType(str, enum.Enum):
    HLINE = "H-line"
    VLINE = "V-line"
    AVLINE = "AV-line"
    PPOLE = "Ppole"
    PERIPAPILLARY = "Peripapillary"


class ScanCategory(str, enum.Enum):
    SINGLE_MACULAR = "SingleMacular"
    MACULAR_VOLUME = "MacularVolume"
    PERIPAPILLARY = "Peripapillary"


@dataclass(frozen=True)
class VolHeader:
    """File header fields, geometry in millimetres as stored."""

    version: bytes
    size_x: int
    num_bscans: int
    size_z: int
    scale_x: float
    distance: float
    scale_z: float
    size_x_slo: int
    size_y_slo: int
    scale_x_slo: float
    scale_y_slo: float
    field_size_slo: int
    scan_focus: float
    scan_position: bytes
    exam_time: int
    scan_pattern: int
    bscan_hdr_size: int
    id: bytes = b""
    reference_id: bytes = b""
    pid: int = 0
    patient_id: bytes = b""
    pad: bytes = b""
    dob: float = 0.0
    vid: int = 0
    visit_id: bytes = b""
    visit_date: float = 0.0
    grid_type: int = 0
    grid_offset: int = 0
    grid_type1: int = 0
    grid_offset1: int = 0
    prog_id: bytes = b""
    spare: bytes = b""

    def __post_init__(self) -> None:
        for name, width in _HEADER_BYTES.items():
            v = getattr(self, name)
            if len(v) < width:
                object.__setattr__(self, name, v.ljust(width, b"\0"))

    def pack(self) -> bytes:
        return struct.pack(_HEADER_FMT, *(getattr(self, f.name) for f in fields(self)))

    @classmethod
    def unpack(cls, buf: bytes) -> "VolHeader":
        vals = struct.unpack(_HEADER_FMT, buf[:HEADER_SIZE])
        return cls(*vals)


@dataclass(frozen=True)
class BscanHeader:
    """Per-B-scan header. Start/end positions are millimetres in the SLO frame."""

    version: bytes
    hdr_size: int
    start_x: float
    start_y: float
    end_x: float
    end_y: float
    num_seg: int
    off_seg: int
    quality: float
    shift: int
    iv_trafo: tuple[float, ...] = (0.0,) * 6
    spare: bytes = b"\0" * _BSCAN_SPARE

    def __post_init__(self) -> None:
        object.__setattr__(self, "version", self.version.ljust(12, b"\0"))
        object.__setattr__(self, "iv_trafo", tuple(float(v) for v in self.iv_trafo))
        object.__setattr__(self, "spare", self.spare.ljust(_BSCAN_SPARE, b"\0"))

    def pack(self) -> bytes:
        head = struct.pack(
            _BSCAN_FMT,
            self.version,
            self.hdr_size,
            self.start_x,
            self.start_y,
            self.end_x,
            self.end_y,
            self.num_seg,
            self.off_seg,
            self.quality,
            self.shift,
            *self.iv_trafo,
        )
        return head + self.spare.ljust(_BSCAN_SPARE, b"\0")[:_BSCAN_SPARE]

    @classmethod
    def unpack(cls, buf: bytes) -> "BscanHeader":
        vals = struct.unpack(_BSCAN_FMT, buf[: struct.calcsize(_BSCAN_FMT)])
        spare = bytes(buf[struct.calcsize(_BSCAN_FMT) : BSCAN_FIXED_SIZE])
        return cls(*vals[:10], iv_trafo=tuple(vals[10:16]), spare=spare)


@dataclass(frozen=True)
class ScanMetadata:
    eye: Eye
    bscan_type: BscanType
    bscan_resolution_x: int
    bscan_resolution_y: int
    bscan_scale_x: float
    bscan_scale_y: float
    bscan_scale_z: float
    slo_resolution_px: int
    slo_scale_xy: float
    field_of_view_mm: float
    field_size_degrees: float
    acquisition_angle_degrees: float
    avg_quality: float
    scan_focus: float
    visit_date: str
    exam_time: str
    num_bscans: int
    retinal_layers_n: int
    surfaces: tuple[str, ...]
    acquisition_radius_px: float = float("nan")
    acquisition_radius_mm: float = float("nan")
    acquisition_optic_disc_center_x: float = float("nan")
    acquisition_optic_disc_center_y: float = float("nan")
    bscan_angles_degrees: tuple[float, ...] = ()
    scale_units: str = "microns_per_pixel"

    @property
    def location(self) -> str:
        return "Optic disc" if self.bscan_type is BscanType.PERIPAPILLARY else "Macula"

    def table_row(self) -> dict[str, Any]:
        """Metadata portion of a measurement row, keyed like the output table."""
        return {
            "eye": self.eye.value,
            "Bscan_type": self.bscan_type.value,
            "Bscan_resolution_x": self.bscan_resolution_x,
            "Bscan_resolution_y": self.bscan_resolution_y,
            "Bscan_scale_z": self.bscan_scale_z,
            "Bscan_scale_x": self.bscan_scale_x,
            "Bscan_scale_y": self.bscan_scale_y,
            "scale_units": self.scale_units,
            "avg_quality": self.avg_quality,
            "retinal_layers_N": self.retinal_layers_n,
            "scan_focus": self.scan_focus,
            "visit_date": self.visit_date,
            "exam_time": self.exam_time,
            "slo_resolution_px": self.slo_resolution_px,
            "field_of_view_mm": self.field_of_view_mm,
            "slo_scale_xy": self.slo_scale_xy,
            "location": self.location,
            "field_size_degrees": self.field_size_degrees,
            "slo_modality": "Infrared",
            "acquisition_angle_degrees": self.acquisition_angle_degrees,
            "acquisition_radius_px": self.acquisition_radius_px,
            "acquisition_radius_mm": self.acquisition_radius_mm,
            "acquisition_optic_disc_center_x": self.acquisition_optic_disc_center_x,
            "acquisition_optic_disc_center_y": self.acquisition_optic_disc_center_y,
        }


@dataclass(frozen=True)
class BoundaryCurve:
    """Row position of one surface per column. ``rows`` is NaN where invalid."""

    surface_id: str
    rows: np.ndarray
    valid: np.ndarray

    @classmethod
    def from_rows(cls, surface_id: str, rows: np.ndarray) -> "BoundaryCurve":
        rows = np.asarray(rows, dtype=np.float64)
        valid = np.isfinite(rows)
        return cls(surface_id, np.where(valid, rows, np.nan), valid)

    def __len__(self) -> int:
        return len(self.rows)


def _freeze(a: np.ndarray | None) -> np.ndarray | None:
    if a is not None:
        a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScanRecord:
    """One parsed acquisition.

    Attributes
    ----------
    header : VolHeader
        Raw file header.
    bscan_headers : tuple of BscanHeader
    slo : ndarray of uint8, shape (Y, X), or None
    bscans : ndarray of float32, shape (n, H, W)
    layers : ndarray of float32, shape (n, num_seg, W)
        Surface rows in pixels; NaN where the export stored the invalid sentinel.
    """

    header: VolHeader
    bscan_headers: tuple[BscanHeader, ...]
    slo: np.ndarray | None
    bscans: np.ndarray
    layers: np.ndarray
    source: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        n, h, w = self.bscans.shape
        if len(self.bscan_headers) != n or self.layers.shape[0] != n or self.layers.shape[2] != w:
            raise ShapeMismatch("B-scan, header and layer counts disagree")
        _freeze(self.bscans)
        _freeze(self.layers)
        _freeze(self.slo)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScanRecord):
            return NotImplemented
        if self.header != other.header or self.bscan_headers != other.bscan_headers:
            return False
        if (self.slo is None) != (other.slo is None):
            return False
        if self.slo is not None and not np.array_equal(self.slo, other.slo):
            return False
        return _bit_equal(self.bscans, other.bscans) and _bit_equal(self.layers, other.layers)

    __hash__ = None  # type: ignore[assignment]

    @property
    def num_bscans(self) -> int:
        return self.bscans.shape[0]

    @cached_property
    def metadata(self) -> ScanMetadata:
        return _derive_metadata(self)

    def boundary(self, index: int, surface: str) -> BoundaryCurve:
        k = SURFACE_INDEX[surface]
        if k >= self.layers.shape[1]:
            raise LayerUnavailable(f"surface {surface} not stored")
        return BoundaryCurve.from_rows(surface, self.layers[index, k])

    def boundaries(self, index: int) -> list[BoundaryCurve]:
        return [self.boundary(index, s) for s in self.metadata.surfaces]

    def bscan_line_px(self, index: int) -> tuple[np.ndarray, np.ndarray]:
        """Start and end of B-scan ``index`` in SLO pixel coordinates (x, y)."""
        bh = self.bscan_headers[index]
        sx = self.header.scale_x_slo or 1.0
        sy = self.header.scale_y_slo or 1.0
        return (
            np.array([bh.start_x / sx, bh.start_y / sy]),
            np.array([bh.end_x / sx, bh.end_y / sy]),
        )


def _bit_equal(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape != b.shape or a.dtype != b.dtype:
        return False
    return bool(np.array_equal(a, b, equal_nan=True))


# ----------------------------------------------------------------------------
# metadata derivation


def _decode(b: bytes) -> str:
    return b.split(b"\0", 1)[0].decode("ascii", errors="replace").strip()


def _filetime_iso(ft: int) -> str:
    if ft <= 0:
        return ""
    try:
        t = _dt.datetime(1601, 1, 1) + _dt.timedelta(microseconds=ft // 10)
    except OverflowError:
        return ""
    return t.isoformat()


def _oledate_iso(d: float) -> str:
    if not math.isfinite(d) or d <= 0:
        return ""
    try:
        return (_dt.datetime(1899, 12, 30) + _dt.timedelta(days=d)).date().isoformat()
    except OverflowError:
        return ""


def _bscan_type(rec: ScanRecord) -> BscanType:
    pat = rec.header.scan_pattern
    if pat == 2:
        return BscanType.PERIPAPILLARY
    if pat in (3, 4):
        return BscanType.PPOLE
    if pat == 5:
        return BscanType.AVLINE
    if pat != 1:
        logger.warning("unknown scan pattern %d; inferring from B-scan count", pat)
        if rec.num_bscans > 1:
            return BscanType.PPOLE
    bh = rec.bscan_headers[0]
    dx, dy = abs(bh.end_x - bh.start_x), abs(bh.end_y - bh.start_y)
    return BscanType.HLINE if dx >= dy else BscanType.VLINE


def line_angle_degrees(bh: BscanHeader) -> float:
    """Elevation of a line scan relative to image horizontal, positive anticlockwise."""
    ang = math.degrees(math.atan2(-(bh.end_y - bh.start_y), bh.end_x - bh.start_x))
    return ang


def present_surfaces(layers: np.ndarray) -> tuple[str, ...]:
    num_seg = layers.shape[1]
    out = []
    for name, k in SURFACE_INDEX.items():
        if k < num_seg and np.isfinite(layers[:, k]).any():
            out.append(name)
    return tuple(out)


def _derive_metadata(rec: ScanRecord) -> ScanMetadata:
    h = rec.header
    btype = _bscan_type(rec)
    pos = _decode(h.scan_position).upper()
    eye = Eye.LEFT if pos == "OS" else Eye.RIGHT
    slo_px = int(h.size_x_slo) if rec.slo is not None else 0
    radius_px = radius_mm = cx = cy = float("nan")
    if btype is BscanType.PERIPAPILLARY:
        bh = rec.bscan_headers[0]
        radius_mm = math.hypot(bh.start_x - bh.end_x, bh.start_y - bh.end_y)
        radius_px = radius_mm / h.scale_x_slo if h.scale_x_slo else float("nan")
        cx = bh.end_x / h.scale_x_slo if h.scale_x_slo else float("nan")
        cy = bh.end_y / h.scale_y_slo if h.scale_y_slo else float("nan")
        angles: tuple[float, ...] = (0.0,)
    else:
        angles = tuple(line_angle_degrees(b) for b in rec.bscan_headers)
    surfaces = present_surfaces(rec.layers)
    quals = [b.quality for b in rec.bscan_headers]
    return ScanMetadata(
        eye=eye,
        bscan_type=btype,
        bscan_resolution_x=int(h.size_x),
        bscan_resolution_y=int(h.size_z),
        bscan_scale_x=h.scale_x * 1000.0,
        bscan_scale_y=h.scale_z * 1000.0,
        bscan_scale_z=h.distance * 1000.0 if btype is BscanType.PPOLE else 0.0,
        slo_resolution_px=slo_px,
        slo_scale_xy=h.scale_x_slo * 1000.0,
        field_of_view_mm=h.size_x_slo * h.scale_x_slo,
        field_size_degrees=float(h.field_size_slo),
        acquisition_angle_degrees=angles[len(angles) // 2] if btype is BscanType.PPOLE else angles[0],
        avg_quality=float(np.mean(quals)) if quals else float("nan"),
        scan_focus=float(h.scan_focus),
        visit_date=_oledate_iso(h.visit_date),
        exam_time=_filetime_iso(h.exam_time),
        num_bscans=rec.num_bscans,
        retinal_layers_n=len(surfaces),
        surfaces=surfaces,
        acquisition_radius_px=radius_px,
        acquisition_radius_mm=radius_mm,
        acquisition_optic_disc_center_x=cx,
        acquisition_optic_disc_center_y=cy,
        bscan_angles_degrees=angles,
    )


def classify_scan(metadata: ScanMetadata) -> ScanCategory:
    """Route a scan to one of the three analysis pipelines."""
    t = metadata.bscan_type
    if t is BscanType.PERIPAPILLARY:
        return ScanCategory.PERIPAPILLARY
    if t is BscanType.PPOLE and metadata.num_bscans > 1:
        return ScanCategory.MACULAR_VOLUME
    if t in (BscanType.HLINE, BscanType.VLINE, BscanType.AVLINE):
        return ScanCategory.SINGLE_MACULAR
    logger.warning("unrecognised scan type %r; treating as single macular", t)
    return ScanCategory.SINGLE_MACULAR


def extract_layer_pairs(
    record: ScanRecord,
    layer: str,
    choroid_lower: Sequence[np.ndarray] | None = None,
) -> list[tuple[BoundaryCurve, BoundaryCurve]]:
    """Upper/lower boundary pair of ``layer`` for every B-scan.

    Parameters
    ----------
    layer : str
        Key of :data:`LAYERS` (dashes accepted, e.g. ``"ILM-BM"``).
    choroid_lower : sequence of arrays, optional
        Posterior choroid rows per B-scan, required for the choroid layer.
    """
    key = _canonical_layer(layer)
    if key not in LAYERS:
        raise KeyError(f"unknown layer {layer!r}")
    up, lo = LAYERS[key]
    present = set(record.metadata.surfaces)
    missing = [s for s in (up, lo) if s != "CHOR" and s not in present]
    if missing:
        raise LayerUnavailable(f"{key}: surfaces {missing} not present")
    if lo == "CHOR" and choroid_lower is None:
        raise LayerUnavailable("choroid lower boundary requires a region mask")
    out = []
    for i in range(record.num_bscans):
        upper = record.boundary(i, up)
        if lo == "CHOR":
            lower = BoundaryCurve.from_rows("CHOR", choroid_lower[i])  # type: ignore[index]
        else:
            lower = record.boundary(i, lo)
        out.append((upper, lower))
    return out


# ----------------------------------------------------------------------------
# .vol reading and writing


def parse_vol(data: bytes | bytearray | memoryview) -> ScanRecord:
    """Parse the bytes of a ``.vol`` export."""
    buf = memoryview(data).cast("B")
    if len(buf) < len(MAGIC) or bytes(buf[: len(MAGIC)]) != MAGIC:
        raise UnrecognizedMagic("missing HSF-OCT- version string")
    version = bytes(buf[:12]).rstrip(b"\0")
    if version not in KNOWN_VERSIONS:
        raise UnsupportedVariant(f"header version {version!r}")
    if len(buf) < HEADER_SIZE:
        raise TruncatedFile("file shorter than its header")
    hdr = VolHeader.unpack(bytes(buf[:HEADER_SIZE]))
    n, h, w = hdr.num_bscans, hdr.size_z, hdr.size_x
    if min(n, h, w) <= 0 or hdr.size_x_slo < 0 or hdr.size_y_slo < 0:
        raise TruncatedFile("non-positive declared dimensions")
    if hdr.bscan_hdr_size < BSCAN_FIXED_SIZE:
        raise UnsupportedVariant(f"B-scan header size {hdr.bscan_hdr_size}")
    slo_bytes = hdr.size_x_slo * hdr.size_y_slo
    block = hdr.bscan_hdr_size + h * w * 4
    need = HEADER_SIZE + slo_bytes + n * block
    if len(buf) < need:
        raise TruncatedFile(f"declared {need} bytes, found {len(buf)}")

    slo = None
    if slo_bytes:
        slo = np.frombuffer(buf, np.uint8, slo_bytes, HEADER_SIZE).reshape(hdr.size_y_slo, hdr.size_x_slo).copy()
    bheads: list[BscanHeader] = []
    bscans = np.empty((n, h, w), np.float32)
    seg_blocks: list[np.ndarray] = []
    off = HEADER_SIZE + slo_bytes
    for i in range(n):
        bh = BscanHeader.unpack(bytes(buf[off : off + BSCAN_FIXED_SIZE]))
        seg_end = bh.off_seg + bh.num_seg * w * 4
        if bh.num_seg < 0 or seg_end > hdr.bscan_hdr_size:
            raise TruncatedFile(f"B-scan {i}: segmentation exceeds header block")
        seg = np.frombuffer(buf, "<f4", bh.num_seg * w, off + bh.off_seg).reshape(bh.num_seg, w)
        seg_blocks.append(seg)
        px = off + hdr.bscan_hdr_size
        bscans[i] = np.frombuffer(buf, "<f4", h * w, px).reshape(h, w)
        bheads.append(bh)
        off += block

    num_seg = max((s.shape[0] for s in seg_blocks), default=0)
    layers = np.full((n, num_seg, w), np.nan, np.float32)
    for i, s in enumerate(seg_blocks):
        vals = s.astype(np.float32)
        vals[~np.isfinite(vals) | (vals >= FLT_MAX)] = np.nan
        layers[i, : s.shape[0]] = vals
    return ScanRecord(hdr, tuple(bheads), slo, bscans, layers)


def write_vol(record: ScanRecord) -> bytes:
    """Serialize a record in ``.vol`` layout (inverse of :func:`parse_vol`)."""
    hdr = record.header
    n, h, w = record.bscans.shape
    if (hdr.num_bscans, hdr.size_z, hdr.size_x) != (n, h, w):
        raise ShapeMismatch("header dimensions disagree with B-scan array")
    out = io.BytesIO()
    out.write(hdr.pack())
    if record.slo is not None:
        out.write(np.ascontiguousarray(record.slo, np.uint8).tobytes())
    for i, bh in enumerate(record.bscan_headers):
        block = bytearray(hdr.bscan_hdr_size)
        block[:BSCAN_FIXED_SIZE] = bh.pack()
        seg = record.layers[i, : bh.num_seg].astype("<f4")
        seg = np.where(np.isnan(seg), FLT_MAX, seg).astype("<f4")
        end = bh.off_seg + seg.nbytes
        if end > hdr.bscan_hdr_size:
            raise ShapeMismatch("segmentation does not fit B-scan header block")
        block[bh.off_seg : end] = seg.tobytes()
        out.write(bytes(block))
        out.write(record.bscans[i].astype("<f4").tobytes())
    return out.getvalue()


def read_vol(path: str | os.PathLike) -> ScanRecord:
    rec = parse_vol(Path(path).read_bytes())
    object.__setattr__(rec, "source", str(path))
    return rec


# ----------------------------------------------------------------------------
# fixture container

_REQUIRED_KEYS = (
    "eye",
    "Bscan_type",
    "Bscan_resolution_x",
    "Bscan_resolution_y",
    "Bscan_scale_x",
    "Bscan_scale_y",
)

_PATTERN_FOR_TYPE = {"H-line": 1, "V-line": 1, "Peripapillary": 2, "Ppole": 3, "AV-line": 5}


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _unb64(s: str) -> bytes:
    return base64.b64decode(s.encode("ascii"))


def _header_json(h: VolHeader) -> dict[str, Any]:
    return {k: (_b64(v) if isinstance(v, bytes) else v) for k, v in asdict(h).items()}


def _bscan_json(b: BscanHeader) -> dict[str, Any]:
    d = asdict(b)
    d["version"] = _b64(b.version)
    d["spare"] = _b64(b.spare)
    d["iv_trafo"] = list(b.iv_trafo)
    return d


def _header_from_json(d: dict[str, Any]) -> VolHeader:
    kw = {}
    for f in fields(VolHeader):
        v = d[f.name]
        kw[f.name] = _unb64(v) if f.type in ("bytes",) else v
    return VolHeader(**kw)


def _bscan_from_json(d: dict[str, Any]) -> BscanHeader:
    kw = dict(d)
    kw["version"] = _unb64(d["version"])
    kw["spare"] = _unb64(d["spare"])
    kw["iv_trafo"] = tuple(d["iv_trafo"])
    return BscanHeader(**kw)


def mm_from_um(v: float) -> float:
    """Millimetre value whose ×1000 reproduces ``v`` exactly when one exists."""
    m = v / 1000.0
    cand = m
    for _ in range(4):
        if cand * 1000.0 == v:
            return cand
        cand = float(np.nextafter(cand, math.inf if cand * 1000.0 < v else -math.inf))
    return m


def fixture_meta(record: ScanRecord, filename: str = "") -> dict[str, Any]:
    """Metadata document for the fixture container."""
    md = record.metadata
    meta: dict[str, Any] = {"Filename": filename, "FAILED": False}
    meta.update(md.table_row())
    meta["storage"] = {
        "header": _header_json(record.header),
        "bscan_headers": [_bscan_json(b) for b in record.bscan_headers],
        "num_seg": int(record.layers.shape[1]),
    }
    return meta


def write_fixture(record: ScanRecord, path: str | os.PathLike, filename: str = "") -> Path:
    """Write ``record`` as a fixture directory, or a zip archive if ``path`` ends in ``.zip``."""
    path = Path(path)
    meta = fixture_meta(record, filename or path.stem)
    files = {"meta.json": json.dumps(meta, indent=1, allow_nan=True).encode()}
    if record.slo is not None:
        files["slo.raw"] = np.ascontiguousarray(record.slo, np.uint8).tobytes()
    files["bscans.raw"] = record.bscans.astype("<f4").tobytes()
    seg = np.transpose(record.layers, (1, 0, 2)).astype("<f4")
    files["layers.raw"] = np.where(np.isnan(seg), FLT_MAX, seg).astype("<f4").tobytes()
    if path.suffix == ".zip":
        path.parent.mkdir(parents=True, exist_ok=True)
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, blob in sorted(files.items()):
                zi = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
                zi.compress_type = zipfile.ZIP_DEFLATED
                zf.writestr(zi, blob)
    else:
        path.mkdir(parents=True, exist_ok=True)
        for name, blob in files.items():
            (path / name).write_bytes(blob)
    return path


def _read_members(path: Path) -> dict[str, bytes]:
    if path.is_dir():
        return {p.name: p.read_bytes() for p in path.iterdir() if p.is_file()}
    if zipfile.is_zipfile(path):
        with zipfile.ZipFile(path) as zf:
            return {Path(n).name: zf.read(n) for n in zf.namelist() if not n.endswith("/")}
    raise MissingField(f"{path} is neither a fixture directory nor an archive")


def parse_fixture(path: str | os.PathLike) -> ScanRecord:
    """Read a fixture directory or ``.zip`` archive."""
    path = Path(path)
    members = _read_members(path)
    if "meta.json" not in members:
        raise MissingField("meta.json")
    meta = json.loads(members["meta.json"])
    for k in _REQUIRED_KEYS:
        if k not in meta:
            raise MissingField(k)
    w, h = int(meta["Bscan_resolution_x"]), int(meta["Bscan_resolution_y"])
    if "bscans.raw" not in members:
        raise MissingField("bscans.raw")
    braw = members["bscans.raw"]
    if w <= 0 or h <= 0 or len(braw) == 0 or len(braw) % (h * w * 4):
        raise ShapeMismatch(f"bscans.raw holds {len(braw)} bytes, not a multiple of {h}x{w} float32")
    n = len(braw) // (h * w * 4)
    bscans = np.frombuffer(braw, "<f4").reshape(n, h, w).astype(np.float32)

    slo = None
    slo_px = int(meta.get("slo_resolution_px") or 0)
    if "slo.raw" in members:
        sraw = members["slo.raw"]
        if slo_px <= 0 or len(sraw) != slo_px * slo_px:
            raise ShapeMismatch(f"slo.raw holds {len(sraw)} bytes, expected {slo_px}^2")
        slo = np.frombuffer(sraw, np.uint8).reshape(slo_px, slo_px).copy()

    lraw = members.get("layers.raw", b"")
    if len(lraw) % (n * w * 4):
        raise ShapeMismatch("layers.raw size is not a multiple of the B-scan geometry")
    num_seg = len(lraw) // (n * w * 4)
    seg = np.frombuffer(lraw, "<f4").reshape(num_seg, n, w).astype(np.float32)
    seg[~np.isfinite(seg) | (seg >= FLT_MAX)] = np.nan
    layers = np.ascontiguousarray(np.transpose(seg, (1, 0, 2)))

    storage = meta.get("storage")
    if storage:
        header = _header_from_json(storage["header"])
        bheads = tuple(_bscan_from_json(b) for b in storage["bscan_headers"])
        if (header.num_bscans, header.size_z, header.size_x) != (n, h, w):
            raise ShapeMismatch("stored header disagrees with array sizes")
        if slo is None and header.size_x_slo * header.size_y_slo:
            raise MissingField("slo.raw")
    else:
        header, bheads = _synth_headers(meta, n, h, w, num_seg, slo_px if slo is not None else 0)
    rec = ScanRecord(header, bheads, slo, bscans, layers, source=str(path))
    return rec


def _synth_headers(
    meta: dict[str, Any], n: int, h: int, w: int, num_seg: int, slo_px: int
) -> tuple[VolHeader, tuple[BscanHeader, ...]]:
    """Build raw headers from table keys alone (fixtures without a storage block)."""
    btype = meta["Bscan_type"]
    if btype not in _PATTERN_FOR_TYPE:
        raise MissingField(f"unknown Bscan_type {btype!r}")
    sx = mm_from_um(float(meta["Bscan_scale_x"]))
    sz = mm_from_um(float(meta["Bscan_scale_y"]))
    dist = mm_from_um(float(meta.get("Bscan_scale_z") or 0.0))
    slo_scale = mm_from_um(float(meta.get("slo_scale_xy") or 0.0))
    if slo_px and slo_scale <= 0:
        raise MissingField("slo_scale_xy")
    eye = str(meta["eye"])
    angle = math.radians(float(meta.get("acquisition_angle_degrees") or 0.0))
    ux, uy = math.cos(angle), -math.sin(angle)
    if btype == "V-line":
        ux, uy = 0.0, 1.0
    length = (w - 1) * sx
    cx0 = slo_px * slo_scale / 2 if slo_px else length / 2
    cy0 = slo_px * slo_scale / 2 if slo_px else 0.0
    heads = []
    for i in range(n):
        if btype == "Peripapillary":
            r = float(meta.get("acquisition_radius_mm") or 0.0)
            cx = float(meta.get("acquisition_optic_disc_center_x", 0.0)) * slo_scale
            cy = float(meta.get("acquisition_optic_disc_center_y", 0.0)) * slo_scale
            # column 0 sits temporal of the disc
            sgn = -1.0 if eye == "Right" else 1.0
            start = (cx + sgn * r, cy)
            end = (cx, cy)
        else:
            off = (i - (n - 1) / 2) * dist
            # stack offset along the in-plane normal of the scan line
            mx, my = cx0 - uy * off, cy0 + ux * off
            start = (mx - ux * length / 2, my - uy * length / 2)
            end = (mx + ux * length / 2, my + uy * length / 2)
        heads.append(
            BscanHeader(
                version=b"HSF-BS-103",
                hdr_size=BSCAN_FIXED_SIZE,
                start_x=start[0],
                start_y=start[1],
                end_x=end[0],
                end_y=end[1],
                num_seg=num_seg,
                off_seg=BSCAN_FIXED_SIZE,
                quality=float(meta.get("avg_quality") or 0.0),
                shift=0,
            )
        )
    header = VolHeader(
        version=b"HSF-OCT-103",
        size_x=w,
        num_bscans=n,
        size_z=h,
        scale_x=sx,
        distance=dist,
        scale_z=sz,
        size_x_slo=slo_px,
        size_y_slo=slo_px,
        scale_x_slo=slo_scale,
        scale_y_slo=slo_scale,
        field_size_slo=int(meta.get("field_size_degrees") or 0),
        scan_focus=float(meta.get("scan_focus") or 0.0),
        scan_position=b"OS\0\0" if eye == "Left" else b"OD\0\0",
        exam_time=0,
        scan_pattern=_PATTERN_FOR_TYPE[btype],
        bscan_hdr_size=BSCAN_FIXED_SIZE + num_seg * w * 4,
    )
    return header, tuple(heads)
