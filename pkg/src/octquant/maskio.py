"""Segmentation masks stored beside a scan.

Masks live in ``<fixture>/masks/`` for fixture directories and in
``<stem>_masks/`` next to ``.vol`` files and fixture archives. Each mask is
named by kind:

* ``<kind>.raw``: little-endian float32, shape ``(n_bscans, H, W)`` for B-scan
  kinds or ``(S, S)`` for SLO kinds;
* ``<kind>.png``: one single-channel 8- or 16-bit image (B-scan kinds with a
  single B-scan, or SLO kinds);
* ``<kind>_000.png``, ``<kind>_001.png``, ...: one image per B-scan.

A file named ``<kind>_edited.<ext>`` (or ``<kind>_edited_000.png`` ...) holds a
manual correction and replaces the original when re-ingesting.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .container import ScanRecord
from .errors import MaskShapeMismatch
from .preprocess import MaskKind
from .slo import SEGMENTATION_SIDE, ResizeTransform

BSCAN_KINDS = (MaskKind.CHOROID_REGION, MaskKind.CHOROID_VESSEL, MaskKind.FOVEA)
SLO_KINDS = (MaskKind.SLO_VESSEL, MaskKind.SLO_ARTERY, MaskKind.SLO_VEIN, MaskKind.OPTIC_DISC, MaskKind.SLO_FOVEA)


def mask_dir(scan_path: str | Path) -> Path:
    p = Path(scan_path)
    if p.is_dir():
        return p / "masks"
    return p.with_name(p.stem + "_masks")


def _read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        a = np.asarray(im)
    if a.ndim == 3:
        a = a[..., 0]
    if a.dtype == np.uint8:
        return a.astype(np.float32) / 255.0
    if a.dtype in (np.uint16, np.int32) or im.mode.startswith("I"):
        return a.astype(np.float32) / 65535.0
    if a.dtype == bool:
        return a.astype(np.float32)
    return np.clip(a.astype(np.float32), 0, 1)


def _expected_shape(kind: MaskKind, record: ScanRecord) -> tuple[int, ...]:
    if kind in BSCAN_KINDS:
        return record.bscans.shape
    side = record.metadata.slo_resolution_px
    return (side, side)


def _load_kind(folder: Path, kind: MaskKind, record: ScanRecord, suffix: str) -> np.ndarray | None:
    arr = _load_raw_kind(folder, kind, record, suffix)
    shape = _expected_shape(kind, record)
    if arr is not None and kind in SLO_KINDS and arr.shape != shape:
        # produced at the segmentation resolution; map back to native
        arr = ResizeTransform(shape, SEGMENTATION_SIDE).inverse(arr).astype(np.float32)
    return arr


def _check(name: str, got: tuple[int, ...], kind: MaskKind, shape: tuple[int, ...]) -> None:
    ok = got == shape or (kind in SLO_KINDS and got == (SEGMENTATION_SIDE, SEGMENTATION_SIDE))
    if not ok:
        raise MaskShapeMismatch(f"{name}: shape {got}, expected {shape}")


def _load_raw_kind(folder: Path, kind: MaskKind, record: ScanRecord, suffix: str) -> np.ndarray | None:
    stem = kind.value + suffix
    shape = _expected_shape(kind, record)
    raw = folder / f"{stem}.raw"
    if raw.exists():
        data = np.fromfile(raw, dtype="<f4")
        if data.size == int(np.prod(shape)):
            return data.reshape(shape).astype(np.float32)
        if kind in SLO_KINDS and data.size == SEGMENTATION_SIDE**2:
            return data.reshape(SEGMENTATION_SIDE, SEGMENTATION_SIDE).astype(np.float32)
        raise MaskShapeMismatch(f"{raw.name}: {data.size} values, expected shape {shape}")
    png = folder / f"{stem}.png"
    if png.exists():
        a = _read_png(png)
        if kind in BSCAN_KINDS:
            a = a[None]
        _check(png.name, a.shape, kind, shape)
        return a
    pat = re.compile(re.escape(stem) + r"_(\d{3})\.png$")
    stack = sorted((int(m.group(1)), f) for f in folder.glob(f"{stem}_*.png") if (m := pat.match(f.name)))
    if stack:
        a = np.stack([_read_png(f) for _, f in stack])
        _check(f"{stem}_NNN.png", a.shape, kind, shape)
        return a
    return None


def load_masks(scan_path: str | Path, record: ScanRecord, edited: bool = False) -> tuple[dict[str, np.ndarray], list[str]]:
    """Masks found for a scan and the names of edited files that were used."""
    folder = mask_dir(scan_path)
    out: dict[str, np.ndarray] = {}
    used: list[str] = []
    if not folder.is_dir():
        return out, used
    for kind in BSCAN_KINDS + SLO_KINDS:
        if kind in SLO_KINDS and record.slo is None:
            continue
        arr = _load_kind(folder, kind, record, "_edited") if edited else None
        if arr is not None:
            used.append(kind.value)
        else:
            arr = _load_kind(folder, kind, record, "")
        if arr is not None:
            if np.nanmin(arr) < 0 or np.nanmax(arr) > 1:
                arr = np.clip(arr, 0, 1)
            out[kind.value] = arr
    return out, used


def save_masks(scan_path: str | Path, masks: dict[str, np.ndarray], suffix: str = "") -> Path:
    """Write masks as raw float32 arrays in the conventional folder."""
    folder = mask_dir(scan_path)
    folder.mkdir(parents=True, exist_ok=True)
    for kind, arr in masks.items():
        np.asarray(arr, dtype="<f4").tofile(folder / f"{kind}{suffix}.raw")
    return folder
