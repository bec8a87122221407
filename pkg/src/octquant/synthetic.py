"""Synthetic scans and masks with known geometry, used for tests and demos."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from skimage import draw, morphology

from .container import (
    BSCAN_FIXED_SIZE,
    SURFACE_INDEX,
    BscanHeader,
    ScanRecord,
    VolHeader,
)

# Spectralis-like defaults, microns per pixel
SCALE_X = 11.3
SCALE_Y = 3.87
SLO_SCALE = 11.6
NUM_SEG = 17

# surface depth below ILM in B-scan rows
SURFACE_OFFSETS = {
    "ILM": 0,
    "RNFL": 8,
    "GCL": 18,
    "IPL": 27,
    "INL": 36,
    "OPL": 44,
    "ELM": 65,
    "PR1": 70,
    "PR2": 75,
    "RPE": 80,
    "BM": 84,
}


def _mm(um: float) -> float:
    return um / 1000.0


def make_header(n: int, h: int, w: int, *, slo_side: int = 768, scale_x: float = SCALE_X,
                scale_y: float = SCALE_Y, spacing: float = 0.0, slo_scale: float = SLO_SCALE,
                eye: str = "Right", pattern: int = 1, num_seg: int = NUM_SEG) -> VolHeader:
    return VolHeader(
        version=b"HSF-OCT-103",
        size_x=w,
        num_bscans=n,
        size_z=h,
        scale_x=_mm(scale_x),
        distance=_mm(spacing),
        scale_z=_mm(scale_y),
        size_x_slo=slo_side,
        size_y_slo=slo_side,
        scale_x_slo=_mm(slo_scale),
        scale_y_slo=_mm(slo_scale),
        field_size_slo=30,
        scan_focus=0.5,
        scan_position=b"OD" if eye == "Right" else b"OS",
        exam_time=133_500_000_000_000_000,
        scan_pattern=pattern,
        bscan_hdr_size=BSCAN_FIXED_SIZE + num_seg * w * 4,
        patient_id=b"SYNTH",
        visit_date=45000.0,
    )


def _bscan_header(start, end, num_seg: int, quality: float = 30.0) -> BscanHeader:
    return BscanHeader(
        version=b"HSF-BS-103",
        hdr_size=BSCAN_FIXED_SIZE,
        start_x=float(start[0]),
        start_y=float(start[1]),
        end_x=float(end[0]),
        end_y=float(end[1]),
        num_seg=num_seg,
        off_seg=BSCAN_FIXED_SIZE,
        quality=quality,
        shift=0,
    )


def layer_rows(w: int, ilm: np.ndarray | float, num_seg: int = NUM_SEG,
               surfaces: tuple[str, ...] | None = None) -> np.ndarray:
    """Segmentation block (num_seg, w) with surfaces at fixed depths below ``ilm``."""
    out = np.full((num_seg, w), np.nan, np.float32)
    ilm = np.broadcast_to(np.asarray(ilm, np.float64), (w,))
    for name, off in SURFACE_OFFSETS.items():
        if surfaces is not None and name not in surfaces:
            continue
        k = SURFACE_INDEX[name]
        if k < num_seg:
            out[k] = (ilm + off).astype(np.float32)
    return out


def render_bscan(h: int, w: int, seg: np.ndarray, rng: np.random.Generator, choroid_px: np.ndarray | float = 78) -> np.ndarray:
    """Banded grayscale image loosely following the supplied surfaces."""
    rows = np.arange(h)[:, None].astype(np.float64)
    img = np.full((h, w), 0.05)
    ilm, bm = seg[SURFACE_INDEX["ILM"]], seg[SURFACE_INDEX["BM"]]
    ilm = np.where(np.isfinite(ilm), ilm, h / 3)
    bm = np.where(np.isfinite(bm), bm, ilm + 84)
    img += 0.4 * ((rows >= ilm) & (rows < bm))
    img += 0.3 * ((rows >= bm) & (rows < bm + choroid_px))
    img += 0.03 * rng.standard_normal((h, w))
    return np.clip(img, 0, 1).astype(np.float32)


def random_record(rng: np.random.Generator, max_side: int = 48) -> ScanRecord:
    """Random but well-formed record exercising every stored field."""
    pattern = int(rng.choice([1, 2, 3, 5]))
    n = int(rng.integers(2, 5)) if pattern in (3, 5) else 1
    h, w = int(rng.integers(4, max_side)), int(rng.integers(4, max_side))
    slo_side = int(rng.choice([0, 8, 16]))
    num_seg = int(rng.choice([0, 2, 17]))
    hdr = VolHeader(
        version=bytes(rng.choice([b"HSF-OCT-101", b"HSF-OCT-102", b"HSF-OCT-103"])),
        size_x=w,
        num_bscans=n,
        size_z=h,
        scale_x=float(rng.uniform(0.003, 0.02)),
        distance=float(rng.uniform(0.03, 0.3)) if n > 1 else 0.0,
        scale_z=float(rng.uniform(0.002, 0.005)),
        size_x_slo=slo_side,
        size_y_slo=slo_side,
        scale_x_slo=float(rng.uniform(0.005, 0.02)),
        scale_y_slo=float(rng.uniform(0.005, 0.02)),
        field_size_slo=int(rng.integers(15, 55)),
        scan_focus=float(rng.normal()),
        scan_position=bytes(rng.choice([b"OD", b"OS"])),
        exam_time=int(rng.integers(1, 2**62)),
        scan_pattern=pattern,
        bscan_hdr_size=BSCAN_FIXED_SIZE + num_seg * w * 4 + int(rng.integers(0, 64)),
        id=rng.bytes(16),
        reference_id=rng.bytes(16),
        pid=int(rng.integers(0, 2**31)),
        patient_id=rng.bytes(21),
        pad=rng.bytes(3),
        dob=float(rng.uniform(0, 40000)),
        vid=int(rng.integers(0, 2**31)),
        visit_id=rng.bytes(24),
        visit_date=float(rng.uniform(1, 50000)),
        grid_type=int(rng.integers(0, 5)),
        grid_offset=int(rng.integers(0, 2**20)),
        grid_type1=int(rng.integers(0, 5)),
        grid_offset1=int(rng.integers(0, 2**20)),
        prog_id=rng.bytes(34),
        spare=rng.bytes(1790),
    )
    heads = tuple(
        BscanHeader(
            version=b"HSF-BS-103",
            hdr_size=BSCAN_FIXED_SIZE,
            start_x=float(rng.uniform(0, 9)),
            start_y=float(rng.uniform(0, 9)),
            end_x=float(rng.uniform(0, 9)),
            end_y=float(rng.uniform(0, 9)),
            num_seg=num_seg,
            off_seg=BSCAN_FIXED_SIZE,
            quality=float(np.float32(rng.uniform(10, 40))),
            shift=int(rng.integers(-100, 100)),
            iv_trafo=tuple(float(np.float32(v)) for v in rng.normal(size=6)),
            spare=rng.bytes(256 - 88),
        )
        for _ in range(n)
    )
    slo = rng.integers(0, 256, (slo_side, slo_side), dtype=np.uint8) if slo_side else None
    bscans = rng.random((n, h, w), dtype=np.float32)
    layers = (rng.random((n, num_seg, w), dtype=np.float32) * h).astype(np.float32)
    layers[rng.random(layers.shape) < 0.1] = np.nan
    return ScanRecord(hdr, heads, slo, bscans, layers)


# ---------------------------------------------------------------------------
# phantoms with masks


@dataclass
class Phantom:
    record: ScanRecord
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    truth: dict[str, object] = field(default_factory=dict)


def _fovea_blob(h: int, w: int, row: float, col: float, amp: float, sigma: float = 6.0) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    return (amp * np.exp(-((yy - row) ** 2 + (xx - col) ** 2) / (2 * sigma**2))).astype(np.float32)


def _choroid_masks(h: int, w: int, bm: np.ndarray, thick_px: np.ndarray | float,
                   rng: np.random.Generator, vessel_fraction: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(h)[:, None]
    bm = np.broadcast_to(np.asarray(bm, float), (w,))
    lower = bm + np.broadcast_to(np.asarray(thick_px, float), (w,))
    region = ((rows >= np.ceil(bm)) & (rows < np.ceil(lower))).astype(np.float32)
    vessel = np.zeros((h, w), np.float32)
    # circular lumens inside the band
    n = max(1, int(w / 25))
    for c in np.linspace(10, w - 10, n):
        r0 = bm[int(c)] + 0.6 * (lower[int(c)] - bm[int(c)])
        rad = max(2.0, 0.25 * (lower[int(c)] - bm[int(c)]) * (0.6 + 0.4 * rng.random()))
        rr, cc = draw.disk((r0, c), rad, shape=(h, w))
        vessel[rr, cc] = 1.0
    vessel = np.where(region > 0, np.maximum(vessel, vessel_fraction * 0.4), 0).astype(np.float32)
    return region, vessel


def macular_line(h: int = 496, w: int = 768, *, slo_side: int = 768, eye: str = "Right",
                 ilm_row: float = 150.0, slope_px: float = 0.0, choroid_px: float = 78.0,
                 angle_degrees: float = 0.0, seed: int = 0, with_slo_masks: bool = True) -> Phantom:
    """Single horizontal (or rotated) macular B-scan centred on the SLO."""
    rng = np.random.default_rng(seed)
    cols = np.arange(w)
    ilm = ilm_row + slope_px * (cols - w / 2)
    seg = layer_rows(w, ilm)
    length = (w - 1) * SCALE_X / 1000.0
    c = slo_side * SLO_SCALE / 2000.0
    ux, uy = math.cos(math.radians(angle_degrees)), -math.sin(math.radians(angle_degrees))
    start = (c - ux * length / 2, c - uy * length / 2)
    end = (c + ux * length / 2, c + uy * length / 2)
    hdr = make_header(1, h, w, slo_side=slo_side, eye=eye, pattern=1)
    slo = _slo_image(slo_side, rng)
    bsc = render_bscan(h, w, seg, rng, choroid_px)[None]
    rec = ScanRecord(hdr, (_bscan_header(start, end, NUM_SEG),), slo, bsc, seg[None])
    region, vessel = _choroid_masks(h, w, seg[SURFACE_INDEX["BM"]], choroid_px, rng)
    fovea = _fovea_blob(h, w, ilm_row, w // 2, 1.0)
    masks = {"choroid_region": region[None], "choroid_vessel": vessel[None], "fovea": fovea[None]}
    if with_slo_masks and slo_side:
        masks.update(slo_vessel_masks(slo_side, seed=seed, disc_center=(slo_side * 0.85, slo_side / 2)))
    return Phantom(rec, masks, {"fovea_col": w // 2, "choroid_px": choroid_px})


def macular_volume(n: int = 31, h: int = 496, w: int = 768, *, slo_side: int = 768, eye: str = "Right",
                   spacing: float | None = None, angle_degrees: float = 0.0, ilm_row: float = 150.0,
                   choroid_px: float | np.ndarray = 78.0, seed: int = 0, with_slo_masks: bool = False) -> Phantom:
    """Raster of parallel B-scans centred on the SLO, fovea on the middle B-scan."""
    rng = np.random.default_rng(seed)
    if spacing is None:
        spacing = 7200.0 / (n - 1)
    length = (w - 1) * SCALE_X / 1000.0
    c = slo_side * SLO_SCALE / 2000.0
    a = math.radians(angle_degrees)
    ux, uy = math.cos(a), -math.sin(a)
    nx, ny = -uy, ux  # image-down normal when unrotated
    heads, segs, imgs = [], [], []
    regions, vessels, foveas = [], [], []
    mid = (n - 1) / 2
    for i in range(n):
        off = (i - mid) * spacing / 1000.0
        mx, my = c + nx * off, c + ny * off
        start = (mx - ux * length / 2, my - uy * length / 2)
        end = (mx + ux * length / 2, my + uy * length / 2)
        heads.append(_bscan_header(start, end, NUM_SEG))
        seg = layer_rows(w, ilm_row)
        segs.append(seg)
        thick = choroid_px[i] if np.ndim(choroid_px) == 1 else choroid_px
        imgs.append(render_bscan(h, w, seg, rng, 78))
        reg, ves = _choroid_masks(h, w, seg[SURFACE_INDEX["BM"]], thick, rng)
        regions.append(reg)
        vessels.append(ves)
        amp = math.exp(-(((i - mid) / 2.0) ** 2))
        foveas.append(_fovea_blob(h, w, ilm_row, w // 2, amp))
    hdr = make_header(n, h, w, slo_side=slo_side, eye=eye, pattern=3, spacing=spacing)
    rec = ScanRecord(hdr, tuple(heads), _slo_image(slo_side, rng), np.stack(imgs), np.stack(segs))
    masks = {"choroid_region": np.stack(regions), "choroid_vessel": np.stack(vessels), "fovea": np.stack(foveas)}
    if with_slo_masks:
        masks.update(slo_vessel_masks(slo_side, seed=seed, disc_center=(slo_side * 0.85, slo_side / 2)))
    return Phantom(rec, masks, {"fovea_bscan": int(round(mid)), "fovea_col": w // 2})


def peripapillary(h: int = 768, w: int = 1536, *, slo_side: int = 768, eye: str = "Right",
                  radius_um: float = 1750.0, disc_center: tuple[float, float] | None = None,
                  acq_offset_px: tuple[float, float] = (0.0, 0.0), disc_radius_px: float = 70.0,
                  choroid_px: float | np.ndarray = 50.0, truncate_cols: int = 0, seed: int = 0) -> Phantom:
    """Circular scan around a synthetic optic disc.

    ``truncate_cols`` removes the choroid segmentation from that many columns
    at each lateral end.
    """
    rng = np.random.default_rng(seed)
    if disc_center is None:
        disc_center = (slo_side * (0.62 if eye == "Right" else 0.38), slo_side * 0.5)
    dx, dy = disc_center
    acq = (dx + acq_offset_px[0], dy + acq_offset_px[1])
    r_mm = radius_um / 1000.0
    sgn = -1.0 if eye == "Right" else 1.0  # column 0 temporal of the disc
    cx, cy = acq[0] * SLO_SCALE / 1000.0, acq[1] * SLO_SCALE / 1000.0
    start, end = (cx + sgn * r_mm, cy), (cx, cy)
    scale_x = 2 * math.pi * radius_um / w
    hdr = make_header(1, h, w, slo_side=slo_side, eye=eye, pattern=2, scale_x=scale_x)
    seg = layer_rows(w, 120.0)
    bsc = render_bscan(h, w, seg, rng, 50)[None]
    rec = ScanRecord(hdr, (_bscan_header(start, end, NUM_SEG),), _slo_image(slo_side, rng), bsc, seg[None])
    region, vessel = _choroid_masks(h, w, seg[SURFACE_INDEX["BM"]], choroid_px, rng)
    if truncate_cols:
        region[:, :truncate_cols] = 0
        region[:, -truncate_cols:] = 0
        vessel[:, :truncate_cols] = 0
        vessel[:, -truncate_cols:] = 0
    masks = {"choroid_region": region[None], "choroid_vessel": vessel[None]}
    fovea_xy = (dx + sgn * 4500.0 / SLO_SCALE * 0.8, dy + 20.0)
    fovea_xy = (float(np.clip(fovea_xy[0], 8, slo_side - 8)), fovea_xy[1])
    masks["slo_fovea"] = _fovea_blob(slo_side, slo_side, fovea_xy[1], fovea_xy[0], 1.0, 8.0)
    masks.update(slo_vessel_masks(slo_side, seed=seed, disc_center=disc_center, disc_radius=disc_radius_px))
    return Phantom(rec, masks, {"disc_center": disc_center, "acq_center": acq, "fovea_xy": fovea_xy,
                                "disc_radius": disc_radius_px})


def _slo_image(side: int, rng: np.random.Generator) -> np.ndarray | None:
    if not side:
        return None
    yy, xx = np.mgrid[0:side, 0:side]
    base = 90 + 40 * np.cos(xx / side * 3) * np.sin(yy / side * 2)
    return np.clip(base + rng.normal(0, 5, (side, side)), 0, 255).astype(np.uint8)


def slo_vessel_masks(side: int = 768, *, seed: int = 0, disc_center: tuple[float, float] | None = None,
                     disc_radius: float = 60.0, n_vessels: int = 8) -> dict[str, np.ndarray]:
    """Artery, vein, all-vessel and disc probability maps with curved vessels leaving the disc."""
    rng = np.random.default_rng(seed + 1)
    if disc_center is None:
        disc_center = (side / 2, side / 2)
    cx, cy = disc_center
    art = np.zeros((side, side), bool)
    vein = np.zeros((side, side), bool)
    scale = side / 768.0
    for k in range(n_vessels):
        theta = 2 * math.pi * (k + 0.3 * rng.random()) / n_vessels
        width = (3 + 4 * rng.random()) * scale if k % 2 else (4 + 5 * rng.random()) * scale
        wav = 0.2 * rng.random()
        t = np.linspace(disc_radius * 0.8, side, 600)
        ang = theta + wav * np.sin(t / (40 * scale))
        xs, ys = cx + t * np.cos(ang), cy + t * np.sin(ang)
        keep = (xs >= 0) & (xs < side) & (ys >= 0) & (ys < side)
        canvas = np.zeros((side, side), bool)
        canvas[ys[keep].astype(int), xs[keep].astype(int)] = True
        canvas = morphology.binary_dilation(canvas, morphology.disk(max(1, int(round(width / 2)))))
        (art if k % 2 else vein)[canvas] = True
    vein &= ~art
    disc = np.zeros((side, side), np.float32)
    rr, cc = draw.ellipse(cy, cx, disc_radius, disc_radius * 0.85, shape=(side, side))
    disc[rr, cc] = 1.0
    allv = art | vein
    return {
        "slo_vessel": allv.astype(np.float32),
        "slo_artery": art.astype(np.float32),
        "slo_vein": vein.astype(np.float32),
        "optic_disc": disc,
    }


def sierpinski_carpet(depth: int) -> np.ndarray:
    """Boolean raster of side ``3**depth``."""
    m = np.ones((1, 1), bool)
    for _ in range(depth):
        z = np.zeros_like(m)
        m = np.block([[m, m, m], [m, z, m], [m, m, m]])
    return m


def write_demo_corpus(folder: str | Path, n: int = 10, *, small: bool = True, corrupt: bool = True) -> list[Path]:
    """Write a mixed corpus of ``.vol`` files, fixture folders and archives with masks.

    With ``corrupt`` the last entry is a truncated ``.vol`` file.
    """
    from .container import write_fixture, write_vol
    from .maskio import save_masks

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    dims = dict(h=320, w=256, slo_side=256) if small else {}
    out: list[Path] = []
    n_good = n - 1 if corrupt else n
    for k in range(n_good):
        eye = "Right" if k % 2 == 0 else "Left"
        kind = k % 3
        if kind == 0:
            ph = macular_line(eye=eye, seed=k, ilm_row=120.0, **dims)
        elif kind == 1:
            ph = macular_volume(7, eye=eye, seed=k, ilm_row=120.0, with_slo_masks=False, **dims)
        else:
            pdims = dict(h=320, w=384, slo_side=256) if small else {}
            ph = peripapillary(eye=eye, seed=k, disc_radius_px=25.0 if small else 70.0, **pdims)
        stem = f"scan_{k:02d}"
        fmt = k % 4
        if fmt in (0, 3):
            p = folder / f"{stem}.vol"
            p.write_bytes(write_vol(ph.record))
        elif fmt == 1:
            p = write_fixture(ph.record, folder / stem, f"{stem}.vol")
        else:
            p = write_fixture(ph.record, folder / f"{stem}.zip", f"{stem}.vol")
        save_masks(p, ph.masks)
        out.append(p)
    if corrupt:
        p = folder / f"scan_{n - 1:02d}.vol"
        p.write_bytes(write_vol(macular_line(**dims).record)[:3000])
        out.append(p)
    return out
