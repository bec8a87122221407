"""End-to-end analysis of scan files and batch collation."""
from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from . import render
from .container import (
    LAYERS,
    RETINAL_LAYERS,
    ScanCategory,
    ScanRecord,
    classify_scan,
    parse_fixture,
    read_vol,
)
from .enface import (
    MapKind,
    ScanGrid,
    build_enface_map,
    cvi_profile,
    etdrs_summarize,
    select_fovea_bscan,
    vessel_density_profile,
)
from .errors import (
    ConfigError,
    EmptyDiscMask,
    EmptyDirectory,
    EmptyRegionInRoi,
    EmptyRoi,
    FlatMap,
    FoveaColumnInvalid,
    IncompleteSegmentation,
    MissingLandmark,
    NoFoveaAnywhere,
    OctQuantWarning,
)
from .linescan import (
    RoiSpec,
    ThicknessMode,
    ThicknessProfile,
    boundaries_from_mask,
    choroid_vascular_index,
    layer_area,
    roi_mean_thickness,
    subfoveal_thickness,
    thickness_per_ascan,
    thickness_perpendicular,
)
from .maskio import load_masks
from .peripapillary import (
    CircleGeometry,
    PeripapillaryProfile,
    moving_average_profile,
    overlap_index,
    sectorize,
    temporal_center,
)
from .preprocess import (
    MACULAR_REGION_THRESHOLD,
    PERIPAPILLARY_PAD,
    PERIPAPILLARY_REGION_THRESHOLD,
    SLO_THRESHOLD,
    binarize,
    compensate_shadows,
    detect_fovea,
    gamma_enhance,
    morphology_cleanup,
    reflect_pad_peripapillary,
)
from .slo import DiscEllipse, Zone, fit_disc_ellipse, vessel_features, zone_mask

META_KEYS = (
    "Filename",
    "FAILED",
    "eye",
    "Bscan_type",
    "Bscan_resolution_x",
    "Bscan_resolution_y",
    "Bscan_scale_z",
    "Bscan_scale_x",
    "Bscan_scale_y",
    "scale_units",
    "avg_quality",
    "retinal_layers_N",
    "scan_focus",
    "visit_date",
    "exam_time",
    "slo_resolution_px",
    "field_of_view_mm",
    "slo_scale_xy",
    "location",
    "field_size_degrees",
    "slo_modality",
    "acquisition_angle_degrees",
    "Bscan_fovea_x",
    "Bscan_fovea_y",
    "slo_fovea_x",
    "slo_fovea_y",
    "slo_missing_fovea",
    "optic_disc_overlap_index_%",
    "optic_disc_overlap_warning",
    "optic_disc_x",
    "optic_disc_y",
    "optic_disc_radius_px",
    "thickness_units",
    "vascular_index_units",
    "vessel_density_units",
    "area_units",
    "volume_units",
    "linescan_area_ROI_microns",
    "choroid_measure_type",
    "acquisition_radius_px",
    "acquisition_radius_mm",
    "acquisition_optic_disc_center_x",
    "acquisition_optic_disc_center_y",
)

UNIT_KEYS = {
    "thickness_units": "microns",
    "vascular_index_units": "dimensionless",
    "vessel_density_units": "micron2",
    "area_units": "mm2",
    "volume_units": "mm3",
}

CHOROID_MODES = {"perpendicular": ThicknessMode.PERPENDICULAR, "perp": ThicknessMode.PERPENDICULAR,
                 "vertical": ThicknessMode.PER_ASCAN}


@dataclass
class RunConfig:
    """Options for one analysis run.

    ``choroid_measure`` of ``None`` selects perpendicular measurement for
    macular scans; peripapillary choroids are always measured per A-scan.
    ``linescan_roi_microns`` is the full width of the fovea-centred window.
    ``region_threshold`` of ``None`` uses the per-scan-type default.
    """

    inputs: list[str] = field(default_factory=list)
    output_dir: str = "octquant_output"
    save_visualizations: bool = False
    choroid_measure: str | None = None
    linescan_roi_microns: float = 6000.0
    region_threshold: float | None = None
    slo_threshold: float = SLO_THRESHOLD
    analyse_slo: bool = True
    workers: int = 1
    tangent_window: int = 5
    shadow_window: int = 101

    def validate(self) -> None:
        for name in ("region_threshold", "slo_threshold"):
            t = getattr(self, name)
            if t is not None and not 0 < t < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {t}")
        if not self.linescan_roi_microns > 0:
            raise ConfigError("linescan_roi_microns must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.choroid_measure is not None and self.choroid_measure not in CHOROID_MODES:
            raise ConfigError(f"unknown choroid measure {self.choroid_measure!r}")
        if self.tangent_window < 3 or self.tangent_window % 2 == 0:
            raise ConfigError("tangent_window must be odd and >= 3")


@dataclass
class FileResult:
    name: str
    row: dict[str, Any]
    log: list[str]

    @property
    def failed(self) -> bool:
        return bool(self.row.get("FAILED"))


# ---------------------------------------------------------------------------
# input discovery


def is_scan_input(p: Path) -> bool:
    if p.is_dir():
        return (p / "meta.json").is_file()
    return p.is_file() and p.suffix.lower() in (".vol", ".zip")


def discover_inputs(paths: Iterable[str | Path]) -> list[Path]:
    """Scan files among ``paths``; directories are searched one level deep."""
    found: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if is_scan_input(p):
            found.append(p)
        elif p.is_dir():
            found.extend(c for c in p.iterdir() if is_scan_input(c) and not c.name.endswith("_masks"))
        else:
            raise ConfigError(f"input {p} does not exist")
    if not found:
        raise EmptyDirectory("no scan files found")
    return sorted(set(found), key=lambda q: (q.name, str(q)))


def load_record(path: str | Path) -> ScanRecord:
    p = Path(path)
    if p.suffix.lower() == ".vol":
        return read_vol(p)
    return parse_fixture(p)


def file_stem(path: Path) -> str:
    return path.name if path.is_dir() else path.stem


# ---------------------------------------------------------------------------
# per-file analysis


class _Analysis:
    def __init__(self, path: Path, rec: ScanRecord, masks: dict[str, np.ndarray], cfg: RunConfig,
                 outdir: Path | None, log: list[str]):
        self.path, self.rec, self.masks, self.cfg = path, rec, masks, cfg
        self.md = rec.metadata
        self.outdir = outdir
        self.log = log
        self.meta: dict[str, Any] = {}
        self.features: dict[str, Any] = {}
        self.category = classify_scan(self.md)
        self.disc: DiscEllipse | None = None
        self.slo_fovea: tuple[float, float] | None = None

    # helpers ---------------------------------------------------------------

    def note(self, msg: str) -> None:
        self.log.append(f"INFO {msg}")

    def viz(self, name: str) -> Path | None:
        if not self.cfg.save_visualizations or self.outdir is None:
            return None
        self.outdir.mkdir(parents=True, exist_ok=True)
        return self.outdir / name

    def choroid_mode(self) -> ThicknessMode:
        if self.category is ScanCategory.PERIPAPILLARY:
            return ThicknessMode.PER_ASCAN
        if self.cfg.choroid_measure is None:
            return ThicknessMode.PERPENDICULAR
        return CHOROID_MODES[self.cfg.choroid_measure]

    def region_threshold(self) -> float:
        if self.cfg.region_threshold is not None:
            return self.cfg.region_threshold
        if self.category is ScanCategory.PERIPAPILLARY:
            return PERIPAPILLARY_REGION_THRESHOLD
        return MACULAR_REGION_THRESHOLD

    def retinal_layers(self) -> list[str]:
        present = set(self.md.surfaces)
        out = [k for k in RETINAL_LAYERS if set(LAYERS[k]) <= present]
        if not out:
            self.note("retinal layer boundaries absent; retinal measurements not made")
        return out

    def region(self, i: int) -> np.ndarray | None:
        m = self.masks.get("choroid_region")
        return None if m is None else binarize(m[i], self.region_threshold()).values

    def vessel(self, i: int) -> np.ndarray | None:
        m = self.masks.get("choroid_vessel")
        return None if m is None else m[i].astype(np.float64)

    def choroid_profile(self, region: np.ndarray, mode: ThicknessMode) -> ThicknessProfile:
        up, lo = boundaries_from_mask(region)
        md = self.md
        with warnings.catch_warnings():
            # boundary curves from a mask never cross; normals leaving the band are expected at the ends
            warnings.simplefilter("ignore", OctQuantWarning)
            if mode is ThicknessMode.PERPENDICULAR:
                return thickness_perpendicular(up, lo, md.bscan_scale_x, md.bscan_scale_y, self.cfg.tangent_window,
                                               "CHOROID")
        return thickness_per_ascan(up, lo, md.bscan_scale_y, "CHOROID")

    def bscan_fovea(self, i: int) -> tuple[int, int, float] | None:
        m = self.masks.get("fovea")
        if m is None:
            return None
        try:
            d = detect_fovea(m[i])
        except FlatMap:
            return None
        return d.row, d.col, d.score

    def preprocess_log(self) -> None:
        self.note("preprocessing order: gamma enhancement then shadow compensation")

    def render_bscan(self, i: int, name: str, fovea_col: int | None) -> None:
        p = self.viz(name)
        if p is None:
            return
        img = compensate_shadows(gamma_enhance(self.rec.bscans[i]), self.cfg.shadow_window)
        curves = [self.rec.boundary(i, s) for s in self.md.surfaces]
        region = self.masks.get("choroid_region")
        vessel = self.masks.get("choroid_vessel")
        render.save_bscan_overlay(p, img, curves, None if region is None else region[i],
                                  None if vessel is None else vessel[i], fovea_col)

    # pipelines -------------------------------------------------------------

    def run(self) -> None:
        md = self.md
        self.meta.update(md.table_row())
        self.meta.update(UNIT_KEYS)
        self.meta["linescan_area_ROI_microns"] = self.cfg.linescan_roi_microns
        self.meta["choroid_measure_type"] = self.choroid_mode().value
        self.preprocess_log()
        self.note(f"scan category {self.category.value}")
        if self.rec.slo is not None:
            self.fit_disc()
        if self.category is ScanCategory.MACULAR_VOLUME:
            self.run_volume()
        elif self.category is ScanCategory.PERIPAPILLARY:
            self.run_peripapillary()
        else:
            self.run_lines()
        self.meta["slo_missing_fovea"] = self.slo_fovea is None
        if self.slo_fovea is not None:
            self.meta["slo_fovea_x"], self.meta["slo_fovea_y"] = self.slo_fovea
        if self.rec.slo is not None and self.cfg.analyse_slo:
            self.run_slo()

    def fit_disc(self) -> None:
        m = self.masks.get("optic_disc")
        if m is None:
            return
        try:
            self.disc = fit_disc_ellipse(binarize(m, SLO_THRESHOLD).values)
        except EmptyDiscMask:
            self.note("optic disc mask empty")
            return
        self.meta["optic_disc_x"], self.meta["optic_disc_y"] = self.disc.center
        self.meta["optic_disc_radius_px"] = self.disc.radius

    def run_lines(self) -> None:
        rec, md = self.rec, self.md
        layers = self.retinal_layers()
        n = rec.num_bscans
        grid = ScanGrid.from_record(rec) if rec.slo is not None else None
        for i in range(n):
            prefix = "" if n == 1 else f"bscan{i:02d}_"
            fov = self.bscan_fovea(i)
            if fov is None:
                warnings.warn(f"B-scan {i}: no fovea detected; using lateral centre", MissingLandmark)
                frow, fcol = math.nan, md.bscan_resolution_x // 2
            else:
                frow, fcol = fov[0], fov[1]
            if i == 0:
                self.meta["Bscan_fovea_x"], self.meta["Bscan_fovea_y"] = fcol, frow
                if fov is not None and grid is not None:
                    x, y = grid.to_slo(0, fcol)
                    self.slo_fovea = (float(x), float(y))
            roi = RoiSpec(int(fcol), self.cfg.linescan_roi_microns / 2)
            self.measure_bscan(i, prefix, layers, roi)
            self.render_bscan(i, f"bscan_{i:02d}_overlay.png", int(fcol))

    def measure_bscan(self, i: int, prefix: str, layers: list[str], roi: RoiSpec) -> None:
        rec, md, f = self.rec, self.md, self.features
        sx, sy, h = md.bscan_scale_x, md.bscan_scale_y, md.bscan_resolution_y
        for layer in layers:
            up, lo = (rec.boundary(i, s) for s in LAYERS[layer])
            prof = thickness_per_ascan(up, lo, sy, layer)
            f[f"{prefix}{layer}_subfoveal_thickness"] = self._subfoveal(prof, roi.center_column)
            f[f"{prefix}{layer}_mean_thickness"] = roi_mean_thickness(prof, roi, sx)
            f[f"{prefix}{layer}_area"] = layer_area((up, lo), roi, sx, sy, h)
        region = self.region(i)
        if region is None:
            self.note("choroid masks absent; choroid analysis skipped")
            return
        prof = self.choroid_profile(region, self.choroid_mode())
        f[f"{prefix}CHOROID_subfoveal_thickness"] = self._subfoveal(prof, roi.center_column)
        f[f"{prefix}CHOROID_mean_thickness"] = roi_mean_thickness(prof, roi, sx)
        f[f"{prefix}CHOROID_area"] = layer_area(region, roi, sx, sy)
        vessel = self.vessel(i)
        if vessel is not None:
            cols = roi.columns(sx, region.shape[1])
            f[f"{prefix}CHOROID_vessel_area"] = float((vessel[:, cols] * region[:, cols]).sum()) * sx * sy * 1e-6
            try:
                f[f"{prefix}CHOROID_vascular_index"] = choroid_vascular_index(vessel, region, roi, sx)
            except (EmptyRegionInRoi, EmptyRoi) as exc:
                self.note(f"vascular index unavailable: {exc}")
                f[f"{prefix}CHOROID_vascular_index"] = math.nan

    def _subfoveal(self, prof: ThicknessProfile, col: int) -> float:
        try:
            return subfoveal_thickness(prof, col)
        except FoveaColumnInvalid as exc:
            self.note(f"{prof.layer}: {exc}")
            return math.nan

    def run_volume(self) -> None:
        rec, md, f = self.rec, self.md, self.features
        n, w = rec.num_bscans, md.bscan_resolution_x
        dets = [self.bscan_fovea(i) for i in range(n)]
        try:
            fi, _ = select_fovea_bscan([None if d is None else d[2] for d in dets])
            frow, fcol = dets[fi][0], dets[fi][1]  # type: ignore[index]
        except NoFoveaAnywhere:
            warnings.warn("no fovea in any B-scan; map centred on the volume centre", MissingLandmark)
            fi, frow, fcol = n // 2, math.nan, w // 2
        self.meta["Bscan_fovea_x"], self.meta["Bscan_fovea_y"] = fcol, frow
        self.note(f"fovea B-scan {fi}, column {fcol}")
        grid, shape, slo_scale = self.volume_canvas()
        fx, fy = grid.to_slo(fi, fcol)
        if not math.isnan(frow):
            self.slo_fovea = (float(fx), float(fy))
        fovea_xy = (float(fx), float(fy))

        maps: dict[str, tuple[np.ndarray, np.ndarray, MapKind]] = {}
        for layer in self.retinal_layers():
            vals = np.full((n, w), np.nan)
            for i in range(n):
                up, lo = (rec.boundary(i, s) for s in LAYERS[layer])
                vals[i] = thickness_per_ascan(up, lo, md.bscan_scale_y, layer).values
            maps[layer] = (vals, np.isfinite(vals), MapKind.THICKNESS)
        if "choroid_region" in self.masks:
            mode = self.choroid_mode()
            th = np.full((n, w), np.nan)
            vd = np.zeros((n, w))
            cvi = np.full((n, w), np.nan)
            has_vessel = "choroid_vessel" in self.masks
            for i in range(n):
                region = self.region(i)
                th[i] = self.choroid_profile(region, mode).values
                if has_vessel:
                    vessel = self.vessel(i)
                    vd[i] = vessel_density_profile(vessel, region, md.bscan_scale_x, md.bscan_scale_y)
                    cvi[i] = cvi_profile(vessel, region)[0]
            ok = np.isfinite(th)
            maps["CHOROID"] = (th, ok, MapKind.THICKNESS)
            if has_vessel:
                maps["CHOROID_vd"] = (np.where(ok, vd, np.nan), ok, MapKind.VESSEL_DENSITY)
                maps["CHOROID_cvi"] = (cvi, np.isfinite(cvi), MapKind.CVI)
        else:
            self.note("choroid masks absent; choroid analysis skipped")

        for key, (vals, ok, kind) in maps.items():
            emap = build_enface_map(vals, ok, grid, shape, fovea_xy, kind)
            summ = etdrs_summarize(emap, slo_scale, md.eye)
            layer = key.split("_vd")[0].split("_cvi")[0]
            f.update(summ.row(layer, kind.value))
            imputed = [f"{sub} {pct:.2f}%" for sub, pct in summ.missing_percent.items() if pct > 0]
            if imputed:
                self.note(f"{key} ETDRS pixels imputed: {', '.join(imputed)}")
            p = self.viz(f"map_{key}")
            if p is not None:
                render.save_map(p, emap.values)
        self.render_bscan(fi, f"bscan_{fi:02d}_overlay.png", int(fcol))

    def volume_canvas(self) -> tuple[ScanGrid, tuple[int, int], float]:
        rec, md = self.rec, self.md
        if rec.slo is not None:
            return ScanGrid.from_record(rec), rec.slo.shape, md.slo_scale_xy
        # no localiser: lay the raster on a B-scan-pixel canvas
        pad = 8
        step = md.bscan_scale_z / md.bscan_scale_x
        h = int(math.ceil((rec.num_bscans - 1) * step)) + 2 * pad + 1
        w = md.bscan_resolution_x + 2 * pad
        grid = ScanGrid(np.array([pad, pad], float), np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0, step,
                        rec.num_bscans, md.bscan_resolution_x)
        self.note("no SLO; en face maps drawn on a B-scan pixel canvas")
        return grid, (h, w), md.bscan_scale_x

    def run_peripapillary(self) -> None:
        rec, md, f = self.rec, self.md, self.features
        circle = CircleGeometry.from_record(rec)
        fovea = None
        if "slo_fovea" in self.masks:
            try:
                d = detect_fovea(self.masks["slo_fovea"])
                fovea = (float(d.col), float(d.row))
            except FlatMap:
                pass
        self.slo_fovea = fovea
        disc_c = self.disc.center if self.disc is not None else None
        tc = temporal_center(disc_c, fovea, circle)
        self.meta["Bscan_fovea_x"] = tc
        acq = (md.acquisition_optic_disc_center_x, md.acquisition_optic_disc_center_y)
        if self.rec.slo is not None:
            idx, warn = overlap_index(acq, disc_c, self.disc.diameter if self.disc else None)
            self.meta["optic_disc_overlap_index_%"] = idx
            self.meta["optic_disc_overlap_warning"] = warn
            if warn:
                self.log.append(f"WARNING overlap index {idx:.1f}% exceeds 15% of disc diameter")

        profiles: dict[str, PeripapillaryProfile] = {}
        for layer in self.retinal_layers():
            up, lo = (rec.boundary(0, s) for s in LAYERS[layer])
            p = thickness_per_ascan(up, lo, md.bscan_scale_y, layer)
            profiles[layer] = PeripapillaryProfile.from_thickness(p.values, p.valid, tc)
        if "choroid_region" in self.masks:
            region_p = self.masks["choroid_region"][0]
            padded, _, desc = reflect_pad_peripapillary(region_p, pad=min(PERIPAPILLARY_PAD, region_p.shape[-1]))
            region = desc.crop(binarize(padded, self.region_threshold()).values)
            p = self.choroid_profile(region, ThicknessMode.PER_ASCAN)
            profiles["CHOROID"] = PeripapillaryProfile.from_thickness(p.values, p.valid, tc)
        else:
            self.note("choroid masks absent; choroid analysis skipped")
        for layer, prof in profiles.items():
            frac = prof.zero_filled_fraction
            if frac > 0:
                warnings.warn(f"{layer}: {100 * frac:.2f}% of columns unsegmented and zero-padded",
                              IncompleteSegmentation)
            f.update(sectorize(prof).row(layer))
            p = self.viz(f"peripapillary_{layer}.png")
            if p is not None:
                smooth = moving_average_profile(prof.values, zero_filled=prof.zero_filled)
                render.save_peripapillary_profile(p, prof.angles, np.where(prof.zero_filled, np.nan, prof.values),
                                                  smooth, layer)
        self.render_bscan(0, "bscan_00_overlay.png", tc)

    def run_slo(self) -> None:
        md, f = self.md, self.features
        kinds = {"all": "slo_vessel", "artery": "slo_artery", "vein": "slo_vein"}
        avail = {v: self.masks[k] for v, k in kinds.items() if k in self.masks}
        if not avail:
            self.note("SLO vessel masks absent; SLO analysis skipped")
            return
        zones: dict[str, np.ndarray | None] = {"whole": None}
        disc_centred = self.category is ScanCategory.PERIPAPILLARY
        if disc_centred and self.disc is not None:
            for z in (Zone.B, Zone.C):
                zones[z.value] = zone_mask(self.disc, z, self.rec.slo.shape).mask
        elif disc_centred:
            self.note("disc-centred SLO without disc mask; zone metrics skipped")
        for vtype, prob in avail.items():
            mask = morphology_cleanup(binarize(prob, self.cfg.slo_threshold)).values
            if self.disc is not None:
                # disc interior is not vessel
                yy, xx = np.mgrid[0 : mask.shape[0], 0 : mask.shape[1]]
                mask &= np.hypot(xx - self.disc.center[0], yy - self.disc.center[1]) > self.disc.radius
            for zname, zm in zones.items():
                feats = vessel_features(mask, md.slo_scale_xy, zm, None if vtype == "all" else vtype)
                if disc_centred and zname == "whole":
                    # calibre summaries and tortuosity are zone-restricted for disc-centred images
                    for k in ("average_local_calibre", "tortuosity_density", "CRAE_Knudtson", "CRVE_Knudtson"):
                        feats.pop(k, None)
                f.update({f"{vtype}_{zname}_{k}": v for k, v in feats.items()})
            p = self.viz(f"slo_{vtype}.png")
            if p is not None:
                render.save_mask(p, mask)


def _format(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "True" if v else "False"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def run_file(path: str | Path, config: RunConfig, edited: bool = False) -> FileResult:
    """Analyse one scan. Failures are recorded in the row rather than raised."""
    path = Path(path)
    name = path.name
    log: list[str] = []
    row: dict[str, Any] = {"Filename": name, "FAILED": False}
    outdir = Path(config.output_dir) / file_stem(path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        analysis = None
        try:
            rec = load_record(path)
            masks, used = load_masks(path, rec, edited=edited)
            if edited:
                log.append(f"INFO re-ingested edited masks: {', '.join(used) if used else 'none found'}")
            analysis = _Analysis(path, rec, masks, config, outdir, log)
            analysis.run()
            row.update(analysis.meta)
            row.update(analysis.features)
        except Exception as exc:  # noqa: BLE001 - isolate every file
            row["FAILED"] = True
            if analysis is not None:
                row.update(analysis.meta)
            log.append(f"ERROR {type(exc).__name__}: {exc}")
    counts: dict[str, int] = {}
    for w in caught:
        if issubclass(w.category, (OctQuantWarning, RuntimeWarning, UserWarning)):
            msg = f"WARNING {w.category.__name__}: {w.message}"
            counts[msg] = counts.get(msg, 0) + 1
    log.extend(m if c == 1 else f"{m} (x{c})" for m, c in counts.items())
    if not row["FAILED"]:
        _write_single(outdir, row)
    return FileResult(name, row, log)


def _write_single(outdir: Path, row: dict[str, Any]) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "measurements.csv").write_text(collate([row]))


def collate(rows: list[dict[str, Any]]) -> str:
    """CSV text: metadata columns first, then features in sorted order."""
    feats = sorted({k for r in rows for k in r} - set(META_KEYS))
    header = list(META_KEYS) + feats
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([_format(r.get(k)) for k in header])
    return buf.getvalue()


def _worker(args: tuple[str, RunConfig]) -> FileResult:
    return run_file(args[0], args[1])


@dataclass
class BatchResult:
    results: list[FileResult]
    csv_path: Path
    log_path: Path

    @property
    def exit_code(self) -> int:
        return 0


def run_batch(config: RunConfig) -> BatchResult:
    """Analyse every discovered input and write collated outputs."""
    config.validate()
    files = discover_inputs(config.inputs)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(str(p), config) for p in files]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as ex:
            results = list(ex.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    results.sort(key=lambda r: r.name)
    csv_path = out / "measurements.csv"
    csv_path.write_text(collate([r.row for r in results]))
    log_path = out / "process_log.txt"
    log_path.write_text(_batch_log(results))
    cfg = asdict(config)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return BatchResult(results, csv_path, log_path)


def _batch_log(results: list[FileResult]) -> str:
    lines = [f"analysed {len(results)} file(s)"]
    for r in results:
        lines.append(f"== {r.name} ==")
        lines.extend(r.log)
    ok = sum(not r.failed for r in results)
    lines.append(f"summary: {ok} succeeded, {len(results) - ok} failed")
    return "\n".join(lines) + "\n"


def reingest_masks(path: str | Path, config: RunConfig) -> FileResult:
    """Recompute one file from edited masks and replace its row in the collated output."""
    config.validate()
    res = run_file(path, config, edited=True)
    out = Path(config.output_dir)
    csv_path = out / "measurements.csv"
    rows: list[dict[str, Any]] = []
    if csv_path.exists():
        with csv_path.open(newline="") as fh:
            rows = [dict(r) for r in csv.DictReader(fh)]
        rows = [{k: v for k, v in r.items() if v != ""} for r in rows if r.get("Filename") != res.name]
    rows.append(res.row)
    rows.sort(key=lambda r: r["Filename"])
    out.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(collate(rows))
    with (out / "process_log.txt").open("a") as fh:
        fh.write(f"== {res.name} (re-ingested) ==\n" + "".join(f"{ln}\n" for ln in res.log))
    return res
