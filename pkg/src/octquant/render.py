"""Image exports for visual checks of segmentations, maps and profiles."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .container import BoundaryCurve  # noqa: E402
from .peripapillary import SECTORS  # noqa: E402

_COLOURS = [(255, 80, 80), (80, 255, 80), (80, 160, 255), (255, 220, 60), (255, 80, 255), (60, 240, 240)]


def to_uint8(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    lo, hi = np.nanmin(a), np.nanmax(a)
    if hi <= lo:
        return np.zeros(a.shape, np.uint8)
    return np.round(255 * (a - lo) / (hi - lo)).astype(np.uint8)


def save_bscan_overlay(path: Path, bscan: np.ndarray, curves: Iterable[BoundaryCurve],
                       region: np.ndarray | None = None, vessel: np.ndarray | None = None,
                       fovea_col: int | None = None) -> None:
    g = to_uint8(bscan)
    rgb = np.stack([g, g, g], axis=-1).astype(np.float64)
    if region is not None:
        rgb[region > 0.5] = 0.6 * rgb[region > 0.5] + 0.4 * np.array([255, 140, 0])
    if vessel is not None:
        sel = vessel > 0.5
        rgb[sel] = 0.5 * rgb[sel] + 0.5 * np.array([0, 120, 255])
    h, w = g.shape
    for k, c in enumerate(curves):
        cols = np.flatnonzero(c.valid)
        rows = np.clip(np.round(c.rows[cols]).astype(int), 0, h - 1)
        rgb[rows, cols] = _COLOURS[k % len(_COLOURS)]
    if fovea_col is not None and 0 <= fovea_col < w:
        rgb[:, fovea_col] = (255, 255, 255)
    Image.fromarray(rgb.astype(np.uint8)).save(path)


def save_map(stem: Path, values: np.ndarray) -> None:
    """Raw float32 array plus a grayscale rendering."""
    np.asarray(values, dtype="<f4").tofile(stem.with_suffix(".raw"))
    Image.fromarray(to_uint8(values)).save(stem.with_suffix(".png"))


def save_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) > 0.5).astype(np.uint8) * 255).save(path)


def save_peripapillary_profile(path: Path, angles: np.ndarray, raw: np.ndarray, smooth: np.ndarray,
                               title: str = "") -> None:
    order = np.argsort(angles)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(angles[order], raw[order], lw=0.6, color="0.6", label="raw")
    ax.plot(angles[order], smooth[order], lw=1.5, color="C3", label="moving average")
    for lo, hi in SECTORS.values():
        for b in (lo, hi):
            if -180 <= b <= 180:
                ax.axvline(b, color="k", ls=":", lw=0.6)
    ax.set_xlim(-180, 180)
    ax.set_xlabel("angle from temporal centre (degrees)")
    ax.set_ylabel("thickness (microns)")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_bland_altman(path: Path, a: np.ndarray, b: np.ndarray, title: str = "") -> None:
    a, b = np.asarray(a, float), np.asarray(b, float)
    mean, diff = (a + b) / 2, a - b
    md, sd = diff.mean(), diff.std(ddof=1)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(mean, diff, s=10)
    for y, ls in ((md, "-"), (md - 1.96 * sd, "--"), (md + 1.96 * sd, "--")):
        ax.axhline(y, color="C3", ls=ls, lw=1)
    ax.set_xlabel("mean of pair")
    ax.set_ylabel("difference")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
