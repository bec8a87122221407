"""Image conditioning and mask preparation."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.signal.windows import triang
from skimage import morphology

from .errors import AllZeroImage, FlatMap, ImageNarrowerThanPad, ZeroColumnMean

GAMMA_TARGET_MEAN = 0.2
PERIPAPILLARY_PAD = 240
MACULAR_REGION_THRESHOLD = 0.5
PERIPAPILLARY_REGION_THRESHOLD = 0.25
SLO_THRESHOLD = 0.5
FOVEA_COLUMN_TAPS = 21
FOVEA_ROW_TAPS = 51


class MaskKind(str, enum.Enum):
    CHOROID_REGION = "choroid_region"
    CHOROID_VESSEL = "choroid_vessel"
    FOVEA = "fovea"
    SLO_VESSEL = "slo_vessel"
    SLO_ARTERY = "slo_artery"
    SLO_VEIN = "slo_vein"
    OPTIC_DISC = "optic_disc"
    SLO_FOVEA = "slo_fovea"


@dataclass(frozen=True)
class ProbabilityMask:
    values: np.ndarray
    kind: MaskKind

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.size and (np.nanmin(v) < 0 or np.nanmax(v) > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray
    kind: MaskKind
    threshold: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=bool))


def _arr(x: ProbabilityMask | BinaryMask | np.ndarray) -> np.ndarray:
    return x.values if isinstance(x, (ProbabilityMask, BinaryMask)) else np.asarray(x)


def solve_gamma(image: np.ndarray, target: float = GAMMA_TARGET_MEAN, tol: float = 1e-3,
                bounds: tuple[float, float] = (0.1, 10.0)) -> float:
    """Exponent taking the mean of ``image ** gamma`` to ``target``.

    The mean is strictly decreasing in gamma for images in [0, 1] that are not
    binary, so bisection on ``bounds`` converges. Returns 1.0 if the image
    already meets the target within ``tol``.
    """
    img = np.asarray(image, dtype=np.float64)
    if abs(img.mean() - target) <= tol:
        return 1.0
    lo, hi = bounds
    pos = img[img > 0]
    n = img.size

    def mean_at(g: float) -> float:
        return float(np.sum(pos ** g) / n)

    if mean_at(lo) < target:
        return lo
    if mean_at(hi) > target:
        return hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if mean_at(mid) > target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


def gamma_enhance(image: np.ndarray, target: float = GAMMA_TARGET_MEAN, tol: float = 1e-3) -> np.ndarray:
    """Power-law brightness normalisation to a fixed mean intensity.

    Parameters
    ----------
    image : ndarray
        Grayscale image scaled to [0, 1].

    Returns
    -------
    ndarray
        ``image ** gamma``. All-zero images are returned unchanged with an
        :class:`AllZeroImage` warning.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.size == 0:
        raise ValueError("empty image")
    if not np.any(img > 0):
        warnings.warn("all-zero image; gamma undefined", AllZeroImage, stacklevel=2)
        return img.copy()
    g = solve_gamma(img, target, tol)
    if g == 1.0:
        return img.copy()
    return np.power(img, g)


def compensate_shadows(image: np.ndarray, window: int = 101, max_factor: float = 5.0) -> np.ndarray:
    """Brighten shadowed A-scans.

    Each column is multiplied by the ratio of the lateral moving average of
    column means to its own mean, then the result is clipped to [0, 1].
    """
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be odd and >= 3")
    img = np.asarray(image, dtype=np.float64)
    colmean = img.mean(axis=0)
    movavg = ndimage.uniform_filter1d(colmean, window, mode="reflect")
    zero = colmean <= 0
    if zero.any():
        warnings.warn(f"{int(zero.sum())} zero-mean columns; factor capped", ZeroColumnMean, stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(zero, max_factor, movavg / np.where(zero, 1.0, colmean))
    factor = np.minimum(factor, max_factor)
    return np.clip(img * factor[None, :], 0.0, 1.0)


@dataclass(frozen=True)
class PadDescriptor:
    pad: int
    width: int

    def crop(self, arr: np.ndarray) -> np.ndarray:
        """Undo the lateral padding on the last axis."""
        return np.asarray(arr)[..., self.pad : self.pad + self.width]


def reflect_pad_peripapillary(
    image: np.ndarray, masks: tuple[np.ndarray, ...] | list[np.ndarray] = (), pad: int = PERIPAPILLARY_PAD
) -> tuple[np.ndarray, list[np.ndarray], PadDescriptor]:
    """Pad a circular scan laterally so each side continues from the opposite edge."""
    img = np.asarray(image)
    width = img.shape[-1]
    if width < pad:
        raise ImageNarrowerThanPad(f"width {width} < pad {pad}")
    widths = [(0, 0)] * (img.ndim - 1) + [(pad, pad)]
    padded = np.pad(img, widths, mode="wrap")
    out_masks = []
    for m in masks:
        m = np.asarray(m)
        if m.shape[-1] != width:
            raise ValueError("mask width differs from image")
        out_masks.append(np.pad(m, [(0, 0)] * (m.ndim - 1) + [(pad, pad)], mode="wrap"))
    return padded, out_masks, PadDescriptor(pad, width)


def binarize(mask: ProbabilityMask | np.ndarray, threshold: float,
             kind: MaskKind | None = None) -> BinaryMask:
    """Threshold a probability map; values equal to the threshold count as foreground."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    k = mask.kind if isinstance(mask, ProbabilityMask) else (kind or MaskKind.CHOROID_REGION)
    return BinaryMask(_arr(mask) >= threshold, k, threshold)


@dataclass(frozen=True)
class FoveaDetection:
    row: int
    col: int
    score: float


def _unique_argmax(resp: np.ndarray, what: str) -> int:
    top = resp.max()
    if not top > 0:
        raise FlatMap(f"{what} response is zero everywhere")
    idx = np.flatnonzero(resp == top)
    if len(idx) > 1:
        raise FlatMap(f"{what} response has {len(idx)} equal peaks")
    return int(idx[0])


def detect_fovea(prob: ProbabilityMask | np.ndarray) -> FoveaDetection:
    """Locate the fovea from a probability map via triangular-filtered marginals."""
    p = np.asarray(_arr(prob), dtype=np.float64)
    if (p < 0).any():
        raise ValueError("fovea map must be non-negative")
    colresp = ndimage.correlate1d(p.sum(axis=0), triang(FOVEA_COLUMN_TAPS), mode="constant")
    rowresp = ndimage.correlate1d(p.sum(axis=1), triang(FOVEA_ROW_TAPS), mode="constant")
    c = _unique_argmax(colresp, "column")
    r = _unique_argmax(rowresp, "row")
    return FoveaDetection(r, c, float(colresp[c] * rowresp[r]))


def area_floor(shape: tuple[int, ...], base: float = 10.0) -> int:
    """Small-object floor scaled quadratically from a 768-pixel reference side."""
    side = max(shape)
    return max(1, int(round(base * (side / 768.0) ** 2)))


def morphology_cleanup(mask: BinaryMask | np.ndarray, floor: int | None = None) -> BinaryMask:
    """Drop small components, then close once with a 3x3 cross."""
    m = np.asarray(_arr(mask), dtype=bool)
    kind = mask.kind if isinstance(mask, BinaryMask) else MaskKind.SLO_VESSEL
    if not m.any():
        return BinaryMask(m.copy(), kind)
    floor = area_floor(m.shape) if floor is None else floor
    lab, _ = ndimage.label(m, structure=np.ones((3, 3)))
    sizes = np.bincount(lab.ravel())
    keep = sizes >= floor
    keep[0] = False
    m = keep[lab]
    m = morphology.binary_closing(m, morphology.diamond(1))
    return BinaryMask(m, kind)
