"""Page preparation: ratio fit, rescale, Otsu binarization, training targets.

Pages are fitted into a white canvas with a fixed width/height ratio, scaled
down to the network resolution, and binarized.  The training target keeps
the ground-truth label only at binarized-foreground (ink) pixels and is 0
everywhere else, so the loss can ignore the background entirely.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .pixmap import Pixmap


@dataclass
class NetInputSpec:
    """Geometry of the network input plane."""

    target_width: int = 260
    target_height: int = 390
    ratio: float = 2.0 / 3.0  # canvas w/h
    pad_divisor: int = 4  # two stride-2 pools need dims divisible by 4

    def __post_init__(self):
        if self.ratio <= 0:
            raise DataError("ratio must be positive")
        if self.pad_divisor < 1:
            raise DataError("pad divisor must be >= 1")
        if self.target_width < self.pad_divisor or self.target_height < self.pad_divisor:
            raise DataError("target dims must be >= pad divisor")


def _fit_array(arr: np.ndarray, ratio: float, fill) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = arr.shape[:2]
    if w < ratio * h:
        out_w, out_h = math.ceil(ratio * h), h
    else:
        out_w, out_h = w, math.ceil(w / ratio)
    out_shape = (out_h, out_w) + arr.shape[2:]
    out = np.full(out_shape, fill, dtype=arr.dtype)
    ox = (out_w - w) // 2
    oy = (out_h - h) // 2
    out[oy : oy + h, ox : ox + w] = arr
    return out, (ox, oy)


def fit_to_ratio(img, ratio: float, fill=255):
    """Center `img` on a canvas of the given w/h ratio, padded with `fill`.

    Never crops; returns (fitted, (x_offset, y_offset)) so ground-truth masks
    can be fitted with the identical placement (use fill=0 for label masks).
    """
    if ratio <= 0:
        raise DataError("ratio must be positive")
    if isinstance(img, Pixmap):
        fitted, off = _fit_array(img.samples, ratio, fill)
        return Pixmap(fitted), off
    return _fit_array(np.asarray(img), ratio, fill)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) fractional-overlap box filter weights, rows sum to 1."""
    scale = n_in / n_out
    w = np.zeros((n_out, n_in))
    for j in range(n_out):
        lo, hi = j * scale, (j + 1) * scale
        k0, k1 = int(math.floor(lo)), min(n_in, int(math.ceil(hi)))
        for k in range(k0, k1):
            w[j, k] = min(hi, k + 1) - max(lo, k)
    return w / scale


def resize_area(img, w: int, h: int):
    """Exact area-average resample of a grayscale image to w x h.

    Each output pixel is the overlap-weighted mean of the source pixels it
    covers; integer images are rounded half-to-even back to uint8.
    """
    if w < 1 or h < 1:
        raise DataError("target dims must be >= 1")
    is_pixmap = isinstance(img, Pixmap)
    arr = img.samples if is_pixmap else np.asarray(img)
    if arr.ndim != 2:
        raise DataError("area resize expects a single-channel image")
    acc = _box_weights(arr.shape[0], h) @ arr.astype(np.float64) @ _box_weights(arr.shape[1], w).T
    if np.issubdtype(arr.dtype, np.integer):
        acc = np.rint(acc).astype(arr.dtype)
    if is_pixmap:
        return Pixmap(acc)
    return acc


def resize_nearest(mask, w: int, h: int):
    """Nearest-neighbor resample; never invents values, works both ways."""
    if w < 1 or h < 1:
        raise DataError("target dims must be >= 1")
    is_pixmap = isinstance(mask, Pixmap)
    arr = mask.samples if is_pixmap else np.asarray(mask)
    src_h, src_w = arr.shape[:2]
    ys = np.minimum((np.arange(h) + 0.5) * src_h / h, src_h - 1).astype(np.intp)
    xs = np.minimum((np.arange(w) + 0.5) * src_w / w, src_w - 1).astype(np.intp)
    out = arr[np.ix_(ys, xs)]
    if is_pixmap:
        return Pixmap(out)
    return out


def resize(img, w: int, h: int, mode: str):
    """Resample to w x h; mode 'area' for grayscale, 'nearest' for masks."""
    if mode == "area":
        arr = img.samples if isinstance(img, Pixmap) else np.asarray(img)
        if np.issubdtype(arr.dtype, np.integer) and not isinstance(img, Pixmap) and arr.dtype != np.uint8:
            raise DataError("area-average is undefined for categorical label masks")
        return resize_area(img, w, h)
    if mode == "nearest":
        return resize_nearest(img, w, h)
    raise DataError(f"unknown resize mode {mode!r}")


def otsu_threshold(hist: np.ndarray):
    """Smallest T maximizing between-class variance of {<=T, >T}.

    Returns None when every split has zero variance (constant image).
    Comparisons use exact integer arithmetic so ties are reproducible.
    """
    hist = np.asarray(hist, dtype=np.int64)
    if hist.shape != (256,):
        raise DataError("histogram must have 256 bins")
    total = int(hist.sum())
    total_sum = int((np.arange(256, dtype=np.int64) * hist).sum())
    best_t = None
    best_num, best_den = 0, 1  # best variance as exact fraction num/den
    w0 = 0
    s0 = 0
    for t in range(256):
        w0 += int(hist[t])
        s0 += t * int(hist[t])
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        # between-class variance ∝ (s0*w1 - s1*w0)^2 / (w0*w1)
        num = (s0 * w1 - (total_sum - s0) * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_num, best_den, best_t = num, den, t
    return best_t


def binarize_otsu(img) -> np.ndarray:
    """Global Otsu binarization: foreground (1) = pixels <= threshold (ink).

    A constant image yields an all-background mask and a warning.
    """
    arr = img.samples if isinstance(img, Pixmap) else np.asarray(img)
    if arr.ndim != 2:
        raise DataError("binarization expects a single grayscale channel")
    hist = np.bincount(arr.reshape(-1), minlength=256)
    t = otsu_threshold(hist)
    if t is None:
        warnings.warn("constant image: no ink detected, mask is all background")
        return np.zeros(arr.shape, dtype=np.uint8)
    return (arr <= t).astype(np.uint8)


def make_target(gt: np.ndarray, bin_mask: np.ndarray) -> np.ndarray:
    """Training target: ground-truth label at ink pixels, 0 elsewhere."""
    gt = np.asarray(gt)
    bin_mask = np.asarray(bin_mask)
    if gt.shape != bin_mask.shape:
        raise DataError(f"shape mismatch: gt {gt.shape} vs bin {bin_mask.shape}")
    return np.where(bin_mask == 1, gt, 0).astype(gt.dtype)


def pad_to_divisor(arr: np.ndarray, divisor: int) -> np.ndarray:
    """Zero-pad bottom/right so both spatial dims divide `divisor`."""
    h, w = arr.shape[-2:]
    ph = (-h) % divisor
    pw = (-w) % divisor
    if ph == 0 and pw == 0:
        return arr
    pad = [(0, 0)] * (arr.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(arr, pad)


@dataclass
class PreparedPage:
    """A page reduced to network resolution, plus the geometry to undo it."""

    gray_net: np.ndarray  # uint8 (target_h, target_w)
    bin_net: np.ndarray  # uint8 {0,1}, same size
    target: np.ndarray | None  # int32 labels, same size (None at inference)
    canvas_size: tuple[int, int]  # (w, h) after ratio fit
    offset: tuple[int, int]  # (x, y) placement of the page on the canvas
    orig_size: tuple[int, int]  # (w, h) of the source page


def prepare_page(page: Pixmap, gt: np.ndarray | None, spec: NetInputSpec) -> PreparedPage:
    """Run the full pre-processing chain for one page."""
    gray = page.to_gray()
    fitted, offset = fit_to_ratio(gray, spec.ratio, fill=255)
    canvas_size = (fitted.width, fitted.height)
    gray_net = resize_area(fitted.samples, spec.target_width, spec.target_height)
    bin_net = binarize_otsu(gray_net)
    target = None
    if gt is not None:
        if gt.shape != (page.height, page.width):
            raise DataError(
                f"ground truth {gt.shape} does not match page {(page.height, page.width)}"
            )
        gt_fit, _ = _fit_array(np.asarray(gt), spec.ratio, 0)
        gt_net = resize_nearest(gt_fit, spec.target_width, spec.target_height)
        target = make_target(gt_net, bin_net).astype(np.int32)
    return PreparedPage(gray_net, bin_net, target, canvas_size, offset, (page.width, page.height))
