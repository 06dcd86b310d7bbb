"""Difference images, similarity metrics and average-translation statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import average_image, check_image, to_uint8

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 255) ** 2
SSIM_C2 = (0.03 * 255) ** 2
LUMA = np.array([0.299, 0.587, 0.114])
MAX_DISTANCE = 255 * math.sqrt(3)


def _pair(a, b):
    a = check_image(a, "a")
    b = check_image(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


@dataclass
class DiffImage:
    diff: np.ndarray  # HxWx3 uint8 absolute differences
    changed: np.ndarray  # HxW bool

    @property
    def proportion(self) -> float:
        return float(self.changed.mean())

    def masked(self) -> np.ndarray:
        """The difference image with sub-threshold pixels set to black."""
        out = self.diff.copy()
        out[~self.changed] = 0
        return out


def diff_image(a, b, fuzz: float = 0.05) -> DiffImage:
    """Absolute difference plus the mask of pixels whose RGB distance exceeds ``fuzz``.

    Distance is Euclidean over the three channels, normalised by
    255*sqrt(3) so that black-to-white is 1.
    """
    a, b = _pair(a, b)
    if not 0 <= fuzz <= 1:
        raise ValueError(f"fuzz must be in [0, 1], got {fuzz}")
    d = np.abs(a.astype(np.int16) - b.astype(np.int16))
    dist = np.sqrt((d.astype(np.float64) ** 2).sum(axis=2)) / MAX_DISTANCE
    return DiffImage(d.astype(np.uint8), dist > fuzz)


def change_proportion(a, b, fuzz: float = 0.05) -> float:
    return diff_image(a, b, fuzz).proportion


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(m: float) -> float:
    if m <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / m))


def psnr(a, b) -> float:
    return psnr_from_mse(mse(a, b))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def luma(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) @ LUMA


def _filter_valid(x, g):
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim_map(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM")
    x, y = luma(a), luma(b)
    g = gaussian_window()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2)
    return num / den


def ssim(a, b) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5) on luma."""
    return float(ssim_map(a, b).mean())


@dataclass
class MetricRow:
    label: str
    direction: str
    change_proportion: float
    mse: float
    psnr: float
    ssim: float
    n_pairs: int = 1


def batch_metrics(pairs, fuzz: float = 0.05, label: str = "", direction: str = "") -> MetricRow:
    """Average each metric over (original, translated) pairs.

    PSNR is computed per pair and then averaged, not derived from the
    averaged MSE.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs")
    cp, ms, ps, ss = [], [], [], []
    for a, b in pairs:
        cp.append(change_proportion(a, b, fuzz))
        m = mse(a, b)
        ms.append(m)
        ps.append(psnr_from_mse(m))
        ss.append(ssim(a, b))
    return MetricRow(label, direction, float(np.mean(cp)), float(np.mean(ms)), float(np.mean(ps)),
                     float(np.mean(ss)), len(pairs))


@dataclass
class ChannelStatsRow:
    label: str
    original: tuple
    translated: tuple
    difference_pct: tuple  # None marks an undefined channel (zero original mean)


def channel_stats(avg_original, avg_translated, label: str = "") -> ChannelStatsRow:
    """Channel means of two (float) average images and their percent change."""
    o = np.asarray(avg_original, dtype=np.float64)
    t = np.asarray(avg_translated, dtype=np.float64)
    if o.shape != t.shape or o.ndim != 3 or o.shape[2] != 3:
        raise ValueError(f"dimension mismatch: {o.shape} vs {t.shape}")
    om = o.mean(axis=(0, 1))
    tm = t.mean(axis=(0, 1))
    pct = tuple(None if oc == 0 else float(100.0 * (tc - oc) / oc) for oc, tc in zip(om, tm))
    return ChannelStatsRow(label, tuple(float(v) for v in om), tuple(float(v) for v in tm), pct)


def average_translation(originals, translated, label: str = ""):
    """Average both image sets and compare their channels.

    Returns (channel stats row, float average original, float average translated).
    """
    _, fo = average_image(originals)
    _, ft = average_image(translated)
    return channel_stats(fo, ft, label), fo, ft


def amplified_change_image(avg_original, avg_translated, gain: float = 4.0):
    """One grayscale plane per channel: 128 is no change, brighter an increase."""
    o = np.asarray(avg_original, dtype=np.float64)
    t = np.asarray(avg_translated, dtype=np.float64)
    if o.shape != t.shape:
        raise ValueError(f"dimension mismatch: {o.shape} vs {t.shape}")
    if gain <= 0:
        raise ValueError("gain must be positive")
    out = to_uint8(128.0 + gain * (t - o))
    return tuple(np.ascontiguousarray(out[..., c]) for c in range(3))
