"""Full-reference image quality metrics on 8-bit luma planes."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP_DB = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
VIF_SIGMA_NSQ = 2.0
VIF_SCALES = 4
_EPS = 1e-10


def _pair(ref, deg) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=np.float64)
    deg = np.asarray(deg, dtype=np.float64)
    if ref.shape != deg.shape:
        raise ValueError(f"dims mismatch: reference {ref.shape} vs degraded {deg.shape}")
    if ref.ndim != 2:
        raise ValueError(f"expected 2-D luma planes, got shape {ref.shape}")
    return ref, deg


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def psnr(ref, deg) -> float:
    ref, deg = _pair(ref, deg)
    mse = np.mean((ref - deg) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(255.0**2 / mse)))


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = len(win)
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    lo, hi = k // 2, k - 1 - k // 2
    return out[lo : out.shape[0] - hi, lo : out.shape[1] - hi]


def _ssim_terms(ref, deg, win, data_range=255.0, k1=0.01, k2=0.03):
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu1 = _filter_valid(ref, win)
    mu2 = _filter_valid(deg, win)
    s11 = _filter_valid(ref * ref, win) - mu1 * mu1
    s22 = _filter_valid(deg * deg, win) - mu2 * mu2
    s12 = _filter_valid(ref * deg, win) - mu1 * mu2
    luminance = (2 * mu1 * mu2 + c1) / (mu1 * mu1 + mu2 * mu2 + c1)
    contrast_structure = (2 * s12 + c2) / (s11 + s22 + c2)
    return luminance, contrast_structure


def ssim(ref, deg, window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM over the valid region of an 11x11 Gaussian window."""
    ref, deg = _pair(ref, deg)
    if min(ref.shape) < window_size:
        raise ValueError(f"image {ref.shape} smaller than the {window_size}px SSIM window")
    lum, cs = _ssim_terms(ref, deg, gaussian_window(window_size, sigma))
    return float(np.mean(lum * cs))


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim(ref, deg, weights=MS_SSIM_WEIGHTS, window_size: int = 11, sigma: float = 1.5) -> float:
    """Five-scale MS-SSIM with 2x2 average-pool downsampling between scales.

    The window shrinks to the largest odd size that fits at coarse scales, so
    any side of at least 161 px is accepted.
    """
    ref, deg = _pair(ref, deg)
    n = len(weights)
    min_side = (window_size - 1) * 2 ** (n - 1) + 1
    if min(ref.shape) < min_side:
        raise ValueError(f"MS-SSIM with {n} scales needs sides >= {min_side}px, got {ref.shape}")
    result = 1.0
    for scale, weight in enumerate(weights):
        size = min(window_size, min(ref.shape))
        if size % 2 == 0:
            size -= 1
        lum, cs = _ssim_terms(ref, deg, gaussian_window(size, sigma))
        cs_mean = max(float(np.mean(cs)), 0.0)
        if scale == n - 1:
            result *= max(float(np.mean(lum * cs)), 0.0) ** weight
        else:
            result *= cs_mean**weight
            ref, deg = _downsample2(ref), _downsample2(deg)
    return float(result)


def _vif_window(scale: int) -> np.ndarray:
    n = 2 ** (4 - scale) + 1
    return gaussian_window(n, n / 5.0)


def _blur(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    out = correlate1d(img, win, axis=0, mode="mirror")
    return correlate1d(out, win, axis=1, mode="mirror")


def vif_scales(ref, deg, sigma_nsq: float = VIF_SIGMA_NSQ) -> np.ndarray:
    """Pixel-domain VIF at four dyadic scales (vif_scale0..3).

    Each scale is the ratio of summed information terms; a reference without
    any local variance at a scale scores 1.0 there.
    """
    ref, deg = _pair(ref, deg)
    if min(ref.shape) < 64:
        raise ValueError(f"VIF needs both sides >= 64px, got {ref.shape}")
    scores = np.empty(VIF_SCALES)
    for scale in range(VIF_SCALES):
        win = _vif_window(scale)
        if scale > 0:
            ref = _blur(ref, win)[::2, ::2]
            deg = _blur(deg, win)[::2, ::2]
        mu1 = _blur(ref, win)
        mu2 = _blur(deg, win)
        s11 = _blur(ref * ref, win) - mu1 * mu1
        s22 = _blur(deg * deg, win) - mu2 * mu2
        s12 = _blur(ref * deg, win) - mu1 * mu2
        s11[s11 < _EPS] = 0.0
        s22[s22 < _EPS] = 0.0

        flat_ref = s11 == 0.0
        g = np.where(flat_ref, 0.0, s12 / np.where(flat_ref, 1.0, s11))
        sv = np.where(flat_ref, s22, s22 - g * s12)
        flat_deg = s22 == 0.0
        g[flat_deg] = 0.0
        sv[flat_deg] = 0.0
        negative = g < 0
        sv[negative] = s22[negative]
        g[negative] = 0.0
        sv = np.maximum(sv, _EPS)

        num = np.log2(1.0 + g * g * s11 / (sv + sigma_nsq)).sum()
        den = np.log2(1.0 + s11 / sigma_nsq).sum()
        scores[scale] = 1.0 if den <= 0.0 else max(num / den, 0.0)
    return scores
