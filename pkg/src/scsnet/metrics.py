"""Pixel-level and colorfulness evaluation of generated images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError
from .imaging import RgbImage

# Rec. 601 luminance weights
_LUMA = np.array([0.299, 0.587, 0.114])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr: float  # dB; +inf sentinel when images match exactly
    ssim: float
    cn: float


def _image_data(img):
    return img.data if isinstance(img, RgbImage) else np.asarray(img)


def psnr(a, b) -> float:
    """10 log10(1 / MSE) on the [0,1] scale; +inf when MSE is zero."""
    av, bv = _image_data(a).astype(np.float64), _image_data(b).astype(np.float64)
    if av.shape != bv.shape:
        raise DataError(f"psnr shape mismatch: {av.shape} vs {bv.shape}")
    mse = np.mean((av - bv) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def luminance(img) -> np.ndarray:
    data = _image_data(img).astype(np.float64)
    return np.einsum("c,chw->hw", _LUMA, data)


def ssim(a, b) -> float:
    """Single-scale SSIM on luminance, 11x11 Gaussian window, sigma 1.5.

    Valid windows only (no padding); dynamic range 1.0. Identical images
    score exactly 1.
    """
    ya, yb = luminance(a), luminance(b)
    if ya.shape != yb.shape:
        raise DataError(f"ssim shape mismatch: {ya.shape} vs {yb.shape}")
    h, w = ya.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise DataError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window")
    kernel = _gaussian_window()
    wa = sliding_window_view(ya, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(yb, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = np.einsum("hwij,ij->hw", wa, kernel)
    mu_b = np.einsum("hwij,ij->hw", wb, kernel)
    sig_aa = np.einsum("hwij,ij->hw", wa * wa, kernel) - mu_a * mu_a
    sig_bb = np.einsum("hwij,ij->hw", wb * wb, kernel) - mu_b * mu_b
    sig_ab = np.einsum("hwij,ij->hw", wa * wb, kernel) - mu_a * mu_b
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2 * mu_a * mu_b + c1) * (2 * sig_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (sig_aa + sig_bb + c2)
    return float(np.mean(num / den))


def colorfulness(img) -> float:
    """Opponent-channel colorfulness on the [0,1] scale.

    rg = R - G, yb = (R + G)/2 - B;
    CN = sqrt(std_rg^2 + std_yb^2) + 0.3 sqrt(mean_rg^2 + mean_yb^2).
    """
    data = _image_data(img).astype(np.float64)
    rg = data[0] - data[1]
    yb = 0.5 * (data[0] + data[1]) - data[2]
    sigma = math.sqrt(rg.var() + yb.var())
    mu = math.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
    return sigma + 0.3 * mu


def evaluate_pair(pred, target) -> MetricReport:
    return MetricReport(psnr=psnr(pred, target), ssim=ssim(pred, target), cn=colorfulness(pred))
