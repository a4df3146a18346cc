"""PSNR, SSIM and PSNR-B for 8-bit grayscale images."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PEAK = 255.0
PSNR_CAP = 99.0  # reported for identical images so corpus means stay finite

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricsReport:
    psnr: float
    ssim: float
    psnr_b: float
    elapsed: float = 0.0

    def as_row(self) -> tuple[float, float, float]:
        return self.psnr, self.ssim, self.psnr_b


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ValueError(f"metrics need two 2-D images of equal size, got {x.shape} and {y.shape}")
    return x, y


def mse_to_psnr(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(PEAK * PEAK / mse))


def psnr(x, y) -> float:
    x, y = _pair(x, y)
    return mse_to_psnr(float(np.mean((x - y) ** 2)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(x, y) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 window (no border padding)."""
    x, y = _pair(x, y)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    win = gaussian_window()

    def filt(a):
        return convolve2d(a, win, mode="valid")

    c1 = (SSIM_K1 * PEAK) ** 2
    c2 = (SSIM_K2 * PEAK) ** 2
    mu_x, mu_y = filt(x), filt(y)
    sxx = filt(x * x) - mu_x * mu_x
    syy = filt(y * y) - mu_y * mu_y
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y) -> float:
    return float(np.mean(ssim_map(x, y)))


def blocking_effect_factor(y, block: int = 8) -> float:
    """BEF of a test image: weighted excess of squared steps across block boundaries."""
    y = np.asarray(y, dtype=np.float64)
    m, n = y.shape
    if min(m, n) <= block:
        raise ValueError(f"PSNR-B needs images larger than the {block}-pixel block, got {y.shape}")
    dh = (y[:, 1:] - y[:, :-1]) ** 2  # pair (j-1, j) stored at column j-1
    dv = (y[1:, :] - y[:-1, :]) ** 2
    col_b = np.zeros(n - 1, dtype=bool)
    col_b[block - 1 :: block] = True
    row_b = np.zeros(m - 1, dtype=bool)
    row_b[block - 1 :: block] = True

    sum_b = dh[:, col_b].sum() + dv[row_b, :].sum()
    cnt_b = m * col_b.sum() + n * row_b.sum()
    sum_c = dh[:, ~col_b].sum() + dv[~row_b, :].sum()
    cnt_c = m * (~col_b).sum() + n * (~row_b).sum()
    d_b = sum_b / cnt_b if cnt_b else 0.0
    d_c = sum_c / cnt_c if cnt_c else 0.0
    if d_b <= d_c:
        return 0.0
    eta = math.log2(block) / math.log2(min(m, n))
    return float(eta * (d_b - d_c))


def psnr_b(x, y, block: int = 8) -> float:
    """PSNR-B of test image ``y`` against reference ``x``; the BEF is measured on ``y`` only."""
    x, y = _pair(x, y)
    mse = float(np.mean((x - y) ** 2))
    return mse_to_psnr(mse + blocking_effect_factor(y, block))


def evaluate(x, y) -> MetricsReport:
    return MetricsReport(psnr(x, y), ssim(x, y), psnr_b(x, y))
