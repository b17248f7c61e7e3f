import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

K1, K2 = 0.01, 0.03
DATA_RANGE = 1.0


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    psnr_db: float
    mae: float
    reduced_window: bool = False


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def window_for(shape) -> tuple[int, float, bool]:
    """(size, sigma, reduced) for an image of ``shape``."""
    side = min(shape)
    if side >= 11:
        return 11, 1.5, False
    if side >= 7:
        return 7, 1.0, True
    raise ValueError(f"image {shape} is smaller than the 7x7 SSIM window")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def ssim(a, b) -> float:
    """Mean SSIM over all Gaussian windows lying fully inside the image.

    Uses an 11x11 window with sigma 1.5, or 7x7 with sigma 1.0 for images
    with a side shorter than 11.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("ssim expects 2-D images")
    size, sigma, _ = window_for(a.shape)
    w = gaussian_window(size, sigma)

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    c1 = (K1 * DATA_RANGE) ** 2
    c2 = (K2 * DATA_RANGE) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit data range; ``inf`` if equal."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE ** 2 / mse)


def mae(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def evaluate(y, x, shape=None) -> MetricReport:
    """All three metrics for percept ``y`` against target ``x``."""
    y, x = _pair(y, x)
    if shape is not None:
        y, x = y.reshape(shape), x.reshape(shape)
    return MetricReport(ssim(y, x), psnr(y, x), mae(y, x), window_for(y.shape)[2])
