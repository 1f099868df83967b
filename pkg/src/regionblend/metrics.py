"""Image similarity metrics on the ``[0, 1]`` intensity scale."""
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def to_unit(image):
    """Map an image buffer from ``[-1, 1]`` to ``[0, 1]``."""
    return (np.asarray(image, dtype=np.float64) + 1.0) * 0.5


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mae(a, b):
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def ssim(a, b, data_range=1.0, window=SSIM_WINDOW):
    """Mean single-scale SSIM over every ``window x window`` uniform patch.

    Accepts ``(H, W)`` or ``(H, W, C)``; channels are scored separately and
    averaged. Patch statistics use population (1/N) moments.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError(f"images smaller than the {window}x{window} SSIM window")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    wa = sliding_window_view(a, (window, window), axis=(0, 1))
    wb = sliding_window_view(b, (window, window), axis=(0, 1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a ** 2
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b ** 2
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    mae: float
    ssim: float
    psnr: float

    def as_dict(self):
        return asdict(self)

    @classmethod
    def aggregate(cls, reports):
        reports = list(reports)
        if not reports:
            raise ValueError("no reports to aggregate")
        return cls(*(float(np.mean([getattr(r, k) for r in reports]))
                     for k in ("mae", "ssim", "psnr")))


def compare_images(a, b):
    """Score two ``[-1, 1]`` image buffers."""
    ua, ub = to_unit(a), to_unit(b)
    return MetricReport(mae(ua, ub), ssim(ua, ub), psnr(ua, ub))
