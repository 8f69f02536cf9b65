"""Image-quality and reconstruction-error metrics over whole volumes."""
from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

MAPE_FLOOR = 1e-6


def _pair(t, p):
    t = np.asarray(t, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"shape mismatch: truth {t.shape} vs prediction {p.shape}")
    if t.size == 0:
        raise ShapeError("empty volumes")
    return t, p


def ssim_constants(dynamic_range):
    if not dynamic_range > 0:
        raise ValueError("dynamic range must be positive")
    return (0.01 * dynamic_range) ** 2, (0.03 * dynamic_range) ** 2


def compute_ssim(t, p, dynamic_range=1.0):
    """SSIM from global means, variances and covariance of the two volumes
    (one window covering everything)."""
    t, p = _pair(t, p)
    c1, c2 = ssim_constants(dynamic_range)
    mt, mp = t.mean(), p.mean()
    dt, dp = t - mt, p - mp
    vt, vp = np.mean(dt * dt), np.mean(dp * dp)
    cov = np.mean(dt * dp)
    return float(((2 * mp * mt + c1) * (2 * cov + c2)) / ((mp ** 2 + mt ** 2 + c1) * (vp + vt + c2)))


def compute_mse(t, p):
    t, p = _pair(t, p)
    d = p - t
    return float(np.mean(d * d))


def compute_psnr(t, p):
    """10 log10(1 / MSE) for unit-peak data; +inf when the volumes agree."""
    mse = compute_mse(t, p)
    return math.inf if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def compute_mae(t, p):
    t, p = _pair(t, p)
    return float(np.mean(np.abs(p - t)))


def compute_mre(t, p):
    """||P - T||_2 / ||T||_2 in percent."""
    t, p = _pair(t, p)
    denom = float(np.sqrt(np.sum(t * t)))
    if denom == 0:
        raise ValueError("relative error undefined for an all-zero reference")
    return float(np.sqrt(np.sum((p - t) ** 2)) / denom * 100.0)


def compute_mape(t, p, floor=MAPE_FLOOR):
    """Mean of |P - T| / max(|T|, floor), in percent."""
    t, p = _pair(t, p)
    return float(np.mean(np.abs(p - t) / np.maximum(np.abs(t), floor)) * 100.0)


def dynamic_range(t):
    t = np.asarray(t, dtype=np.float64)
    r = float(t.max() - t.min())
    return r if r > 0 else 1.0


def denoise_metrics(clean, denoised):
    """SSIM, PSNR, MAE, MRE for [0, 1]-normalised C-scans."""
    return {
        "SSIM": compute_ssim(clean, denoised, 1.0),
        "PSNR": compute_psnr(clean, denoised),
        "MAE": compute_mae(clean, denoised),
        "MRE": compute_mre(clean, denoised),
    }


def inversion_metrics(truth, pred, mape_floor=MAPE_FLOOR):
    """SSIM (range of the truth map), MSE, MAE, MAPE for permittivity maps."""
    return {
        "SSIM": compute_ssim(truth, pred, dynamic_range(truth)),
        "MSE": compute_mse(truth, pred),
        "MAE": compute_mae(truth, pred),
        "MAPE": compute_mape(truth, pred, mape_floor),
    }


def localization_iou(truth, pred, threshold):
    """Intersection over union of the masks ``truth > threshold`` and
    ``pred > threshold``; 1.0 when both masks are empty."""
    t, p = _pair(truth, pred)
    mt, mp = t > threshold, p > threshold
    union = np.count_nonzero(mt | mp)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(mt & mp) / union)
