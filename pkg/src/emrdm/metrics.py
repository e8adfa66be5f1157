"""Image restoration metrics: PSNR, SSIM, MAE and SAM.

Images are ``(C, H, W)`` or ``(H, W)`` arrays in ``[0, peak]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeError

PSNR_DISPLAY_CAP = 99.0


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def psnr(y, y_hat, peak: float = 1.0) -> float:
    """``20 log10(peak / RMSE)``; identical images give ``inf``."""
    if not peak > 0:
        raise DomainError("peak must be positive")
    err = rmse(y, y_hat)
    if err == 0:
        return math.inf
    return 20.0 * math.log10(peak / err)


def display_psnr(value: float) -> float:
    return min(value, PSNR_DISPLAY_CAP)


def _ssim_stats(a, b, c1, c2):
    mu_a, mu_b = a.mean(axis=-1), b.mean(axis=-1)
    var_a = ((a - mu_a[..., None]) ** 2).mean(axis=-1)
    var_b = ((b - mu_b[..., None]) ** 2).mean(axis=-1)
    cov = ((a - mu_a[..., None]) * (b - mu_b[..., None])).mean(axis=-1)
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(y, y_hat, peak: float = 1.0, window: int | None = 8, c1=None, c2=None) -> float:
    """Mean SSIM over non-overlapping ``window x window`` tiles and channels.

    ``window=None`` (or a window larger than the image) uses one global window
    per channel. Trailing rows/columns that do not fill a tile are ignored.
    """
    y, y_hat = _pair(y, y_hat)
    if y.ndim == 2:
        y, y_hat = y[None], y_hat[None]
    c1 = (0.01 * peak) ** 2 if c1 is None else c1
    c2 = (0.03 * peak) ** 2 if c2 is None else c2
    C, H, W = y.shape
    if window is None or window > H or window > W:
        return float(np.mean(_ssim_stats(y.reshape(C, -1), y_hat.reshape(C, -1), c1, c2)))
    nh, nw = H // window, W // window

    def tiles(x):
        x = x[:, : nh * window, : nw * window].reshape(C, nh, window, nw, window)
        return x.transpose(0, 1, 3, 2, 4).reshape(C, nh * nw, window * window)

    return float(np.mean(_ssim_stats(tiles(y), tiles(y_hat), c1, c2)))


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def sam(y, y_hat) -> float:
    """Angle between the flattened images, in radians."""
    y, y_hat = _pair(y, y_hat)
    ny, nh = np.sqrt(np.sum(y**2)), np.sqrt(np.sum(y_hat**2))
    if ny == 0 or nh == 0:
        raise DomainError("SAM is undefined for an all-zero image")
    # 2 atan2(|u - v|, |u + v|) stays accurate near 0 where arccos(cos) loses ~1e-8
    u, v = y / ny, y_hat / nh
    return float(2.0 * np.arctan2(np.linalg.norm(u - v), np.linalg.norm(u + v)))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mae: float
    sam: float
    count: int
    per_image: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "psnr": display_psnr(self.psnr),
            "ssim": self.ssim,
            "mae": self.mae,
            "sam": self.sam,
            "count": self.count,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["index", "psnr", "ssim", "mae", "sam"])
            writer.writeheader()
            for row in self.per_image:
                writer.writerow(dict(row, psnr=display_psnr(row["psnr"])))


def evaluate(targets, preds, peak: float = 1.0, window: int | None = 8) -> MetricReport:
    """Per-image metrics for stacks ``(N, C, H, W)`` and their means.

    The mean PSNR is ``inf`` if any image is reproduced exactly; CSV output
    caps the value at 99 dB.
    """
    targets = np.asarray(targets, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if targets.shape != preds.shape:
        raise ShapeError(f"shape mismatch {targets.shape} vs {preds.shape}")
    rows = []
    for i, (y, y_hat) in enumerate(zip(targets, preds)):
        rows.append(
            {
                "index": i,
                "psnr": psnr(y, y_hat, peak),
                "ssim": ssim(y, y_hat, peak, window),
                "mae": mae(y, y_hat),
                "sam": sam(y, y_hat),
            }
        )
    agg = {k: float(np.mean([r[k] for r in rows])) for k in ("psnr", "ssim", "mae", "sam")}
    return MetricReport(count=len(rows), per_image=rows, **agg)
