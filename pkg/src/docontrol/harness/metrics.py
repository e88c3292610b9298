"""Reconstruction metrics: MSE, PSNR, measurement residual."""
from dataclasses import asdict, dataclass

import numpy as np

from ..operators import measurement_residual, terminal_cost

PSNR_INF = float("inf")
CSV_FIELDS = ("mse", "psnr", "measurement_residual", "terminal_cost", "nfe")


@dataclass
class MetricsRecord:
    mse: float
    psnr: float
    measurement_residual: float
    terminal_cost: float
    nfe: int
    wall_seconds: float = 0.0

    def row(self):
        """CSV cells; wall time is excluded so rows are reproducible byte for byte."""
        return [_fmt(getattr(self, name)) for name in CSV_FIELDS]

    def to_dict(self):
        return asdict(self)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def psnr(mse, max_val):
    if mse == 0:
        return PSNR_INF
    if not np.isfinite(mse):
        return float("nan")
    return float(10.0 * np.log10(max_val ** 2 / mse))


def compute_metrics(x_rec, x_true, meas, nfe=0, wall_seconds=0.0, image_range=None):
    """Metrics for one reconstruction.

    For images (``image_range=(lo, hi)``) both signals are mapped linearly
    onto 0..255 before the MSE, and PSNR uses a peak of 255. Vectors use the
    raw MSE with the data range of ``x_true`` as the peak.
    """
    x_rec = np.asarray(x_rec, dtype=float)
    if x_true is None:
        mse = p = float("nan")
    else:
        x_true = np.asarray(x_true, dtype=float)
        if x_rec.shape != x_true.shape:
            raise ValueError(f"shape mismatch: {x_rec.shape} vs {x_true.shape}")
        if image_range is not None:
            lo, hi = image_range
            scale = 255.0 / (hi - lo)
            mse = float(np.mean((scale * (x_rec - x_true)) ** 2))
            p = psnr(mse, 255.0)
        else:
            mse = float(np.mean((x_rec - x_true) ** 2))
            peak = float(np.ptp(x_true)) or 1.0
            p = psnr(mse, peak)
    if meas is None:
        res = cost = float("nan")
    else:
        res = measurement_residual(meas, x_rec)
        try:
            cost = terminal_cost(meas, x_rec)
        except ValueError:
            cost = float("nan")
    return MetricsRecord(mse, p, res, cost, int(nfe), float(wall_seconds))
