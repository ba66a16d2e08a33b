"""Depth error metrics, median scaling and flip-average post-processing."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .field_core import FieldError

METRIC_COLUMNS = ("abs_rel", "sq_rel", "rmse", "log_rmse", "a1", "a2", "a3", "log10")
MIN_DEPTH = 1e-3


@dataclass(frozen=True)
class EvalConfig:
    cap: float = 80.0
    # (top, bottom, left, right) in pixels, end-exclusive
    crop: tuple[int, int, int, int] | None = None
    median_scaling: bool = False

    def __post_init__(self):
        if not self.cap > 0:
            raise FieldError("depth cap must be positive")
        if self.crop is not None:
            top, bottom, left, right = self.crop
            if not (0 <= top < bottom and 0 <= left < right):
                raise FieldError(f"invalid crop rectangle {self.crop}")


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log_rmse: float
    a1: float
    a2: float
    a3: float
    log10: float
    count: int

    def row(self) -> dict[str, float]:
        return asdict(self)


def valid_mask(gt: np.ndarray, config: EvalConfig, mask: np.ndarray | None = None) -> np.ndarray:
    valid = (gt > 0) & (gt <= config.cap)
    if config.crop is not None:
        top, bottom, left, right = config.crop
        if bottom > gt.shape[0] or right > gt.shape[1]:
            raise FieldError(f"crop {config.crop} exceeds image size {gt.shape}")
        inside = np.zeros_like(valid)
        inside[top:bottom, left:right] = True
        valid &= inside
    if mask is not None:
        valid &= np.asarray(mask) > 0
    return valid


def median_scale(pred: np.ndarray, gt: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Rescale ``pred`` so its median over ``valid`` matches that of ``gt``."""
    if not np.any(valid):
        raise FieldError("no valid pixels for median scaling")
    med_pred = np.median(pred[valid])
    if med_pred == 0:
        raise FieldError("prediction median is zero")
    return pred * (np.median(gt[valid]) / med_pred)


def evaluate(pred, gt, config: EvalConfig = EvalConfig(), mask=None) -> MetricReport:
    """Standard depth metrics over pixels with valid ground truth.

    ``mask`` optionally restricts evaluation further (nonzero = keep).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise FieldError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = valid_mask(gt, config, mask)
    if not np.any(valid):
        raise FieldError("no valid ground-truth pixels")
    if config.median_scaling:
        pred = median_scale(pred, gt, valid)
    p = np.clip(pred[valid], MIN_DEPTH, config.cap)
    g = gt[valid]

    err = p - g
    ratio = np.maximum(p / g, g / p)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(np.sqrt(np.mean(err**2))),
        log_rmse=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
        log10=float(np.sqrt(np.mean((np.log10(p) - np.log10(g)) ** 2))),
        count=int(valid.sum()),
    )


def post_process(depth: np.ndarray, depth_of_flipped: np.ndarray) -> np.ndarray:
    """Average a depth map with the re-flipped prediction for the mirrored input."""
    a = np.asarray(depth, dtype=np.float64)
    b = np.asarray(depth_of_flipped, dtype=np.float64)
    if a.shape != b.shape:
        raise FieldError(f"depth maps {a.shape} and {b.shape} differ")
    return 0.5 * (a + b[:, ::-1])
