"""Photometric, perceptual and edge-aware smoothness losses and their total."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import field_core as fc
from .field_core import FieldError, Var

MODES = ("coarse-to-fine", "ddc-only", "cdc-only")

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2

_LUMA = np.array([0.299, 0.587, 0.114])
_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

FeatureExtractor = Callable[[Var], Sequence[Var]]


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 0.0008
    lambda3: float = 0.001
    alpha1: float = 0.1
    alpha2: float = 0.15
    beta_c: float = 2.0
    beta_f: float = 1.0

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise FieldError(f"loss weight {name} must be nonnegative")
        if self.alpha2 > 1:
            raise FieldError("alpha2 must lie in [0, 1]")


def _same_shape(a: Var, b: Var) -> None:
    if a.shape != b.shape:
        raise FieldError(f"shape mismatch: {a.shape} vs {b.shape}")


def _separable(x: Var, taps: np.ndarray) -> Var:
    """Correlate the two spatial axes with ``taps`` (odd length, mirror padding)."""
    r = len(taps) // 2
    h, w = x.shape[:2]
    p = fc.pad_reflect(x, r)
    rows = None
    for j, t in enumerate(taps):
        term = p[:, j : j + w] * t
        rows = term if rows is None else rows + term
    out = None
    for i, t in enumerate(taps):
        term = rows[i : i + h] * t
        out = term if out is None else out + term
    return out


def box3(x) -> Var:
    return _separable(fc.as_var(x), np.full(3, 1.0 / 3.0))


def grayscale(image) -> Var:
    return fc.sum_(fc.as_var(image) * _LUMA, axis=-1)


@dataclass
class GaussianPyramidFeatures:
    """Fixed, weight-free stand-in for a pretrained perceptual network.

    Each level holds grayscale intensity and its x/y forward differences,
    blurred with a 5-tap binomial kernel and decimated by two between levels.
    """

    levels: int = 3

    def __call__(self, image) -> list[Var]:
        g = grayscale(image)
        feats = []
        for lvl in range(self.levels):
            if lvl:
                if min(g.shape) < 2:
                    break
                g = _separable(g, _BINOMIAL5)[::2, ::2]
            parts = [g]
            parts.append(fc.diff_x(g) if g.shape[1] >= 2 else g * 0.0)
            parts.append(fc.diff_y(g) if g.shape[0] >= 2 else g * 0.0)
            feats.append(fc.stack(parts, axis=-1))
        return feats


def loss_coarse_reconstruction(
    right_estimate, right_image, extractor: FeatureExtractor | None = None, alpha1: float = 0.1
) -> Var:
    """Mean L1 error plus ``alpha1`` times the mean per-pixel feature distance per level."""
    est, ref = fc.as_var(right_estimate), fc.as_var(right_image)
    _same_shape(est, ref)
    loss = fc.mean(fc.absolute(est - ref))
    if alpha1 > 0:
        extractor = extractor or GaussianPyramidFeatures()
        for fa, fb in zip(extractor(est), extractor(ref)):
            loss = loss + alpha1 * fc.mean(fc.norm(fa - fb, axis=-1))
    return loss


def ssim(a, b, mask=None) -> Var:
    """Per-pixel SSIM over 3x3 windows, averaged over colour channels.

    With ``mask``, window statistics use only pixels where ``mask > 0``, so
    values at masked-out pixels never reach the result.
    """
    x, y = fc.as_var(a), fc.as_var(b)
    _same_shape(x, y)
    if mask is None:
        mu_x, mu_y = box3(x), box3(y)
        mxx, myy, mxy = box3(x * x), box3(y * y), box3(x * y)
    else:
        keep = np.asarray(fc.value_of(mask)) > 0
        if keep.shape != x.shape[:2]:
            raise FieldError(f"mask {keep.shape} and image {x.shape} sizes differ")
        if x.ndim == 3:
            keep = np.repeat(keep[..., None], x.shape[2], axis=-1)
        x, y = fc.where(keep, x), fc.where(keep, y)
        count = box3(keep.astype(np.float64)).value
        inv = np.where(count > 0, 1.0 / np.where(count > 0, count, 1.0), 0.0)
        mu_x, mu_y = box3(x) * inv, box3(y) * inv
        mxx, myy, mxy = box3(x * x) * inv, box3(y * y) * inv, box3(x * y) * inv
    var_x = mxx - mu_x * mu_x
    var_y = myy - mu_y * mu_y
    cov = mxy - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    s = num / den
    return fc.mean(s, axis=-1) if s.ndim == 3 else s


def fine_reconstruction_map(left_estimate, left_image, alpha2: float = 0.15, mask=None) -> Var:
    """Per-pixel photometric error: L1 blended with DSSIM = (1 - SSIM) / 2."""
    est, ref = fc.as_var(left_estimate), fc.as_var(left_image)
    _same_shape(est, ref)
    l1 = fc.mean(fc.absolute(est - ref), axis=-1)
    dssim = (1.0 - ssim(est, ref, mask)) * 0.5
    return alpha2 * l1 + (1.0 - alpha2) * dssim


def loss_fine_reconstruction(
    left_estimate, left_image, occlusion_mask, edge_mask, alpha2: float = 0.15
) -> Var:
    """Masked photometric error averaged over pixels where the combined mask is nonzero."""
    mask = np.asarray(fc.value_of(occlusion_mask) * fc.value_of(edge_mask))
    if mask.shape != fc.value_of(left_estimate).shape[:2]:
        raise FieldError(f"mask {mask.shape} and image sizes differ")
    count = int(np.count_nonzero(mask > 0))
    if count == 0:
        raise FieldError("every pixel is masked out")
    per_pixel = fine_reconstruction_map(left_estimate, left_image, alpha2, mask)
    return fc.sum_(fc.where(mask > 0, per_pixel) * mask) * (1.0 / count)


def _edge_weights(image, beta: float) -> tuple[np.ndarray, np.ndarray]:
    img = fc.value_of(image)
    gx = fc.diff_x(img).value
    gy = fc.diff_y(img).value
    if img.ndim == 3:
        gx, gy = np.abs(gx).mean(axis=-1), np.abs(gy).mean(axis=-1)
    else:
        gx, gy = np.abs(gx), np.abs(gy)
    return np.exp(-beta * gx), np.exp(-beta * gy)


def smoothness_map(disparity, image, beta: float) -> Var:
    d = fc.as_var(disparity)
    if fc.value_of(image).shape[:2] != d.shape:
        raise FieldError("disparity and image sizes differ")
    wx, wy = _edge_weights(image, beta)
    return fc.absolute(fc.diff_x(d)) * wx + fc.absolute(fc.diff_y(d)) * wy


def loss_coarse_smooth(disparity, image, beta_c: float = 2.0) -> Var:
    return fc.mean(smoothness_map(disparity, image, beta_c))


def loss_fine_smooth(disparity, image, occlusion_mask, edge_mask, beta_f: float = 1.0) -> Var:
    """Edge-aware smoothness doubled where the combined mask is off."""
    weight = 1.0 + (1.0 - fc.value_of(occlusion_mask) * fc.value_of(edge_mask))
    term = smoothness_map(disparity, image, beta_f)
    if weight.shape != term.shape:
        raise FieldError("mask and disparity sizes differ")
    return fc.mean(term * weight)


@dataclass
class LossTerms:
    coarse_reconstruction: Var | float = 0.0
    fine_reconstruction: Var | float = 0.0
    coarse_smooth: Var | float = 0.0
    fine_smooth: Var | float = 0.0

    def values(self) -> dict[str, float]:
        return {
            "L_CR": float(fc.value_of(self.coarse_reconstruction)),
            "L_FR": float(fc.value_of(self.fine_reconstruction)),
            "L_CS": float(fc.value_of(self.coarse_smooth)),
            "L_FS": float(fc.value_of(self.fine_smooth)),
        }


class NonFiniteLossError(FloatingPointError):
    def __init__(self, terms: dict[str, float]):
        self.terms = terms
        bad = ", ".join(k for k, v in terms.items() if not math.isfinite(v))
        super().__init__(f"non-finite loss term(s): {bad}; values: {terms}")


def total_loss(terms: LossTerms, weights: LossWeights = LossWeights(), mode: str = "coarse-to-fine") -> Var:
    """Weighted sum of the four terms; the single-constraint modes drop a branch."""
    if mode not in MODES:
        raise FieldError(f"unknown mode {mode!r}")
    vals = terms.values()
    use_ddc = mode != "cdc-only"
    use_cdc = mode != "ddc-only"
    used = {
        "L_CR": use_ddc,
        "L_CS": use_ddc,
        "L_FR": use_cdc,
        "L_FS": use_cdc,
    }
    if not all(math.isfinite(vals[k]) for k, on in used.items() if on):
        raise NonFiniteLossError(vals)
    parts = []
    if use_ddc:
        parts += [fc.as_var(terms.coarse_reconstruction), weights.lambda2 * fc.as_var(terms.coarse_smooth)]
    if use_cdc:
        parts += [weights.lambda1 * fc.as_var(terms.fine_reconstruction), weights.lambda3 * fc.as_var(terms.fine_smooth)]
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total
