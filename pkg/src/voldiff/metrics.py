"""Masked volumetric quality metrics: 3D SSIM, PSNR, MSE, and lesion CNR."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimMismatch, EmptyMask, NoValidLesions
from .volume import Mask, Volume, crop, crop_mask, roi_from_mask

_SSIM_SIGMA = 1.5
_SSIM_RADIUS = 5  # 11^3 Gaussian window
_K1, _K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    """One evaluation row; ``psnr_db`` is ``inf`` when the masked MSE vanishes."""

    ssim: float
    psnr_db: float
    mse: float
    voxel_count: int
    cnr: float | None = None

    def to_json_dict(self) -> dict:
        psnr_infinite = math.isinf(self.psnr_db)
        return {
            "ssim": self.ssim,
            "psnr_db": None if psnr_infinite else self.psnr_db,
            "psnr_infinite": psnr_infinite,
            "mse": self.mse,
            "cnr": self.cnr,
            "voxel_count": self.voxel_count,
        }


def _checked(x_hat: Volume, x_ref: Volume, mask: Mask | None) -> Mask:
    if x_hat.dims != x_ref.dims:
        raise DimMismatch(f"volume dims differ: {x_hat.dims} vs {x_ref.dims}")
    if mask is None:
        return Mask(np.ones(x_ref.dims, dtype=bool))
    if mask.dims != x_ref.dims:
        raise DimMismatch(f"mask dims {mask.dims} != volume dims {x_ref.dims}")
    if not mask.data.any():
        raise EmptyMask("evaluation mask selects no voxels")
    return mask


def mse(x_hat: Volume, x_ref: Volume, mask: Mask | None = None) -> float:
    """Masked mean squared difference."""
    mask = _checked(x_hat, x_ref, mask)
    d = x_hat.data.astype(np.float64) - x_ref.data.astype(np.float64)
    return float(np.mean(np.square(d[mask.data])))


def psnr(x_hat: Volume, x_ref: Volume, mask: Mask | None = None, data_range: float | None = None) -> float:
    """``10 log10(range^2 / MSE)`` in dB; ``inf`` for identical masked regions.

    The range defaults to max - min of the masked reference.
    """
    mask = _checked(x_hat, x_ref, mask)
    err = mse(x_hat, x_ref, mask)
    if err == 0.0:
        return math.inf
    if data_range is None:
        ref = x_ref.data[mask.data]
        data_range = float(ref.max() - ref.min())
    return 10.0 * math.log10(data_range * data_range / err)


def ssim3d(x_hat: Volume, x_ref: Volume, mask: Mask | None = None, data_range: float | None = None) -> float:
    """Mean local SSIM over the mask after cropping to its bounding box.

    Local statistics use a 3D Gaussian window (size 11^3, sigma 1.5) with the
    standard stability constants K1 = 0.01 and K2 = 0.03. Windows centered on
    mask voxels may straddle the mask edge; that bias is accepted in exchange
    for plain (unmasked) convolutions. Pass ``data_range`` explicitly to make
    the score symmetric in its arguments.
    """
    mask = _checked(x_hat, x_ref, mask)
    box = roi_from_mask(mask, (0, 0, 0))
    a = crop(x_hat, box).data.astype(np.float64)
    b = crop(x_ref, box).data.astype(np.float64)
    m = crop_mask(mask, box).data
    if data_range is None:
        ref = b[m]
        data_range = float(ref.max() - ref.min())
    L = max(data_range, 1e-12)
    c1, c2 = (_K1 * L) ** 2, (_K2 * L) ** 2

    def blur(arr):
        return ndimage.gaussian_filter(arr, sigma=_SSIM_SIGMA, radius=_SSIM_RADIUS)

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean((num / den)[m]))


def cnr(
    x: Volume,
    lesion_mask: Mask,
    wm_mask: Mask,
    spacing_mm: tuple[float, float, float] | None = None,
    shell_mm: float = 3.0,
    aggregate: str = "volume_weighted",
) -> float:
    """Lesion contrast-to-noise ratio against the surrounding white matter.

    Per 26-connected lesion component: (mean lesion intensity - mean WM
    intensity within ``shell_mm``) / std of those WM voxels, with Euclidean
    distances honoring the voxel spacing. Components whose shell holds no
    usable WM voxel are skipped with a warning. Components are aggregated by
    lesion-volume weighting by default (``aggregate="per_lesion"`` for the
    unweighted mean).
    """
    if lesion_mask.dims != x.dims or wm_mask.dims != x.dims:
        raise DimMismatch("lesion and WM masks must match the volume dims")
    if not lesion_mask.data.any():
        raise EmptyMask("lesion mask selects no voxels")
    if aggregate not in ("volume_weighted", "per_lesion"):
        raise ValueError(f"unknown aggregation {aggregate!r}")
    spacing = spacing_mm if spacing_mm is not None else x.spacing_mm
    labels, n_components = ndimage.label(lesion_mask.data, structure=np.ones((3, 3, 3)))
    data = x.data.astype(np.float64)
    wm_eligible = wm_mask.data & ~lesion_mask.data

    values, weights = [], []
    for comp in range(1, n_components + 1):
        comp_mask = labels == comp
        dist = ndimage.distance_transform_edt(~comp_mask, sampling=spacing)
        shell = wm_eligible & (dist <= shell_mm)
        if not shell.any():
            warnings.warn(f"lesion component {comp}: no WM voxels within {shell_mm} mm, skipped")
            continue
        sigma_wm = float(np.std(data[shell]))
        if sigma_wm == 0.0:
            warnings.warn(f"lesion component {comp}: constant WM shell, skipped")
            continue
        values.append((float(np.mean(data[comp_mask])) - float(np.mean(data[shell]))) / sigma_wm)
        weights.append(float(comp_mask.sum()))
    if not values:
        raise NoValidLesions("every lesion component was skipped")
    if aggregate == "per_lesion":
        return float(np.mean(values))
    return float(np.average(values, weights=weights))


def evaluate(
    x_hat: Volume,
    x_ref: Volume,
    mask: Mask | None = None,
    lesion_mask: Mask | None = None,
    wm_mask: Mask | None = None,
) -> MetricReport:
    """Bundle SSIM/PSNR/MSE (and CNR when lesion + WM masks are given)."""
    m = _checked(x_hat, x_ref, mask)
    cnr_value = None
    if lesion_mask is not None and wm_mask is not None and lesion_mask.data.any():
        cnr_value = cnr(x_hat, lesion_mask, wm_mask)
    return MetricReport(
        ssim=ssim3d(x_hat, x_ref, m),
        psnr_db=psnr(x_hat, x_ref, m),
        mse=mse(x_hat, x_ref, m),
        voxel_count=m.count(),
        cnr=cnr_value,
    )
