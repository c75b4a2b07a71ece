"""Desk-scale laboratory for conditional diffusion-based volumetric image translation.

The package builds synthetic paired multi-contrast phantoms, trains or
constructs slab-to-slice denoisers, runs diffusion / replicate-averaged /
single-step regression sampling, and evaluates outputs with masked
volumetric metrics. See README.md for a tour and demos/ for narrative
scripts exercising each capability.
"""

from . import denoiser, harmonize, metrics, noise, phantom, sampler, schedule, volume
from .denoiser import (
    DenoiserInput,
    NetConfig,
    NeuralDenoiser,
    OracleGaussianDenoiser,
    TrainConfig,
    train,
)
from .errors import VoldiffError
from .harmonize import GammaParams, HarmonizeConfig, harmonize_slices, harmonize_variant
from .metrics import MetricReport, cnr, evaluate, mse, psnr, ssim3d
from .noise import NoiseParams, add_gaussian, add_rician, estimate_wm_noise, expected_mse, mean_average, rms_average
from .phantom import PhantomCase, PhantomSpec, generate, inject_slice_gamma
from .sampler import SampleResult, SamplerConfig, nfe_count, plan_views, sample, sample_diffusion, sample_expa, sample_regression
from .schedule import NoiseSchedule, Prediction, cosine_schedule, forward_diffuse, linear_schedule, renoise, to_x0, v_target
from .volume import Mask, RoiBox, Slab, Volume, apply_mask, crop, extract_slab, load, reorient, reorient_inverse, roi_from_mask, save

__version__ = "0.1.0"
