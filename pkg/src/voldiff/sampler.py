"""Sampling regimes: truncated/native diffusion, replicate averaging, regression.

A trajectory evaluates the denoiser once at the terminal step, re-noises the
clean estimate directly to the truncation level (re-using the initial
solution as the prior), then walks unit steps back to zero. Within a step the
whole volume is denoised slab-wise along one axis, every slab reading the
same pre-step latent. Replicates draw their noise from per-replicate streams
keyed by replicate index, so results do not depend on scheduling.

Function evaluations (NFE) are counted per full-volume denoiser pass: one per
time step and view, regardless of slab count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .denoiser.base import Denoiser
from .errors import DimMismatch, InvalidParam
from .noise import mean_average, rms_average
from .rng import derive_rng
from .schedule import NoiseSchedule, renoise, to_x0
from .volume import AXES, Volume

MODES = ("diffusion", "regression", "expa")
VIEW_POLICIES = ("axial_only", "orthogonal_cycle", "regression_three_view")
COMBINERS = ("rms", "mean")


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling mode, truncation point, replicate count, view policy, and seeds.

    ``t_trunc`` is the start of the dense backward phase; ``None`` resolves to
    ``T // 4`` for diffusion/expa (the truncated default) and 0 for
    regression. ``combiner`` merges replicates in expa mode; ``view_combiner``
    merges the per-view regression predictions.
    """

    mode: str = "diffusion"
    t_trunc: int | None = None
    n_ex: int = 1
    view_policy: str = "orthogonal_cycle"
    n_slices: int = 5
    combiner: str = "rms"
    seed: int = 0
    view_combiner: str = "mean"
    regression_latent: str = "noise"
    randomized_views: bool = False
    keep_replicates: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParam(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.view_policy not in VIEW_POLICIES:
            raise InvalidParam(f"view_policy must be one of {VIEW_POLICIES}")
        if self.combiner not in COMBINERS or self.view_combiner not in COMBINERS:
            raise InvalidParam(f"combiners must be one of {COMBINERS}")
        if self.n_ex < 1:
            raise InvalidParam(f"n_ex must be >= 1, got {self.n_ex}")
        if self.mode == "expa" and self.n_ex < 2:
            raise InvalidParam("expa mode requires n_ex > 1")
        if self.mode != "regression" and self.view_policy == "regression_three_view":
            raise InvalidParam("regression_three_view applies to regression mode only")
        if self.regression_latent not in ("noise", "zeros"):
            raise InvalidParam("regression_latent must be 'noise' or 'zeros'")
        if self.n_slices < 1 or self.n_slices % 2 == 0:
            raise InvalidParam(f"n_slices must be odd, got {self.n_slices}")


@dataclass(frozen=True)
class SampleResult:
    output: Volume
    nfe: int
    wallclock: float
    per_replicate: list[Volume] | None = None


def resolve_t_trunc(cfg: SamplerConfig, T: int) -> int:
    if cfg.mode == "regression":
        return 0
    t_trunc = T // 4 if cfg.t_trunc is None else int(cfg.t_trunc)
    if not 0 <= t_trunc < T:
        raise InvalidParam(f"t_trunc must lie in [0, {T}), got {t_trunc}")
    return t_trunc


def regression_views(cfg: SamplerConfig) -> int:
    return 3 if cfg.view_policy == "regression_three_view" else 1


def nfe_count(cfg: SamplerConfig, T: int, n_views_regression: int) -> int:
    """Denoiser evaluations a configuration costs, counted per full-volume pass."""
    if cfg.mode == "regression":
        return int(n_views_regression)
    return cfg.n_ex * (resolve_t_trunc(cfg, T) + 1)


def plan_views(policy: str, t_sequence: list[int], rng: np.random.Generator | None = None) -> list[list[str]]:
    """Axes evaluated at each step of the sequence.

    The orthogonal cycle is keyed to the position within the given sequence,
    so a truncated sequence starts the cycle at the same phase as a full one.
    Passing a generator randomizes the per-step axis instead.
    """
    if policy not in VIEW_POLICIES:
        raise InvalidParam(f"unknown view policy {policy!r}")
    n = len(t_sequence)
    if policy == "axial_only":
        return [["axial"]] * n
    if policy == "orthogonal_cycle":
        if rng is not None:
            return [[AXES[int(rng.integers(3))]] for _ in range(n)]
        return [[AXES[i % 3]] for i in range(n)]
    return [list(AXES)] * n


def _check_conditions(conditions: list[Volume], denoiser: Denoiser, cfg: SamplerConfig) -> Volume:
    if not conditions:
        raise InvalidParam("need at least one conditioning volume")
    dims = conditions[0].dims
    for c in conditions[1:]:
        if c.dims != dims:
            raise DimMismatch(f"conditioning volumes disagree on dims: {c.dims} vs {dims}")
    if denoiser.n_slices != cfg.n_slices:
        raise InvalidParam(
            f"config n_slices={cfg.n_slices} does not match denoiser slab width {denoiser.n_slices}"
        )
    return conditions[0]


def _combine(volumes: list[Volume], combiner: str) -> Volume:
    if len(volumes) == 1:
        return volumes[0]
    return rms_average(volumes) if combiner == "rms" else mean_average(volumes)


def _step_x0(
    denoiser: Denoiser,
    latent: Volume,
    conditions: list[Volume],
    t: int,
    axes: list[str],
    sch: NoiseSchedule,
    view_combiner: str,
) -> tuple[Volume, int]:
    x0_hats = [
        to_x0(latent, denoiser.predict_volume(latent, conditions, t, ax, sch), t, sch)
        for ax in axes
    ]
    return _combine(x0_hats, view_combiner), len(axes)


def _noise_at(cfg: SamplerConfig, replicate: int, key: int, dims) -> np.ndarray:
    # noise draws are keyed by (replicate, latent level), not by draw order:
    # full and truncated trajectories at matched seeds share every dense-phase
    # draw, and replicates are scheduling-independent
    return derive_rng(cfg.seed, replicate, key).standard_normal(dims, dtype=np.float32)


def _run_trajectory(
    denoiser: Denoiser,
    conditions: list[Volume],
    cfg: SamplerConfig,
    sch: NoiseSchedule,
    replicate: int,
) -> tuple[Volume, int]:
    ref = _check_conditions(conditions, denoiser, cfg)
    t_trunc = resolve_t_trunc(cfg, sch.T)
    t_seq = [sch.T - 1] + list(range(t_trunc - 1, -1, -1))
    view_rng = derive_rng(cfg.seed, replicate, sch.T + 3) if cfg.randomized_views else None
    views = plan_views(cfg.view_policy, t_seq, view_rng)
    latent = ref.with_data(_noise_at(cfg, replicate, sch.T, ref.dims))
    nfe = 0
    x0_hat = latent
    for k, t in enumerate(t_seq):
        x0_hat, n_views = _step_x0(denoiser, latent, conditions, t, views[k], sch, cfg.view_combiner)
        nfe += n_views
        if k + 1 < len(t_seq):
            t_next = t_seq[k + 1]
            eps = ref.with_data(_noise_at(cfg, replicate, t_next, ref.dims))
            latent = renoise(x0_hat, t_next, eps, sch)
    return x0_hat, nfe


def sample_diffusion(
    denoiser: Denoiser,
    conditions: list[Volume],
    cfg: SamplerConfig,
    sch: NoiseSchedule,
) -> SampleResult:
    """One truncated (or full, ``t_trunc = T-1``) backward diffusion trajectory."""
    start = time.perf_counter()
    output, nfe = _run_trajectory(denoiser, conditions, cfg, sch, replicate=0)
    return SampleResult(output=output, nfe=nfe, wallclock=time.perf_counter() - start)


def sample_regression(
    denoiser: Denoiser,
    conditions: list[Volume],
    cfg: SamplerConfig,
    sch: NoiseSchedule,
) -> SampleResult:
    """Single denoiser pass at the terminal step per view; views averaged."""
    start = time.perf_counter()
    ref = _check_conditions(conditions, denoiser, cfg)
    t = sch.T - 1
    axes = list(AXES) if cfg.view_policy == "regression_three_view" else ["axial"]
    outputs = []
    for view, ax in enumerate(axes):
        if cfg.regression_latent == "noise":
            # view 0 reuses the diffusion initial-latent key; later views get their own
            latent = ref.with_data(_noise_at(cfg, 0, sch.T + view, ref.dims))
        else:
            latent = ref.with_data(np.zeros(ref.dims, dtype=np.float32))
        outputs.append(to_x0(latent, denoiser.predict_volume(latent, conditions, t, ax, sch), t, sch))
    return SampleResult(
        output=_combine(outputs, cfg.view_combiner),
        nfe=len(axes),
        wallclock=time.perf_counter() - start,
    )


def sample_expa(
    denoiser: Denoiser,
    conditions: list[Volume],
    cfg: SamplerConfig,
    sch: NoiseSchedule,
    workers: int = 1,
) -> SampleResult:
    """Average ``n_ex`` independent diffusion trajectories.

    Replicate ``i`` draws from the stream keyed by ``i``, so serial and
    concurrent execution produce identical outputs. A single replicate is
    returned unchanged (the combiner only merges two or more finals).
    """
    start = time.perf_counter()

    def one(i: int) -> tuple[Volume, int]:
        return _run_trajectory(denoiser, conditions, cfg, sch, replicate=i)

    if workers > 1 and cfg.n_ex > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(cfg.n_ex)))
    else:
        results = [one(i) for i in range(cfg.n_ex)]
    finals = [r[0] for r in results]
    nfe = sum(r[1] for r in results)
    return SampleResult(
        output=_combine(finals, cfg.combiner),
        nfe=nfe,
        wallclock=time.perf_counter() - start,
        per_replicate=finals if cfg.keep_replicates else None,
    )


def sample(
    denoiser: Denoiser,
    conditions: list[Volume],
    cfg: SamplerConfig,
    sch: NoiseSchedule,
    workers: int = 1,
) -> SampleResult:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "regression":
        return sample_regression(denoiser, conditions, cfg, sch)
    if cfg.mode == "expa":
        return sample_expa(denoiser, conditions, cfg, sch, workers=workers)
    return sample_diffusion(denoiser, conditions, cfg, sch)
