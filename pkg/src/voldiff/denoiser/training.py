"""Denoiser training loop: forward-diffuse a slab, regress the per-kind target.

Each step draws (case, slicing axis, slice index, time step, noise) from an
explicit stream, forms the latent slab and the training target for the
network's output kind (velocity by default), and takes one ADAM step on the
masked L2 loss. Voxels outside the loss mask keep a small weight ``eps_bg``
so background stays roughly calibrated without dominating the objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import EmptyInput, InvalidParam, TrainingDiverged
from ..rng import derive_rng
from ..schedule import NoiseSchedule
from ..volume import Mask, Volume, roi_from_mask
from .network import NeuralDenoiser

TrainSample = tuple[Volume, list[Volume], Mask]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    ema_decay: float = 0.999
    eps_bg: float = 0.01
    total_slice_samples: int = 16000
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidParam(f"learning rate must be > 0, got {self.lr}")
        if not 0 <= self.ema_decay < 1:
            raise InvalidParam(f"EMA decay must lie in [0, 1), got {self.ema_decay}")
        if not 0 <= self.eps_bg <= 1:
            raise InvalidParam(f"eps_bg must lie in [0, 1], got {self.eps_bg}")
        if self.batch_size < 1 or self.total_slice_samples < 1:
            raise InvalidParam("batch_size and total_slice_samples must be >= 1")


def _slab_at(raster: np.ndarray, axis: int, index: int, n_slices: int) -> np.ndarray:
    m = np.moveaxis(raster, axis, 0)
    half = n_slices // 2
    idx = np.clip(np.arange(index - half, index + half + 1), 0, m.shape[0] - 1)
    return m[idx]


def _replicated_noise(rng: np.random.Generator, axis_len: int, index: int,
                      n_slices: int, plane: tuple[int, int]) -> np.ndarray:
    # edge slabs replicate slices, so replicated rows must share one noise draw
    half = n_slices // 2
    idx = np.clip(np.arange(index - half, index + half + 1), 0, axis_len - 1)
    uniq, inverse = np.unique(idx, return_inverse=True)
    rows = rng.standard_normal((len(uniq),) + plane, dtype=np.float32)
    return rows[inverse]


def train(
    d: NeuralDenoiser,
    dataset: list[TrainSample],
    cfg: TrainConfig,
    sch: NoiseSchedule,
) -> tuple[NeuralDenoiser, list[tuple[int, float]]]:
    """Run the training loop in place; returns the denoiser and the loss trace."""
    if not dataset:
        raise EmptyInput("training dataset is empty")
    for target, conditions, mask in dataset:
        if len(conditions) != d.config.n_conditions:
            raise InvalidParam(f"every case needs {d.config.n_conditions} condition volumes")
        if any(c.dims != target.dims for c in conditions) or mask.dims != target.dims:
            raise InvalidParam("target, conditions, and loss mask must share dims")

    net_sch = d.config.schedule()
    if net_sch.T != sch.T or not np.allclose(net_sch.alpha_bar, sch.alpha_bar, rtol=1e-12):
        raise InvalidParam(
            "training schedule differs from the one recorded in NetConfig.schedule_json; "
            "construct the denoiser with schedule_json=sch.to_json()"
        )

    rois = [roi_from_mask(mask, (0, 0, 0)) for _, _, mask in dataset]
    rng = derive_rng(cfg.seed, 0x7124)
    n_steps = -(-cfg.total_slice_samples // cfg.batch_size)
    n_slices = d.config.n_slices
    opt = torch.optim.Adam(d.net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    trace: list[tuple[int, float]] = []

    for step in range(n_steps):
        groups: dict[tuple[int, int], list] = {}
        for _ in range(cfg.batch_size):
            ci = int(rng.integers(len(dataset)))
            ax = int(rng.integers(3))
            lo, hi = rois[ci].lo[ax], rois[ci].hi[ax]
            j = int(rng.integers(lo, hi))
            t = int(rng.integers(sch.T))
            target, conditions, mask = dataset[ci]

            plane = tuple(s for a, s in enumerate(target.dims) if a != ax)
            x0_slab = _slab_at(target.data, ax, j, n_slices)
            eps_slab = _replicated_noise(rng, target.dims[ax], j, n_slices, plane)
            ab = float(sch.alpha_bar[t])
            sa, sb = np.float32(np.sqrt(ab)), np.float32(np.sqrt(1.0 - ab))
            x_t_slab = sa * x0_slab + sb * eps_slab

            channels = np.concatenate(
                [x_t_slab] + [_slab_at(c.data, ax, j, n_slices) for c in conditions], axis=0
            )
            x0_c, eps_c = x0_slab[n_slices // 2], eps_slab[n_slices // 2]
            if d.output_kind == "v":
                y = sa * eps_c - sb * x0_c
            elif d.output_kind == "epsilon":
                y = eps_c
            else:
                y = x0_c
            w = np.where(np.moveaxis(mask.data, ax, 0)[j], 1.0, cfg.eps_bg).astype(np.float32)
            groups.setdefault(plane, []).append((channels, t, y, w))

        opt.zero_grad()
        loss_num = torch.zeros((), dtype=torch.float32)
        loss_den = 0.0
        for plane, items in sorted(groups.items()):
            x = torch.from_numpy(np.stack([it[0] for it in items]))
            t_idx = torch.tensor([it[1] for it in items], dtype=torch.int64)
            y = torch.from_numpy(np.stack([it[2] for it in items]))
            w = torch.from_numpy(np.stack([it[3] for it in items]))
            pred = d.forward_batch(x, t_idx)[:, 0]
            loss_num = loss_num + torch.sum(w * (pred - y) ** 2)
            loss_den += float(torch.sum(w))
        loss = loss_num / loss_den
        loss_value = float(loss.detach())
        if not np.isfinite(loss_value):
            raise TrainingDiverged(step)
        loss.backward()
        opt.step()
        d.update_ema(cfg.ema_decay)
        trace.append((step, loss_value))

    return d, trace


def save_loss_trace(trace: list[tuple[int, float]], path: str | Path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.8g}"])
