"""Small trainable slab-to-slice network.

A three-level convolutional encoder-decoder (~120k weights) with an additive
sinusoidal time embedding per encoder level. One network serves all three
slicing axes; conditioning enters by channel-wise concatenation of the
condition slabs with the latent slab. This is a deliberately small stand-in
for a production U-Net: acceptance rests on mechanism checks, not capacity.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..errors import DimMismatch, FormatError, InvalidParam
from ..rng import derive_rng
from ..schedule import PREDICTION_KINDS, NoiseSchedule, Prediction
from ..volume import Volume, axis_index
from .base import Denoiser, DenoiserInput

_PREDICT_BATCH = 64


@dataclass(frozen=True)
class NetConfig:
    """Architecture and provenance of a :class:`NeuralDenoiser`.

    A trained denoiser is bound to the noise schedule it saw during training:
    the latent slab is scaled by ``sqrt(alpha_bar_t)`` before entering the
    convolutions (pure input preconditioning, invertible given the embedded
    time step), which keeps the uninformative terminal-step noise from
    swamping the conditioning channels. ``schedule_json`` records that
    schedule; empty means the default linear table of length ``T``.
    """

    n_slices: int = 5
    n_conditions: int = 2
    channels: tuple[int, int, int] = (16, 32, 64)
    time_dim: int = 32
    T: int = 1000
    output_kind: str = "v"
    init_seed: int = 0
    schedule_json: str = ""

    def __post_init__(self):
        if self.n_slices < 1 or self.n_slices % 2 == 0:
            raise InvalidParam(f"n_slices must be odd, got {self.n_slices}")
        if self.output_kind not in PREDICTION_KINDS:
            raise InvalidParam(f"output_kind must be one of {PREDICTION_KINDS}")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    @property
    def in_channels(self) -> int:
        return self.n_slices * (1 + self.n_conditions)

    def schedule(self):
        from ..schedule import NoiseSchedule, linear_schedule

        if self.schedule_json:
            sch = NoiseSchedule.from_json(self.schedule_json)
            if sch.T != self.T:
                raise InvalidParam(f"schedule length {sch.T} != config T {self.T}")
            return sch
        return linear_schedule(self.T)


def _sinusoidal_embedding(t_idx: torch.Tensor, dim: int) -> torch.Tensor:
    # classic 10000-base embedding of the integer step index: the fastest
    # channel resolves adjacent steps, no channel wraps over [0, T)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t_idx.dtype) / (half - 1))
    args = t_idx[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class _TinyUNet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        c1, c2, c3 = cfg.channels
        td = cfg.time_dim
        self.time_dim = td
        # +2: sqrt(alpha_bar) and sqrt(1 - alpha_bar) join the time features
        self.time_mlp = nn.Sequential(nn.Linear(td + 2, 2 * td), nn.SiLU(), nn.Linear(2 * td, 2 * td))
        self.t1 = nn.Linear(2 * td, c1)
        self.t2 = nn.Linear(2 * td, c2)
        self.t3 = nn.Linear(2 * td, c3)
        self.enc1a = nn.Conv2d(cfg.in_channels, c1, 3, padding=1)
        self.enc1b = nn.Conv2d(c1, c1, 3, padding=1)
        self.down1 = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.enc2 = nn.Conv2d(c2, c2, 3, padding=1)
        self.down2 = nn.Conv2d(c2, c3, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(c3, c3, 3, padding=1)
        self.up1 = nn.Conv2d(c3, c2, 3, padding=1)
        self.dec2 = nn.Conv2d(2 * c2, c2, 3, padding=1)
        self.up2 = nn.Conv2d(c2, c1, 3, padding=1)
        self.dec1 = nn.Conv2d(2 * c1, c1, 3, padding=1)
        self.head = nn.Conv2d(c1, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t_idx: torch.Tensor, snr_feats: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(torch.cat([_sinusoidal_embedding(t_idx, self.time_dim), snr_feats], dim=1))
        h1 = F.silu(self.enc1a(x) + self.t1(emb)[:, :, None, None])
        h1 = F.silu(self.enc1b(h1))
        h2 = F.silu(self.down1(h1) + self.t2(emb)[:, :, None, None])
        h2 = F.silu(self.enc2(h2))
        h3 = F.silu(self.down2(h2) + self.t3(emb)[:, :, None, None])
        h3 = F.silu(self.enc3(h3))
        u2 = F.interpolate(h3, size=h2.shape[-2:], mode="nearest")
        u2 = F.silu(self.up1(u2))
        u2 = F.silu(self.dec2(torch.cat([u2, h2], dim=1)))
        u1 = F.interpolate(u2, size=h1.shape[-2:], mode="nearest")
        u1 = F.silu(self.up2(u1))
        u1 = F.silu(self.dec1(torch.cat([u1, h1], dim=1)))
        return self.head(u1)


def slab_stack(raster: np.ndarray, axis: int, n_slices: int) -> np.ndarray:
    """All slabs along an axis at once, edge-replicated: shape (D, n_slices, P, Q)."""
    m = np.moveaxis(raster, axis, 0)
    depth = m.shape[0]
    half = n_slices // 2
    idx = np.clip(np.arange(depth)[:, None] + np.arange(-half, half + 1)[None, :], 0, depth - 1)
    return m[idx]


class NeuralDenoiser(Denoiser):
    """Trainable predictor with deterministic initialization and an EMA shadow.

    Predictions use the live weights; call :meth:`swap_in_ema` to promote the
    EMA shadow (useful after long trainings where the average has converged).
    """

    def __init__(self, config: NetConfig):
        self.config = config
        self.output_kind = config.output_kind
        self.n_slices = config.n_slices
        self.net = _TinyUNet(config)
        self.net.eval()
        self._init_weights(config.init_seed)
        self.ema_state = {k: v.detach().clone() for k, v in self._params()}
        self.ema_applied = False
        ab = config.schedule().alpha_bar
        self._sqrt_ab = torch.from_numpy(np.sqrt(ab).astype(np.float32))
        self._sqrt_1mab = torch.from_numpy(np.sqrt(1.0 - ab).astype(np.float32))

    def _params(self):
        return sorted(self.net.named_parameters(), key=lambda kv: kv[0])

    def _init_weights(self, seed: int) -> None:
        rng = derive_rng(seed, 0xC0DE)
        with torch.no_grad():
            for name, p in self._params():
                if p.ndim > 1:
                    fan_in = int(np.prod(p.shape[1:]))
                    w = rng.standard_normal(tuple(p.shape)) * math.sqrt(2.0 / fan_in)
                    p.copy_(torch.from_numpy(w.astype(np.float32)))
                else:
                    p.zero_()

    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def update_ema(self, decay: float) -> None:
        with torch.no_grad():
            for name, p in self._params():
                self.ema_state[name].mul_(decay).add_(p.detach(), alpha=1.0 - decay)

    def swap_in_ema(self) -> None:
        """Copy the EMA shadow into the live weights (one-way promotion)."""
        with torch.no_grad():
            for name, p in self._params():
                p.copy_(self.ema_state[name])
        self.ema_applied = True

    def forward_batch(self, channels: torch.Tensor, t_idx: torch.Tensor) -> torch.Tensor:
        """Precondition inputs and run the net; used by training and prediction.

        The latent slab (the first ``n_slices`` channels) is scaled by
        ``sqrt(alpha_bar_t)`` so its magnitude tracks its information content.
        """
        ti = t_idx.long()
        sa, sb = self._sqrt_ab[ti], self._sqrt_1mab[ti]
        k = self.config.n_slices
        x = torch.cat([channels[:, :k] * sa[:, None, None, None], channels[:, k:]], dim=1)
        return self.net(x, t_idx.float(), torch.stack([sa, sb], dim=1))

    def _forward(self, channels: np.ndarray, t: int) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(channels, dtype=np.float32))
        t_idx = torch.full((x.shape[0],), t, dtype=torch.int64)
        with torch.no_grad():
            out = self.forward_batch(x, t_idx)
        return out.numpy()[:, 0]

    def predict(self, inp: DenoiserInput, sch: NoiseSchedule | None = None) -> Prediction:
        cfg = self.config
        if len(inp.condition_slabs) != cfg.n_conditions or inp.latent_slab.n_slices != cfg.n_slices:
            raise DimMismatch(
                f"denoiser expects {cfg.n_conditions} condition slabs of width {cfg.n_slices}, "
                f"got {len(inp.condition_slabs)} of width {inp.latent_slab.n_slices}"
            )
        channels = np.concatenate(
            [inp.latent_slab.data] + [s.data for s in inp.condition_slabs], axis=0
        )[None]
        out = self._forward(channels, inp.t)[0]
        return Prediction(self.output_kind, Volume(out[None]))

    def predict_volume(
        self,
        latent: Volume,
        conditions: list[Volume],
        t: int,
        axis: str | int,
        sch: NoiseSchedule | None = None,
    ) -> Prediction:
        cfg = self.config
        if len(conditions) != cfg.n_conditions:
            raise DimMismatch(f"expected {cfg.n_conditions} condition volumes, got {len(conditions)}")
        ax = axis_index(axis)
        stacks = [slab_stack(latent.data, ax, cfg.n_slices)]
        stacks += [slab_stack(c.data, ax, cfg.n_slices) for c in conditions]
        batch = np.concatenate(stacks, axis=1)  # (D, in_channels, P, Q)
        depth = batch.shape[0]
        out = np.empty((depth,) + batch.shape[2:], dtype=np.float32)
        for lo in range(0, depth, _PREDICT_BATCH):
            hi = min(lo + _PREDICT_BATCH, depth)
            out[lo:hi] = self._forward(batch[lo:hi], t)
        return Prediction(self.output_kind, latent.with_data(np.moveaxis(out, 0, ax)))


def neural_predict(d: NeuralDenoiser, inp: DenoiserInput) -> Prediction:
    """Single-slice prediction of the configured kind; deterministic given weights."""
    return d.predict(inp)


def save_weights(d: NeuralDenoiser, path: str | Path, ema: bool = False) -> None:
    """Write weights as a flat little-endian f32 blob plus a JSON manifest."""
    path = Path(path)
    source = d.ema_state if ema else dict(d._params())
    layers, chunks = [], []
    for name, _ in d._params():
        arr = source[name].detach().numpy().astype("<f4")
        layers.append({"name": name, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    manifest = {
        "format": "voldiff-weights-v1",
        "ema": bool(ema),
        "config": {**asdict(d.config), "channels": list(d.config.channels)},
        "layers": layers,
    }
    path.write_bytes(b"".join(chunks))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2))


def load_weights(path: str | Path) -> NeuralDenoiser:
    path = Path(path)
    manifest_path = path.with_suffix(path.suffix + ".json")
    if not manifest_path.exists():
        raise FormatError(f"missing weights manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "voldiff-weights-v1":
        raise FormatError(f"{manifest_path}: unknown weights format")
    cfg_dict = dict(manifest["config"])
    cfg_dict["channels"] = tuple(cfg_dict["channels"])
    d = NeuralDenoiser(NetConfig(**cfg_dict))
    blob = path.read_bytes()
    offset = 0
    params = dict(d._params())
    with torch.no_grad():
        for layer in manifest["layers"]:
            shape = tuple(layer["shape"])
            n = int(np.prod(shape)) if shape else 1
            chunk = blob[offset:offset + 4 * n]
            if len(chunk) != 4 * n:
                raise FormatError(f"{path}: weights blob truncated at layer {layer['name']}")
            arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
            params[layer["name"]].copy_(torch.from_numpy(arr.copy()))
            offset += 4 * n
    if offset != len(blob):
        raise FormatError(f"{path}: weights blob holds {len(blob) - offset} trailing bytes")
    d.ema_state = {k: v.detach().clone() for k, v in d._params()}
    d.ema_applied = manifest["ema"]
    return d
