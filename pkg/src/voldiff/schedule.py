"""Noise schedules, forward diffusion, and prediction-target algebra.

Time indexing is 0-based everywhere in this package: ``t`` ranges over
``[0, T)`` and ``alpha_bar[t]`` is the cumulative product of ``1 - beta`` up
to and including step ``t``. A 1-based convention maps onto this by
``t_internal = t_conventional - 1``; the terminal level ``alpha_bar[T-1]``
is near zero for the canonical T=1000 schedules (the prior is almost pure
noise).

Scalar coefficients are kept in float64; volume-valued operations compute in
float64 and return float32 rasters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, IndexOutOfRange, InvalidParam, NumericallySingular
from .volume import Volume, wrap_owned

PREDICTION_KINDS = ("v", "epsilon", "x0")

_EPS_ALPHA_FLOOR = 1e-8


@dataclass(frozen=True)
class Prediction:
    """A denoiser output of a fixed parametrization (velocity, noise, or clean image)."""

    kind: str
    data: Volume

    def __post_init__(self):
        if self.kind not in PREDICTION_KINDS:
            raise InvalidParam(f"prediction kind must be one of {PREDICTION_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise rates ``beta`` and cumulative signal levels ``alpha_bar``."""

    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    kind: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.T < 1 or beta.shape != (self.T,) or ab.shape != (self.T,):
            raise InvalidParam("schedule tables must have length T >= 1")
        if np.any(beta <= 0) or np.any(beta >= 1):
            raise InvalidParam("beta values must lie strictly in (0, 1)")
        if np.any(np.diff(ab) >= 0):
            raise InvalidParam("alpha_bar must be strictly decreasing")
        beta.flags.writeable = False
        ab.flags.writeable = False
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha_bar", ab)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 0 <= t < self.T:
            raise IndexOutOfRange(f"time index {t} outside [0, {self.T})")
        return t

    def to_json(self) -> str:
        """Serialize as kind + parameters (tables are rebuilt on load)."""
        return json.dumps({"kind": self.kind, "T": self.T, **dict(self.params)}, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "NoiseSchedule":
        obj = json.loads(text)
        kind = obj.pop("kind")
        if kind == "linear":
            return linear_schedule(obj["T"], obj["beta_start"], obj["beta_end"])
        if kind == "cosine":
            return cosine_schedule(obj["T"], obj["s"])
        raise InvalidParam(f"unknown schedule kind {kind!r}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "NoiseSchedule":
        return NoiseSchedule.from_json(Path(path).read_text())


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly interpolated beta table; default endpoints are the usual DDPM constants."""
    if T < 1:
        raise InvalidParam(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise InvalidParam(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T, beta, alpha_bar, "linear",
                         (("beta_start", float(beta_start)), ("beta_end", float(beta_end))))


def cosine_schedule(T: int, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine signal level with offset ``s``; betas clipped at 0.999.

    ``alpha_bar(t) = cos^2(((t/T + s)/(1+s)) * pi/2) / cos^2((s/(1+s)) * pi/2)``
    evaluated at the 1-based step positions. Compared to the linear table this
    keeps mid-range steps at a higher signal-to-noise ratio.
    """
    if T < 1:
        raise InvalidParam(f"T must be >= 1, got {T}")
    if s <= 0:
        raise InvalidParam(f"s must be > 0, got {s}")
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2
    ab_closed = f[1:] / f[0]
    beta = 1.0 - ab_closed / np.concatenate(([1.0], ab_closed[:-1]))
    beta = np.clip(beta, None, 0.999)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T, beta, alpha_bar, "cosine", (("s", float(s)),))


def _coeffs(sch: NoiseSchedule, t: int) -> tuple[float, float]:
    t = sch.check_t(t)
    ab = float(sch.alpha_bar[t])
    return math.sqrt(ab), math.sqrt(1.0 - ab)


def _check_dims(a: Volume, b: Volume) -> None:
    if a.dims != b.dims:
        raise DimMismatch(f"volume dims differ: {a.dims} vs {b.dims}")


def forward_diffuse(x0: Volume, t: int, eps: Volume, sch: NoiseSchedule) -> Volume:
    """Latent at level ``t``: ``sqrt(ab)*x0 + sqrt(1-ab)*eps``."""
    _check_dims(x0, eps)
    sa, sb = _coeffs(sch, t)
    return wrap_owned(sa * x0.data + sb * eps.data, x0.spacing_mm)


def v_target(x0: Volume, eps: Volume, t: int, sch: NoiseSchedule) -> Volume:
    """Velocity training target ``sqrt(ab)*eps - sqrt(1-ab)*x0``."""
    _check_dims(x0, eps)
    sa, sb = _coeffs(sch, t)
    return wrap_owned(sa * eps.data - sb * x0.data, x0.spacing_mm)


def to_x0(x_t: Volume, pred: Prediction, t: int, sch: NoiseSchedule) -> Volume:
    """Clean-image estimate implied by a prediction of any supported kind."""
    _check_dims(x_t, pred.data)
    sa, sb = _coeffs(sch, t)
    xt = x_t.data
    p = pred.data.data
    if pred.kind == "v":
        return wrap_owned(sa * xt - sb * p, x_t.spacing_mm)
    if pred.kind == "epsilon":
        if sch.alpha_bar[sch.check_t(t)] < _EPS_ALPHA_FLOOR:
            raise NumericallySingular(f"epsilon form ill-conditioned at alpha_bar < {_EPS_ALPHA_FLOOR}")
        return wrap_owned((xt - sb * p) * (1.0 / sa), x_t.spacing_mm)
    return pred.data


def from_x0(x_t: Volume, x0: Volume, t: int, sch: NoiseSchedule, kind: str) -> Prediction:
    """Re-express a clean-image estimate as a prediction of the requested kind."""
    _check_dims(x_t, x0)
    if kind not in PREDICTION_KINDS:
        raise InvalidParam(f"prediction kind must be one of {PREDICTION_KINDS}, got {kind!r}")
    if kind == "x0":
        return Prediction("x0", x0)
    sa, sb = _coeffs(sch, t)
    if sb == 0.0:
        raise NumericallySingular("v/epsilon forms undefined at alpha_bar == 1")
    if kind == "v":
        return Prediction("v", wrap_owned((sa * x_t.data - x0.data) * (1.0 / sb), x_t.spacing_mm))
    return Prediction("epsilon", wrap_owned((x_t.data - sa * x0.data) * (1.0 / sb), x_t.spacing_mm))


def renoise(x0_hat: Volume, t_next: int, eps: Volume, sch: NoiseSchedule) -> Volume:
    """Re-noise a clean estimate to latent level ``t_next`` for the next backward step."""
    return forward_diffuse(x0_hat, t_next, eps, sch)
