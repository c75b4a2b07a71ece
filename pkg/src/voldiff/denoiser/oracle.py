"""Closed-form Gaussian posterior-mean denoiser for exact verification.

Models the clean target per voxel as ``X0 | C ~ N(mu(C), s^2)`` with a known
translation map ``mu``. Given a latent at level ``t`` the exact posterior
mean is

    E[X0 | x_t, C] = (sqrt(ab)*s^2*x_t + (1 - ab)*mu(C)) / (ab*s^2 + 1 - ab)

which is the best possible squared-error predictor for this conditional. The
oracle consumes only the center slice of each slab: with a voxel-independent
conditional, neighboring slices carry no extra information.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import InvalidParam
from ..schedule import NoiseSchedule, Prediction, from_x0
from ..volume import Volume, axis_index
from .base import Denoiser, DenoiserInput

MeanFn = Callable[[list[np.ndarray]], np.ndarray]


class OracleGaussianDenoiser(Denoiser):
    """Exact MMSE predictor for a voxel-wise Gaussian conditional."""

    def __init__(self, mean_fn: MeanFn, prior_var: float, output_kind: str = "v", n_slices: int = 5):
        if prior_var < 0:
            raise InvalidParam(f"prior variance must be >= 0, got {prior_var}")
        self.mean_fn = mean_fn
        self.prior_var = float(prior_var)
        self.output_kind = output_kind
        self.n_slices = int(n_slices)

    def _posterior_mean(self, x_t: np.ndarray, mu: np.ndarray, t: int, sch: NoiseSchedule) -> np.ndarray:
        ab = float(sch.alpha_bar[sch.check_t(t)])
        s2 = self.prior_var
        denom = ab * s2 + (1.0 - ab)
        if denom == 0.0:
            # alpha_bar == 1 and s^2 == 0: the latent already is the clean image
            return x_t.astype(np.float64)
        sa = np.sqrt(ab)
        return (sa * s2 * x_t.astype(np.float64) + (1.0 - ab) * mu.astype(np.float64)) / denom

    def predict(self, inp: DenoiserInput, sch: NoiseSchedule) -> Prediction:
        x_t = inp.latent_slab.center_slice()[None]
        mu = self.mean_fn([slab.center_slice()[None] for slab in inp.condition_slabs])
        x0 = self._posterior_mean(x_t, np.asarray(mu), inp.t, sch)
        return from_x0(Volume(x_t), Volume(x0), inp.t, sch, self.output_kind)

    def predict_volume(
        self,
        latent: Volume,
        conditions: list[Volume],
        t: int,
        axis: str | int,
        sch: NoiseSchedule,
    ) -> Prediction:
        # voxel-wise conditional: the whole-volume pass is the per-slab pass
        axis_index(axis)
        mu = np.asarray(self.mean_fn([c.data for c in conditions]))
        x0 = latent.with_data(self._posterior_mean(latent.data, mu, t, sch))
        return from_x0(latent, x0, t, sch, self.output_kind)


def oracle_predict(d: OracleGaussianDenoiser, inp: DenoiserInput, sch: NoiseSchedule) -> Prediction:
    """Single-slab oracle prediction (posterior mean re-expressed as ``output_kind``)."""
    return d.predict(inp, sch)
