"""Slab-in / slice-out predictor contract shared by the oracle and the neural net."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatch
from ..schedule import NoiseSchedule, Prediction
from ..volume import AXES, Slab, Volume, axis_index, extract_slab


@dataclass(frozen=True)
class DenoiserInput:
    """One slab of the diffusion latent plus the matching conditioning slabs."""

    latent_slab: Slab
    condition_slabs: list[Slab]
    t: int
    axis: str

    def __post_init__(self):
        ref = self.latent_slab
        for slab in self.condition_slabs:
            same = (
                slab.axis == ref.axis
                and slab.center_index == ref.center_index
                and slab.n_slices == ref.n_slices
                and slab.data.shape == ref.data.shape
            )
            if not same:
                raise DimMismatch("latent and conditioning slabs must share axis, center, width, and in-plane dims")
        if ref.axis != self.axis:
            raise DimMismatch(f"slab axis {ref.axis!r} does not match input axis {self.axis!r}")


class Denoiser(ABC):
    """Predictor behind all sampling regimes.

    Implementations are read-only during prediction, so concurrent calls are
    safe. ``predict`` handles one slab; ``predict_volume`` runs a whole-volume
    pass along one axis (every slab reads the same pre-step latent) and must
    agree with per-slab calls.
    """

    output_kind: str = "v"
    n_slices: int = 5

    @abstractmethod
    def predict(self, inp: DenoiserInput, sch: NoiseSchedule) -> Prediction:
        """Single-slice prediction of ``output_kind`` for one slab."""

    def predict_volume(
        self,
        latent: Volume,
        conditions: list[Volume],
        t: int,
        axis: str | int,
        sch: NoiseSchedule,
    ) -> Prediction:
        ax = axis_index(axis)
        out = np.empty(latent.dims, dtype=np.float32)
        mover = np.moveaxis(out, ax, 0)
        for j in range(latent.dims[ax]):
            inp = DenoiserInput(
                latent_slab=extract_slab(latent, ax, j, self.n_slices),
                condition_slabs=[extract_slab(c, ax, j, self.n_slices) for c in conditions],
                t=t,
                axis=AXES[ax],
            )
            mover[j] = self.predict(inp, sch).data.data[0]
        return Prediction(self.output_kind, latent.with_data(out))
