#!/usr/bin/env python3
"""Post-hoc inter-slice harmonization with generalized gamma maps.

Single-view regression outputs can carry per-slice intensity jumps. This demo
injects a known per-slice perturbation into a clean phantom, then removes it
by jointly optimizing one (gain, exponent, offset) triple per slice, and
compares the restricted map families.
"""

import numpy as np

import voldiff as vd
from voldiff.harmonize import HarmonizeConfig, adjacent_slice_mse, harmonize_slices, harmonize_variant
from voldiff.volume import Mask


def main():
    case = vd.generate(vd.PhantomSpec(grid=(32, 32, 32), lesion_radius_mm=2.0, seed=3))
    v = case.target_clean
    bg = Mask(~case.masks["tissue"].data)
    rng = np.random.default_rng(5)
    pattern = []
    for j in range(v.dims[0]):
        if j % 2:
            pattern.append((0.08 + 0.02 * rng.random(), 0.10 * rng.random(), 0.01))
        else:
            pattern.append((0.0, 0.0, 0.0))
    perturbed = vd.inject_slice_gamma(v, "axial", pattern)

    floor = adjacent_slice_mse(v, "axial", bg)
    before = adjacent_slice_mse(perturbed, "axial", bg)
    print(f"adjacent-slice MSE: clean volume (content floor) {floor:.6f}")
    print(f"                    after injected perturbation  {before:.6f}")

    cfg = HarmonizeConfig(lr=10.0, max_steps=2000, background=bg)
    result = harmonize_slices(perturbed, "axial", cfg)
    after = adjacent_slice_mse(result.volume, "axial", bg)
    print(f"                    after harmonization          {after:.6f}")
    print(f"objective: {result.objective_trace[0][1]:.6f} -> {result.objective_trace[-1][1]:.6f} "
          f"in {result.objective_trace[-1][0]} accepted steps")
    print()

    print("map-family comparison (SSIM against the clean volume):")
    for variant in ("none", "linear", "simple_gamma", "generalized"):
        if variant == "generalized":
            out = result.volume
        else:
            out = harmonize_variant(perturbed, "axial", cfg, variant)
        print(f"  {variant:<14} {vd.ssim3d(out, v, case.masks['tissue']):.5f}")
    print()
    worst = int(np.argmax(np.abs(result.params.a)))
    print(f"largest fitted gain offset: slice {worst}, a = {result.params.a[worst]:+.4f} "
          f"(injected alternating +0.08..0.10)")


if __name__ == "__main__":
    main()
