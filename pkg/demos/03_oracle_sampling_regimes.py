#!/usr/bin/env python3
"""All sampling regimes driven by the exact Gaussian oracle denoiser.

With the oracle (the provably best squared-error predictor for the phantom's
conditional), sampling behavior isolates the algorithms from network quality:
diffusion replicates noise, replicate averaging suppresses it like physical
signal averaging, and single-step regression lands on the conditional mean.
"""

import numpy as np

import voldiff as vd
from voldiff.denoiser import OracleGaussianDenoiser
from voldiff.metrics import ssim3d
from voldiff.noise import estimate_wm_noise


def main():
    sch = vd.linear_schedule(1000)
    case = vd.generate(vd.PhantomSpec(grid=(32, 32, 32), lesion_radius_mm=2.0, seed=7))
    s = case.spec.conditional_std
    oracle = OracleGaussianDenoiser(case.f, prior_var=s * s, output_kind="v")
    mu = case.f([c.data for c in case.conditions])
    wm = case.masks["wm"]

    print(f"phantom {case.name}: 32^3, conditional std s = {s}")
    print()
    print(f"{'regime':<24} {'NFE':>6} {'resid std':>10} {'WM noise':>10}")
    rows = [
        ("regression (3 views)", vd.SamplerConfig(mode="regression", view_policy="regression_three_view", seed=1)),
        ("diffusion (T/4 trunc)", vd.SamplerConfig(mode="diffusion", seed=1)),
        ("ExpA N=4", vd.SamplerConfig(mode="expa", n_ex=4, seed=1, combiner="mean")),
        ("ExpA N=16", vd.SamplerConfig(mode="expa", n_ex=16, seed=1, combiner="mean")),
    ]
    outputs = {}
    for label, cfg in rows:
        res = vd.sample(oracle, case.conditions, cfg, sch)
        outputs[label] = res.output
        resid = float(np.std(res.output.data - mu))
        print(f"{label:<24} {res.nfe:>6} {resid:>10.4f} {estimate_wm_noise(res.output, wm):>10.4f}")
    print()
    print("residual noise shrinks like 1/sqrt(N): replicate averaging walks the")
    print("diffusion output back to the single-step regression solution.")

    print()
    regr = outputs["regression (3 views)"]
    for label in ("diffusion (T/4 trunc)", "ExpA N=4", "ExpA N=16"):
        d = np.linalg.norm(outputs[label].data - regr.data)
        print(f"  |{label} - regression|_2 = {d:8.3f}")

    print()
    full = vd.sample_diffusion(oracle, case.conditions,
                               vd.SamplerConfig(mode="diffusion", t_trunc=999, seed=5), sch)
    trunc = vd.sample_diffusion(oracle, case.conditions,
                                vd.SamplerConfig(mode="diffusion", t_trunc=250, seed=5), sch)
    print(f"truncation neutrality: full ({full.nfe} evals) vs truncated ({trunc.nfe} evals)")
    print(f"  SSIM between the two outputs: {ssim3d(full.output, trunc.output, case.masks['tissue']):.5f}")
    print("  the early low-SNR steps barely move the estimate, so skipping them")
    print("  at matched per-step noise changes nothing.")


if __name__ == "__main__":
    main()
