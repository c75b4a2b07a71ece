import numpy as np
import pytest

import voldiff as vd
from voldiff.denoiser import OracleGaussianDenoiser
from voldiff.errors import InvalidParam
from voldiff.metrics import ssim3d
from voldiff.sampler import resolve_t_trunc


def oracle_for(case, s=0.05, kind="v", n_slices=5):
    return OracleGaussianDenoiser(case.f, prior_var=s * s, output_kind=kind, n_slices=n_slices)


def mu_of(case):
    return case.f([c.data for c in case.conditions])


class TestConfig:
    def test_mode_validation(self):
        with pytest.raises(InvalidParam):
            vd.SamplerConfig(mode="ddim")
        with pytest.raises(InvalidParam):
            vd.SamplerConfig(mode="expa", n_ex=1)
        with pytest.raises(InvalidParam):
            vd.SamplerConfig(mode="diffusion", view_policy="regression_three_view")
        with pytest.raises(InvalidParam):
            vd.SamplerConfig(n_slices=4)

    def test_t_trunc_resolution(self):
        assert resolve_t_trunc(vd.SamplerConfig(mode="diffusion"), 1000) == 250
        assert resolve_t_trunc(vd.SamplerConfig(mode="regression"), 1000) == 0
        assert resolve_t_trunc(vd.SamplerConfig(mode="diffusion", t_trunc=999), 1000) == 999
        with pytest.raises(InvalidParam):
            resolve_t_trunc(vd.SamplerConfig(mode="diffusion", t_trunc=1000), 1000)


class TestNfeCount:
    def test_paper_values(self):
        diff = vd.SamplerConfig(mode="diffusion", t_trunc=250, n_ex=1)
        assert vd.nfe_count(diff, 1000, 1) == 251
        expa4 = vd.SamplerConfig(mode="expa", t_trunc=250, n_ex=4)
        assert vd.nfe_count(expa4, 1000, 1) == 1004
        expa10 = vd.SamplerConfig(mode="expa", t_trunc=250, n_ex=10)
        assert vd.nfe_count(expa10, 1000, 1) == 2510
        regr = vd.SamplerConfig(mode="regression", view_policy="regression_three_view")
        assert vd.nfe_count(regr, 1000, 3) == 3
        regr1 = vd.SamplerConfig(mode="regression", view_policy="axial_only")
        assert vd.nfe_count(regr1, 1000, 1) == 1

    def test_full_sampling_is_T_evaluations(self):
        cfg = vd.SamplerConfig(mode="diffusion", t_trunc=999)
        assert vd.nfe_count(cfg, 1000, 1) == 1000


class TestPlanViews:
    def test_axial_only(self):
        assert vd.plan_views("axial_only", list(range(5))) == [["axial"]] * 5

    def test_orthogonal_cycle(self):
        plan = vd.plan_views("orthogonal_cycle", list(range(6)))
        assert [p[0] for p in plan] == ["axial", "coronal", "sagittal", "axial", "coronal", "sagittal"]

    def test_three_view(self):
        assert vd.plan_views("regression_three_view", [999]) == [["axial", "coronal", "sagittal"]]

    def test_pure_function_of_position(self):
        a = vd.plan_views("orthogonal_cycle", list(range(7)))
        b = vd.plan_views("orthogonal_cycle", list(range(7)))
        assert a == b


class TestDiffusion:
    def test_deterministic_oracle_returns_mean_exactly(self, small_case, linear_1000):
        oracle = oracle_for(small_case, s=0.0)
        cfg = vd.SamplerConfig(mode="diffusion", t_trunc=50, seed=1)
        out = vd.sample_diffusion(oracle, small_case.conditions, cfg, linear_1000)
        assert out.nfe == 51
        assert np.abs(out.output.data - mu_of(small_case)).max() < 1e-5

    def test_same_seed_bit_identical(self, small_case, linear_1000):
        oracle = oracle_for(small_case)
        cfg = vd.SamplerConfig(mode="diffusion", t_trunc=40, seed=9)
        a = vd.sample_diffusion(oracle, small_case.conditions, cfg, linear_1000)
        b = vd.sample_diffusion(oracle, small_case.conditions, cfg, linear_1000)
        assert np.array_equal(a.output.data, b.output.data)

    def test_sample_mean_approaches_conditional_mean(self, linear_1000):
        # Monte-Carlo oracle of the ideal-DM expectation on a 16^3 phantom
        case = vd.generate(vd.PhantomSpec(grid=(16, 16, 16), n_lesions=0, seed=21))
        s = 0.05
        oracle = oracle_for(case, s=s)
        outs = []
        for i in range(64):
            cfg = vd.SamplerConfig(mode="diffusion", t_trunc=60, seed=1000 + i)
            outs.append(vd.sample_diffusion(oracle, case.conditions, cfg, linear_1000).output.data)
        mean_out = np.mean(outs, axis=0)
        assert np.abs(mean_out - mu_of(case)).max() < 3 * s / np.sqrt(64)

    def test_nfe_matches_account(self, small_case, linear_1000):
        oracle = oracle_for(small_case)
        for t_trunc in (0, 10, 250, 999):
            cfg = vd.SamplerConfig(mode="diffusion", t_trunc=t_trunc, seed=2)
            res = vd.sample_diffusion(oracle, small_case.conditions, cfg, linear_1000)
            assert res.nfe == vd.nfe_count(cfg, 1000, 1)


class TestRegression:
    def test_output_matches_conditional_mean(self, small_case, linear_1000):
        oracle = oracle_for(small_case, s=0.05)
        cfg = vd.SamplerConfig(mode="regression", view_policy="regression_three_view", seed=3)
        res = vd.sample_regression(oracle, small_case.conditions, cfg, linear_1000)
        assert res.nfe == 3
        mu = mu_of(small_case)
        rng = small_case.target_clean.range()
        assert np.abs(res.output.data - mu).max() <= 0.01 * rng

    def test_single_vs_three_view_deterministic_conditional(self, small_case, linear_1000):
        oracle = oracle_for(small_case, s=0.0)
        one = vd.sample_regression(
            oracle, small_case.conditions,
            vd.SamplerConfig(mode="regression", view_policy="axial_only", seed=5), linear_1000)
        three = vd.sample_regression(
            oracle, small_case.conditions,
            vd.SamplerConfig(mode="regression", view_policy="regression_three_view", seed=5), linear_1000)
        assert one.nfe == 1 and three.nfe == 3
        assert np.abs(one.output.data - three.output.data).max() < 1e-6

    def test_zeros_latent_option(self, small_case, linear_1000):
        oracle = oracle_for(small_case, s=0.05)
        cfg = vd.SamplerConfig(mode="regression", regression_latent="zeros", seed=1)
        a = vd.sample_regression(oracle, small_case.conditions, cfg, linear_1000)
        b = vd.sample_regression(oracle, small_case.conditions,
                                 vd.SamplerConfig(mode="regression", regression_latent="zeros", seed=99),
                                 linear_1000)
        assert np.array_equal(a.output.data, b.output.data)  # seed-independent with zero latents


class TestExpa:
    def test_single_replicate_identical_to_diffusion(self, small_case, linear_1000):
        oracle = oracle_for(small_case)
        cfg = vd.SamplerConfig(mode="diffusion", t_trunc=30, n_ex=1, seed=7)
        a = vd.sample_diffusion(oracle, small_case.conditions, cfg, linear_1000)
        b = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000)
        assert np.array_equal(a.output.data, b.output.data)

    def test_residual_scaling_mean_combiner(self, small_case, linear_1000):
        # variance-reduction law: residual std fits c / sqrt(n_ex) within 15%
        oracle = oracle_for(small_case, s=0.05)
        mu = mu_of(small_case)
        stds = {}
        for n in (1, 4, 16):
            cfg = vd.SamplerConfig(mode="expa" if n > 1 else "diffusion", t_trunc=60,
                                   n_ex=n, seed=11, combiner="mean")
            out = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000)
            stds[n] = float(np.std(out.output.data - mu))
        c = stds[1]
        for n in (4, 16):
            assert abs(stds[n] - c / np.sqrt(n)) < 0.15 * (c / np.sqrt(n)), stds

    def test_rms_combiner_magnitude_law(self, small_case, linear_1000):
        # replicates are real-valued, so the RMS limit is sqrt(mu^2 + sigma_res^2)
        # with a single noise channel; checked as a high-SNR aggregate over WM
        oracle = oracle_for(small_case, s=0.05)
        mu = mu_of(small_case)
        wm = small_case.masks["wm"].data
        cfg1 = vd.SamplerConfig(mode="diffusion", t_trunc=60, n_ex=1, seed=13)
        sigma_res = float(np.std(
            vd.sample_expa(oracle, small_case.conditions, cfg1, linear_1000).output.data[wm] - mu[wm]))
        cfg = vd.SamplerConfig(mode="expa", t_trunc=60, n_ex=16, seed=13, combiner="rms")
        out = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000)
        expected = np.sqrt(mu[wm].astype(np.float64) ** 2 + sigma_res**2)
        got = out.output.data[wm].astype(np.float64)
        assert abs(got.mean() - expected.mean()) < 0.02 * expected.mean()

    def test_keep_replicates(self, small_case, linear_1000):
        oracle = oracle_for(small_case)
        cfg = vd.SamplerConfig(mode="expa", t_trunc=20, n_ex=3, seed=2, keep_replicates=True)
        res = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000)
        assert res.per_replicate is not None and len(res.per_replicate) == 3
        assert res.nfe == 3 * 21

    def test_worker_count_independence(self, small_case, linear_1000):
        oracle = oracle_for(small_case)
        cfg = vd.SamplerConfig(mode="expa", t_trunc=25, n_ex=4, seed=5)
        serial = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000, workers=1)
        threaded = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000, workers=4)
        assert np.array_equal(serial.output.data, threaded.output.data)

    def test_expectation_equivalence_to_regression(self, small_case, linear_1000):
        # the core claim: replicate averages approach the single-step MMSE output
        oracle = oracle_for(small_case, s=0.05)
        regr = vd.sample_regression(
            oracle, small_case.conditions,
            vd.SamplerConfig(mode="regression", view_policy="axial_only", seed=1), linear_1000).output.data
        dists = {}
        for n in (1, 4, 16):
            cfg = vd.SamplerConfig(mode="expa" if n > 1 else "diffusion", t_trunc=60,
                                   n_ex=n, seed=17, combiner="mean")
            out = vd.sample_expa(oracle, small_case.conditions, cfg, linear_1000).output.data
            dists[n] = float(np.linalg.norm(out - regr))
        assert dists[1] > dists[4] > dists[16]
        assert dists[16] < dists[1] / 3


class TestTruncationNeutrality:
    def test_full_vs_truncated_same_seed(self, small_case, linear_1000):
        oracle = oracle_for(small_case, s=0.05)
        full = vd.sample_diffusion(oracle, small_case.conditions,
                                   vd.SamplerConfig(mode="diffusion", t_trunc=999, seed=4), linear_1000)
        trunc = vd.sample_diffusion(oracle, small_case.conditions,
                                    vd.SamplerConfig(mode="diffusion", t_trunc=250, seed=4), linear_1000)
        assert ssim3d(full.output, trunc.output, small_case.masks["tissue"]) >= 0.995


class TestNoiseReplication:
    def test_diffusion_noisier_than_regression(self, small_case, linear_1000):
        from voldiff.noise import estimate_wm_noise

        oracle = oracle_for(small_case, s=0.05)
        diff = vd.sample_diffusion(oracle, small_case.conditions,
                                   vd.SamplerConfig(mode="diffusion", t_trunc=60, seed=1), linear_1000)
        regr = vd.sample_regression(oracle, small_case.conditions,
                                    vd.SamplerConfig(mode="regression", seed=1), linear_1000)
        wm = small_case.masks["wm"]
        assert estimate_wm_noise(diff.output, wm) > estimate_wm_noise(regr.output, wm)
