import numpy as np
import pytest

import voldiff as vd
from voldiff.errors import DimMismatch, InvalidSpec
from voldiff.harmonize import HarmonizeConfig, adjacent_slice_mse, harmonize_slices
from voldiff.noise import NoiseParams
from voldiff.phantom import LesionSpec, load_case, save_case, spec_from_json, spec_to_json


def small_spec(**kw):
    defaults = dict(grid=(24, 24, 24), lesion_radius_mm=1.5, seed=5)
    defaults.update(kw)
    return vd.PhantomSpec(**defaults)


class TestGenerate:
    def test_bit_identical_for_same_seed(self):
        a = vd.generate(small_spec())
        b = vd.generate(small_spec())
        for va, vb in zip(a.conditions, b.conditions):
            assert np.array_equal(va.data, vb.data)
        assert np.array_equal(a.target_noisy.data, b.target_noisy.data)
        for key in a.masks:
            assert np.array_equal(a.masks[key].data, b.masks[key].data)

    def test_different_seeds_differ(self):
        a = vd.generate(small_spec(seed=1))
        b = vd.generate(small_spec(seed=2))
        assert not np.array_equal(a.target_noisy.data, b.target_noisy.data)

    def test_class_masks_pairwise_disjoint(self, small_case):
        m = small_case.masks
        for a, b in (("shell", "wm"), ("shell", "lesion"), ("wm", "lesion")):
            assert not (m[a].data & m[b].data).any()
        union = m["shell"].data | m["wm"].data | m["lesion"].data
        assert np.array_equal(union, m["tissue"].data)

    def test_zero_noise_means_clean_equals_noisy(self):
        case = vd.generate(small_spec(noise_target=NoiseParams(sigma=0.0)))
        assert np.array_equal(case.target_clean.data, case.target_noisy.data)

    def test_translation_map_reproduces_clean_target(self, small_case):
        out = small_case.f([c.data for c in small_case.conditions])
        assert np.array_equal(out, small_case.target_clean.data)

    def test_lesion_visible_in_target_subtle_in_conditions(self, small_case):
        les = small_case.masks["lesion"].data
        wm = small_case.masks["wm"].data
        target_delta = abs(small_case.target_clean.data[les].mean() - small_case.target_clean.data[wm].mean())
        assert target_delta >= 5 * small_case.spec.noise_target.sigma
        for m, cond in enumerate(small_case.conditions):
            cond_delta = abs(cond.data[les].mean() - cond.data[wm].mean())
            assert cond_delta < target_delta / 3

    def test_supports_cnr_and_wm_noise(self, small_case):
        assert vd.cnr(small_case.target_clean, small_case.masks["lesion"], small_case.masks["wm"]) > 0
        assert np.isfinite(vd.estimate_wm_noise(small_case.target_noisy, small_case.masks["wm"]))

    def test_explicit_lesions_and_bias(self):
        spec = small_spec(
            lesions=(LesionSpec(center=(12.0, 12.0, 12.0), radius_mm=2.0, condition_deltas=(-0.05, 0.07)),),
            bias_amplitude=0.05,
        )
        case = vd.generate(spec)
        assert case.masks["lesion"].count() > 0
        # bias keeps the translation self-consistent
        assert np.array_equal(case.f([c.data for c in case.conditions]), case.target_clean.data)


class TestValidation:
    def test_bad_radii(self):
        with pytest.raises(InvalidSpec):
            vd.generate(small_spec(inner_radii_frac=(0.5, 0.5, 0.5), outer_radii_frac=(0.4, 0.4, 0.4)))

    def test_intensities_out_of_range(self):
        with pytest.raises(InvalidSpec):
            vd.generate(small_spec(target_intensities=(0.05, 0.5, 0.4, 1.2)))

    def test_too_many_lesions(self):
        with pytest.raises(InvalidSpec):
            vd.generate(small_spec(n_lesions=50))

    def test_lesion_contrast_floor(self):
        with pytest.raises(InvalidSpec):
            vd.generate(small_spec(target_intensities=(0.05, 0.52, 0.40, 0.45),
                                   noise_target=NoiseParams(sigma=0.03)))

    def test_grid_too_small(self):
        with pytest.raises(InvalidSpec):
            vd.generate(vd.PhantomSpec(grid=(4, 4, 4)))


class TestInjectSliceGamma:
    def test_identity_pattern_unchanged(self, small_case):
        v = small_case.target_clean
        pattern = [(0.0, 0.0, 0.0)] * v.dims[0]
        out = vd.inject_slice_gamma(v, "axial", pattern)
        assert np.allclose(out.data, v.data, atol=2e-4)  # positivity clamp at 1e-4

    def test_alternating_pattern_creates_slice_jumps(self, small_case):
        v = small_case.target_clean
        pattern = [(0.1, 0.0, 0.0) if j % 2 else (0.0, 0.0, 0.0) for j in range(v.dims[0])]
        out = vd.inject_slice_gamma(v, "axial", pattern)
        assert adjacent_slice_mse(out, "axial") > adjacent_slice_mse(v, "axial")

    def test_wrong_pattern_length(self, small_case):
        with pytest.raises(DimMismatch):
            vd.inject_slice_gamma(small_case.target_clean, "axial", [(0.0, 0.0, 0.0)] * 3)

    def test_inject_then_harmonize_roundtrip(self, small_case):
        v = small_case.target_clean
        pattern = [(0.1, 0.0, 0.0) if j % 2 else (0.0, 0.0, 0.0) for j in range(v.dims[0])]
        perturbed = vd.inject_slice_gamma(v, "axial", pattern)
        bg = vd.volume.Mask(~small_case.masks["tissue"].data)
        before = adjacent_slice_mse(perturbed, "axial", bg)
        result = harmonize_slices(perturbed, "axial", HarmonizeConfig(max_steps=800, background=bg))
        after = adjacent_slice_mse(result.volume, "axial", bg)
        assert after <= 0.5 * before


class TestSpecSerialization:
    def test_json_roundtrip(self):
        spec = small_spec(bias_amplitude=0.02,
                          lesions=(LesionSpec((10.0, 11.0, 12.0), 2.0, (-0.04, 0.05)),))
        back = spec_from_json(spec_to_json(spec))
        assert back == spec

    def test_case_save_load_roundtrip(self, tmp_path, small_case):
        save_case(small_case, tmp_path / "case")
        loaded = load_case(tmp_path / "case")
        assert loaded.name == small_case.name
        assert np.array_equal(loaded.target_clean.data, small_case.target_clean.data)
        assert np.array_equal(loaded.target_noisy.data, small_case.target_noisy.data)
        for a, b in zip(loaded.conditions, small_case.conditions):
            assert np.array_equal(a.data, b.data)
        for key in small_case.masks:
            assert np.array_equal(loaded.masks[key].data, small_case.masks[key].data)
        out = loaded.f([c.data for c in loaded.conditions])
        assert np.array_equal(out, small_case.target_clean.data)
