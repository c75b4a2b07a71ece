import json

import pytest

import voldiff as vd
from voldiff.cli import main
from voldiff.phantom import load_case


def write_config(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_case")
    cfg = {
        "spec": {
            "grid": [20, 20, 20],
            "lesion_radius_mm": 1.5,
            "seed": 5,
            "noise_target": {"sigma": 0.03, "kind": "rician", "seed": 0, "relative": False},
        },
    }
    cfg_path = root / "phantom.json"
    cfg_path.write_text(json.dumps(cfg))
    out = root / "out"
    assert main(["phantom", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out / "case000"


SMALL_SCHEDULE = {"kind": "linear", "T": 50}


class TestPhantomCommand:
    def test_outputs_and_manifest(self, case_dir):
        assert (case_dir / "case.json").exists()
        case = load_case(case_dir)
        assert case.target_clean.dims == (20, 20, 20)
        manifest = json.loads((case_dir.parent / "manifest.json").read_text())
        assert manifest["subcommand"] == "phantom"
        assert manifest["outputs"]["cases"] == [str(case_dir / "case.json")]

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        bad = write_config(tmp_path, "bad.json", {"spec": {"grid": [2, 2, 2]}})
        assert main(["phantom", "--config", bad, "--out", str(tmp_path / "o")]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_config_exit_code(self, tmp_path, capsys):
        assert main(["phantom", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1

    def test_unknown_subcommand_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate", "--config", "x", "--out", "y"])
        assert exc.value.code == 2


class TestSampleCommand:
    def test_oracle_sample_with_manifest(self, case_dir, tmp_path):
        cfg = write_config(tmp_path, "sample.json", {
            "case": str(case_dir),
            "denoiser": {"kind": "oracle", "s": 0.05},
            "schedule": SMALL_SCHEDULE,
            "sampler": {"mode": "diffusion", "t_trunc": 12, "seed": 3},
        })
        out = tmp_path / "sample_out"
        assert main(["sample", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"]["nfe"] == 13
        vol = vd.load(out / "sample.yvol")
        assert vol.dims == (20, 20, 20)

    def test_sample_determinism_across_runs(self, case_dir, tmp_path):
        cfg = write_config(tmp_path, "s.json", {
            "case": str(case_dir),
            "denoiser": {"kind": "oracle", "s": 0.05},
            "schedule": SMALL_SCHEDULE,
            "sampler": {"mode": "expa", "t_trunc": 10, "n_ex": 2, "seed": 8},
        })
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["sample", "--config", cfg, "--out", str(out)]) == 0
            outs.append((out / "sample.yvol").read_bytes())
        assert outs[0] == outs[1]


class TestEvalCommand:
    def test_self_comparison_infinite_psnr(self, case_dir, tmp_path):
        case = load_case(case_dir)
        vol_path = tmp_path / "x.yvol"
        vd.save(case.target_clean, vol_path)
        cfg = write_config(tmp_path, "eval.json", {
            "pred": str(vol_path), "ref": str(vol_path), "case": str(case_dir),
        })
        out = tmp_path / "eval_out"
        assert main(["eval", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0].startswith("case_id,mode,T_trunc,n_ex,views,nfe,ssim,psnr_db,sigma_wm,cnr,wallclock_s")
        row = lines[1].split(",")
        assert float(row[6]) == 1.0
        assert row[7] == "inf"


class TestCurveCommand:
    def _cfg(self, case_dir, tmp_path, seed=11):
        return write_config(tmp_path, "curve.json", {
            "case": str(case_dir),
            "denoiser": {"kind": "oracle", "s": 0.05},
            "schedule": SMALL_SCHEDULE,
            "grid": {"t_trunc": [0, 12], "n_ex": [1, 2]},
            "sampler": {"mode": "diffusion", "seed": seed},
        })

    def test_grid_rows_and_nfe(self, case_dir, tmp_path):
        cfg = self._cfg(case_dir, tmp_path)
        out = tmp_path / "curve_out"
        assert main(["curve", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "curve.csv").read_text().strip().splitlines()
        assert len(lines) == 5  # header + 4 grid points
        rows = [dict(zip(lines[0].split(","), l.split(","))) for l in lines[1:]]
        for row in rows:
            if row["mode"] == "regression":
                assert int(row["nfe"]) == int(row["views"])
            else:
                assert int(row["nfe"]) == int(row["n_ex"]) * (int(row["T_trunc"]) + 1)

    def test_byte_identical_rerun_any_workers(self, case_dir, tmp_path):
        cfg = self._cfg(case_dir, tmp_path)
        blobs = []
        for name, workers in (("w1", "1"), ("w2", "2"), ("w1b", "1")):
            out = tmp_path / name
            assert main(["curve", "--config", cfg, "--out", str(out), "--workers", workers]) == 0
            blobs.append((out / "curve.csv").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]

    def test_env_worker_fallback(self, case_dir, tmp_path, monkeypatch):
        monkeypatch.setenv("YODA_LAB_WORKERS", "2")
        cfg = self._cfg(case_dir, tmp_path)
        out = tmp_path / "env_out"
        assert main(["curve", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["workers"] == 2


class TestRobustCommand:
    def test_sigma_sweep_rows(self, case_dir, tmp_path):
        cfg = write_config(tmp_path, "robust.json", {
            "case": str(case_dir),
            "denoiser": {"kind": "oracle", "s": 0.05},
            "schedule": SMALL_SCHEDULE,
            "sampler": {"mode": "regression", "view_policy": "regression_three_view", "seed": 4},
            "sigmas": [0.0, 0.01, 0.02],
        })
        out = tmp_path / "robust_out"
        assert main(["robust", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "robust.csv").read_text().strip().splitlines()
        assert lines[0].endswith("wallclock_s,input_sigma_rel")
        assert len(lines) == 4
        sigmas = [float(l.split(",")[-1]) for l in lines[1:]]
        assert sigmas == [0.0, 0.01, 0.02]


class TestHarmonizeCommand:
    def test_reduces_adjacent_mse(self, case_dir, tmp_path):
        case = load_case(case_dir)
        pattern = [(0.1, 0.0, 0.0) if j % 2 else (0.0, 0.0, 0.0) for j in range(case.target_clean.dims[0])]
        perturbed = vd.inject_slice_gamma(case.target_clean, "axial", pattern)
        vol_path = tmp_path / "pert.yvol"
        vd.save(perturbed, vol_path)
        cfg = write_config(tmp_path, "harm.json", {
            "volume": str(vol_path),
            "axis": "axial",
            "config": {"max_steps": 400},
        })
        out = tmp_path / "harm_out"
        assert main(["harmonize", "--config", cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        before = manifest["outputs"]["adjacent_mse_before"]
        after = manifest["outputs"]["adjacent_mse_after"]
        # adjacent slices of a phantom differ in content too; at least half of the
        # injected (removable) part must be gone
        from voldiff.harmonize import adjacent_slice_mse

        floor = adjacent_slice_mse(case.target_clean, "axial")
        assert after <= floor + 0.5 * (before - floor)
        assert (out / "objective_trace.csv").exists()
        assert (out / "harmonized.yvol").exists()


class TestTrainCommand:
    def test_train_then_sample_with_weights(self, case_dir, tmp_path):
        train_cfg = write_config(tmp_path, "train.json", {
            "cases": [str(case_dir)],
            "schedule": SMALL_SCHEDULE,
            "net": {"channels": [8, 12, 16], "time_dim": 16, "n_slices": 3},
            "train": {"batch_size": 4, "total_slice_samples": 80, "lr": 1e-3, "seed": 3},
        })
        train_out = tmp_path / "train_out"
        assert main(["train", "--config", train_cfg, "--out", str(train_out)]) == 0
        assert (train_out / "weights.bin").exists()
        trace = (train_out / "loss_trace.csv").read_text().strip().splitlines()
        assert trace[0] == "step,loss" and len(trace) == 21

        sample_cfg = write_config(tmp_path, "nsample.json", {
            "case": str(case_dir),
            "denoiser": {"kind": "weights", "path": str(train_out / "weights.bin")},
            "schedule": SMALL_SCHEDULE,
            "sampler": {"mode": "regression", "view_policy": "regression_three_view",
                        "n_slices": 3, "seed": 1},
        })
        out = tmp_path / "nsample_out"
        assert main(["sample", "--config", sample_cfg, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["outputs"]["nfe"] == 3
