"""Experiment runner: phantom generation, training, sampling, evaluation, sweeps.

Usage: ``voldiff <subcommand> --config cfg.json --out dir [--seed N] [--workers N]``

Subcommands: ``phantom``, ``train``, ``sample``, ``eval``, ``curve``,
``robust``, ``harmonize``. Each run writes a ``manifest.json`` (config echo,
config hash, seeds, produced files, timings) next to its outputs; the
manifest alone suffices to reproduce the run. Metric CSVs use the fixed
column order ``case_id,mode,T_trunc,n_ex,views,nfe,ssim,psnr_db,sigma_wm,
cnr,wallclock_s``; the wallclock column is a deterministic placeholder so
reruns are byte-identical, with real timings recorded in the manifest.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .denoiser import (
    NetConfig,
    NeuralDenoiser,
    OracleGaussianDenoiser,
    TrainConfig,
    load_weights,
    save_loss_trace,
    save_weights,
    train,
)
from .denoiser.base import Denoiser
from .errors import VoldiffError
from .harmonize import HarmonizeConfig, adjacent_slice_mse, harmonize_slices, harmonize_variant, save_objective_trace
from .metrics import cnr, psnr, ssim3d
from .noise import NoiseParams, add_rician, estimate_wm_noise
from .phantom import PhantomCase, generate, load_case, save_case, spec_from_json
from .rng import derive_rng, derive_seed
from .sampler import SamplerConfig, nfe_count, regression_views, resolve_t_trunc, sample
from .schedule import NoiseSchedule, linear_schedule
from .volume import Mask, Volume, load, save

CSV_COLUMNS = ["case_id", "mode", "T_trunc", "n_ex", "views", "nfe",
               "ssim", "psnr_db", "sigma_wm", "cnr", "wallclock_s"]


class ConfigError(VoldiffError):
    pass


def _read_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _schedule_from(cfg: dict | None) -> NoiseSchedule:
    cfg = dict(cfg or {})
    kind = cfg.pop("kind", "linear")
    if kind == "linear":
        return linear_schedule(cfg.get("T", 1000), cfg.get("beta_start", 1e-4), cfg.get("beta_end", 0.02))
    if kind == "cosine":
        from .schedule import cosine_schedule

        return cosine_schedule(cfg.get("T", 1000), cfg.get("s", 0.008))
    raise ConfigError(f"unknown schedule kind {kind!r}")


def _sampler_from(cfg: dict | None, seed_override: int | None) -> SamplerConfig:
    cfg = dict(cfg or {})
    if seed_override is not None:
        cfg["seed"] = seed_override
    try:
        return SamplerConfig(**cfg)
    except TypeError as exc:
        raise ConfigError(f"bad sampler config: {exc}") from exc


def _denoiser_from(cfg: dict | None, case: PhantomCase | None, n_slices: int) -> Denoiser:
    cfg = dict(cfg or {"kind": "oracle"})
    kind = cfg.get("kind", "oracle")
    if kind == "oracle":
        if case is None:
            raise ConfigError("oracle denoiser needs a phantom case for its translation map")
        s = cfg.get("s", case.spec.conditional_std)
        return OracleGaussianDenoiser(case.f, prior_var=float(s) ** 2,
                                      output_kind=cfg.get("output_kind", "v"), n_slices=n_slices)
    if kind == "weights":
        return load_weights(cfg["path"])
    raise ConfigError(f"unknown denoiser kind {kind!r}")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.6f}"
    return str(value)


def _write_rows(path: Path, rows: list[dict], extra_columns: list[str] | None = None) -> None:
    columns = CSV_COLUMNS + (extra_columns or [])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])


def _write_manifest(out: Path, payload: dict) -> None:
    payload = {"tool": "voldiff", **payload}
    (out / "manifest.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _metric_row(case: PhantomCase, output: Volume, mode: str, t_trunc, n_ex: int,
                views: int, nfe: int) -> dict:
    tissue, wm, lesion = case.masks["tissue"], case.masks["wm"], case.masks.get("lesion")
    ref = case.target_noisy
    row = {
        "case_id": case.name,
        "mode": mode,
        "T_trunc": t_trunc,
        "n_ex": n_ex,
        "views": views,
        "nfe": nfe,
        "ssim": ssim3d(output, ref, tissue),
        "psnr_db": psnr(output, ref, tissue),
        "sigma_wm": estimate_wm_noise(output, wm),
        "cnr": cnr(output, lesion, wm) if lesion is not None and lesion.data.any() else None,
        "wallclock_s": "0.000",
    }
    return row


def _load_case_arg(cfg: dict, key: str = "case") -> PhantomCase:
    if key not in cfg:
        raise ConfigError(f"config is missing the {key!r} entry")
    return load_case(cfg[key])


def _point_config(base: SamplerConfig, mode: str, t_trunc, n_ex: int, seed: int,
                  view_policies: dict) -> SamplerConfig:
    kwargs = {k: v for k, v in asdict(base).items()}
    kwargs.update(mode=mode, t_trunc=t_trunc, n_ex=n_ex, seed=seed)
    kwargs["view_policy"] = view_policies["regression" if mode == "regression" else "diffusion"]
    return SamplerConfig(**kwargs)


# ---------------------------------------------------------------- subcommands


def _cmd_phantom(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    specs = cfg.get("specs")
    if specs is None:
        specs = [cfg.get("spec", {})]
    outputs = []
    for i, spec_obj in enumerate(specs):
        spec = spec_from_json(json.dumps(spec_obj))
        if seed is not None:
            spec = spec_from_json(json.dumps({**spec_obj, "seed": derive_seed(seed, i)}))
        name = spec_obj.get("_name") or f"case{i:03d}"
        case = generate(spec, name=name)
        save_case(case, out / name)
        outputs.append(str(out / name / "case.json"))
    return {"cases": outputs}


def _cmd_train(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    case_dirs = cfg.get("cases") or ([cfg["case"]] if "case" in cfg else None)
    if not case_dirs:
        raise ConfigError("train config needs 'cases' (list of case directories)")
    cases = [load_case(d) for d in case_dirs]
    sch = _schedule_from(cfg.get("schedule"))
    train_kwargs = dict(cfg.get("train") or {})
    if seed is not None:
        train_kwargs["seed"] = seed
    tcfg = TrainConfig(**train_kwargs)
    net_kwargs = dict(cfg.get("net") or {})
    net_kwargs.setdefault("n_conditions", cases[0].spec.n_conditions)
    net_kwargs.setdefault("T", sch.T)
    net_kwargs.setdefault("init_seed", tcfg.seed)
    if "channels" in net_kwargs:
        net_kwargs["channels"] = tuple(net_kwargs["channels"])
    denoiser = NeuralDenoiser(NetConfig(**net_kwargs))
    target_key = cfg.get("target", "noisy")
    dataset = [
        (c.target_noisy if target_key == "noisy" else c.target_clean, c.conditions, c.masks["tissue"])
        for c in cases
    ]
    denoiser, trace = train(denoiser, dataset, tcfg, sch)
    save_weights(denoiser, out / "weights.bin", ema=bool(cfg.get("save_ema", False)))
    save_loss_trace(trace, out / "loss_trace.csv")
    return {
        "weights": str(out / "weights.bin"),
        "loss_trace": str(out / "loss_trace.csv"),
        "final_loss": trace[-1][1],
        "steps": len(trace),
        "schedule": json.loads(sch.to_json()),
    }


def _cmd_sample(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    case = _load_case_arg(cfg)
    sch = _schedule_from(cfg.get("schedule"))
    scfg = _sampler_from(cfg.get("sampler"), seed)
    denoiser = _denoiser_from(cfg.get("denoiser"), case, scfg.n_slices)
    result = sample(denoiser, case.conditions, scfg, sch, workers=workers)
    expected = nfe_count(scfg, sch.T, regression_views(scfg))
    if result.nfe != expected:
        raise VoldiffError(f"NFE accounting mismatch: counted {result.nfe}, expected {expected}")
    save(result.output, out / "sample.yvol", sidecar={"case": case.name, "mode": scfg.mode, "seed": scfg.seed})
    outputs = {"volume": str(out / "sample.yvol")}
    if result.per_replicate:
        reps = []
        for i, rep in enumerate(result.per_replicate):
            save(rep, out / f"replicate_{i}.yvol")
            reps.append(str(out / f"replicate_{i}.yvol"))
        outputs["replicates"] = reps
    return {
        **outputs,
        "nfe": result.nfe,
        "wallclock_s": result.wallclock,
        "sampler": asdict(scfg),
        "schedule": json.loads(sch.to_json()),
    }


def _cmd_eval(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    pred = load(cfg["pred"])
    ref = load(cfg["ref"])
    case = load_case(cfg["case"]) if "case" in cfg else None
    if case is not None:
        tissue, wm, lesion = case.masks["tissue"], case.masks["wm"], case.masks.get("lesion")
    else:
        tissue = Mask(np.ones(ref.dims, dtype=bool))
        wm = lesion = None
    row = {
        "case_id": case.name if case else Path(cfg["pred"]).stem,
        "mode": "eval",
        "T_trunc": 0,
        "n_ex": 0,
        "views": 0,
        "nfe": 0,
        "ssim": ssim3d(pred, ref, tissue),
        "psnr_db": psnr(pred, ref, tissue),
        "sigma_wm": estimate_wm_noise(pred, wm) if wm is not None else None,
        "cnr": cnr(pred, lesion, wm) if lesion is not None and lesion.data.any() else None,
        "wallclock_s": "0.000",
    }
    _write_rows(out / "metrics.csv", [row])
    return {"metrics_csv": str(out / "metrics.csv"), "row": {k: (None if v is None else _fmt(v)) for k, v in row.items()}}


def _infer_mode(t_trunc: int, n_ex: int) -> str:
    if t_trunc == 0:
        return "regression"
    return "expa" if n_ex > 1 else "diffusion"


def _cmd_curve(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    case = _load_case_arg(cfg)
    sch = _schedule_from(cfg.get("schedule"))
    base = _sampler_from(cfg.get("sampler"), None)
    grid = cfg.get("grid") or {}
    t_values = grid.get("t_trunc", [0, sch.T // 4])
    n_values = grid.get("n_ex", [1])
    view_policies = {
        "regression": cfg.get("view_policy_regression", "regression_three_view"),
        "diffusion": cfg.get("view_policy_diffusion", base.view_policy),
    }
    base_seed = seed if seed is not None else base.seed
    points = [(t, n) for t in t_values for n in n_values]

    def run_point(idx_point):
        idx, (t_trunc, n_ex) = idx_point
        mode = _infer_mode(int(t_trunc), int(n_ex))
        scfg = _point_config(base, mode, int(t_trunc) or None, int(n_ex),
                             derive_seed(base_seed, idx), view_policies)
        denoiser = _denoiser_from(cfg.get("denoiser"), case, scfg.n_slices)
        result = sample(denoiser, case.conditions, scfg, sch)
        views = regression_views(scfg) if mode == "regression" else 1
        row = _metric_row(case, result.output, mode,
                          0 if mode == "regression" else resolve_t_trunc(scfg, sch.T),
                          n_ex, views, result.nfe)
        return idx, row, result.wallclock

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_point, enumerate(points)))
    else:
        results = [run_point(ip) for ip in enumerate(points)]
    results.sort(key=lambda r: r[0])
    rows = [r[1] for r in results]
    timings = {str(points[r[0]]): r[2] for r in results}
    _write_rows(out / "curve.csv", rows)
    return {"curve_csv": str(out / "curve.csv"), "points": len(rows), "timings_s": timings}


def _cmd_robust(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    case = _load_case_arg(cfg)
    sch = _schedule_from(cfg.get("schedule"))
    base = _sampler_from(cfg.get("sampler"), None)
    sigmas = cfg.get("sigmas", [0.0, 0.005, 0.01, 0.02])
    base_seed = seed if seed is not None else base.seed

    def run_point(idx_sigma):
        idx, sigma = idx_sigma
        noisy_conditions = []
        for m, cond in enumerate(case.conditions):
            if sigma > 0:
                params = NoiseParams(sigma=float(sigma), kind="rician", relative=True)
                noisy_conditions.append(add_rician(cond, params, derive_rng(derive_seed(base_seed, idx), 50 + m)))
            else:
                noisy_conditions.append(cond)
        noisy_case = PhantomCase(case.name, case.spec, noisy_conditions, case.target_clean,
                                 case.target_noisy, case.masks, case.f)
        scfg = _point_config(base, base.mode, base.t_trunc, base.n_ex,
                             derive_seed(base_seed, idx),
                             {"regression": base.view_policy, "diffusion": base.view_policy})
        denoiser = _denoiser_from(cfg.get("denoiser"), noisy_case, scfg.n_slices)
        result = sample(denoiser, noisy_case.conditions, scfg, sch)
        views = regression_views(scfg) if scfg.mode == "regression" else 1
        row = _metric_row(case, result.output, scfg.mode,
                          0 if scfg.mode == "regression" else resolve_t_trunc(scfg, sch.T),
                          scfg.n_ex, views, result.nfe)
        row["input_sigma_rel"] = float(sigma)
        return idx, row, result.wallclock

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_point, enumerate(sigmas)))
    else:
        results = [run_point(ip) for ip in enumerate(sigmas)]
    results.sort(key=lambda r: r[0])
    rows = [r[1] for r in results]
    _write_rows(out / "robust.csv", rows, extra_columns=["input_sigma_rel"])
    return {"robust_csv": str(out / "robust.csv"), "points": len(rows),
            "timings_s": {str(sigmas[r[0]]): r[2] for r in results}}


def _cmd_harmonize(cfg: dict, out: Path, seed: int | None, workers: int) -> dict:
    v = load(cfg["volume"])
    axis = cfg.get("axis", "axial")
    background = None
    if cfg.get("background_mask"):
        background = Mask(load(cfg["background_mask"]).data > 0.5)
    hc_kwargs = dict(cfg.get("config") or {})
    hcfg = HarmonizeConfig(background=background, **hc_kwargs)
    variant = cfg.get("variant", "generalized")
    before = adjacent_slice_mse(v, axis, background)
    if variant == "generalized":
        result = harmonize_slices(v, axis, hcfg)
        corrected = result.volume
        save_objective_trace(result.objective_trace, out / "objective_trace.csv")
        trace_path = str(out / "objective_trace.csv")
    else:
        corrected = harmonize_variant(v, axis, hcfg, variant)
        trace_path = None
    after = adjacent_slice_mse(corrected, axis, background)
    save(corrected, out / "harmonized.yvol")
    return {
        "volume": str(out / "harmonized.yvol"),
        "objective_trace": trace_path,
        "variant": variant,
        "adjacent_mse_before": before,
        "adjacent_mse_after": after,
    }


_COMMANDS = {
    "phantom": _cmd_phantom,
    "train": _cmd_train,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "curve": _cmd_curve,
    "robust": _cmd_robust,
    "harmonize": _cmd_harmonize,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voldiff", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config for this subcommand")
        p.add_argument("--out", required=True, help="output directory (created if absent)")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--workers", type=int, default=None,
                       help="worker threads (default: $YODA_LAB_WORKERS or 1)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("YODA_LAB_WORKERS", "1"))
    try:
        cfg = _read_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        result = _COMMANDS[args.subcommand](cfg, out, args.seed, max(1, workers))
        _write_manifest(out, {
            "subcommand": args.subcommand,
            "config": cfg,
            "config_hash": _config_hash(cfg),
            "seed_override": args.seed,
            "workers": workers,
            "wallclock_s": time.perf_counter() - started,
            "outputs": result,
        })
    except (VoldiffError, KeyError, OSError, ValueError) as exc:
        print(f"voldiff {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
