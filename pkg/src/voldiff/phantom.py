"""Deterministic paired multi-contrast phantoms with known clean ground truth.

A phantom is built from nested ellipsoids (background, an outer shell, an
inner core playing the role of white matter) plus spherical lesions inside
the core. Condition modalities assign per-tissue intensities, a smooth
low-frequency texture, and an optional multiplicative polynomial bias field.
The clean target is produced by a fixed voxel-wise translation map: a
normalized radial-basis interpolation over the tissue anchor points in
condition-intensity space. Lesions shift the conditions only subtly but sit
on their own anchor, so the map renders them with strong target contrast.

Everything is a pure function of the spec (seed included), so a case can be
regenerated bit-identically from its JSON manifest.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import DimMismatch, InvalidSpec
from .harmonize import gamma_apply
from .noise import NoiseParams, add_rician
from .rng import derive_rng
from .volume import Mask, Volume, axis_index, load, save

TranslationMap = Callable[[list[np.ndarray]], np.ndarray]


@dataclass(frozen=True)
class LesionSpec:
    center: tuple[float, float, float]  # voxel coordinates
    radius_mm: float
    condition_deltas: tuple[float, ...]  # per-modality intensity shift


@dataclass(frozen=True)
class PhantomSpec:
    grid: tuple[int, int, int] = (48, 48, 48)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    center_frac: tuple[float, float, float] = (0.5, 0.5, 0.5)
    outer_radii_frac: tuple[float, float, float] = (0.42, 0.45, 0.40)
    inner_radii_frac: tuple[float, float, float] = (0.27, 0.30, 0.24)
    # per-modality (background, shell, core) intensities; two conditions by default
    condition_intensities: tuple[tuple[float, float, float], ...] = (
        (0.05, 0.45, 0.72),
        (0.05, 0.55, 0.38),
    )
    lesion_condition_deltas: tuple[float, ...] = (-0.06, 0.08)
    # target anchor values for (background, shell, core, lesion)
    target_intensities: tuple[float, float, float, float] = (0.05, 0.52, 0.40, 0.92)
    rbf_width: float = 0.04
    lesions: tuple[LesionSpec, ...] | None = None  # None: place n_lesions from the seed
    n_lesions: int = 2
    lesion_radius_mm: float = 3.0
    texture_amplitude: float = 0.008
    bias_amplitude: float = 0.0
    noise_target: NoiseParams = field(default_factory=lambda: NoiseParams(sigma=0.03, kind="rician"))
    noise_conditions: NoiseParams = field(default_factory=lambda: NoiseParams(sigma=0.0, kind="rician"))
    conditional_std: float = 0.05
    seed: int = 0

    @property
    def n_conditions(self) -> int:
        return len(self.condition_intensities)


@dataclass(frozen=True)
class PhantomCase:
    name: str
    spec: PhantomSpec
    conditions: list[Volume]
    target_clean: Volume
    target_noisy: Volume
    masks: dict[str, Mask]
    f: TranslationMap


def _anchor_points(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Anchor coordinates in condition space and their target values."""
    per_class = np.asarray(spec.condition_intensities, dtype=np.float64)  # (n_cond, 3)
    anchors = [per_class[:, 0], per_class[:, 1], per_class[:, 2]]
    anchors.append(per_class[:, 2] + np.asarray(spec.lesion_condition_deltas, dtype=np.float64))
    return np.stack(anchors), np.asarray(spec.target_intensities, dtype=np.float64)


def build_translation_map(spec: PhantomSpec) -> TranslationMap:
    """The deterministic voxel-wise map from condition intensities to the clean target."""
    anchors, targets = _anchor_points(spec)
    inv_two_h2 = 1.0 / (2.0 * spec.rbf_width**2)

    def f(conditions: list[np.ndarray]) -> np.ndarray:
        if len(conditions) != anchors.shape[1]:
            raise DimMismatch(f"translation map expects {anchors.shape[1]} condition rasters")
        stack = np.stack([np.asarray(c, dtype=np.float64) for c in conditions])
        num = np.zeros(stack.shape[1:])
        den = np.zeros(stack.shape[1:])
        for k in range(anchors.shape[0]):
            d2 = np.zeros(stack.shape[1:])
            for m in range(anchors.shape[1]):
                d2 += (stack[m] - anchors[k, m]) ** 2
            w = np.exp(-d2 * inv_two_h2)
            num += targets[k] * w
            den += w
        return (num / np.maximum(den, 1e-300)).astype(np.float32)

    return f


def _ellipsoid(grid: tuple[int, int, int], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    coords = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in grid), indexing="ij")
    q = np.zeros(grid)
    for c, c0, r in zip(coords, center, radii):
        q += ((c - c0) / r) ** 2
    return q <= 1.0


def _smooth_texture(grid: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Low-frequency field in [-1, 1]: a few random-phase cosine products."""
    coords = np.meshgrid(*(np.linspace(0, 1, n) for n in grid), indexing="ij")
    out = np.zeros(grid)
    for _ in range(3):
        freq = rng.uniform(1.0, 3.0, size=3)
        phase = rng.uniform(0.0, 2 * math.pi, size=3)
        term = np.ones(grid)
        for c, fr, ph in zip(coords, freq, phase):
            term = term * np.cos(2 * math.pi * fr * c + ph)
        out += term
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def _bias_field(grid: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    """Low-order polynomial in centered coordinates, normalized to max |.| = 1."""
    u, v, w = np.meshgrid(*(np.linspace(-1, 1, n) for n in grid), indexing="ij")
    basis = [u, v, w, u * v, u * w, v * w, u * u, v * v, w * w]
    coeffs = rng.uniform(-1.0, 1.0, size=len(basis))
    out = sum(c * b for c, b in zip(coeffs, basis))
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def _place_lesions(spec: PhantomSpec, core: np.ndarray) -> tuple[LesionSpec, ...]:
    if spec.lesions is not None:
        return spec.lesions
    if spec.n_lesions == 0:
        return ()
    radius_vox = spec.lesion_radius_mm / min(spec.spacing_mm)
    margin = int(math.ceil(radius_vox)) + 1
    safe = ndimage.binary_erosion(core, iterations=margin) if margin > 0 else core
    coords = np.argwhere(safe)
    if coords.size == 0:
        raise InvalidSpec("core too small to host lesions of the requested radius")
    rng = derive_rng(spec.seed, 1)
    order = rng.permutation(len(coords))
    placed: list[np.ndarray] = []
    min_sep = 2.0 * radius_vox + 1.0
    for i in order:
        p = coords[i].astype(np.float64)
        if all(np.linalg.norm(p - q) >= min_sep for q in placed):
            placed.append(p)
        if len(placed) == spec.n_lesions:
            break
    if len(placed) < spec.n_lesions:
        raise InvalidSpec(f"could not place {spec.n_lesions} separated lesions in the core")
    return tuple(
        LesionSpec(center=tuple(float(v) for v in p), radius_mm=spec.lesion_radius_mm,
                   condition_deltas=spec.lesion_condition_deltas)
        for p in placed
    )


def _validate(spec: PhantomSpec) -> None:
    if any(n < 8 for n in spec.grid):
        raise InvalidSpec(f"grid too small: {spec.grid}")
    outer = np.asarray(spec.outer_radii_frac)
    inner = np.asarray(spec.inner_radii_frac)
    if np.any(inner <= 0) or np.any(outer <= 0) or np.any(inner >= outer) or np.any(outer > 0.5):
        raise InvalidSpec("radii must satisfy 0 < inner < outer <= 0.5 (as grid fractions)")
    flat = [v for tissue in spec.condition_intensities for v in tissue]
    flat += list(spec.target_intensities)
    if any(not 0 <= v <= 1 for v in flat):
        raise InvalidSpec("intensities must lie in [0, 1]")
    for les in spec.lesions or ():
        if len(les.condition_deltas) != spec.n_conditions:
            raise InvalidSpec("lesion deltas must cover every condition modality")
    if len(spec.lesion_condition_deltas) != spec.n_conditions:
        raise InvalidSpec("lesion_condition_deltas must cover every condition modality")


def generate(spec: PhantomSpec, name: str | None = None) -> PhantomCase:
    """Materialize a phantom case; bit-identical for identical specs."""
    _validate(spec)
    grid = spec.grid
    center = np.asarray(spec.center_frac) * (np.asarray(grid) - 1)
    outer = np.asarray(spec.outer_radii_frac) * np.asarray(grid)
    inner = np.asarray(spec.inner_radii_frac) * np.asarray(grid)
    outer_mask = _ellipsoid(grid, center, outer)
    core = _ellipsoid(grid, center, inner)
    shell = outer_mask & ~core

    lesions = _place_lesions(spec, core)
    coords = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in grid), indexing="ij")
    lesion_masks = []
    for les in lesions:
        d2 = np.zeros(grid)
        for c, c0, sp in zip(coords, les.center, spec.spacing_mm):
            d2 += ((c - c0) * sp) ** 2
        lesion_masks.append((d2 <= les.radius_mm**2) & core)
    lesion_mask = np.logical_or.reduce(lesion_masks) if lesion_masks else np.zeros(grid, dtype=bool)
    if not lesion_mask.any() and spec.n_lesions > 0:
        raise InvalidSpec("lesions fell entirely outside the core")

    f = build_translation_map(spec)
    anchors, targets = _anchor_points(spec)
    target_sigma = spec.noise_target.sigma
    lesion_contrast = abs(float(targets[3] - targets[2]))
    if target_sigma > 0 and lesion_contrast < 5.0 * target_sigma:
        raise InvalidSpec(
            f"lesion target contrast {lesion_contrast:.3f} below 5x target noise {target_sigma:.3f}"
        )

    conditions = []
    for m, tissue in enumerate(spec.condition_intensities):
        base = np.full(grid, tissue[0], dtype=np.float64)
        base[shell] = tissue[1]
        base[core] = tissue[2]
        for les, lmask in zip(lesions, lesion_masks):
            base[lmask] = tissue[2] + les.condition_deltas[m]
        base += spec.texture_amplitude * _smooth_texture(grid, derive_rng(spec.seed, 10 + m))
        if spec.bias_amplitude > 0:
            base *= 1.0 + spec.bias_amplitude * _bias_field(grid, derive_rng(spec.seed, 20 + m))
        clean = Volume(np.clip(base, 0.0, 1.0), spec.spacing_mm)
        if spec.noise_conditions.sigma > 0:
            clean = add_rician(clean, spec.noise_conditions, derive_rng(spec.seed, 30 + m))
        conditions.append(clean)

    target_clean = Volume(f([c.data for c in conditions]), spec.spacing_mm)
    if target_sigma > 0:
        target_noisy = add_rician(target_clean, spec.noise_target, derive_rng(spec.seed, 2))
    else:
        target_noisy = target_clean

    masks = {
        "tissue": Mask(outer_mask),
        "shell": Mask(shell & ~lesion_mask),
        "wm": Mask(core & ~lesion_mask),
        "lesion": Mask(lesion_mask),
    }
    return PhantomCase(
        name=name or f"phantom-{spec.seed:08x}",
        spec=spec,
        conditions=conditions,
        target_clean=target_clean,
        target_noisy=target_noisy,
        masks=masks,
        f=f,
    )


def inject_slice_gamma(v: Volume, axis: str | int, pattern: list[tuple[float, float, float]]) -> Volume:
    """Apply a per-slice gamma perturbation (test fixture for the harmonizer)."""
    ax = axis_index(axis)
    if len(pattern) != v.dims[ax]:
        raise DimMismatch(f"pattern length {len(pattern)} != slice count {v.dims[ax]}")
    stack = np.moveaxis(v.data, ax, 0).astype(np.float64)
    out = np.stack([gamma_apply(stack[j], pattern[j]) for j in range(stack.shape[0])])
    return v.with_data(np.moveaxis(out, 0, ax))


def spec_to_json(spec: PhantomSpec) -> str:
    obj = asdict(spec)
    if spec.lesions is not None:
        obj["lesions"] = [asdict(l) for l in spec.lesions]
    return json.dumps(obj, indent=2, sort_keys=True)


def spec_from_json(text: str) -> PhantomSpec:
    obj = json.loads(text)
    for key in ("noise_target", "noise_conditions"):
        if key in obj and isinstance(obj[key], dict):
            obj[key] = NoiseParams(**obj[key])
    if obj.get("lesions") is not None:
        obj["lesions"] = tuple(
            LesionSpec(center=tuple(l["center"]), radius_mm=l["radius_mm"],
                       condition_deltas=tuple(l["condition_deltas"]))
            for l in obj["lesions"]
        )
    for key in ("grid", "spacing_mm", "center_frac", "outer_radii_frac", "inner_radii_frac",
                "lesion_condition_deltas", "target_intensities"):
        if key in obj:
            obj[key] = tuple(obj[key])
    if "condition_intensities" in obj:
        obj["condition_intensities"] = tuple(tuple(t) for t in obj["condition_intensities"])
    return PhantomSpec(**obj)


def save_case(case: PhantomCase, out_dir: str | Path) -> Path:
    """Write a case as YVOL volumes + boolean masks + a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for m, c in enumerate(case.conditions):
        fname = f"condition_{m}.yvol"
        save(c, out / fname)
        files[f"condition_{m}"] = fname
    save(case.target_clean, out / "target_clean.yvol")
    save(case.target_noisy, out / "target_noisy.yvol")
    files["target_clean"] = "target_clean.yvol"
    files["target_noisy"] = "target_noisy.yvol"
    for key, mask in case.masks.items():
        fname = f"mask_{key}.yvol"
        save(Volume(mask.data.astype(np.float32), case.spec.spacing_mm), out / fname)
        files[f"mask_{key}"] = fname
    manifest = {
        "name": case.name,
        "spec": json.loads(spec_to_json(case.spec)),
        "files": files,
    }
    (out / "case.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out / "case.json"


def load_case(case_dir: str | Path) -> PhantomCase:
    """Rebuild a case from disk; the translation map is reconstructed from the spec."""
    case_dir = Path(case_dir)
    manifest = json.loads((case_dir / "case.json").read_text())
    spec = spec_from_json(json.dumps(manifest["spec"]))
    files = manifest["files"]
    conditions = [load(case_dir / files[f"condition_{m}"]) for m in range(spec.n_conditions)]
    masks = {
        key[len("mask_"):]: Mask(load(case_dir / fname).data > 0.5)
        for key, fname in files.items()
        if key.startswith("mask_")
    }
    return PhantomCase(
        name=manifest["name"],
        spec=spec,
        conditions=conditions,
        target_clean=load(case_dir / files["target_clean"]),
        target_noisy=load(case_dir / files["target_noisy"]),
        masks=masks,
        f=build_translation_map(spec),
    )
