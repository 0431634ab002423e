"""Synthetic paired datasets: clean image, hair-corrupted image, mask.

Two generators: procedural strands (smoothed quadratic/cubic Bezier curves
rasterized without anti-aliasing, so the mask is an exact binary support)
and superposition of supplied binary hair masks.  Off-mask pixels of the
corrupted image are bit-identical to the clean image.

Images are quantized to the 8-bit grid before corruption, so a written
sample reads back exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation, DataError
from . import image_io

__all__ = [
    "StrandParams",
    "PairedSample",
    "DatasetRecipe",
    "generate_strands",
    "superimpose_mask",
    "build_dataset",
    "load_manifest",
    "save_sample",
    "load_sample",
]

# Dark / gray / light strand color triplets, jittered per strand.
DEFAULT_PALETTE = ((0.09, 0.07, 0.06), (0.45, 0.44, 0.46), (0.78, 0.72, 0.62))


@dataclass(frozen=True)
class StrandParams:
    """Procedural strand generator settings (all randomness is seed-driven)."""

    count: tuple[int, int] = (3, 8)
    thickness: tuple[float, float] = (1.0, 2.0)
    palette: tuple = DEFAULT_PALETTE
    palette_weights: tuple = (0.5, 0.3, 0.2)
    curvature: tuple[float, float] = (0.05, 0.30)
    opacity: float = 0.9
    blend_width: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.count[0] < 0 or self.count[0] > self.count[1]:
            raise ConfigurationError(f"empty strand count range {self.count}")
        if self.thickness[0] < 1.0 or self.thickness[0] > self.thickness[1]:
            raise ConfigurationError(
                f"thickness range must be non-empty with min >= 1 px, got {self.thickness}")
        if not 0.0 < self.opacity <= 1.0:
            raise ConfigurationError(f"opacity must be in (0,1], got {self.opacity}")
        if self.curvature[0] < 0 or self.curvature[0] > self.curvature[1]:
            raise ConfigurationError(f"empty curvature range {self.curvature}")
        if len(self.palette) != len(self.palette_weights):
            raise ConfigurationError("palette and palette_weights lengths differ")


@dataclass
class PairedSample:
    """The dataset unit: clean and corrupted images plus the hair mask."""

    clean: np.ndarray       # [H,W,3] float in [0,1], 8-bit grid
    corrupted: np.ndarray   # same layout
    mask: np.ndarray        # [H,W] bool
    provenance: str         # "procedural" | "superimposed" | "none"

    def validate(self) -> None:
        if self.clean.shape != self.corrupted.shape:
            raise ContractViolation("clean/corrupted shape mismatch")
        if self.mask.shape != self.clean.shape[:2]:
            raise ContractViolation("mask shape mismatch")
        off = ~self.mask
        if not np.array_equal(self.clean[off], self.corrupted[off]):
            raise ContractViolation("corrupted differs from clean outside the mask")
        if self.provenance == "none" and (self.mask.any()
                                          or not np.array_equal(self.clean, self.corrupted)):
            raise ContractViolation("provenance 'none' requires an unmodified sample")


# ---------------------------------------------------------------------------
# strand geometry
# ---------------------------------------------------------------------------


def _border_point(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    edge = rng.integers(0, 4)
    if edge == 0:
        return np.array([0.0, rng.uniform(0, w - 1)])
    if edge == 1:
        return np.array([h - 1.0, rng.uniform(0, w - 1)])
    if edge == 2:
        return np.array([rng.uniform(0, h - 1), 0.0])
    return np.array([rng.uniform(0, h - 1), w - 1.0])


def _bezier(points: list[np.ndarray], t: np.ndarray) -> np.ndarray:
    """Evaluate a Bezier curve by repeated linear interpolation."""
    pts = [p[None, :].repeat(t.size, axis=0) for p in points]
    while len(pts) > 1:
        pts = [(1 - t)[:, None] * a + t[:, None] * b for a, b in zip(pts[:-1], pts[1:])]
    return pts[0]


def _strand_path(rng: np.random.Generator, h: int, w: int,
                 curvature: tuple[float, float]) -> np.ndarray:
    """Sample a strand spanning the image as (y, x) rows.

    Control points are clamped inside the frame; the Bezier convex-hull
    property then keeps the whole curve inside, so the rasterized strand
    is a single connected component.
    """
    p0 = _border_point(rng, h, w)
    p1 = _border_point(rng, h, w)
    while np.linalg.norm(p1 - p0) < 0.5 * min(h, w):
        p1 = _border_point(rng, h, w)
    chord = p1 - p0
    length = float(np.linalg.norm(chord))
    normal = np.array([-chord[1], chord[0]]) / length
    curv = rng.uniform(*curvature) * length
    sign = rng.choice((-1.0, 1.0))

    degree = int(rng.integers(2, 4))  # quadratic or cubic
    if degree == 2:
        ctrl = [p0 + 0.5 * chord + sign * curv * normal]
    else:
        s2 = sign if rng.random() < 0.7 else -sign
        ctrl = [p0 + chord / 3.0 + sign * curv * normal,
                p0 + 2.0 * chord / 3.0 + s2 * curv * normal]
    ctrl = [np.clip(c, [0.0, 0.0], [h - 1.0, w - 1.0]) for c in ctrl]

    samples = max(int(3 * (length + curv)), 16)
    t = np.linspace(0.0, 1.0, samples)
    return _bezier([p0, *ctrl, p1], t)


def _disk_offsets(radius: float) -> np.ndarray:
    r = max(int(np.ceil(radius)), 0)
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = dy * dy + dx * dx <= radius * radius
    return np.stack([dy[keep], dx[keep]], axis=1)


def _rasterize(path: np.ndarray, thickness: float, h: int, w: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    offsets = _disk_offsets(thickness / 2.0)
    centers = np.rint(path).astype(np.int64)
    px = (centers[:, None, :] + offsets[None, :, :]).reshape(-1, 2)
    keep = ((px[:, 0] >= 0) & (px[:, 0] < h) & (px[:, 1] >= 0) & (px[:, 1] < w))
    px = px[keep]
    mask[px[:, 0], px[:, 1]] = True
    return mask


def _pick_color(rng: np.random.Generator, params: StrandParams) -> np.ndarray:
    weights = np.asarray(params.palette_weights, dtype=np.float64)
    base = np.asarray(params.palette[rng.choice(len(params.palette),
                                                p=weights / weights.sum())])
    jitter = rng.uniform(-0.04, 0.04, size=3)
    return image_io.quantize(np.clip(base + jitter, 0.0, 1.0))


def _blend(canvas: np.ndarray, where: np.ndarray, color: np.ndarray,
           opacity: float) -> None:
    canvas[where] = (1.0 - opacity) * canvas[where] + opacity * color


def generate_strands(clean: np.ndarray, params: StrandParams) -> PairedSample:
    """Render procedural hair strands over a clean image.

    Deterministic per ``params.seed``.  With a zero strand count the
    sample comes back untouched with provenance "none".
    """
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ContractViolation(f"clean image must be [H,W,3], got {clean.shape}")
    h, w = clean.shape[:2]
    if h < 16 or w < 16:
        raise ConfigurationError(f"image too small for strand synthesis: {h}x{w}")

    rng = np.random.default_rng(params.seed)
    clean_q = image_io.quantize(clean)
    corrupted = clean_q.copy()
    mask = np.zeros((h, w), dtype=bool)

    n = int(rng.integers(params.count[0], params.count[1], endpoint=True))
    for _ in range(n):
        path = _strand_path(rng, h, w, params.curvature)
        thickness = rng.uniform(*params.thickness)
        support = _rasterize(path, thickness, h, w)
        color = _pick_color(rng, params)
        _blend(corrupted, support, color, params.opacity)
        if params.blend_width > 0:
            from scipy import ndimage
            inner = support
            for ring_idx in range(1, params.blend_width + 1):
                grown = ndimage.binary_dilation(inner)
                ring = grown & ~inner
                alpha = params.opacity * (1.0 - ring_idx / (params.blend_width + 1.0))
                _blend(corrupted, ring, color, alpha)
                inner = grown
            support = inner
        mask |= support

    if not mask.any():
        return PairedSample(clean_q, clean_q.copy(), mask, "none")
    corrupted[mask] = image_io.quantize(corrupted[mask])
    return PairedSample(clean_q, corrupted, mask, "procedural")


def superimpose_mask(clean: np.ndarray, hair_mask: np.ndarray,
                     hair_color, opacity: float) -> PairedSample:
    """Blend a supplied binary hair mask over a clean image."""
    if clean.ndim != 3 or clean.shape[2] != 3:
        raise ContractViolation(f"clean image must be [H,W,3], got {clean.shape}")
    if hair_mask.shape != clean.shape[:2]:
        raise ContractViolation(
            f"mask size {hair_mask.shape} != image size {clean.shape[:2]}")
    if not 0.0 < opacity <= 1.0:
        raise ConfigurationError(f"opacity must be in (0,1], got {opacity}")
    mask = hair_mask.astype(bool)
    clean_q = image_io.quantize(clean)
    corrupted = clean_q.copy()
    color = image_io.quantize(np.asarray(hair_color, dtype=np.float64))
    _blend(corrupted, mask, color, opacity)
    corrupted[mask] = image_io.quantize(corrupted[mask])
    return PairedSample(clean_q, corrupted, mask, "superimposed")


# ---------------------------------------------------------------------------
# dataset builder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecipe:
    """How each clean image gets its corruption."""

    strands: StrandParams = StrandParams()
    fraction_hairless: float = 0.1
    fraction_superimposed: float = 0.0
    mask_dir: str | None = None
    superimpose_opacity: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.fraction_hairless <= 1.0:
            raise ConfigurationError("fraction_hairless must be in [0,1]")
        if not 0.0 <= self.fraction_superimposed <= 1.0:
            raise ConfigurationError("fraction_superimposed must be in [0,1]")
        if self.fraction_hairless + self.fraction_superimposed > 1.0:
            raise ConfigurationError("hairless + superimposed fractions exceed 1")
        if self.fraction_superimposed > 0.0 and not self.mask_dir:
            raise ConfigurationError("superimposed samples need a mask_dir")


_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def _list_images(directory: Path) -> list[Path]:
    return [p for p in sorted(directory.iterdir()) if p.suffix.lower() in _IMAGE_EXTS]


def _sample_seed(global_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, index]).generate_state(1)[0])


def _nearest_resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = (np.arange(h) * mask.shape[0] / h).astype(np.int64)
    xs = (np.arange(w) * mask.shape[1] / w).astype(np.int64)
    return mask[ys][:, xs]


def build_dataset(clean_dir, recipe: DatasetRecipe, out_dir,
                  split: float = 0.7, seed: int = 0) -> Path:
    """Generate a paired dataset and write its JSONL manifest.

    The split and the per-image generator assignment are deterministic
    shuffles of the sorted file list; per-image randomness derives from
    hash(global seed, image index).  A configurable fraction of samples
    stays hairless so a trained model learns to leave clean images alone.
    """
    clean_dir, out_dir = Path(clean_dir), Path(out_dir)
    files = _list_images(clean_dir) if clean_dir.is_dir() else []
    if not files:
        raise ConfigurationError(f"no images found in {clean_dir}")
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must be in (0,1), got {split}")

    n = len(files)
    rng = np.random.default_rng(seed)
    split_order = rng.permutation(n)
    train_idx = set(split_order[:int(round(split * n))].tolist())

    # hairless samples exist to teach identity preservation, so they are
    # assigned train-first; they spill into the test split only when the
    # train split is full
    train_first = ([i for i in rng.permutation(n).tolist() if i in train_idx]
                   + [i for i in rng.permutation(n).tolist() if i not in train_idx])
    n_none = int(round(recipe.fraction_hairless * n))
    n_super = int(round(recipe.fraction_superimposed * n))
    provenance = {idx: "procedural" for idx in range(n)}
    for idx in train_first[:n_none]:
        provenance[idx] = "none"
    remaining = [i for i in rng.permutation(n).tolist() if provenance[i] != "none"]
    for idx in remaining[:n_super]:
        provenance[idx] = "superimposed"

    mask_files: list[Path] = []
    if recipe.mask_dir:
        mask_files = _list_images(Path(recipe.mask_dir))
        if n_super > 0 and not mask_files:
            raise ConfigurationError(f"no masks found in {recipe.mask_dir}")

    records = []
    for idx, path in enumerate(files):
        clean = image_io.load_image(path)
        s = _sample_seed(seed, idx)
        kind = provenance[idx]
        if kind == "none":
            clean_q = image_io.quantize(clean)
            sample = PairedSample(clean_q, clean_q.copy(),
                                  np.zeros(clean.shape[:2], dtype=bool), "none")
        elif kind == "superimposed":
            srng = np.random.default_rng(s)
            mask = image_io.load_mask(mask_files[srng.integers(len(mask_files))])
            mask = _nearest_resize_mask(mask, clean.shape[0], clean.shape[1])
            color = _pick_color(srng, recipe.strands)
            sample = superimpose_mask(clean, mask, color, recipe.superimpose_opacity)
        else:
            sample = generate_strands(clean, replace(recipe.strands, seed=s))
        sample.validate()

        stem = path.stem
        rel = {
            "clean_path": f"clean/{stem}.png",
            "corrupted_path": f"corrupted/{stem}.png",
            "mask_path": f"mask/{stem}.png",
            "provenance": sample.provenance,
            "split": "train" if idx in train_idx else "test",
        }
        save_sample(sample, out_dir / rel["clean_path"],
                    out_dir / rel["corrupted_path"], out_dir / rel["mask_path"])
        records.append(rel)

    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest


def load_manifest(manifest_path) -> list[dict]:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    records = []
    with open(manifest_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    if not records:
        raise DataError(f"manifest is empty: {manifest_path}")
    return records


def save_sample(sample: PairedSample, clean_path, corrupted_path, mask_path) -> None:
    image_io.save_image(clean_path, sample.clean)
    image_io.save_image(corrupted_path, sample.corrupted)
    image_io.save_mask(mask_path, sample.mask)


def load_sample(clean_path, corrupted_path, mask_path, provenance: str) -> PairedSample:
    return PairedSample(
        clean=image_io.load_image(clean_path),
        corrupted=image_io.load_image(corrupted_path),
        mask=image_io.load_mask(mask_path),
        provenance=provenance,
    )
