"""Training, inference, evaluation and ablation orchestration.

Training is fully deterministic per seed in single-worker mode: the
validation holdout, the per-epoch batch order and the parameter init all
derive from the training seed.  Early stopping monitors the validation
loss; the best-validation checkpoint and the latest checkpoint are both
kept.  A NaN loss aborts training with the last epoch-end checkpoint
retained.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import engine, hairsim, image_io, metrics, model, stats
from .engine import AdamState, Tensor, adam_step
from .errors import (ConfigurationError, DataError, EngineFault,
                     TrainingFault)
from .loss import LossWeights, MaskedPair, loss_breakdown, TERM_NAMES

__all__ = ["TrainConfig", "TrainResult", "train", "infer", "evaluate",
           "compare", "ablate", "ABLATION_TOGGLES"]

ABLATION_TOGGLES = ("no-skip", "pooling", "drop-l1fg", "drop-l1bg",
                    "drop-l2comp", "drop-ssim", "drop-tv")

_DROP_TO_FIELD = {
    "drop-l1fg": "alpha",
    "drop-l1bg": "beta",
    "drop-l2comp": "gamma",
    "drop-ssim": "delta",
    "drop-tv": "lam",
}


@dataclass(frozen=True)
class TrainConfig:
    manifest: str
    checkpoint_dir: str
    preset: str = "desk"
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    val_fraction: float = 0.1
    precision: str = "float32"
    skip_connections: bool = True
    downsampling: str = model.STRIDED_CONV
    resume: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.preset not in ("desk", "full"):
            raise ConfigurationError(f"unknown preset '{self.preset}'")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in [0,1)")

    def model_config(self) -> model.ModelConfig:
        maker = model.ModelConfig.desk if self.preset == "desk" else model.ModelConfig.full
        return maker(skip_connections=self.skip_connections,
                     downsampling=self.downsampling)


@dataclass
class TrainResult:
    curve: list[dict]
    best_epoch: int
    best_val_loss: float
    stopped_reason: str
    checkpoint_dir: Path

    @property
    def best_checkpoint(self) -> Path:
        return self.checkpoint_dir / "best.ckpt"


def _load_pairs(records: list[dict], base: Path, size: int):
    """Preload samples as CHW arrays: (corrupted, clean, mask)."""
    out = []
    for rec in records:
        sample = hairsim.load_sample(base / rec["clean_path"],
                                     base / rec["corrupted_path"],
                                     base / rec["mask_path"], rec["provenance"])
        if sample.clean.shape[0] != size or sample.clean.shape[1] != size:
            raise DataError(
                f"sample {rec['clean_path']} is {sample.clean.shape[:2]}, "
                f"model expects {size}x{size}")
        out.append((image_io.to_chw(sample.corrupted),
                    image_io.to_chw(sample.clean),
                    sample.mask[None, :, :].astype(np.float64)))
    return out


def _batch(pairs, idx):
    xs = np.stack([pairs[i][0] for i in idx])
    ys = np.stack([pairs[i][1] for i in idx])
    ms = np.stack([pairs[i][2] for i in idx])
    return xs, ys, ms


def _psnr_8bit(pred01: np.ndarray, ref01: np.ndarray) -> float:
    return metrics.psnr(np.round(ref01 * 255.0), np.round(pred01 * 255.0))


def _write_curve_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_loss", "val_psnr"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["train_loss"]),
                        repr(r["val_loss"]), repr(r["val_psnr"])])


def _write_steps_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "epoch", "total", *TERM_NAMES])
        for r in rows:
            w.writerow([r["step"], r["epoch"], repr(r["total"])]
                       + [repr(r[t]) for t in TERM_NAMES])


def _svg_polyline(xs, ys, x0, y0, w, h) -> str:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x_span = max(xs.max() - xs.min(), 1e-12)
    y_span = max(ys.max() - ys.min(), 1e-12)
    px = x0 + (xs - xs.min()) / x_span * w
    py = y0 + h - (ys - ys.min()) / y_span * h
    return " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(px, py))


def _write_curve_svg(path: Path, rows: list[dict]) -> None:
    """Two-panel line chart: losses on the left, validation PSNR right."""
    epochs = [r["epoch"] for r in rows]
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="640" height="240" '
        'font-family="sans-serif" font-size="11">',
        '<rect width="640" height="240" fill="white"/>',
        '<text x="150" y="16" text-anchor="middle">loss</text>',
        '<text x="470" y="16" text-anchor="middle">validation PSNR (dB)</text>',
    ]
    if len(rows) >= 2:
        parts.append(f'<polyline fill="none" stroke="#1f77b4" points="'
                     f'{_svg_polyline(epochs, [r["train_loss"] for r in rows], 30, 30, 250, 180)}"/>')
        parts.append(f'<polyline fill="none" stroke="#d62728" points="'
                     f'{_svg_polyline(epochs, [r["val_loss"] for r in rows], 30, 30, 250, 180)}"/>')
        parts.append(f'<polyline fill="none" stroke="#2ca02c" points="'
                     f'{_svg_polyline(epochs, [r["val_psnr"] for r in rows], 350, 30, 250, 180)}"/>')
    parts.append('<text x="30" y="232" fill="#1f77b4">train</text>')
    parts.append('<text x="70" y="232" fill="#d62728">validation</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def train(config: TrainConfig) -> TrainResult:
    """Train per the config; returns the curve and checkpoint locations."""
    manifest = Path(config.manifest)
    records = hairsim.load_manifest(manifest)
    train_records = [r for r in records if r["split"] == "train"]
    if not train_records:
        raise DataError("manifest has no training samples")

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    mc = config.model_config()

    with engine.precision(config.precision):
        pairs = _load_pairs(train_records, manifest.parent, mc.input_size)

        rng = np.random.default_rng(config.seed)
        order = rng.permutation(len(pairs))
        n_val = max(1, int(round(config.val_fraction * len(pairs)))) \
            if config.val_fraction > 0 and len(pairs) > 1 else 0
        val_idx = order[:n_val].tolist()
        fit_idx = order[n_val:].tolist()
        if not fit_idx:
            raise DataError("validation holdout consumed every training sample")

        net = model.build(mc, config.seed)
        start_epoch = 1
        best_val = math.inf
        best_epoch = 0
        if config.resume and (ckpt_dir / "state.json").is_file():
            state_doc = json.loads((ckpt_dir / "state.json").read_text())
            net.load_state(engine.load_checkpoint(ckpt_dir / "last.ckpt"))
            start_epoch = state_doc["epoch"] + 1
            best_val = state_doc["best_val_loss"]
            best_epoch = state_doc["best_epoch"]

        adam = AdamState()
        params = net.state_arrays()
        curve: list[dict] = []
        step_rows: list[dict] = []
        step = 0
        since_best = 0
        stopped = "max_epochs"

        def run_validation(indices) -> tuple[float, float]:
            losses, psnrs = [], []
            for lo in range(0, len(indices), config.batch_size):
                chunk = indices[lo:lo + config.batch_size]
                x, y, m = _batch(pairs, chunk)
                pred = net.forward(Tensor(x))
                pair = MaskedPair(pred, Tensor(y), Tensor(m))
                total, _ = loss_breakdown(pair, config.weights)
                losses.append(total.item() * len(chunk))
                psnrs.extend(_psnr_8bit(p, t) for p, t in zip(pred.data, y))
            return float(np.sum(losses) / len(indices)), float(np.mean(psnrs))

        def save_state(epoch: int) -> None:
            engine.save_checkpoint(ckpt_dir / "last.ckpt", params)
            (ckpt_dir / "config.json").write_text(mc.to_json(), encoding="utf-8")
            (ckpt_dir / "state.json").write_text(json.dumps({
                "epoch": epoch, "best_val_loss": best_val,
                "best_epoch": best_epoch, "seed": config.seed,
                "weights": config.weights.to_dict(),
            }, sort_keys=True), encoding="utf-8")

        try:
            for epoch in range(start_epoch, config.max_epochs + 1):
                ep_rng = np.random.default_rng([config.seed, epoch])
                sched = ep_rng.permutation(len(fit_idx))
                epoch_losses = []
                for lo in range(0, len(sched), config.batch_size):
                    idx = [fit_idx[i] for i in sched[lo:lo + config.batch_size]]
                    x, y, m = _batch(pairs, idx)
                    pred = net.forward(Tensor(x))
                    pair = MaskedPair(pred, Tensor(y), Tensor(m))
                    total, terms = loss_breakdown(pair, config.weights)
                    value = total.item()
                    if not math.isfinite(value):
                        raise TrainingFault(f"non-finite loss at step {step + 1}")
                    total.backward()
                    grads = {n: p.grad for n, p in net.named_parameters()}
                    adam_step(params, grads, adam, config.lr)
                    step += 1
                    epoch_losses.append(value)
                    step_rows.append({"step": step, "epoch": epoch,
                                      "total": value, **terms})

                # with no holdout the training samples stand in for validation
                val_loss, val_psnr = run_validation(val_idx or fit_idx)
                monitored = val_loss
                curve.append({"epoch": epoch,
                              "train_loss": float(np.mean(epoch_losses)),
                              "val_loss": monitored,
                              "val_psnr": val_psnr})

                if monitored < best_val:
                    best_val = monitored
                    best_epoch = epoch
                    since_best = 0
                    engine.save_checkpoint(ckpt_dir / "best.ckpt", params)
                else:
                    since_best += 1
                save_state(epoch)
                if since_best >= config.patience:
                    stopped = "early_stopping"
                    break
        except (TrainingFault, EngineFault):
            # last-good checkpoint from the previous epoch stays on disk
            _write_curve_csv(ckpt_dir / "curve.csv", curve)
            _write_steps_csv(ckpt_dir / "steps.csv", step_rows)
            raise
        finally:
            if not (ckpt_dir / "best.ckpt").is_file() and (ckpt_dir / "last.ckpt").is_file():
                # never finished a best epoch; fall back to the last state
                engine.save_checkpoint(ckpt_dir / "best.ckpt", params)

        _write_curve_csv(ckpt_dir / "curve.csv", curve)
        _write_steps_csv(ckpt_dir / "steps.csv", step_rows)
        _write_curve_svg(ckpt_dir / "curve.svg", curve)
    return TrainResult(curve=curve, best_epoch=best_epoch, best_val_loss=best_val,
                       stopped_reason=stopped, checkpoint_dir=ckpt_dir)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


def _load_resized(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        if rgb.size != (size, size):
            rgb = rgb.resize((size, size), Image.BILINEAR)
        return np.asarray(rgb, dtype=np.float64) / 255.0


def infer(checkpoint_dir, input_dir, output_dir,
          batch_size: int = 8) -> tuple[list[str], list[str]]:
    """Restore every readable image in `input_dir`; returns (written, skipped)."""
    checkpoint_dir = Path(checkpoint_dir)
    net = model.load_model(checkpoint_dir / "best.ckpt", checkpoint_dir / "config.json")
    size = net.config.input_size
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise DataError(f"input directory not found: {input_dir}")
    output_dir.mkdir(parents=True, exist_ok=True)

    names = [p for p in sorted(input_dir.iterdir())
             if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")]
    written: list[str] = []
    skipped: list[str] = []
    batch: list[tuple[str, np.ndarray]] = []

    def flush():
        if not batch:
            return
        x = np.stack([image_io.to_chw(img) for _, img in batch])
        pred = net.forward(Tensor(x)).data
        for (name, _), out in zip(batch, pred):
            image_io.save_image(output_dir / name, image_io.from_chw(out))
            written.append(name)
        batch.clear()

    for path in names:
        try:
            img = _load_resized(path, size)
        except Exception:  # noqa: BLE001 - unreadable input is skipped, listed
            skipped.append(path.name)
            continue
        batch.append((path.name, img))
        if len(batch) >= batch_size:
            flush()
    flush()
    return written, skipped


# ---------------------------------------------------------------------------
# evaluation and comparison
# ---------------------------------------------------------------------------


def evaluate(ref_dir, test_dir, out_dir, threads: int | None = None) -> metrics.MetricReport:
    """Score test_dir against ref_dir and write report.csv / report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = metrics.evaluate_directory(ref_dir, test_dir, threads=threads)
    report.write(out_dir / "report.csv", out_dir / "report.json")
    return report


def compare(ref_dir, method_dirs, out_dir, alpha: float = 0.05,
            threads: int | None = None) -> stats.VerdictTable:
    """Per-image metrics for each method directory, then pairwise verdicts."""
    if len(method_dirs) < 2:
        raise ConfigurationError("compare needs at least two method directories")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    per_method: dict[str, dict[str, dict[str, float]]] = {}
    for mdir in method_dirs:
        mdir = Path(mdir)
        name = mdir.name
        if name in per_method:
            raise ConfigurationError(f"duplicate method name '{name}'")
        report = metrics.evaluate_directory(ref_dir, mdir, threads=threads)
        report.write(out_dir / f"metrics_{name}.csv", out_dir / f"metrics_{name}.json")
        per_method[name] = report.rows

    sets = stats.build_sample_sets(per_method, metrics.METRIC_ORDER,
                                   metrics.HIGHER_IS_BETTER)
    table = stats.compare_methods(sets, alpha=alpha)
    (out_dir / "verdicts.csv").write_text(table.to_csv_text(), encoding="utf-8")
    (out_dir / "verdicts.txt").write_text(table.to_text(), encoding="utf-8")
    return table


# ---------------------------------------------------------------------------
# ablation sweep
# ---------------------------------------------------------------------------


def _variant_config(base: TrainConfig, toggle: str | None, out_root: Path) -> TrainConfig:
    name = toggle or "baseline"
    cfg = replace(base, checkpoint_dir=str(out_root / name / "ckpt"))
    if toggle is None:
        return cfg
    if toggle == "no-skip":
        return replace(cfg, skip_connections=False)
    if toggle == "pooling":
        return replace(cfg, downsampling=model.MAX_POOL)
    if toggle in _DROP_TO_FIELD:
        return replace(cfg, weights=replace(base.weights,
                                            **{_DROP_TO_FIELD[toggle]: 0.0}))
    raise ConfigurationError(
        f"unknown ablation toggle '{toggle}' (choose from {', '.join(ABLATION_TOGGLES)})")


def _evaluate_manifest_split(net: model.HairRemovalNet, manifest: Path,
                             split: str) -> dict[str, dict[str, float]]:
    """Run the net over a manifest split and score against the clean refs."""
    base = manifest.parent
    rows: dict[str, dict[str, float]] = {}
    for rec in hairsim.load_manifest(manifest):
        if rec["split"] != split:
            continue
        corrupted = image_io.load_image(base / rec["corrupted_path"])
        clean = image_io.load_image(base / rec["clean_path"])
        pred = net.forward(Tensor(image_io.to_chw(corrupted)[None]))
        restored = image_io.quantize(image_io.from_chw(pred.data[0]))
        name = Path(rec["clean_path"]).name
        rows[name] = metrics.compute_all(clean * 255.0, restored * 255.0)
    return rows


def ablate(base: TrainConfig, toggles: list[str], out_dir) -> dict[str, dict[str, float]]:
    """Train the baseline plus one variant per toggle (shared seed) and
    tabulate mean metrics of each on the manifest's test split."""
    for t in toggles:
        if t not in ABLATION_TOGGLES:
            raise ConfigurationError(
                f"unknown ablation toggle '{t}' (choose from {', '.join(ABLATION_TOGGLES)})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = Path(base.manifest)

    table: dict[str, dict[str, float]] = {}
    for toggle in [None, *toggles]:
        name = toggle or "baseline"
        cfg = _variant_config(base, toggle, out_dir)
        result = train(cfg)
        net = model.load_model(result.best_checkpoint,
                               result.checkpoint_dir / "config.json")
        rows = _evaluate_manifest_split(net, manifest, "test")
        if not rows:
            raise DataError("manifest has no test samples to evaluate")
        table[name] = {m: float(np.mean([r[m] for r in rows.values()]))
                       for m in metrics.METRIC_ORDER}

    with open(out_dir / "ablation.csv", "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", *metrics.METRIC_ORDER])
        for name, row in table.items():
            w.writerow([name] + [repr(row[m]) for m in metrics.METRIC_ORDER])
    return table
