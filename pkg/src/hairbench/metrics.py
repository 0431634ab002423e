"""Nine full-reference image fidelity metrics and directory evaluation.

All metrics are computed in the 8-bit [0,255] domain.  MSE, RMSE, PSNR,
SSIM, MSSSIM and UQI are averaged over RGB channels; VIF and the two
PSNR-HVS variants operate on Rec.601 luminance, matching their original
definitions.  PSNR-style values are capped at 100 dB so aggregates stay
finite.

Per-image evaluations are independent; `evaluate_directory` can fan them
out over threads (capped by HAIRBENCH_THREADS) and always aggregates in
filename order, so reports are deterministic.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "METRIC_ORDER",
    "HIGHER_IS_BETTER",
    "mse",
    "rmse",
    "psnr",
    "ssim",
    "msssim",
    "uqi",
    "vif",
    "psnr_hvs",
    "psnr_hvs_m",
    "compute_all",
    "evaluate_directory",
    "MetricReport",
]

METRIC_ORDER = ("MSE", "RMSE", "PSNR", "SSIM", "MSSSIM", "UQI", "VIF",
                "PSNR_HVS", "PSNR_HVS_M")

HIGHER_IS_BETTER = {
    "MSE": False, "RMSE": False, "PSNR": True, "SSIM": True, "MSSSIM": True,
    "UQI": True, "VIF": True, "PSNR_HVS": True, "PSNR_HVS_M": True,
}

PSNR_CAP_DB = 100.0

_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _as_image(img, name: str) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ContractViolation(f"{name}: expected 2-d or 3-d image, got shape {arr.shape}")
    return arr


def _check_pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    a = _as_image(ref, "ref")
    b = _as_image(test, "test")
    if a.shape != b.shape:
        raise ContractViolation(f"shape mismatch: ref {a.shape} vs test {b.shape}")
    return a, b


def _channels(img: np.ndarray):
    if img.ndim == 2:
        yield img
    else:
        for c in range(img.shape[2]):
            yield img[:, :, c]


def _luminance(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


# ---------------------------------------------------------------------------
# pixel error family
# ---------------------------------------------------------------------------


def mse(ref, test) -> float:
    a, b = _check_pair(ref, test)
    d = a - b
    return float(np.mean(d * d))


def rmse(ref, test) -> float:
    return float(np.sqrt(mse(ref, test)))


def _psnr_from_power(power: float, peak: float = 255.0) -> float:
    if power < peak * peak * 1e-10:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(peak * peak / power))


def psnr(ref, test, peak: float = 255.0) -> float:
    return _psnr_from_power(mse(ref, test), peak)


# ---------------------------------------------------------------------------
# windowed structure family (SSIM / MS-SSIM / UQI)
# ---------------------------------------------------------------------------


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    t = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return t / t.sum()


def _sep_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Valid-mode separable 2-d correlation of a 2-d array."""
    v = np.lib.stride_tricks.sliding_window_view(x, taps.size, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(v, taps.size, axis=1) @ taps


def _ssim_maps(x: np.ndarray, y: np.ndarray, data_range: float):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    taps = _gaussian_taps(11, 1.5)
    mu_x = _sep_valid(x, taps)
    mu_y = _sep_valid(y, taps)
    sxx = _sep_valid(x * x, taps) - mu_x * mu_x
    syy = _sep_valid(y * y, taps) - mu_y * mu_y
    sxy = _sep_valid(x * y, taps) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2.0 * sxy + c2) / (sxx + syy + c2)
    return lum * cs, cs


def ssim(ref, test) -> float:
    """Structural similarity: 11x11 Gaussian window (sigma 1.5), K1=0.01,
    K2=0.03, L=255, averaged over windows and channels."""
    a, b = _check_pair(ref, test)
    if min(a.shape[0], a.shape[1]) < 11:
        raise ConfigurationError(
            f"ssim needs images of at least 11 px, got {a.shape[:2]}")
    vals = [float(np.mean(_ssim_maps(x, y, 255.0)[0]))
            for x, y in zip(_channels(a), _channels(b))]
    return float(np.mean(vals))


def _downsample2(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[0] // 2) * 2, (x.shape[1] // 2) * 2
    x = x[:h, :w]
    return x.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def max_msssim_scales(shape) -> int:
    """Largest scale count (up to 5) whose coarsest image still fits the
    11x11 analysis window."""
    m = min(shape[0], shape[1])
    scales = 0
    while scales < 5 and m >= 11:
        scales += 1
        m //= 2
    return scales


def msssim(ref, test, scales: int | None = None) -> float:
    """Multi-scale SSIM with the canonical 5-scale exponents and 2x2
    mean-pool downsampling.

    When the image is too small for the requested scale count the scale
    count is reduced automatically and the exponents are renormalized to
    sum to one (with a single scale this collapses to plain SSIM).
    """
    a, b = _check_pair(ref, test)
    allowed = max_msssim_scales(a.shape)
    if allowed == 0:
        raise ConfigurationError(
            f"msssim needs images of at least 11 px, got {a.shape[:2]}")
    scales = allowed if scales is None else min(scales, allowed)
    weights = np.asarray(_MSSSIM_WEIGHTS[:scales])
    if scales < 5:
        weights = weights / weights.sum()

    vals = []
    for x, y in zip(_channels(a), _channels(b)):
        factors = np.empty(scales)
        for s in range(scales):
            ssim_map, cs_map = _ssim_maps(x, y, 255.0)
            if s < scales - 1:
                factors[s] = max(float(np.mean(cs_map)), 0.0)
                x, y = _downsample2(x), _downsample2(y)
            else:
                factors[s] = max(float(np.mean(ssim_map)), 0.0)
        vals.append(float(np.prod(factors ** weights)))
    return float(np.mean(vals))


def _box_sum(x: np.ndarray, size: int) -> np.ndarray:
    """Sliding size x size window sums via an integral image."""
    c = np.cumsum(np.cumsum(x, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return (c[size:, size:] - c[:-size, size:] - c[size:, :-size] + c[:-size, :-size])


def uqi(ref, test, window: int = 8) -> float:
    """Universal quality index over sliding 8x8 windows.

    Windows with zero variance contribute the luminance-only factor; fully
    degenerate windows (zero variance and zero mean) contribute 1.
    """
    a, b = _check_pair(ref, test)
    if min(a.shape[0], a.shape[1]) < window:
        raise ConfigurationError(
            f"uqi needs images of at least {window} px, got {a.shape[:2]}")
    n = float(window * window)
    vals = []
    for x, y in zip(_channels(a), _channels(b)):
        sx = _box_sum(x, window)
        sy = _box_sum(y, window)
        sxx = _box_sum(x * x, window)
        syy = _box_sum(y * y, window)
        sxy = _box_sum(x * y, window)
        lum_den = sx * sx + sy * sy                    # n^2 (mx^2 + my^2)
        var_den = n * (sxx + syy) - lum_den            # n^2 (vx + vy)
        numerator = 4.0 * (n * sxy - sx * sy) * sx * sy
        denominator = var_den * lum_den
        q = np.ones_like(denominator)
        idx = (var_den == 0) & (lum_den != 0)
        q[idx] = 2.0 * sx[idx] * sy[idx] / lum_den[idx]
        idx = denominator != 0
        q[idx] = numerator[idx] / denominator[idx]
        vals.append(float(np.mean(q)))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# visual information fidelity (pixel domain)
# ---------------------------------------------------------------------------

_VIF_MIN_SIZE = 41


def vif_with_info(ref, test, noise_variance: float = 2.0):
    """Pixel-domain VIF over 4 Gaussian pyramid scales.

    Returns (value, degenerate) where degenerate flags a constant
    reference, for which the value is 1 by convention.
    """
    a, b = _check_pair(ref, test)
    if min(a.shape[0], a.shape[1]) < _VIF_MIN_SIZE:
        raise ConfigurationError(
            f"vif needs images of at least {_VIF_MIN_SIZE} px, got {a.shape[:2]}")
    x = _luminance(a)
    y = _luminance(b)
    eps = 1e-10
    num = 0.0
    den = 0.0
    for scale in range(4):
        size = 2 ** (4 - scale) + 1
        taps = _gaussian_taps(size, size / 5.0)
        if scale > 0:
            x = _sep_valid(x, taps)[::2, ::2]
            y = _sep_valid(y, taps)[::2, ::2]
        mu_x = _sep_valid(x, taps)
        mu_y = _sep_valid(y, taps)
        s_xx = np.maximum(_sep_valid(x * x, taps) - mu_x * mu_x, 0.0)
        s_yy = np.maximum(_sep_valid(y * y, taps) - mu_y * mu_y, 0.0)
        s_xy = _sep_valid(x * y, taps) - mu_x * mu_y

        g = s_xy / (s_xx + eps)
        sv = s_yy - g * s_xy
        low_x = s_xx < eps
        g[low_x] = 0.0
        sv[low_x] = s_yy[low_x]
        s_xx[low_x] = 0.0
        low_y = s_yy < eps
        g[low_y] = 0.0
        sv[low_y] = 0.0
        neg = g < 0.0
        sv[neg] = s_yy[neg]
        g[neg] = 0.0
        sv[sv <= eps] = eps

        num += float(np.sum(np.log10(1.0 + g * g * s_xx / (sv + noise_variance))))
        den += float(np.sum(np.log10(1.0 + s_xx / noise_variance)))
    if den == 0.0:
        return 1.0, True
    return num / den, False


def vif(ref, test) -> float:
    return vif_with_info(ref, test)[0]


# ---------------------------------------------------------------------------
# PSNR-HVS and PSNR-HVS-M
# ---------------------------------------------------------------------------

# Contrast sensitivity weights for the 8x8 DCT coefficients.
_CSF = np.array([
    [1.608443, 2.339554, 2.573509, 1.608443, 1.072295, 0.643377, 0.504610, 0.421887],
    [2.144591, 2.144591, 1.838221, 1.354478, 0.989811, 0.443708, 0.428918, 0.467911],
    [1.838221, 1.979622, 1.608443, 1.072295, 0.643377, 0.451493, 0.372972, 0.459555],
    [1.838221, 1.513829, 1.169777, 0.887417, 0.504610, 0.295806, 0.321689, 0.415082],
    [1.429727, 1.169777, 0.695543, 0.459555, 0.378457, 0.236102, 0.249855, 0.334222],
    [1.072295, 0.735288, 0.467911, 0.402111, 0.317717, 0.247453, 0.227744, 0.279729],
    [0.525206, 0.402111, 0.329937, 0.295806, 0.249855, 0.212687, 0.214459, 0.254803],
    [0.357432, 0.279729, 0.270896, 0.262603, 0.229778, 0.257351, 0.249855, 0.259950],
])

# Masking weights of the between-coefficient contrast masking model.
_MASK_COF = np.array([
    [0.390625, 0.826446, 1.000000, 0.390625, 0.173611, 0.062500, 0.038447, 0.026874],
    [0.694444, 0.694444, 0.510204, 0.277008, 0.147929, 0.029727, 0.027778, 0.033058],
    [0.510204, 0.591716, 0.390625, 0.173611, 0.062500, 0.030779, 0.021004, 0.031888],
    [0.510204, 0.346021, 0.206612, 0.118906, 0.038447, 0.013212, 0.015625, 0.026015],
    [0.308642, 0.206612, 0.073046, 0.031888, 0.021626, 0.008417, 0.009426, 0.016866],
    [0.173611, 0.081633, 0.033058, 0.024414, 0.015242, 0.009246, 0.007831, 0.011815],
    [0.041649, 0.024414, 0.016437, 0.013212, 0.009426, 0.006830, 0.006944, 0.009803],
    [0.019290, 0.011815, 0.011080, 0.010412, 0.007972, 0.010000, 0.009426, 0.010203],
])


def _blockify(x: np.ndarray) -> np.ndarray:
    """Split a 2-d array into non-overlapping 8x8 blocks: [n, 8, 8]."""
    h8 = (x.shape[0] // 8) * 8
    w8 = (x.shape[1] // 8) * 8
    x = x[:h8, :w8]
    return (x.reshape(h8 // 8, 8, w8 // 8, 8)
             .transpose(0, 2, 1, 3)
             .reshape(-1, 8, 8))


def _block_var_sum(blocks: np.ndarray, n: int) -> np.ndarray:
    """MATLAB-style `var(z(:)) * numel(z)`: sample variance times count."""
    mean = blocks.mean(axis=(1, 2), keepdims=True)
    ss = ((blocks - mean) ** 2).sum(axis=(1, 2))
    return ss * n / (n - 1)


def _masking_effect(blocks: np.ndarray, dct: np.ndarray) -> np.ndarray:
    """Per-block masking threshold from AC energy and block homogeneity."""
    ac_energy = (dct * dct * _MASK_COF).sum(axis=(1, 2)) - \
        (dct[:, 0, 0] ** 2) * _MASK_COF[0, 0]
    total = _block_var_sum(blocks, 64)
    quads = (_block_var_sum(blocks[:, :4, :4], 16)
             + _block_var_sum(blocks[:, :4, 4:], 16)
             + _block_var_sum(blocks[:, 4:, :4], 16)
             + _block_var_sum(blocks[:, 4:, 4:], 16))
    pop = np.zeros_like(total)
    nz = total != 0.0
    pop[nz] = quads[nz] / total[nz]
    return np.sqrt(ac_energy * pop) / 32.0


def _hvs_scores(ref, test) -> tuple[float, float]:
    """CSF-weighted mean squared DCT difference, plain and with contrast
    masking applied; returns (weighted_mse_hvs, weighted_mse_hvs_m)."""
    a, b = _check_pair(ref, test)
    if a.shape[0] < 8 or a.shape[1] < 8:
        raise ConfigurationError(
            f"psnr_hvs needs images of at least 8x8 px, got {a.shape[:2]}")
    ba = _blockify(_luminance(a))
    bb = _blockify(_luminance(b))
    dct_a = sp_fft.dctn(ba, type=2, norm="ortho", axes=(1, 2))
    dct_b = sp_fft.dctn(bb, type=2, norm="ortho", axes=(1, 2))

    u = np.abs(dct_a - dct_b)
    s_hvs = float(np.mean((u * _CSF) ** 2))

    mask = np.maximum(_masking_effect(ba, dct_a), _masking_effect(bb, dct_b))
    reduction = mask[:, None, None] / _MASK_COF[None, :, :]
    um = np.maximum(u - reduction, 0.0)
    um[:, 0, 0] = u[:, 0, 0]  # masking applies to AC coefficients only
    s_hvs_m = float(np.mean((um * _CSF) ** 2))
    return s_hvs, s_hvs_m


def psnr_hvs(ref, test) -> float:
    """PSNR over CSF-weighted 8x8 DCT coefficient differences."""
    return _psnr_from_power(_hvs_scores(ref, test)[0])


def psnr_hvs_m(ref, test) -> float:
    """PSNR-HVS with between-coefficient contrast masking; never smaller
    than PSNR-HVS because masking only discounts differences."""
    return _psnr_from_power(_hvs_scores(ref, test)[1])


# ---------------------------------------------------------------------------
# directory evaluation
# ---------------------------------------------------------------------------


def compute_all(ref, test) -> dict[str, float]:
    """All nine metrics for one image pair, keyed in report order."""
    values = {
        "MSE": mse(ref, test),
        "RMSE": rmse(ref, test),
        "PSNR": psnr(ref, test),
        "SSIM": ssim(ref, test),
        "MSSSIM": msssim(ref, test),
        "UQI": uqi(ref, test),
        "VIF": vif(ref, test),
    }
    s_hvs, s_hvs_m = _hvs_scores(ref, test)
    values["PSNR_HVS"] = _psnr_from_power(s_hvs)
    values["PSNR_HVS_M"] = _psnr_from_power(s_hvs_m)
    return values


@dataclass
class MetricReport:
    """Per-image metric rows plus mean/std aggregates and run metadata."""

    rows: dict[str, dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    omissions: list[str] = field(default_factory=list)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["filename", *METRIC_ORDER])
        for name in sorted(self.rows):
            writer.writerow([name] + [repr(self.rows[name][m]) for m in METRIC_ORDER])
        if self.mean:
            writer.writerow(["mean"] + [repr(self.mean[m]) for m in METRIC_ORDER])
            writer.writerow(["std"] + [repr(self.std[m]) for m in METRIC_ORDER])
        return buf.getvalue()

    def to_json_text(self) -> str:
        return json.dumps({
            "rows": {k: self.rows[k] for k in sorted(self.rows)},
            "mean": self.mean,
            "std": self.std,
            "metadata": self.metadata,
            "omissions": self.omissions,
        }, indent=2, sort_keys=True)

    def write(self, csv_path, json_path=None) -> None:
        Path(csv_path).write_text(self.to_csv_text(), encoding="utf-8")
        if json_path is not None:
            Path(json_path).write_text(self.to_json_text(), encoding="utf-8")


_IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _load_rgb(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64)


def _thread_count(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get("HAIRBENCH_THREADS", "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def evaluate_directory(ref_dir, test_dir, threads: int | None = None) -> MetricReport:
    """Compare same-named images across two directories.

    Missing counterparts and unreadable files land in the omissions
    section and the run continues.  With an empty intersection the report
    carries only omissions and no aggregates.
    """
    ref_dir, test_dir = Path(ref_dir), Path(test_dir)
    refs = {p.name: p for p in sorted(ref_dir.iterdir())
            if p.suffix.lower() in _IMAGE_EXTS} if ref_dir.is_dir() else {}
    tests = {p.name: p for p in sorted(test_dir.iterdir())
             if p.suffix.lower() in _IMAGE_EXTS} if test_dir.is_dir() else {}

    omissions = [f"missing in test dir: {n}" for n in sorted(refs.keys() - tests.keys())]
    omissions += [f"missing in ref dir: {n}" for n in sorted(tests.keys() - refs.keys())]
    common = sorted(refs.keys() & tests.keys())

    def one(name: str):
        try:
            ref_img = _load_rgb(refs[name])
            return name, compute_all(ref_img, _load_rgb(tests[name])), \
                max_msssim_scales(ref_img.shape)
        except Exception as exc:  # noqa: BLE001 - recorded, run continues
            return name, f"unreadable or invalid pair: {exc}", None

    workers = _thread_count(threads)
    if workers > 1 and len(common) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = {r[0]: r[1:] for r in pool.map(one, common)}
    else:
        results = {r[0]: r[1:] for r in map(one, common)}

    rows: dict[str, dict[str, float]] = {}
    scales_seen: set[int] = set()
    for name in common:  # deterministic fold in filename order
        outcome, scales = results[name]
        if isinstance(outcome, str):
            omissions.append(f"{name}: {outcome}")
        else:
            rows[name] = outcome
            scales_seen.add(scales)

    report = MetricReport(rows=rows, omissions=omissions)
    report.metadata = {
        "metric_order": list(METRIC_ORDER),
        "domain": "8-bit [0,255]",
        "color_handling": {
            "rgb_mean": ["MSE", "RMSE", "PSNR", "SSIM", "MSSSIM", "UQI"],
            "rec601_luminance": ["VIF", "PSNR_HVS", "PSNR_HVS_M"],
        },
        "psnr_cap_db": PSNR_CAP_DB,
        "std_ddof": 1,
    }
    if rows:
        report.metadata["msssim_scales"] = sorted(scales_seen)
        report.metadata["msssim_reduced"] = any(s < 5 for s in scales_seen)
        for m in METRIC_ORDER:
            col = np.array([rows[n][m] for n in sorted(rows)])
            report.mean[m] = float(col.mean())
            report.std[m] = float(col.std(ddof=1)) if col.size > 1 else 0.0
    return report
