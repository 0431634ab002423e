"""Reconstruction loss: a weighted sum of five differentiable terms.

Masked L1 over hair pixels, masked L1 over background pixels, masked L2
normalized over all pixels, a structural-similarity term over the whole
image, and an anisotropic total-variation regularizer restricted to a
1-pixel-dilated hair region.  Terms with weight zero are skipped outright,
so toggling a weight removes the term's gradient contribution exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy import ndimage

from .engine import Tensor, separable_filter2d
from .errors import ConfigurationError, ContractViolation

__all__ = [
    "LossWeights",
    "MaskedPair",
    "l1_foreground",
    "l1_background",
    "l2_composed",
    "ssim_loss",
    "tv_loss",
    "reconstruction_loss",
    "loss_breakdown",
    "TERM_NAMES",
]

TERM_NAMES = ("l1_foreground", "l1_background", "l2_composed", "ssim", "tv")

# Window constants shared with the evaluation SSIM.  The loss operates on
# [0,1] intensities with L=1, which is scale-equivalent to the 8-bit
# evaluation at L=255.
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the five loss terms; `lam` weights total variation."""

    alpha: float = 2.626
    beta: float = 3.892
    gamma: float = 0.309
    delta: float = 0.398
    lam: float = 0.597

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigurationError(f"loss weight {name} must be >= 0, got {value}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @staticmethod
    def from_dict(d: dict) -> "LossWeights":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return LossWeights(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class MaskedPair:
    """Prediction, ground truth, and the binary hair mask that pairs them.

    Prediction and ground truth are [B,C,H,W] in [0,1]; the mask is
    [B,1,H,W] with values in {0,1}.
    """

    def __init__(self, prediction: Tensor, ground_truth: Tensor, hair_mask: Tensor):
        if prediction.data.ndim != 4:
            raise ContractViolation(f"prediction must be 4-d, got {prediction.shape}")
        if prediction.shape != ground_truth.shape:
            raise ContractViolation(
                f"prediction {prediction.shape} != ground truth {ground_truth.shape}")
        b, _, h, w = prediction.shape
        if hair_mask.shape != (b, 1, h, w):
            raise ContractViolation(
                f"hair mask shape {hair_mask.shape} != ({b}, 1, {h}, {w})")
        m = hair_mask.data
        if not np.all((m == 0) | (m == 1)):
            raise ContractViolation("hair mask must be binary (values in {0,1})")
        self.prediction = prediction
        self.ground_truth = ground_truth
        self.hair_mask = hair_mask
        self._dilated: np.ndarray | None = None

    def dilated_mask(self) -> np.ndarray:
        """Hair mask dilated by one pixel (3x3 structuring element)."""
        if self._dilated is None:
            m = self.hair_mask.data.astype(bool)
            self._dilated = ndimage.binary_dilation(
                m, structure=np.ones((1, 1, 3, 3), dtype=bool))
        return self._dilated


def l1_foreground(pair: MaskedPair) -> Tensor:
    """Mean absolute error per hair pixel-channel; 0 for an empty mask."""
    channels = pair.prediction.shape[1]
    denom = max(1.0, channels * float(pair.hair_mask.data.sum()))
    masked = (pair.prediction - pair.ground_truth).abs() * pair.hair_mask
    return masked.sum() / denom


def l1_background(pair: MaskedPair) -> Tensor:
    """Mean absolute error per background pixel-channel."""
    channels = pair.prediction.shape[1]
    inv = Tensor(1.0 - pair.hair_mask.data)
    denom = max(1.0, channels * float(inv.data.sum()))
    masked = (pair.prediction - pair.ground_truth).abs() * inv
    return masked.sum() / denom


def l2_composed(pair: MaskedPair) -> Tensor:
    """Squared error restricted to hair pixels, normalized over all pixels."""
    d = pair.prediction - pair.ground_truth
    return (d * d * pair.hair_mask).sum() / float(pair.prediction.size)


def _gaussian_taps(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    t = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return t / t.sum()


def ssim_loss(pair: MaskedPair) -> Tensor:
    """1 - SSIM(prediction, ground truth) over the whole image.

    Uses the evaluation constants (11x11 Gaussian window, sigma 1.5,
    K1=0.01, K2=0.03) and averages over windows and channels.
    """
    h, w = pair.prediction.shape[2:]
    if min(h, w) < _SSIM_WINDOW:
        raise ConfigurationError(
            f"ssim_loss needs images of at least {_SSIM_WINDOW} px, got {h}x{w}")
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    taps = _gaussian_taps(_SSIM_WINDOW, _SSIM_SIGMA)
    x, y = pair.prediction, pair.ground_truth

    mu_x = separable_filter2d(x, taps)
    mu_y = separable_filter2d(y, taps)
    sxx = separable_filter2d(x * x, taps) - mu_x * mu_x
    syy = separable_filter2d(y * y, taps) - mu_y * mu_y
    sxy = separable_filter2d(x * y, taps) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return 1.0 - (num / den).mean()


def tv_loss(pair: MaskedPair) -> Tensor:
    """Anisotropic total variation of the prediction over the dilated hair
    region, normalized over all pixels.

    A forward difference contributes only when both of its endpoints lie
    inside the dilated region, so a prediction that is constant there
    scores exactly zero.
    """
    dil = pair.dilated_mask()
    p = pair.prediction
    mh = Tensor((dil[:, :, :, :-1] & dil[:, :, :, 1:]).astype(np.float64))
    mv = Tensor((dil[:, :, :-1, :] & dil[:, :, 1:, :]).astype(np.float64))
    dx = (p[:, :, :, 1:] - p[:, :, :, :-1]).abs() * mh
    dy = (p[:, :, 1:, :] - p[:, :, :-1, :]).abs() * mv
    return (dx.sum() + dy.sum()) / float(p.size)


_TERM_FNS = {
    "l1_foreground": l1_foreground,
    "l1_background": l1_background,
    "l2_composed": l2_composed,
    "ssim": ssim_loss,
    "tv": tv_loss,
}


def _weight_of(w: LossWeights, term: str) -> float:
    return {
        "l1_foreground": w.alpha,
        "l1_background": w.beta,
        "l2_composed": w.gamma,
        "ssim": w.delta,
        "tv": w.lam,
    }[term]


def reconstruction_loss(pair: MaskedPair, weights: LossWeights) -> Tensor:
    """Weighted sum of the five terms; terms with weight 0 are skipped."""
    total, _ = loss_breakdown(pair, weights)
    return total


def loss_breakdown(pair: MaskedPair, weights: LossWeights):
    """Total loss plus the raw per-term values (0.0 for skipped terms)."""
    total: Tensor | None = None
    terms: dict[str, float] = {}
    for name in TERM_NAMES:
        w = _weight_of(weights, name)
        if w == 0.0:
            terms[name] = 0.0
            continue
        value = _TERM_FNS[name](pair)
        terms[name] = value.item()
        contrib = w * value
        total = contrib if total is None else total + contrib
    if total is None:
        total = Tensor(0.0)
    return total, terms
