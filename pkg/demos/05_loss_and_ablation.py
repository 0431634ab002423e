"""Anatomy of the five-term reconstruction loss and the ablation toggles.

Evaluates each term on a synthetic prediction/target pair, demonstrates
that zeroing a weight removes the term's gradient exactly, and lists the
ablation toggles the trainer understands.  (A full ablation training run
is `hairbench ablate --manifest ... --out ... --toggles drop-l1fg,no-skip`;
it trains one model per variant, so expect minutes per toggle.)
"""

import numpy as np

from hairbench import hairsim, image_io, pipeline
from hairbench.engine import Tensor
from hairbench.loss import (LossWeights, MaskedPair, loss_breakdown,
                            reconstruction_loss)

rng = np.random.default_rng(4)

clean = image_io.quantize(rng.uniform(0.3, 0.8, (32, 32, 3)))
sample = hairsim.generate_strands(clean, hairsim.StrandParams(seed=9))

# A deliberately imperfect "prediction": the clean image plus a little
# blur-like error inside the hair region.
pred = sample.clean.copy()
pred[sample.mask] = np.clip(pred[sample.mask] + 0.15, 0, 1)

pair = MaskedPair(
    Tensor(image_io.to_chw(pred)[None]),
    Tensor(image_io.to_chw(sample.clean)[None]),
    Tensor(sample.mask[None, None].astype(float)),
)

weights = LossWeights()  # alpha..lambda defaults
total, terms = loss_breakdown(pair, weights)
print("per-term values (raw, unweighted):")
for name, value in terms.items():
    print(f"  {name:14s} {value:.6f}")
print(f"weighted total: {total.item():.6f}")

# Toggling a weight to zero removes that term's gradient contribution
# exactly, which is what the loss-term ablations rely on.
def grad_norm(w):
    p = Tensor(image_io.to_chw(pred)[None], requires_grad=True)
    mp = MaskedPair(p, Tensor(image_io.to_chw(sample.clean)[None]),
                    Tensor(sample.mask[None, None].astype(float)))
    reconstruction_loss(mp, w).backward()
    return p.grad

full = grad_norm(weights)
no_fg_plus_only_fg = grad_norm(LossWeights(alpha=0.0)) + \
    grad_norm(LossWeights(beta=0, gamma=0, delta=0, lam=0))
print("\ngradient decomposes exactly across terms:",
      bool(np.allclose(full, no_fg_plus_only_fg, atol=1e-12)))

print("\nablation toggles known to the trainer:")
for toggle in pipeline.ABLATION_TOGGLES:
    print(f"  {toggle}")
