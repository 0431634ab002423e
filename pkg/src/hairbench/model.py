"""The hair-removal encoder-decoder network.

Two encoder blocks (3x3 conv then a learned stride-2 downsampling conv,
or a 2x2 max-pool in the pooling variant) and two decoder blocks (stride-2
3x3 transposed conv, skip concatenation with the encoder feature map of
equal resolution, 3x3 conv), with a final 3x3 conv down to 3 channels.
Hidden activations are rectifiers; the output is clamped to [0,1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterator

import numpy as np

from . import engine
from .engine import Tensor, conv2d, deconv2d, concat_channels, maxpool2d
from .errors import ConfigurationError, ContractViolation

STRIDED_CONV = "strided-conv"
MAX_POOL = "max-pool"

_HIDDEN_ACTS = ("relu", "identity")
_OUTPUT_ACTS = ("clamp01", "identity")


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 64
    base_filters: tuple[int, int] = (128, 256)
    skip_connections: bool = True
    downsampling: str = STRIDED_CONV
    hidden_activation: str = "relu"
    output_activation: str = "clamp01"

    def __post_init__(self):
        if self.input_size < 16 or self.input_size % 4:
            raise ConfigurationError(
                f"input_size must be >= 16 and divisible by 4, got {self.input_size}")
        b1, b2 = self.base_filters
        if b1 < 1 or b2 < 1:
            raise ConfigurationError(f"filter counts must be >= 1, got {self.base_filters}")
        if self.downsampling not in (STRIDED_CONV, MAX_POOL):
            raise ConfigurationError(f"unknown downsampling '{self.downsampling}'")
        if self.hidden_activation not in _HIDDEN_ACTS:
            raise ConfigurationError(f"unknown hidden activation '{self.hidden_activation}'")
        if self.output_activation not in _OUTPUT_ACTS:
            raise ConfigurationError(f"unknown output activation '{self.output_activation}'")

    @staticmethod
    def desk(**overrides) -> "ModelConfig":
        """CPU-friendly preset: 64x64 inputs, filter counts (32, 64)."""
        kw = dict(input_size=64, base_filters=(32, 64))
        kw.update(overrides)
        return ModelConfig(**kw)

    @staticmethod
    def full(**overrides) -> "ModelConfig":
        """Published-scale preset: 512x512 inputs, filter counts (128, 256)."""
        kw = dict(input_size=512, base_filters=(128, 256))
        kw.update(overrides)
        return ModelConfig(**kw)

    def to_json(self) -> str:
        d = asdict(self)
        d["base_filters"] = list(self.base_filters)
        return json.dumps(d, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ModelConfig":
        d = json.loads(text)
        d["base_filters"] = tuple(d["base_filters"])
        return ModelConfig(**d)


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class HairRemovalNet:
    """Ordered parameter set plus the forward pass of the architecture."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    # ---- parameter access -------------------------------------------------

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ContractViolation(f"checkpoint missing parameter '{name}'")
            if tuple(arrays[name].shape) != p.shape:
                raise ContractViolation(
                    f"checkpoint shape {arrays[name].shape} != {p.shape} for '{name}'")
            p.data = np.asarray(arrays[name], dtype=engine.active_dtype())

    # ---- forward ------------------------------------------------------------

    def _hidden(self, t: Tensor) -> Tensor:
        if self.config.hidden_activation == "relu":
            return t.relu()
        return t

    def _down(self, t: Tensor, tag: str) -> Tensor:
        if self.config.downsampling == STRIDED_CONV:
            p = self.params
            return self._hidden(conv2d(t, p[f"{tag}.weight"], p[f"{tag}.bias"], stride=2))
        return maxpool2d(t)

    def forward(self, batch: Tensor | np.ndarray, record: dict | None = None) -> Tensor:
        """Map [B,3,S,S] images in [0,1] to restored images of equal shape."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        s = self.config.input_size
        if x.data.ndim != 4 or x.shape[1] != 3 or x.shape[2] != s or x.shape[3] != s:
            raise ContractViolation(
                f"forward: expected [B,3,{s},{s}], got {x.shape}")
        p = self.params
        skips = self.config.skip_connections

        e1 = self._hidden(conv2d(x, p["enc1_conv.weight"], p["enc1_conv.bias"]))
        d1 = self._down(e1, "enc1_down")
        e2 = self._hidden(conv2d(d1, p["enc2_conv.weight"], p["enc2_conv.bias"]))
        d2 = self._down(e2, "enc2_down")

        u1 = self._hidden(deconv2d(d2, p["dec1_deconv.weight"], p["dec1_deconv.bias"]))
        m1 = concat_channels(u1, e2) if skips else u1
        c1 = self._hidden(conv2d(m1, p["dec1_conv.weight"], p["dec1_conv.bias"]))

        u2 = self._hidden(deconv2d(c1, p["dec2_deconv.weight"], p["dec2_deconv.bias"]))
        m2 = concat_channels(u2, e1) if skips else u2
        c2 = self._hidden(conv2d(m2, p["dec2_conv.weight"], p["dec2_conv.bias"]))

        y = conv2d(c2, p["out_conv.weight"], p["out_conv.bias"])
        if self.config.output_activation == "clamp01":
            y = y.clamp(0.0, 1.0)

        if record is not None:
            record.update(input=x.shape, enc1=e1.shape, down1=d1.shape, enc2=e2.shape,
                          down2=d2.shape, up1=u1.shape, merge1=m1.shape, dec1=c1.shape,
                          up2=u2.shape, merge2=m2.shape, dec2=c2.shape, output=y.shape)
        return y

    __call__ = forward

    def shape_trace(self, batch_size: int = 1) -> dict[str, tuple[int, ...]]:
        """Run a zero batch through the net and report every stage's shape."""
        rec: dict = {}
        zeros = np.zeros((batch_size, 3, self.config.input_size, self.config.input_size))
        self.forward(Tensor(zeros), record=rec)
        return rec


def build(config: ModelConfig, seed: int) -> HairRemovalNet:
    """Initialize the network deterministically for a given seed.

    Weights use uniform He-style fan-in scaling; biases start at zero.
    """
    rng = np.random.default_rng(seed)
    b1, b2 = config.base_filters
    strided = config.downsampling == STRIDED_CONV
    skips = config.skip_connections

    # (name, out_channels, in_channels) in forward order; None rows are
    # omitted in the pooling variant.
    layout = [
        ("enc1_conv", b1, 3),
        ("enc1_down", b1, b1) if strided else None,
        ("enc2_conv", b2, b1),
        ("enc2_down", b2, b2) if strided else None,
        ("dec1_deconv", b2, b2),
        ("dec1_conv", b1, 2 * b2 if skips else b2),
        ("dec2_deconv", b1, b1),
        ("dec2_conv", b1, 2 * b1 if skips else b1),
        ("out_conv", 3, b1),
    ]
    params: dict[str, Tensor] = {}
    for row in layout:
        if row is None:
            continue
        name, out_ch, in_ch = row
        fan_in = in_ch * 9
        if name.endswith("deconv"):
            shape = (in_ch, out_ch, 3, 3)  # transposed-conv layout
        else:
            shape = (out_ch, in_ch, 3, 3)
        params[f"{name}.weight"] = Tensor(_he_uniform(rng, shape, fan_in),
                                          requires_grad=True, name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(np.zeros(out_ch), requires_grad=True,
                                        name=f"{name}.bias")
    return HairRemovalNet(config, params)


def save_model(net: HairRemovalNet, checkpoint_path, config_path=None) -> None:
    engine.save_checkpoint(checkpoint_path, net.state_arrays())
    if config_path is not None:
        with open(config_path, "w", encoding="utf-8") as f:
            f.write(net.config.to_json())


def load_model(checkpoint_path, config_path) -> HairRemovalNet:
    with open(config_path, "r", encoding="utf-8") as f:
        config = ModelConfig.from_json(f.read())
    net = build(config, seed=0)
    net.load_state(engine.load_checkpoint(checkpoint_path))
    return net
