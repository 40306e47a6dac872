"""UNet-style encoder/decoder with the skip connections removed."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ShapeMismatch
from .layers import BatchNorm, Conv1x1, Conv3x3, Layer, MaxPool2, ReLU, UpConv2
from .loss import PROB_CLAMP, loss_and_logit_grad, sigmoid


@dataclass(frozen=True)
class Architecture:
    """``channels`` lists the encoder widths, the last entry is the bottleneck.

    The reference layout is the classic UNet widths (64..1024) divided by 8.
    Each level is two 3x3 conv + batch-norm + ReLU blocks; levels are joined by
    2x2 max pooling on the way down and 2x2 transposed convolutions on the way
    up. There is no concatenation between encoder and decoder.
    """

    input_channels: int = 3
    input_size: int = 256
    channels: tuple[int, ...] = (8, 16, 32, 64, 128)
    output_channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) < 2:
            raise ValueError("need at least one level plus the bottleneck")
        if self.input_size % (2 ** self.levels):
            raise ValueError(f"input_size {self.input_size} not divisible by 2**{self.levels}")

    @property
    def levels(self) -> int:
        return len(self.channels) - 1

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        s = self.input_size // 2 ** self.levels
        return (self.channels[-1], s, s)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(**{**d, "channels": tuple(d["channels"])})


REFERENCE = Architecture()
TINY = Architecture(input_channels=3, input_size=8, channels=(4, 8), output_channels=3)


def _double_conv(prefix, cin, cout, rng, dtype, first_input_grad=True):
    return [
        (f"{prefix}.conv1", Conv3x3(cin, cout, rng, dtype, input_grad=first_input_grad)),
        (f"{prefix}.bn1", BatchNorm(cout, dtype)),
        (f"{prefix}.relu1", ReLU()),
        (f"{prefix}.conv2", Conv3x3(cout, cout, rng, dtype)),
        (f"{prefix}.bn2", BatchNorm(cout, dtype)),
        (f"{prefix}.relu2", ReLU()),
    ]


class UNetNoSkip:
    def __init__(self, arch: Architecture = REFERENCE, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        ch = arch.channels
        layers: list[tuple[str, Layer]] = []
        cin = arch.input_channels
        for i, c in enumerate(ch[:-1]):
            layers += _double_conv(f"enc{i}", cin, c, rng, self.dtype, first_input_grad=i > 0)
            layers.append((f"pool{i}", MaxPool2()))
            cin = c
        layers += _double_conv("bottleneck", cin, ch[-1], rng, self.dtype)
        self.n_encoder = len(layers)
        cin = ch[-1]
        for i, c in reversed(list(enumerate(ch[:-1]))):
            layers.append((f"up{i}", UpConv2(cin, c, rng, self.dtype)))
            layers += _double_conv(f"dec{i}", c, c, rng, self.dtype)
            cin = c
        layers.append(("head", Conv1x1(cin, arch.output_channels, rng, self.dtype)))
        self.layers = layers

    # -- parameter access --------------------------------------------------

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.params.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.layers for k, v in layer.grads.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers, in a fixed order."""
        out = {}
        for n, layer in self.layers:
            for k, v in layer.params.items():
                out[f"{n}.{k}"] = v
            for k, v in layer.buffers.items():
                out[f"{n}.{k}"] = v
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for n, layer in self.layers:
            for store in (layer.params, layer.buffers):
                for k in store:
                    arr = np.asarray(state[f"{n}.{k}"])
                    if arr.shape != store[k].shape:
                        raise ShapeMismatch(f"{n}.{k}: {arr.shape} vs {store[k].shape}")
                    store[k] = arr.astype(self.dtype).copy()

    def copy(self) -> "UNetNoSkip":
        other = UNetNoSkip.__new__(UNetNoSkip)
        other.arch, other.seed, other.dtype, other.n_encoder = self.arch, self.seed, self.dtype, self.n_encoder
        other.layers = []
        for n, layer in self.layers:
            clone = layer.__class__.__new__(layer.__class__)
            clone.__dict__.update(layer.__dict__)
            clone.params = {k: v.copy() for k, v in layer.params.items()}
            clone.buffers = {k: v.copy() for k, v in layer.buffers.items()}
            clone.grads = {}
            clone.clear_cache()
            other.layers.append((n, clone))
        return other

    def n_params(self) -> int:
        return sum(layer.n_params() for _, layer in self.layers)

    def summary(self) -> str:
        rows = [f"{'layer':<20}{'type':<12}{'params':>10}"]
        for n, layer in self.layers:
            rows.append(f"{n:<20}{type(layer).__name__:<12}{layer.n_params():>10,}")
        c, h, w = self.arch.bottleneck_shape
        rows.append(f"bottleneck: {c}x{h}x{w}")
        rows.append(f"total trainable parameters: {self.n_params():,}")
        return "\n".join(rows)

    # -- passes --------------------------------------------------------------

    def _check_input(self, batch: np.ndarray) -> np.ndarray:
        a = self.arch
        expect = (a.input_channels, a.input_size, a.input_size)
        if batch.ndim != 4 or tuple(batch.shape[1:]) != expect:
            raise ShapeMismatch(f"expected (B, {expect[0]}, {expect[1]}, {expect[2]}), got {batch.shape}")
        return np.ascontiguousarray(batch.transpose(0, 2, 3, 1), dtype=self.dtype)

    def _target(self, target: np.ndarray, n: int) -> np.ndarray:
        a = self.arch
        expect = (n, a.output_channels, a.input_size, a.input_size)
        if tuple(target.shape) != expect:
            raise ShapeMismatch(f"target shape {target.shape}, expected {expect}")
        return np.ascontiguousarray(target.transpose(0, 2, 3, 1), dtype=self.dtype)

    def _run(self, x: np.ndarray, train: bool, stop: int | None = None):
        bottleneck = None
        for i, (_, layer) in enumerate(self.layers[:stop]):
            x = layer.forward(x, train)
            if i == self.n_encoder - 1:
                bottleneck = x
        return x, bottleneck

    def forward(self, batch: np.ndarray, train: bool = False):
        """``(B, C, H, W)`` in [0, 1] -> ``(recon, bottleneck)``, both channels-first."""
        x = self._check_input(batch)
        logits, bott = self._run(x, train)
        recon = np.clip(sigmoid(logits), PROB_CLAMP, 1 - PROB_CLAMP)
        return recon.transpose(0, 3, 1, 2), bott.transpose(0, 3, 1, 2)

    def encode(self, batch: np.ndarray) -> np.ndarray:
        x = self._check_input(batch)
        _, bott = self._run(x, train=False, stop=self.n_encoder)
        return np.ascontiguousarray(bott.transpose(0, 3, 1, 2))

    def loss_and_grad(self, batch: np.ndarray, target: np.ndarray) -> float:
        """Training-mode forward and backward; gradients land in ``self.grads``."""
        x = self._check_input(batch)
        t = self._target(target, batch.shape[0])
        logits, _ = self._run(x, train=True)
        value, g = loss_and_logit_grad(logits, t)
        for _, layer in reversed(self.layers):
            g = layer.backward(g)
            if g is None:
                break
        return value

    def eval_loss(self, batch: np.ndarray, target: np.ndarray) -> float:
        x = self._check_input(batch)
        t = self._target(target, batch.shape[0])
        logits, _ = self._run(x, train=False)
        value, _ = loss_and_logit_grad(logits, t)
        return value


def forward(model: UNetNoSkip, batch: np.ndarray):
    return model.forward(batch, train=False)


def backward(model: UNetNoSkip, batch: np.ndarray, target: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the training loss for every trainable parameter."""
    model.loss_and_grad(batch, target)
    return {k: v.copy() for k, v in model.grads.items()}
