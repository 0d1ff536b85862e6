"""Small configurable classifier: backbone + linear head, AdamW, checkpoints.

The backbone is two affine+ReLU layers for vector input, optionally preceded
by a two-stage 3x3 conv + max-pool block for image input. All parameters are
float64 and initialised with uniform fan-in scaling from the run seed, so a
(seed, config) pair pins the trained model bit-for-bit.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import tensor as T
from .container import read_container, write_container
from .exceptions import ShapeError, StateError
from .tensor import Tensor


def _uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Affine:
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.weight = Tensor(_uniform_init(rng, (in_dim, out_dim), in_dim), requires_grad=True)
        self.bias = Tensor(_uniform_init(rng, (out_dim,), in_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self):
        return [self.weight, self.bias]


class ReLU:
    def __call__(self, x: Tensor) -> Tensor:
        return T.relu(x)

    def parameters(self):
        return []


class Conv3x3:
    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        fan_in = 9 * in_channels
        self.kernel = Tensor(
            _uniform_init(rng, (3, 3, in_channels, out_channels), fan_in), requires_grad=True
        )
        self.bias = Tensor(_uniform_init(rng, (out_channels,), fan_in), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.kernel, self.bias)

    def parameters(self):
        return [self.kernel, self.bias]


class MaxPool:
    def __init__(self, window: int = 2):
        self.window = window

    def __call__(self, x: Tensor) -> Tensor:
        return T.maxpool2d(x, self.window)

    def parameters(self):
        return []


class Flatten:
    def __call__(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        return T.reshape(x, (n, -1))

    def parameters(self):
        return []


class Model:
    """Feature backbone composed with a linear head to ``num_classes`` logits."""

    def __init__(self, backbone, head: Affine, feature_dim: int, num_classes: int, config: dict):
        self.backbone = list(backbone)
        self.head = head
        self.feature_dim = feature_dim
        self.num_classes = num_classes
        self.config = dict(config)

    @classmethod
    def build(
        cls,
        input_shape: Sequence[int],
        num_classes: int,
        hidden: Sequence[int] = (64, 64),
        conv_channels: Sequence[int] = (),
        seed: int = 0,
    ) -> "Model":
        input_shape = tuple(int(v) for v in input_shape)
        hidden = tuple(int(v) for v in hidden)
        conv_channels = tuple(int(v) for v in conv_channels)
        rng = np.random.default_rng(seed)
        layers: list = []
        if conv_channels:
            if len(input_shape) != 3:
                raise ShapeError(f"conv backbone needs H,W,C input, got {input_shape}")
            h, w, c = input_shape
            for out_c in conv_channels:
                layers += [Conv3x3(c, out_c, rng), ReLU(), MaxPool(2)]
                if h % 2 or w % 2:
                    raise ShapeError(f"image sides must be divisible by 2 per pool stage, got {h}x{w}")
                h, w, c = h // 2, w // 2, out_c
            layers.append(Flatten())
            width = h * w * c
        else:
            if len(input_shape) != 1:
                raise ShapeError(f"dense backbone needs flat input, got {input_shape}")
            width = input_shape[0]
        for out_w in hidden:
            layers += [Affine(width, out_w, rng), ReLU()]
            width = out_w
        head = Affine(width, num_classes, rng)
        config = {
            "input_shape": list(input_shape),
            "num_classes": num_classes,
            "hidden": list(hidden),
            "conv_channels": list(conv_channels),
            "seed": int(seed),
        }
        return cls(layers, head, width, num_classes, config)

    # -- forward surfaces --------------------------------------------------

    def _check_batch(self, x) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        expected = tuple(self.config["input_shape"])
        if t.shape[1:] != expected:
            raise ShapeError(f"batch shape {t.shape[1:]} does not match model input {expected}")
        return t

    def features(self, x) -> Tensor:
        out = self._check_batch(x)
        for layer in self.backbone:
            out = layer(out)
        return out

    def forward(self, x) -> Tensor:
        return self.head(self.features(x))

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def predict(self, x) -> np.ndarray:
        with T.no_grad():
            logits = self.forward(x).data
        return logits.argmax(axis=1)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for layer in self.backbone:
            params += layer.parameters()
        params += self.head.parameters()
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def copy(self) -> "Model":
        clone = Model.build(
            self.config["input_shape"],
            self.config["num_classes"],
            hidden=self.config["hidden"],
            conv_channels=self.config["conv_channels"],
            seed=self.config["seed"],
        )
        for dst, src in zip(clone.parameters(), self.parameters()):
            dst.data = src.data.copy()
        return clone

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {f"param_{i:03d}": p.data for i, p in enumerate(self.parameters())}

    def save(self, path) -> None:
        write_container(path, {"kind": "model", "config": self.config}, self.param_arrays())

    @classmethod
    def load(cls, path) -> "Model":
        meta, arrays = read_container(path)
        if meta.get("kind") != "model":
            raise StateError(f"{path} is not a model checkpoint")
        cfg = meta["config"]
        model = cls.build(
            cfg["input_shape"],
            cfg["num_classes"],
            hidden=cfg["hidden"],
            conv_channels=cfg["conv_channels"],
            seed=cfg["seed"],
        )
        for i, p in enumerate(model.parameters()):
            p.data = arrays[f"param_{i:03d}"].copy()
        return model


class AdamW:
    """Adaptive-moment optimizer with decoupled weight decay."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        weight_decay: float = 0.0,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        if any(p.grad is None for p in self.params):
            raise StateError("optimizer step with missing gradients; run zero_grad + backward first")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator, shuffle: bool = True):
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_classifier(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int = 64,
    lr: float = 1e-3,
    weight_decay: float = 5e-4,
    seed: int = 0,
) -> list[float]:
    """Cross-entropy training with AdamW; returns the per-epoch mean loss."""
    rng = np.random.default_rng(seed)
    opt = AdamW(model.parameters(), lr=lr, weight_decay=weight_decay)
    losses = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in iterate_batches(len(X), batch_size, rng):
            opt.zero_grad()
            loss = T.cross_entropy(model.forward(X[idx]), y[idx])
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        losses.append(total / count)
    return losses
