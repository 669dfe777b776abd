"""Two-convolution classifier: conv-relu-pool, conv-relu-pool, fc-relu, fc-softmax."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ShapeError
from . import layers

PARAM_NAMES = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b")
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Architecture:
    input_size: int = 31
    conv1_filters: int = 32
    conv2_filters: int = 16
    kernel: int = 3
    pool: int = 2
    pool_stride: int = 1
    hidden: int = 512
    n_classes: int = 2

    def shape_chain(self) -> list:
        """(name, shape) of every intermediate activation for one image."""
        k, p, s = self.kernel, self.pool, self.pool_stride
        chain, n = [], self.input_size
        n = n - k + 1
        chain.append(("conv1", (n, n, self.conv1_filters)))
        n = (n - p) // s + 1
        chain.append(("pool1", (n, n, self.conv1_filters)))
        n = n - k + 1
        chain.append(("conv2", (n, n, self.conv2_filters)))
        n = (n - p) // s + 1
        chain.append(("pool2", (n, n, self.conv2_filters)))
        chain.append(("flatten", (n * n * self.conv2_filters,)))
        chain.append(("fc1", (self.hidden,)))
        chain.append(("fc2", (self.n_classes,)))
        return chain

    def check(self) -> None:
        k, p, s = self.kernel, self.pool, self.pool_stride
        n = self.input_size
        for name in ("conv1", "pool1", "conv2", "pool2"):
            if name.startswith("conv"):
                n = n - k + 1
            elif n >= p:
                n = (n - p) // s + 1
            else:
                n = 0
            if n < 1:
                raise ShapeError(f"{self.input_size}x{self.input_size} input collapses at {name}")

    @property
    def flat_size(self) -> int:
        return self.shape_chain()[4][1][0]

    def param_shapes(self) -> dict:
        k = self.kernel
        return {
            "conv1_w": (self.conv1_filters, 1, k, k),
            "conv1_b": (self.conv1_filters,),
            "conv2_w": (self.conv2_filters, self.conv1_filters, k, k),
            "conv2_b": (self.conv2_filters,),
            "fc1_w": (self.flat_size, self.hidden),
            "fc1_b": (self.hidden,),
            "fc2_w": (self.hidden, self.n_classes),
            "fc2_b": (self.n_classes,),
        }


def _fan_in(shape) -> int:
    return int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]


@dataclass
class CnnModel:
    arch: Architecture
    params: dict
    init_seed: int = 0

    @classmethod
    def create(cls, arch: Architecture | None = None, seed: int = 0) -> "CnnModel":
        """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
        arch = arch or Architecture()
        arch.check()
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in arch.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                bound = np.sqrt(6.0 / _fan_in(shape))
                params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(arch=arch, params=params, init_seed=seed)

    @classmethod
    def zeros(cls, arch: Architecture | None = None) -> "CnnModel":
        arch = arch or Architecture()
        arch.check()
        return cls(arch=arch, params={k: np.zeros(s) for k, s in arch.param_shapes().items()})

    @classmethod
    def constant(cls, prob_positive: float, arch: Architecture | None = None) -> "CnnModel":
        """Input-independent model: every image gets P(class 1) = ``prob_positive``."""
        if not 0.0 < prob_positive < 1.0:
            raise ValueError("prob_positive must lie in (0, 1)")
        model = cls.zeros(arch)
        model.params["fc2_b"][1] = np.log(prob_positive / (1.0 - prob_positive))
        return model

    def copy(self) -> "CnnModel":
        return CnnModel(self.arch, {k: v.copy() for k, v in self.params.items()}, self.init_seed)

    def _prepare(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        n = self.arch.input_size
        if x.ndim != 3 or x.shape[1:] != (n, n):
            got = x.shape[1:] if x.ndim == 3 else x.shape
            raise ShapeError(f"conv1 expects {n}x{n} images, got {got}")
        return x[..., None]

    def forward_batch(self, images, keep_cache: bool = False):
        """Class probabilities for a stack of images, shape (N, n_classes)."""
        a, p = self.arch, self.params
        x = self._prepare(images)
        z1, cols1 = layers.conv2d_forward(x, p["conv1_w"], p["conv1_b"])
        h1 = np.maximum(z1, 0.0)
        q1, arg1 = layers.maxpool_forward(h1, a.pool, a.pool_stride)
        z2, cols2 = layers.conv2d_forward(q1, p["conv2_w"], p["conv2_b"])
        h2 = np.maximum(z2, 0.0)
        q2, arg2 = layers.maxpool_forward(h2, a.pool, a.pool_stride)
        flat = q2.reshape(len(x), -1)
        z3 = flat @ p["fc1_w"] + p["fc1_b"]
        h3 = np.maximum(z3, 0.0)
        logits = h3 @ p["fc2_w"] + p["fc2_b"]
        probs = layers.softmax(logits)
        if not keep_cache:
            return probs
        cache = dict(x=x, z1=z1, cols1=cols1, h1=h1, arg1=arg1, q1=q1, z2=z2, cols2=cols2,
                     h2=h2, arg2=arg2, q2=q2, flat=flat, z3=z3, h3=h3, logits=logits)
        return probs, cache

    def backward_batch(self, images, labels, with_probs: bool = False):
        """Mean cross-entropy over the batch and its gradient for every parameter."""
        a, p = self.arch, self.params
        labels = np.asarray(labels, dtype=int)
        probs, c = self.forward_batch(images, keep_cache=True)
        n = len(labels)
        loss_value = float(np.mean(-np.log(np.maximum(probs[np.arange(n), labels], PROB_FLOOR))))
        dlogits = probs.copy()
        dlogits[np.arange(n), labels] -= 1.0
        dlogits /= n
        g = {}
        g["fc2_w"] = c["h3"].T @ dlogits
        g["fc2_b"] = dlogits.sum(axis=0)
        dz3 = (dlogits @ p["fc2_w"].T) * (c["z3"] > 0)
        g["fc1_w"] = c["flat"].T @ dz3
        g["fc1_b"] = dz3.sum(axis=0)
        dq2 = (dz3 @ p["fc1_w"].T).reshape(c["q2"].shape)
        dh2 = layers.maxpool_backward(dq2, c["arg2"], c["h2"].shape, a.pool, a.pool_stride)
        dz2 = dh2 * (c["z2"] > 0)
        dq1, g["conv2_w"], g["conv2_b"] = layers.conv2d_backward(dz2, c["cols2"], p["conv2_w"])
        dh1 = layers.maxpool_backward(dq1, c["arg1"], c["h1"].shape, a.pool, a.pool_stride)
        dz1 = dh1 * (c["z1"] > 0)
        _, g["conv1_w"], g["conv1_b"] = layers.conv2d_backward(dz1, c["cols1"], p["conv1_w"],
                                                               need_dx=False)
        if with_probs:
            return loss_value, g, probs
        return loss_value, g

    def predict_image(self, image) -> tuple:
        probs = self.forward_batch(image)[0]
        label = int(np.argmax(probs))
        return label, float(probs[label])


def forward(model: CnnModel, image) -> np.ndarray:
    """Class probabilities for one image."""
    return model.forward_batch(image)[0]


def intermediate_shapes(model: CnnModel, image) -> list:
    """Observed activation shapes for one image, in layer order."""
    _, c = model.forward_batch(image, keep_cache=True)
    return [c["z1"].shape[1:], c["q1"].shape[1:], c["z2"].shape[1:], c["q2"].shape[1:],
            c["flat"].shape[1:], c["h3"].shape[1:], c["logits"].shape[1:]]


def loss(probs, label: int) -> float:
    """Cross-entropy with the probability floored at 1e-12."""
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def backward(model: CnnModel, image, label: int) -> dict:
    """Gradient of the single-image loss with respect to every parameter."""
    return model.backward_batch(np.asarray(image)[None] if np.ndim(image) == 2 else image,
                                [label])[1]


def predict(model: CnnModel, image) -> tuple:
    """(label, confidence); equal probabilities resolve to label 0."""
    return model.predict_image(image)
