"""Small ReLU multilayer perceptron used as the feature encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EncoderConfig:
    """``widths`` runs input -> hidden... -> feature dim M.

    With ``identity`` set the encoder passes inputs through unchanged and
    ``widths`` must be ``(M,)``.
    """

    widths: tuple[int, ...] = (32, 64, 64, 32)
    identity: bool = False
    activation: str = "relu"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.widths)
        object.__setattr__(self, "widths", widths)
        if any(w < 1 for w in widths):
            raise ValueError(f"encoder widths must be positive, got {widths}")
        if self.identity:
            if len(widths) != 1:
                raise ValueError("identity encoder takes a single width (the feature dim)")
        elif len(widths) < 2:
            raise ValueError("encoder needs at least one layer (two widths)")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return 0 if self.identity else len(self.widths) - 1

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out: dict[str, tuple[int, ...]] = {}
        for i in range(self.n_layers):
            out[f"W{i}"] = (self.widths[i + 1], self.widths[i])
            out[f"b{i}"] = (self.widths[i + 1],)
        return out


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    for i in range(cfg.n_layers):
        fan_in, fan_out = cfg.widths[i], cfg.widths[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((W, b))
    return layers


def encode_forward(x: np.ndarray, layers, cfg: EncoderConfig) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return features and the per-layer inputs/pre-activations needed by backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cfg.input_dim:
        raise ValueError(f"input has {x.shape[-1]} columns, encoder expects {cfg.input_dim}")
    if cfg.identity:
        return x, []
    cache = []
    h = x
    for W, b in layers:
        z = h @ W.T + b
        cache.append((h, z))
        h = np.maximum(z, 0.0)
    return h, cache


def encode(x: np.ndarray, layers, cfg: EncoderConfig) -> np.ndarray:
    return encode_forward(x, layers, cfg)[0]


def encode_backward(grad_f: np.ndarray, cache, layers) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients for each ``(W, b)`` given ``dL/df`` for a batch ``(N, M)``."""
    grads = [None] * len(layers)
    g = grad_f
    for i in range(len(layers) - 1, -1, -1):
        h, z = cache[i]
        g = g * (z > 0)
        grads[i] = (g.T @ h, g.sum(axis=0))
        if i:
            g = g @ layers[i][0]
    return grads
