"""Flat parameter storage, exact backpropagation and finite-difference checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .encoder import EncoderConfig, encode_backward, encode_forward, init_encoder
from .kmm import (
    VAR_EPS,
    KernelParams,
    KmmWeights,
    elu_grad,
    init_kmm_weights,
    kmm_activate,
    kmm_forward,
    kmm_shapes,
)
from .losses import BatchView, LossBreakdown, LossConfig, total_loss_with_grad


@dataclass(frozen=True)
class ModelConfig:
    n_classes: int
    encoder: EncoderConfig = EncoderConfig()
    anisotropic: bool = False

    def __post_init__(self) -> None:
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")

    @property
    def feature_dim(self) -> int:
        return self.encoder.feature_dim

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        items = [(f"encoder.{k}", v) for k, v in self.encoder.shapes().items()]
        items += [(f"kmm.{k}", v) for k, v in kmm_shapes(self.n_classes, self.feature_dim, self.anisotropic).items()]
        return items


class ParamStore:
    """All trainable parameters in one float64 buffer plus a matching gradient buffer.

    ``layout`` maps each name to ``(offset, shape)``; :meth:`view` returns a
    writable view into the buffer.
    """

    def __init__(self, layout: list[tuple[str, tuple[int, ...]]], data: np.ndarray | None = None):
        self.layout: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in layout:
            if name in self.layout:
                raise ValueError(f"duplicate parameter name {name!r}")
            self.layout[name] = (offset, tuple(shape))
            offset += math.prod(shape)
        self.size = offset
        if data is None:
            data = np.zeros(offset)
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (offset,):
            raise ValueError(f"buffer has shape {data.shape}, layout needs ({offset},)")
        self.data = data
        self.grad = np.zeros(offset)

    def _slice(self, buf: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.layout[name]
        return buf[offset:offset + math.prod(shape)].reshape(shape)

    def view(self, name: str) -> np.ndarray:
        return self._slice(self.data, name)

    def grad_view(self, name: str) -> np.ndarray:
        return self._slice(self.grad, name)

    def zero_grad(self) -> None:
        self.grad[:] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore([(k, s) for k, (_, s) in self.layout.items()], self.data.copy())
        out.grad[:] = self.grad
        return out

    def names(self) -> list[str]:
        return list(self.layout)

    def coordinate_name(self, index: int) -> str:
        for name, (offset, shape) in self.layout.items():
            n = math.prod(shape)
            if offset <= index < offset + n:
                idx = np.unravel_index(index - offset, shape)
                return f"{name}[{','.join(str(int(i)) for i in idx)}]"
        raise IndexError(index)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    store = ParamStore(cfg.layout())
    for i, (W, b) in enumerate(init_encoder(cfg.encoder, rng)):
        store.view(f"encoder.W{i}")[...] = W
        store.view(f"encoder.b{i}")[...] = b
    kmm = init_kmm_weights(cfg.n_classes, cfg.feature_dim, rng, cfg.anisotropic)
    for name in ("W_pi", "b_pi", "W_mu", "b_mu", "W_var", "b_var"):
        store.view(f"kmm.{name}")[...] = getattr(kmm, name)
    return store


def encoder_layers(params: ParamStore, cfg: ModelConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(params.view(f"encoder.W{i}"), params.view(f"encoder.b{i}")) for i in range(cfg.encoder.n_layers)]


def kmm_weights(params: ParamStore) -> KmmWeights:
    return KmmWeights(**{k: params.view(f"kmm.{k}") for k in ("W_pi", "b_pi", "W_mu", "b_mu", "W_var", "b_var")})


@dataclass
class ForwardCache:
    features: np.ndarray
    encoder_cache: list
    a_pi: np.ndarray
    a_mu: np.ndarray
    a_var: np.ndarray
    params: KernelParams


def forward(params: ParamStore, cfg: ModelConfig, x: np.ndarray) -> ForwardCache:
    f, enc_cache = encode_forward(x, encoder_layers(params, cfg), cfg.encoder)
    a_pi, a_mu, a_var = kmm_forward(f, kmm_weights(params))
    return ForwardCache(f, enc_cache, a_pi, a_mu, a_var, kmm_activate(a_pi, a_mu, a_var, VAR_EPS))


def predict(params: ParamStore, cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    """Class probabilities ``pi``, shape ``(N, K)``."""
    return forward(params, cfg, x).params.pi


def loss(params: ParamStore, cfg: ModelConfig, x, y, loss_cfg: LossConfig, term: str = "total") -> float:
    cache = forward(params, cfg, x)
    br, _ = total_loss_with_grad(BatchView(cache.features, cache.params, y), loss_cfg, term)
    return {"total": br.total, "rec": br.rec, "asl": br.asl, "kmcl": br.kmcl}[term]


def backward(
    params: ParamStore, cfg: ModelConfig, x, y, loss_cfg: LossConfig, term: str = "total"
) -> tuple[LossBreakdown, np.ndarray]:
    """Loss breakdown and the exact gradient of ``term``, written into ``params.grad``."""
    cache = forward(params, cfg, x)
    batch = BatchView(cache.features, cache.params, y)
    breakdown, g = total_loss_with_grad(batch, loss_cfg, term)
    kp = cache.params
    params.zero_grad()

    # activations: sigmoid, identity, ELU + const
    d_api = g.pi * kp.pi * (1.0 - kp.pi)
    d_amu = g.mu
    d_avar = g.var * elu_grad(cache.a_var)

    f = cache.features
    w = kmm_weights(params)
    params.grad_view("kmm.W_pi")[...] = d_api.T @ f
    params.grad_view("kmm.b_pi")[...] = d_api.sum(axis=0)
    d_f = g.features + d_api @ w.W_pi
    if w.anisotropic:
        params.grad_view("kmm.W_mu")[...] = np.einsum("nkj,nl->kjl", d_amu, f)
        params.grad_view("kmm.b_mu")[...] = d_amu.sum(axis=0)
        params.grad_view("kmm.W_var")[...] = np.einsum("nkj,nl->kjl", d_avar, f)
        params.grad_view("kmm.b_var")[...] = d_avar.sum(axis=0)
        d_f += np.einsum("nkj,kjl->nl", d_amu, w.W_mu) + np.einsum("nkj,kjl->nl", d_avar, w.W_var)
    else:
        params.grad_view("kmm.W_mu")[...] = d_amu.T @ f
        params.grad_view("kmm.b_mu")[...] = d_amu.sum(axis=0)
        params.grad_view("kmm.W_var")[...] = d_avar.T @ f
        params.grad_view("kmm.b_var")[...] = d_avar.sum(axis=0)
        d_f += d_amu @ w.W_mu + d_avar @ w.W_var

    layers = encoder_layers(params, cfg)
    for i, (gW, gb) in enumerate(encode_backward(d_f, cache.encoder_cache, layers)):
        params.grad_view(f"encoder.W{i}")[...] = gW
        params.grad_view(f"encoder.b{i}")[...] = gb

    bad = ~np.isfinite(params.grad)
    if bad.any():
        where = params.coordinate_name(int(np.flatnonzero(bad)[0]))
        raise FloatingPointError(f"non-finite gradient at {where}")
    return breakdown, params.grad.copy()


@dataclass
class FiniteDiffResult:
    max_rel_err: float
    worst_index: int
    worst_name: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    names: list[str] = field(default_factory=list)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def central_differences(fn: Callable[[np.ndarray], float], theta: np.ndarray, h: float) -> np.ndarray:
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite-difference step must be in [1e-7, 1e-3], got {h}")
    theta = np.array(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        keep = theta[i]
        theta[i] = keep + h
        up = fn(theta)
        theta[i] = keep - h
        down = fn(theta)
        theta[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return out


def finite_diff_check(
    params: ParamStore,
    cfg: ModelConfig,
    x,
    y,
    loss_cfg: LossConfig,
    h: float = 1e-5,
    analytic: np.ndarray | None = None,
    term: str = "total",
) -> FiniteDiffResult:
    """Compare ``analytic`` (default: :func:`backward`) with central differences."""
    if analytic is None:
        _, analytic = backward(params, cfg, x, y, loss_cfg, term)
    probe = params.copy()

    def fn(theta: np.ndarray) -> float:
        probe.data[:] = theta
        return loss(probe, cfg, x, y, loss_cfg, term)

    numeric = central_differences(fn, params.data, h)
    rel = relative_error(analytic, numeric)
    worst = int(np.argmax(rel))
    names = [params.coordinate_name(i) for i in range(params.size)]
    return FiniteDiffResult(float(rel[worst]), worst, names[worst], analytic, numeric, rel, names)
