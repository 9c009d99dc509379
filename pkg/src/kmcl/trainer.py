"""Training loop: minibatches, composed loss, Adam, one-cycle LR and weight EMA."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, batches
from .encoder import EncoderConfig
from .grad import ModelConfig, ParamStore, backward, init_params, predict
from .losses import LossConfig
from .metrics import PredictionSet, mean_average_precision

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", "loss_total", "loss_rec", "loss_asl", "loss_kmcl", "lr", "train_mAP", "test_mAP")


class TrainingAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    base_lr: float = 2e-4
    weight_decay: float = 1e-4
    pct_start: float = 0.2
    div_start: float = 25.0
    div_final: float = 1e4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.9997
    ema_warmup: bool = True
    use_ema: bool = True
    seed: int = 0
    eval_every: int = 1
    loss: LossConfig = LossConfig()

    def __post_init__(self) -> None:
        checks = [
            ("epochs", self.epochs >= 0, ">= 0"),
            ("batch_size", self.batch_size >= 2, ">= 2"),
            ("base_lr", self.base_lr > 0, "> 0"),
            ("weight_decay", self.weight_decay >= 0, ">= 0"),
            ("pct_start", 0 < self.pct_start < 1, "in (0, 1)"),
            ("div_start", self.div_start >= 1, ">= 1"),
            ("div_final", self.div_final >= 1, ">= 1"),
            ("ema_decay", 0 <= self.ema_decay < 1, "in [0, 1)"),
            ("eval_every", self.eval_every >= 1, ">= 1"),
        ]
        for name, ok, rule in checks:
            if not ok:
                raise ValueError(f"TrainConfig.{name} must be {rule}, got {getattr(self, name)}")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "OptimizerState":
        return cls(np.zeros(params.size), np.zeros(params.size))


def adam_step(
    params: ParamStore,
    grads: np.ndarray,
    opt: OptimizerState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update with L2 weight decay folded into the gradient."""
    if not np.all(np.isfinite(grads)):
        bad = int(np.flatnonzero(~np.isfinite(grads))[0])
        raise FloatingPointError(f"non-finite gradient at {params.coordinate_name(bad)}")
    g = grads + weight_decay * params.data
    m = beta1 * opt.m + (1.0 - beta1) * g
    v = beta2 * opt.v + (1.0 - beta2) * g * g
    t = opt.step + 1
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(update)):
        bad = int(np.flatnonzero(~np.isfinite(update))[0])
        raise FloatingPointError(f"non-finite Adam update at {params.coordinate_name(bad)}")
    params.data -= update
    opt.m, opt.v, opt.step = m, v, t


def onecycle_lr(step: int, total_steps: int, base_lr: float, pct_start: float = 0.2,
                div_start: float = 25.0, div_final: float = 1e4) -> float:
    """Cosine warmup from ``base_lr/div_start`` to ``base_lr`` at ``pct_start * total_steps``,
    then cosine decay to ``base_lr/div_final`` at the last step.

    The peak moves earlier when ``pct_start * total_steps`` would leave no
    annealing steps.
    """
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    start, end = base_lr / div_start, base_lr / div_final
    last = total_steps - 1
    if last == 0:
        return start
    # keep at least one annealing step so the schedule always ends below its start
    peak = min(pct_start * total_steps, last - 1)

    def cos_interp(a: float, b: float, frac: float) -> float:
        return b + (a - b) * 0.5 * (1.0 + math.cos(math.pi * frac))

    if step <= peak:
        return cos_interp(start, base_lr, step / peak) if peak > 0 else base_lr
    return cos_interp(base_lr, end, (step - peak) / (last - peak))


def ema_update(ema: np.ndarray, live: np.ndarray, decay: float) -> np.ndarray:
    """``ema <- decay * ema + (1 - decay) * live``, in place."""
    ema *= decay
    ema += (1.0 - decay) * live
    return ema


def ema_decay_at(step: int, decay: float, warmup: bool) -> float:
    # step counts updates already applied; short runs would otherwise stay near init
    if not warmup:
        return decay
    return min(decay, (1.0 + step) / (10.0 + step))


def _map(params: ParamStore, model: ModelConfig, ds: Dataset) -> float:
    if len(ds) == 0:
        return float("nan")
    return mean_average_precision(PredictionSet(predict(params, model, ds.inputs), ds.labels))[0]


@dataclass
class TrainResult:
    params: ParamStore
    ema: ParamStore | None
    model: ModelConfig
    curves: list[dict[str, float]] = field(default_factory=list)

    @property
    def eval_params(self) -> ParamStore:
        return self.ema if self.ema is not None else self.params


def default_model(ds: Dataset, cfg: TrainConfig, encoder: EncoderConfig | None = None) -> ModelConfig:
    if encoder is None:
        encoder = EncoderConfig((ds.input_dim, 64, 64, 32))
    if encoder.input_dim != ds.input_dim:
        raise ValueError(f"encoder input width {encoder.input_dim} != dataset input dim {ds.input_dim}")
    return ModelConfig(ds.n_classes, encoder, anisotropic=cfg.loss.similarity.anisotropic)


def train(ds: Dataset, cfg: TrainConfig, model: ModelConfig | None = None) -> TrainResult:
    """Run the full optimisation on the ``train`` split and record per-epoch curves.

    Evaluation (``train_mAP``/``test_mAP``) uses the EMA weights when enabled.
    """
    train_ds, test_ds = ds.train(), ds.test()
    if len(train_ds) == 0:
        raise ValueError("dataset has no training rows")
    model = model or default_model(ds, cfg)
    if model.anisotropic != cfg.loss.similarity.anisotropic:
        raise ValueError(f"{cfg.loss.similarity.value} similarity needs anisotropic={cfg.loss.similarity.anisotropic}")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(model, rng)
    ema = params.copy() if cfg.use_ema else None
    result = TrainResult(params, ema, model)
    if cfg.epochs == 0:
        return result

    per_epoch = len(batches(train_ds, cfg.batch_size, cfg.seed, 0))
    total_steps = cfg.epochs * per_epoch
    opt = OptimizerState.for_params(params)
    step = 0
    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        lr = cfg.base_lr
        order = batches(train_ds, cfg.batch_size, cfg.seed, epoch)
        for b, rows in enumerate(order):
            x, y = train_ds.inputs[rows], train_ds.labels[rows]
            try:
                br, grad = backward(params, model, x, y, cfg.loss)
            except FloatingPointError as exc:
                raise TrainingAborted(f"epoch {epoch} batch {b}: {exc}") from exc
            if not math.isfinite(br.total):
                raise TrainingAborted(f"epoch {epoch} batch {b}: non-finite loss {br.total}")
            lr = onecycle_lr(step, total_steps, cfg.base_lr, cfg.pct_start, cfg.div_start, cfg.div_final)
            try:
                adam_step(params, grad, opt, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps)
            except FloatingPointError as exc:
                raise TrainingAborted(f"epoch {epoch} batch {b}: {exc}") from exc
            if ema is not None:
                ema_update(ema.data, params.data, ema_decay_at(step, cfg.ema_decay, cfg.ema_warmup))
            sums += (br.total, br.rec, br.asl, br.kmcl)
            step += 1
        means = sums / len(order)
        row = dict(zip(CURVE_COLUMNS, (epoch + 1, *means, lr, float("nan"), float("nan"))))
        if (epoch + 1) % cfg.eval_every == 0 or epoch + 1 == cfg.epochs:
            row["train_mAP"] = _map(result.eval_params, model, train_ds)
            row["test_mAP"] = _map(result.eval_params, model, test_ds)
        log.info("epoch %d loss %.5f test mAP %.4f", epoch + 1, row["loss_total"], row["test_mAP"])
        result.curves.append(row)
    return result
