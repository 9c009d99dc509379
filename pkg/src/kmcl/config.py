"""Run configuration: INI-style ``key = value`` text with section headers.

Sections and keys (defaults in :data:`DEFAULT_TEXT`)::

    [run]      seed
    [data]     n_classes input_dim marginals correlation noise class_noise
               prototype_scale n_train n_test
    [encoder]  hidden feature_dim identity
    [kmm]      elu_alpha var_epsilon var_offset
    [loss]     lambda_asl lambda_kmcl gamma_plus gamma_minus margin tau pi_min similarity
    [train]    epochs batch_size base_lr weight_decay pct_start div_start div_final
               beta1 beta2 adam_eps ema_decay ema_warmup use_ema eval_every
    [verify]   draws_1d draws_2d quadrature_points grad_h grad_classes grad_batch grad_hidden
    [paths]    features labels test_features test_labels checkpoint

Lists are comma separated; ``correlation`` rows are separated by ``;``.
Empty ``marginals``/``correlation``/``class_noise`` select the generator
defaults. The ``[run] seed`` seeds both data generation and training.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .data import SynthConfig
from .encoder import EncoderConfig
from .kmm import ELU_ALPHA, VAR_EPS, VAR_OFFSET
from .losses import LossConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderSettings:
    hidden: tuple[int, ...] = (64, 64)
    feature_dim: int = 32
    identity: bool = False

    def build(self, input_dim: int) -> EncoderConfig:
        if self.identity:
            if self.feature_dim != input_dim:
                raise ConfigError(
                    f"encoder.feature_dim: identity encoder needs feature_dim == input width {input_dim}"
                )
            return EncoderConfig((input_dim,), identity=True)
        return EncoderConfig((input_dim, *self.hidden, self.feature_dim))


@dataclass(frozen=True)
class VerifySettings:
    draws_1d: int = 50
    draws_2d: int = 20
    quadrature_points: int = 0  # 0: oracle default per dimension
    grad_h: float = 1e-5
    grad_classes: int = 3
    grad_batch: int = 3
    grad_hidden: int = 4


@dataclass(frozen=True)
class PathSettings:
    features: str = ""
    labels: str = ""
    test_features: str = ""
    test_labels: str = ""
    checkpoint: str = ""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: SynthConfig = field(default_factory=SynthConfig)
    encoder: EncoderSettings = EncoderSettings()
    loss: LossConfig = LossConfig()
    train: TrainConfig = TrainConfig()
    verify: VerifySettings = VerifySettings()
    paths: PathSettings = PathSettings()

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed, data=replace(self.data, seed=seed), train=replace(self.train, seed=seed))

    def to_text(self) -> str:
        return _to_text(self)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):  # enums
        return str(value.value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(", ".join(_fmt(v) for v in row) for row in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


_DATA_KEYS = ("n_classes", "input_dim", "marginals", "correlation", "noise", "class_noise",
              "prototype_scale", "n_train", "n_test")
_LOSS_KEYS = tuple(f.name for f in fields(LossConfig))
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("seed", "loss"))


def _to_text(cfg: RunConfig) -> str:
    sections = {
        "run": {"seed": cfg.seed},
        "data": {k: getattr(cfg.data, k) for k in _DATA_KEYS},
        "encoder": {f.name: getattr(cfg.encoder, f.name) for f in fields(EncoderSettings)},
        "kmm": {"elu_alpha": ELU_ALPHA, "var_epsilon": VAR_EPS, "var_offset": VAR_OFFSET},
        "loss": {k: getattr(cfg.loss, k) for k in _LOSS_KEYS},
        "train": {k: getattr(cfg.train, k) for k in _TRAIN_KEYS},
        "verify": {f.name: getattr(cfg.verify, f.name) for f in fields(VerifySettings)},
        "paths": {f.name: getattr(cfg.paths, f.name) for f in fields(PathSettings)},
    }
    out = []
    for name, items in sections.items():
        out.append(f"[{name}]")
        out.extend(f"{k} = {_fmt(v)}" for k, v in items.items())
        out.append("")
    return "\n".join(out)


DEFAULT_TEXT = RunConfig().to_text()


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_value(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            return _parse_bool(key, raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "matrix":
            return tuple(tuple(float(v) for v in row.split(",")) for row in raw.split(";") if row.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


_KINDS = {
    "run": {"seed": int},
    "data": {"n_classes": int, "input_dim": int, "marginals": "floats", "correlation": "matrix", "noise": float,
             "class_noise": "floats", "prototype_scale": float, "n_train": int, "n_test": int},
    "encoder": {"hidden": "ints", "feature_dim": int, "identity": bool},
    "kmm": {"elu_alpha": float, "var_epsilon": float, "var_offset": float},
    "loss": {"lambda_asl": float, "lambda_kmcl": float, "gamma_plus": float, "gamma_minus": float,
             "margin": float, "tau": float, "pi_min": float, "similarity": str},
    "train": {"epochs": int, "batch_size": int, "base_lr": float, "weight_decay": float, "pct_start": float,
              "div_start": float, "div_final": float, "beta1": float, "beta2": float, "adam_eps": float,
              "ema_decay": float, "ema_warmup": bool, "use_ema": bool, "eval_every": int},
    "verify": {"draws_1d": int, "draws_2d": int, "quadrature_points": int, "grad_h": float,
               "grad_classes": int, "grad_batch": int, "grad_hidden": int},
    "paths": {f.name: str for f in fields(PathSettings)},
}


def _build(section: str, ctor, values: dict):
    try:
        return ctor(**values)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def from_text(text: str) -> RunConfig:
    """Parse and validate; unknown sections/keys and invalid values raise :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}") from None
    values: dict[str, dict] = {s: {} for s in _KINDS}
    for section in parser.sections():
        if section not in _KINDS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KINDS[section]:
                raise ConfigError(f"{section}.{key}: unknown key")
            values[section][key] = _parse_value(f"{section}.{key}", raw, _KINDS[section][key])

    fixed = {"elu_alpha": ELU_ALPHA, "var_epsilon": VAR_EPS, "var_offset": VAR_OFFSET}
    for key, value in values["kmm"].items():
        if value != fixed[key]:
            raise ConfigError(f"kmm.{key}: fixed at {fixed[key]!r} in this build, got {value!r}")

    seed = values["run"].get("seed", 0)
    if seed < 0:
        raise ConfigError(f"run.seed: must be >= 0, got {seed}")
    data = _build("data", SynthConfig, {**values["data"], "seed": seed})
    encoder = _build("encoder", EncoderSettings, values["encoder"])
    if any(h < 1 for h in encoder.hidden) or encoder.feature_dim < 1:
        raise ConfigError("encoder.hidden/feature_dim: widths must be >= 1")
    loss = _build("loss", LossConfig, values["loss"])
    train = _build("train", TrainConfig, {**values["train"], "seed": seed, "loss": loss})
    verify = _build("verify", VerifySettings, values["verify"])
    if verify.draws_1d < 0 or verify.draws_2d < 0:
        raise ConfigError("verify.draws_1d/draws_2d: must be >= 0")
    if verify.quadrature_points != 0 and verify.quadrature_points < 200:
        raise ConfigError(f"verify.quadrature_points: must be 0 (auto) or >= 200, got {verify.quadrature_points}")
    if not 1e-7 <= verify.grad_h <= 1e-3:
        raise ConfigError(f"verify.grad_h: must be in [1e-7, 1e-3], got {verify.grad_h}")
    if min(verify.grad_classes, verify.grad_hidden) < 1 or verify.grad_batch < 2:
        raise ConfigError("verify.grad_classes/grad_hidden must be >= 1 and grad_batch >= 2")
    paths = _build("paths", PathSettings, values["paths"])
    return RunConfig(seed, data, encoder, loss, train, verify, paths)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return from_text(fh.read())
