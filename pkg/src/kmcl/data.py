"""Synthetic correlated multilabel data, CSV tables and minibatching."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np


class DataFormatError(ValueError):
    pass


def _default_correlation(n_classes: int) -> tuple[tuple[float, ...], ...]:
    # neighbouring class pairs co-occur: (0,1), (2,3), ...
    c = np.eye(n_classes)
    for k in range(0, n_classes - 1, 2):
        c[k, k + 1] = c[k + 1, k] = 0.6
    return tuple(tuple(float(v) for v in row) for row in c)


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    Labels come from a thresholded Gaussian copula with the given marginals
    and latent correlation. Inputs are the sum of the active class prototypes
    plus isotropic noise ``noise`` and, per active class ``k``, extra noise
    with scale ``class_noise[k]`` (heteroscedastic classes).
    """

    n_classes: int = 8
    input_dim: int = 32
    marginals: tuple[float, ...] = ()
    correlation: tuple[tuple[float, ...], ...] = ()
    noise: float = 1.0
    class_noise: tuple[float, ...] = ()
    prototype_scale: float = 2.0
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        K = self.n_classes
        if K < 1 or self.input_dim < 1:
            raise ValueError("SynthConfig.n_classes and input_dim must be >= 1")
        marg = tuple(float(m) for m in self.marginals) or (0.3,) * K
        if len(marg) == 1:
            marg = marg * K
        if len(marg) != K or not all(0 < m < 1 for m in marg):
            raise ValueError(f"SynthConfig.marginals must be {K} values in (0, 1)")
        object.__setattr__(self, "marginals", marg)
        corr = self.correlation or _default_correlation(K)
        corr = tuple(tuple(float(v) for v in row) for row in corr)
        c = np.array(corr)
        if c.shape != (K, K):
            raise ValueError(f"SynthConfig.correlation must be {K}x{K}, got {c.shape}")
        if not np.array_equal(c, c.T) or not np.all(np.diag(c) == 1.0) or np.any(np.abs(c) > 1):
            raise ValueError("SynthConfig.correlation must be symmetric with unit diagonal and entries in [-1, 1]")
        if np.min(np.linalg.eigvalsh(c)) < -1e-10:
            raise ValueError("SynthConfig.correlation is not positive semi-definite")
        object.__setattr__(self, "correlation", corr)
        cn = tuple(float(v) for v in self.class_noise) or (0.0,) * K
        if len(cn) == 1:
            cn = cn * K
        if len(cn) != K or any(v < 0 for v in cn):
            raise ValueError(f"SynthConfig.class_noise must be {K} non-negative values")
        object.__setattr__(self, "class_noise", cn)
        if self.noise < 0 or self.prototype_scale <= 0:
            raise ValueError("SynthConfig.noise must be >= 0 and prototype_scale > 0")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("SynthConfig.n_train must be >= 1 and n_test >= 0")


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: np.ndarray  # "train" / "test" per row

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.labels.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError(f"inputs {self.inputs.shape} and labels {self.labels.shape} do not align")
        if self.split.shape != (self.inputs.shape[0],):
            raise ValueError("split tags must have one entry per row")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, tag: str) -> "Dataset":
        rows = self.split == tag
        return Dataset(self.inputs[rows], self.labels[rows], self.split[rows])

    def train(self) -> "Dataset":
        return self.subset("train")

    def test(self) -> "Dataset":
        return self.subset("test")


def _psd_sqrt(c: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(c)
    return v * np.sqrt(np.clip(w, 0.0, None))


def class_prototypes(cfg: SynthConfig) -> np.ndarray:
    """The ``(K, M_in)`` class prototypes ``generate`` uses for this config."""
    rng = np.random.default_rng([cfg.seed, 0])
    return rng.normal(0.0, cfg.prototype_scale, size=(cfg.n_classes, cfg.input_dim))


def generate(cfg: SynthConfig, max_attempts: int = 100) -> Dataset:
    """Draw a dataset; redraw labels until every class has a training positive.

    Prototypes, labels and noise come from separate seeded streams.
    """
    K, M = cfg.n_classes, cfg.input_dim
    prototypes = class_prototypes(cfg)
    label_rng = np.random.default_rng([cfg.seed, 1])
    noise_rng = np.random.default_rng([cfg.seed, 2])
    root = _psd_sqrt(np.array(cfg.correlation))
    thresholds = np.array([NormalDist().inv_cdf(p) for p in cfg.marginals])
    n = cfg.n_train + cfg.n_test
    for _ in range(max_attempts):
        latent = label_rng.standard_normal((n, K)) @ root.T
        labels = (latent < thresholds).astype(np.int8)
        if np.all(labels[: cfg.n_train].sum(axis=0) > 0):
            break
    else:
        raise RuntimeError(f"no draw with a positive for every class in {max_attempts} attempts")
    inputs = labels @ prototypes
    if cfg.noise > 0:
        inputs = inputs + cfg.noise * noise_rng.standard_normal((n, M))
    class_noise = np.array(cfg.class_noise)
    if np.any(class_noise > 0):
        extra = noise_rng.standard_normal((n, K, M)) * class_noise[None, :, None]
        inputs = inputs + np.einsum("nk,nkm->nm", labels, extra)
    split = np.array(["train"] * cfg.n_train + ["test"] * cfg.n_test)
    return Dataset(inputs, labels, split)


def label_count_histogram(labels: np.ndarray) -> np.ndarray:
    """Relative frequency of samples carrying 0, 1, ..., K labels."""
    counts = np.asarray(labels).sum(axis=1).astype(int)
    return np.bincount(counts, minlength=labels.shape[1] + 1) / counts.size


def write_table(ds: Dataset, features_path, labels_path) -> None:
    with open(features_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j}" for j in range(ds.input_dim)])
        w.writerows([[repr(float(v)) for v in row] for row in ds.inputs])
    with open(labels_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"y{k}" for k in range(ds.n_classes)])
        w.writerows([[str(int(v)) for v in row] for row in ds.labels])


def _read_csv(path: Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="") as fh:
        rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    if not rows:
        raise DataFormatError(f"{path}: empty file, no data rows")
    header = rows[0][1]
    body = rows[1:]
    if not body:
        raise DataFormatError(f"{path}: no data rows")
    for line, row in body:
        if len(row) != len(header):
            raise DataFormatError(f"{path}:{line}: expected {len(header)} columns, found {len(row)}")
    return header, body


def load_table(features_path, labels_path, split: str = "train") -> Dataset:
    """Read a features CSV and a labels CSV that share row order; headers set M_in and K."""
    features_path, labels_path = Path(features_path), Path(labels_path)
    for p in (features_path, labels_path):
        if not p.exists():
            raise FileNotFoundError(f"{p}: no such file")
    _, frows = _read_csv(features_path)
    _, lrows = _read_csv(labels_path)
    if len(frows) != len(lrows):
        raise DataFormatError(
            f"row-count mismatch: {features_path} has {len(frows)} data rows, {labels_path} has {len(lrows)}"
        )
    inputs = np.empty((len(frows), len(frows[0][1])))
    for r, (line, row) in enumerate(frows):
        try:
            inputs[r] = [float(v) for v in row]
        except ValueError:
            raise DataFormatError(f"{features_path}:{line}: non-numeric feature value") from None
        if not np.all(np.isfinite(inputs[r])):
            raise DataFormatError(f"{features_path}:{line}: non-finite feature value")
    labels = np.empty((len(lrows), len(lrows[0][1])), dtype=np.int8)
    for r, (line, row) in enumerate(lrows):
        for c, v in enumerate(row):
            if v.strip() not in ("0", "1"):
                raise DataFormatError(f"{labels_path}:{line}: label entry {v!r} in column {c} is not 0 or 1")
            labels[r, c] = int(v)
    return Dataset(inputs, labels, np.array([split] * len(frows)))


def concat(*parts: Dataset) -> Dataset:
    return Dataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.split for p in parts]),
    )


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Row indices of each minibatch for one epoch.

    Seeded shuffle per ``(seed, epoch)``; a trailing batch with fewer than 2
    rows is dropped.
    """
    if batch_size < 2:
        raise ValueError(f"batch size must be >= 2, got {batch_size}")
    if batch_size > len(ds):
        raise ValueError(f"batch size {batch_size} exceeds dataset size {len(ds)}")
    perm = np.random.default_rng([seed, epoch]).permutation(len(ds))
    out = [perm[i:i + batch_size] for i in range(0, len(ds), batch_size)]
    if out and out[-1].size < 2:
        out.pop()
    return out
