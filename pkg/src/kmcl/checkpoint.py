"""Plain-text weight checkpoints.

Layout::

    kmcl-checkpoint 1
    n_classes 8
    feature_dim 32
    kmm_mode isotropic
    similarity bhattacharyya_isotropic
    encoder_widths 32 64 64 32
    encoder_identity 0
    matrix kmm.W_pi 8 32
    <8 rows of 32 values>
    ...

KMM matrices come first in the order W_pi, W_mu, W_var, b_pi, b_mu, b_var,
followed by the encoder layers. Arrays of rank > 2 are written as row-major
rows of their last axis; vectors as a single row. Values use 17 significant
digits so a save/load round trip is exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .encoder import EncoderConfig
from .grad import ModelConfig, ParamStore
from .similarity import SimilarityKind

MAGIC = "kmcl-checkpoint"
VERSION = 1
KMM_ORDER = ("W_pi", "W_mu", "W_var", "b_pi", "b_mu", "b_var")


class CheckpointError(ValueError):
    pass


def _param_order(model: ModelConfig) -> list[str]:
    names = [f"kmm.{k}" for k in KMM_ORDER]
    names += [f"encoder.{k}" for k in model.encoder.shapes()]
    return names


def save_checkpoint(path, params: ParamStore, model: ModelConfig, similarity: SimilarityKind | str) -> None:
    similarity = SimilarityKind.parse(similarity)
    enc = model.encoder
    lines = [
        f"{MAGIC} {VERSION}",
        f"n_classes {model.n_classes}",
        f"feature_dim {model.feature_dim}",
        f"kmm_mode {'anisotropic' if model.anisotropic else 'isotropic'}",
        f"similarity {similarity.value}",
        f"encoder_widths {' '.join(str(w) for w in enc.widths)}",
        f"encoder_identity {int(enc.identity)}",
    ]
    for name in _param_order(model):
        arr = params.view(name)
        lines.append(f"matrix {name} {' '.join(str(s) for s in arr.shape)}")
        rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
        lines.extend(" ".join(f"{v:.17g}" for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _header(lines: list[str], i: int, key: str, path) -> str:
    if i >= len(lines):
        raise CheckpointError(f"{path}: truncated header, expected {key!r}")
    parts = lines[i].split(" ", 1)
    if parts[0] != key or len(parts) != 2:
        raise CheckpointError(f"{path}:{i + 1}: expected {key!r}, found {lines[i]!r}")
    return parts[1]


def load_checkpoint(path, expect_classes: int | None = None, expect_input_dim: int | None = None
                    ) -> tuple[ParamStore, ModelConfig, SimilarityKind]:
    """Read a checkpoint; optionally check K and input width against a dataset."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith(MAGIC + " "):
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = lines[0].split()[1]
    if version != str(VERSION):
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    try:
        K = int(_header(lines, 1, "n_classes", path))
        M = int(_header(lines, 2, "feature_dim", path))
        mode = _header(lines, 3, "kmm_mode", path)
        similarity = SimilarityKind.parse(_header(lines, 4, "similarity", path))
        widths = tuple(int(w) for w in _header(lines, 5, "encoder_widths", path).split())
        identity = bool(int(_header(lines, 6, "encoder_identity", path)))
    except ValueError as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from None
    if mode not in ("isotropic", "anisotropic"):
        raise CheckpointError(f"{path}: unknown kmm_mode {mode!r}")
    model = ModelConfig(K, EncoderConfig(widths, identity), anisotropic=mode == "anisotropic")
    if model.feature_dim != M:
        raise CheckpointError(f"{path}: feature_dim {M} disagrees with encoder widths {widths}")
    if expect_classes is not None and expect_classes != K:
        raise CheckpointError(f"{path}: class count mismatch: expected K={expect_classes}, found K={K}")
    if expect_input_dim is not None and expect_input_dim != model.input_dim:
        raise CheckpointError(
            f"{path}: input width mismatch: expected {expect_input_dim}, found {model.input_dim}"
        )

    params = ParamStore(model.layout())
    i = 7
    for name in _param_order(model):
        want = params.view(name).shape
        spec = lines[i].split() if i < len(lines) else []
        if spec[:2] != ["matrix", name] or tuple(int(s) for s in spec[2:]) != want:
            raise CheckpointError(f"{path}:{i + 1}: expected matrix {name} {want}")
        n_rows = int(np.prod(want[:-1])) if len(want) > 1 else 1
        block = lines[i + 1:i + 1 + n_rows]
        if len(block) != n_rows:
            raise CheckpointError(f"{path}: truncated matrix {name}")
        try:
            values = np.array([[float(v) for v in row.split()] for row in block])
        except ValueError:
            raise CheckpointError(f"{path}: non-numeric value in {name}") from None
        if values.shape != (n_rows, want[-1]):
            raise CheckpointError(f"{path}: matrix {name} has ragged rows")
        params.view(name)[...] = values.reshape(want)
        i += 1 + n_rows
    if not np.all(np.isfinite(params.data)):
        raise CheckpointError(f"{path}: non-finite weights")
    return params, model, similarity
