import numpy as np
import pytest

from kmcl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from kmcl.encoder import EncoderConfig
from kmcl.grad import ModelConfig, init_params


@pytest.fixture(params=[False, True], ids=["isotropic", "anisotropic"])
def model(request):
    return ModelConfig(3, EncoderConfig((5, 4, 6)), anisotropic=request.param)


def saved(tmp_path, model):
    params = init_params(model, np.random.default_rng(0))
    params.data += np.random.default_rng(1).normal(0, 1e-3, params.size)
    path = tmp_path / "ckpt.txt"
    kind = "bhattacharyya_diagonal" if model.anisotropic else "bhattacharyya_isotropic"
    save_checkpoint(path, params, model, kind)
    return path, params


def test_roundtrip_is_exact(tmp_path, model):
    path, params = saved(tmp_path, model)
    back, back_model, kind = load_checkpoint(path, expect_classes=3, expect_input_dim=5)
    assert back.data.tobytes() == params.data.tobytes()
    assert back_model == model
    assert kind.anisotropic == model.anisotropic


def test_identity_encoder_roundtrip(tmp_path):
    m = ModelConfig(2, EncoderConfig((4,), identity=True))
    params = init_params(m, np.random.default_rng(2))
    save_checkpoint(tmp_path / "c.txt", params, m, "gaussian")
    back, back_model, _ = load_checkpoint(tmp_path / "c.txt")
    assert back.data.tobytes() == params.data.tobytes() and back_model.encoder.identity


def test_class_count_mismatch(tmp_path, model):
    path, _ = saved(tmp_path, model)
    with pytest.raises(CheckpointError, match="expected K=4, found K=3"):
        load_checkpoint(path, expect_classes=4)
    with pytest.raises(CheckpointError, match="input width mismatch"):
        load_checkpoint(path, expect_input_dim=7)


def rewrite(path, fn):
    lines = path.read_text().splitlines()
    path.write_text("\n".join(fn(lines)) + "\n")


def test_version_mismatch(tmp_path, model):
    path, _ = saved(tmp_path, model)
    rewrite(path, lambda ls: ["kmcl-checkpoint 2"] + ls[1:])
    with pytest.raises(CheckpointError, match="version 2"):
        load_checkpoint(path)


def test_truncated_and_corrupt_files(tmp_path, model):
    path, _ = saved(tmp_path, model)
    rewrite(path, lambda ls: ls[:-1])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    path, _ = saved(tmp_path, model)
    rewrite(path, lambda ls: ls[:8] + [ls[8].replace(ls[8].split()[0], "nan", 1)] + ls[9:])
    with pytest.raises(CheckpointError, match="non-finite"):
        load_checkpoint(path)
    (tmp_path / "junk.txt").write_text("hello\n")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(tmp_path / "junk.txt")
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "absent.txt")
