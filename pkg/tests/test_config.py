import pytest

from kmcl.config import DEFAULT_TEXT, ConfigError, RunConfig, from_text, load_config


def test_default_text_roundtrip():
    assert from_text(DEFAULT_TEXT) == RunConfig()
    cfg = RunConfig().with_seed(9)
    assert from_text(cfg.to_text()) == cfg
    assert cfg.data.seed == cfg.train.seed == 9


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\nepochs = 3\n[loss]\nsimilarity = gaussian\n[data]\nmarginals = 0.2\n")
    cfg = load_config(path)
    assert cfg.train.epochs == 3 and cfg.loss.similarity.value == "gaussian"
    assert cfg.data.marginals == (0.2,) * cfg.data.n_classes
    assert cfg.train.batch_size == RunConfig().train.batch_size


def test_correlation_matrix_syntax():
    cfg = from_text("[data]\nn_classes = 2\ncorrelation = 1, 0.4; 0.4, 1\n")
    assert cfg.data.correlation == ((1.0, 0.4), (0.4, 1.0))


@pytest.mark.parametrize("text,match", [
    ("[train]\nepoch = 3\n", "epoch"),
    ("[bogus]\nx = 1\n", "bogus"),
    ("[data]\nn_classes = 3\ncorrelation = 1,0.9,0.9; 0.9,1,-0.9; 0.9,-0.9,1\n", r"\[data\].*positive semi-definite"),
    ("[train]\nbatch_size = 1\n", r"\[train\].*batch_size"),
    ("[kmm]\nelu_alpha = 2.0\n", "elu_alpha"),
    ("[train]\nepochs = many\n", "epochs"),
])
def test_invalid_config_names_the_field(text, match):
    with pytest.raises(ConfigError, match=match):
        from_text(text)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_config("/nonexistent/config.ini")
