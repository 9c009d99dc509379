import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmcl.data import Dataset, SynthConfig, generate
from kmcl.grad import ParamStore
from kmcl.losses import LossConfig
from kmcl.trainer import (
    CURVE_COLUMNS,
    OptimizerState,
    TrainConfig,
    TrainingAborted,
    adam_step,
    ema_decay_at,
    ema_update,
    onecycle_lr,
    train,
)


def scalar(value):
    s = ParamStore([("w", (1,))])
    s.data[0] = value
    return s


# -- Adam ------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    p = scalar(0.7)
    adam_step(p, np.zeros(1), OptimizerState.for_params(p), lr=1e-2)
    assert p.data[0] == 0.7


def test_adam_first_step_moves_by_lr():
    p = scalar(0.0)
    opt = OptimizerState.for_params(p)
    adam_step(p, np.ones(1), opt, lr=1e-3)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert opt.step == 1


def test_adam_weight_decay_only_path():
    # g_eff = wd * theta; first step m_hat = g_eff, sqrt(v_hat) = |g_eff|
    p = scalar(2.0)
    wd, lr = 0.1, 1e-3
    adam_step(p, np.zeros(1), OptimizerState.for_params(p), lr=lr, weight_decay=wd)
    g = wd * 2.0
    assert p.data[0] == pytest.approx(2.0 - lr * g / (g + 1e-8), rel=1e-14)
    assert p.data[0] < 2.0


def test_adam_rejects_nonfinite_gradient():
    p = scalar(0.0)
    with pytest.raises(FloatingPointError, match=r"w\[0\]"):
        adam_step(p, np.array([np.nan]), OptimizerState.for_params(p), lr=1e-3)


# -- one-cycle ---------------------------------------------------------------------

def test_onecycle_landmarks():
    total, base = 1000, 2e-4
    assert onecycle_lr(0, total, base) == pytest.approx(base / 25, rel=1e-14)
    assert onecycle_lr(200, total, base) == pytest.approx(base, rel=1e-14)
    assert onecycle_lr(total - 1, total, base) == pytest.approx(base / 1e4, rel=1e-12)
    with pytest.raises(ValueError):
        onecycle_lr(total, total, base)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 3000), st.floats(0.05, 0.95))
def test_onecycle_shape(total, pct):
    lrs = np.array([onecycle_lr(s, total, 1.0, pct) for s in range(total)])
    peak = int(np.argmax(lrs))
    assert np.all(np.diff(lrs[: peak + 1]) >= 0) and np.all(np.diff(lrs[peak:]) <= 0)
    assert lrs[-1] < lrs[0]
    # continuity: no step jumps by more than the steepest cosine slope allows
    peak_at = min(pct * total, total - 2)
    assert np.max(np.abs(np.diff(lrs))) <= math.pi / 2 * max(1 / peak_at, 1 / (total - 1 - peak_at)) + 1e-12


@pytest.mark.parametrize("total", [1, 2, 3, 10])
def test_onecycle_short_schedules(total):
    lrs = [onecycle_lr(s, total, 1.0, pct_start=0.95) for s in range(total)]
    assert max(lrs) <= 1.0 and all(math.isfinite(v) for v in lrs)
    if total > 1:
        assert lrs[-1] == pytest.approx(1e-4) and lrs[-1] < lrs[0]


# -- EMA -----------------------------------------------------------------------------

def test_ema_examples():
    assert ema_update(np.zeros(1), np.ones(1), 0.9997)[0] == pytest.approx(0.0003, rel=1e-12)
    assert ema_update(np.array([5.0]), np.array([2.0]), 0.0)[0] == 2.0
    e = np.zeros(3)
    for _ in range(200):
        ema_update(e, np.full(3, 4.0), 0.9)
    np.testing.assert_allclose(e, 4.0, rtol=1e-8)


def test_ema_warmup_caps_decay():
    assert ema_decay_at(0, 0.9997, True) == pytest.approx(0.1)
    assert ema_decay_at(10**7, 0.9997, True) == 0.9997
    assert ema_decay_at(0, 0.9997, False) == 0.9997


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=5), st.floats(0, 0.9999))
def test_ema_stays_finite_and_between(live, decay):
    live = np.array(live)
    e = np.zeros_like(live)
    ema_update(e, live, decay)
    assert np.all(np.isfinite(e))
    assert np.all(e <= np.maximum(live, 0) + 1e-9) and np.all(e >= np.minimum(live, 0) - 1e-9)


# -- training loop ----------------------------------------------------------------------

def small_task(seed=0, **kw):
    return generate(SynthConfig(n_classes=4, input_dim=8, n_train=200, n_test=60, seed=seed, **kw))


def test_zero_epochs_returns_init():
    ds = small_task()
    res = train(ds, TrainConfig(epochs=0))
    again = train(ds, TrainConfig(epochs=0))
    assert res.curves == [] and res.params.data.tobytes() == again.params.data.tobytes()


def test_training_is_bit_deterministic():
    ds = small_task(1)
    cfg = TrainConfig(epochs=3, batch_size=32, seed=5)
    a, b = train(ds, cfg), train(ds, cfg)
    assert a.params.data.tobytes() == b.params.data.tobytes()
    assert a.ema.data.tobytes() == b.ema.data.tobytes()
    assert [list(r.values()) for r in a.curves] == [list(r.values()) for r in b.curves]


def test_curve_records_have_all_columns():
    res = train(small_task(), TrainConfig(epochs=2, batch_size=32, eval_every=2))
    assert [tuple(r) for r in res.curves] == [CURVE_COLUMNS] * 2
    assert math.isnan(res.curves[0]["test_mAP"]) and not math.isnan(res.curves[1]["test_mAP"])
    assert np.all(np.isfinite(res.ema.data))


def test_nonfinite_input_aborts_with_batch_index():
    ds = small_task()
    inputs = ds.inputs.copy()
    inputs[ds.split == "train"] = 1e200
    bad = Dataset(inputs, ds.labels, ds.split)
    with pytest.raises(TrainingAborted, match=r"epoch 0 batch 0"):
        with np.errstate(all="ignore"):
            train(bad, TrainConfig(epochs=1, batch_size=32))


def test_mismatched_similarity_shape_rejected():
    from kmcl.trainer import default_model
    ds = small_task()
    model = default_model(ds, TrainConfig())
    with pytest.raises(ValueError, match="anisotropic"):
        train(ds, TrainConfig(loss=LossConfig(similarity="bhattacharyya_diagonal")), model)


def test_config_validation():
    for bad in ({"epochs": -1}, {"batch_size": 1}, {"base_lr": 0.0}, {"pct_start": 1.0}, {"ema_decay": 1.0}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_first_epochs_loss_mostly_decreasing():
    res = train(generate(SynthConfig(seed=0)), TrainConfig(epochs=5))
    losses = [r["loss_total"] for r in res.curves]
    assert sum(b > a for a, b in zip(losses, losses[1:])) <= 1


def test_kmcl_does_not_hurt_correlation_free_task():
    ds = generate(SynthConfig(correlation=np.eye(8).tolist(), seed=1))
    without = train(ds, TrainConfig(loss=LossConfig(lambda_kmcl=0.0))).curves[-1]["test_mAP"]
    with_kmcl = train(ds, TrainConfig()).curves[-1]["test_mAP"]
    assert without >= 0.9
    assert with_kmcl >= without - 0.02
