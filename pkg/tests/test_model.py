import numpy as np
import pytest

from vcmos.features import FeatureMatrix
from vcmos.model import (
    CheckpointError,
    ModelCheckpoint,
    ModelConfig,
    VCMRegressor,
    checkpoint_from_bytes,
    checkpoint_to_bytes,
    forward,
    init_weights,
    load_checkpoint,
    loss_and_gradients,
    pad_batch,
    predict_sequences,
    save_checkpoint,
    train,
)
from vcmos.model.estimator import forward_timeline


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_gradient_errors(weights, seqs, targets, n_samples, seed=0, eps=1e-5):
    _, grads = loss_and_gradients(weights, seqs, targets)
    rng = np.random.default_rng(seed)
    params = weights.arrays()
    grad_arrays = grads.arrays()
    errors = []
    for _ in range(n_samples):
        k = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[k].shape)
        old = params[k][idx]
        params[k][idx] = old + eps
        plus, _ = loss_and_gradients(weights, seqs, targets)
        params[k][idx] = old - eps
        minus, _ = loss_and_gradients(weights, seqs, targets)
        params[k][idx] = old
        errors.append(relative_error(grad_arrays[k][idx], (plus - minus) / (2 * eps)))
    return np.array(errors)


def test_init_deterministic_and_seeded():
    a = init_weights(13, 16, 2, seed=3)
    b = init_weights(13, 16, 2, seed=3)
    c = init_weights(13, 16, 2, seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.layers[0][0], c.layers[0][0])


def test_init_ranges_and_forget_bias():
    w = init_weights(5, 16, 3, seed=0)
    k = 1 / np.sqrt(16)
    for w_ih, w_hh, b in w.layers:
        assert np.abs(w_ih).max() <= k and np.abs(w_hh).max() <= k
        assert (b[16:32] >= 1 - k).all() and (b[16:32] <= 1 + k).all()


@pytest.mark.parametrize("dims", [(3, 0, 1), (3, 4, 0), (0, 4, 1)])
def test_init_invalid_dims(dims):
    with pytest.raises(ValueError):
        init_weights(*dims)


def test_zero_weights_give_zero():
    w = init_weights(4, 8, 2, seed=0)
    for arr in w.arrays():
        arr[...] = 0.0
    x, _ = pad_batch([np.random.default_rng(0).normal(size=(7, 4))])
    q, _ = forward(w, x)
    assert (q == 0).all()


def test_single_frame_clip_equals_frame_score():
    w = init_weights(3, 8, 2, seed=1)
    q = predict_sequences(w, [np.ones((1, 3))])[0]
    assert q.mean() == q[0]


def test_pooling_identity():
    w = init_weights(13, 16, 2, seed=2)
    x = np.random.default_rng(1).normal(size=(20, 13))
    tl = forward_timeline(w, x)
    assert abs(tl.clip_score - np.mean(tl.scores)) <= 1e-12


def test_shape_mismatch():
    w = init_weights(3, 8, 1, seed=0)
    with pytest.raises(ValueError):
        forward(w, np.zeros((5, 1, 4)))


def test_padding_does_not_change_results():
    w = init_weights(3, 8, 2, seed=5)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(9, 3))
    together = predict_sequences(w, [a, b])
    assert np.array_equal(together[0], predict_sequences(w, [a])[0])
    loss_ab, grads_ab = loss_and_gradients(w, [a, b], [3.0, 2.0])
    loss_a, _ = loss_and_gradients(w, [a], [3.0])
    loss_b, _ = loss_and_gradients(w, [b], [2.0])
    assert loss_ab == pytest.approx((loss_a + loss_b) / 2, rel=1e-12)


def test_causality():
    w = init_weights(3, 8, 2, seed=6)
    x = np.random.default_rng(2).normal(size=(12, 3))
    full = predict_sequences(w, [x])[0]
    altered = x.copy()
    altered[6:] = 100.0
    assert np.array_equal(predict_sequences(w, [x[:6]])[0], full[:6])
    assert np.array_equal(predict_sequences(w, [altered])[0][:6], full[:6])


def test_loss_zero_when_prediction_matches():
    w = init_weights(3, 4, 1, seed=0)
    seqs = [np.random.default_rng(0).normal(size=(5, 3))]
    target = predict_sequences(w, seqs)[0].mean()
    loss, grads = loss_and_gradients(w, seqs, [target])
    assert loss == 0.0
    assert all(not g.any() for g in grads.arrays())


def test_duplicated_batch_same_loss_and_gradients():
    w = init_weights(3, 4, 2, seed=0)
    rng = np.random.default_rng(0)
    seqs = [rng.normal(size=(5, 3)), rng.normal(size=(3, 3))]
    loss1, g1 = loss_and_gradients(w, seqs, [2.0, 4.0])
    loss2, g2 = loss_and_gradients(w, seqs + seqs, [2.0, 4.0, 2.0, 4.0])
    assert loss1 == pytest.approx(loss2, rel=1e-14)
    for a, b in zip(g1.arrays(), g2.arrays()):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_gradients_match_finite_differences():
    w = init_weights(3, 8, 2, seed=11)
    rng = np.random.default_rng(4)
    seqs = [rng.normal(size=(5, 3)), rng.normal(size=(4, 3))]
    errors = sample_gradient_errors(w, seqs, [3.5, 1.5], n_samples=120)
    assert errors.max() < 1e-4


def test_empty_batch():
    with pytest.raises(ValueError):
        loss_and_gradients(init_weights(3, 4, 1), [], [])


# -- estimator -------------------------------------------------------------------------

def _linear_task(n, seed, t=12, f=3):
    rng = np.random.default_rng(seed)
    X = [rng.normal(size=(t, f)) for _ in range(n)]
    y = np.array([3.0 + 0.8 * x[:, 0].mean() - 0.5 * x[:, 1].mean() for x in X])
    return X, y


def test_regressor_learns_linear_task():
    X, y = _linear_task(120, 0)
    Xv, yv = _linear_task(40, 1)
    model = VCMRegressor(num_layers=1, hidden_size=12, max_epochs=25, learning_rate=1e-2, seed=0)
    model.fit(X, y, eval_set=(Xv, yv))
    assert model.score(Xv, yv) >= 0.9
    assert model.history_[model.best_epoch_]["val_pcc"] == model.best_score_
    assert model.best_score_ == max(h["val_pcc"] for h in model.history_)


def test_zero_epochs_returns_initial_weights():
    X, y = _linear_task(10, 0)
    model = VCMRegressor(num_layers=1, hidden_size=4, max_epochs=0, seed=3).fit(X, y)
    init = init_weights(3, 4, 1, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(model.weights_.arrays(), init.arrays()))
    assert model.best_epoch_ == 0 and len(model.history_) == 1


def test_feature_count_mismatch_between_sets():
    X, y = _linear_task(10, 0)
    Xv = [x[:, :2] for x in X]
    with pytest.raises(ValueError, match="features"):
        VCMRegressor(num_layers=1, hidden_size=4, max_epochs=1).fit(X, y, eval_set=(Xv, y))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    X, y = _linear_task(8, 0)
    y = y * 1e200
    with pytest.raises(FloatingPointError, match="loss"):
        VCMRegressor(num_layers=1, hidden_size=4, max_epochs=2).fit(X, y)


def test_training_deterministic():
    X, y = _linear_task(20, 0)
    a = VCMRegressor(num_layers=2, hidden_size=6, max_epochs=3, seed=9).fit(X, y)
    b = VCMRegressor(num_layers=2, hidden_size=6, max_epochs=3, seed=9).fit(X, y)
    assert checkpoint_to_bytes(a.to_checkpoint()) == checkpoint_to_bytes(b.to_checkpoint())


def test_estimator_params_and_feature_names():
    X, y = _linear_task(10, 0)
    fms = [FeatureMatrix(x, ("motion", "skip", "freeze"), f"c{i}") for i, x in enumerate(X)]
    model = VCMRegressor(num_layers=1, hidden_size=4, max_epochs=1)
    assert model.get_params()["hidden_size"] == 4
    model.fit(fms, y)
    assert tuple(model.feature_names_in_) == ("motion", "skip", "freeze")
    timelines = model.predict_timeline(fms[:2])
    assert timelines[1].clip_id == "c1" and len(timelines[1]) == 12


def test_training_log_written(tmp_path):
    import json

    X, y = _linear_task(10, 0)
    log = tmp_path / "log.jsonl"
    VCMRegressor(num_layers=1, hidden_size=4, max_epochs=3, log_path=str(log)).fit(X, y)
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert [l["epoch"] for l in lines] == [1, 2, 3]
    assert set(lines[0]) == {"epoch", "train_loss", "val_pcc", "val_rmse"}


def test_train_function_returns_checkpoint():
    X, y = _linear_task(16, 0)
    cfg = ModelConfig(num_layers=1, hidden_size=4, input_size=3, max_epochs=2)
    ckpt = train(X, y, X, y, cfg)
    assert ckpt.config.input_size == 3 and ckpt.normalization is not None


# -- checkpoints -----------------------------------------------------------------------

def _checkpoint():
    X, y = _linear_task(10, 0)
    fms = [FeatureMatrix(x, ("a", "b", "c")) for x in X]
    return VCMRegressor(num_layers=2, hidden_size=5, max_epochs=1, seed=1).fit(fms, y).to_checkpoint()


def test_checkpoint_roundtrip(tmp_path):
    ckpt = _checkpoint()
    save_checkpoint(ckpt, tmp_path / "m.vcmm")
    back = load_checkpoint(tmp_path / "m.vcmm")
    assert checkpoint_to_bytes(back) == checkpoint_to_bytes(ckpt)
    assert back.column_names == ("a", "b", "c")
    assert all(np.array_equal(a, b) for a, b in zip(back.weights.arrays(), ckpt.weights.arrays()))
    assert np.array_equal(back.normalization.std, ckpt.normalization.std)
    model = VCMRegressor.from_checkpoint(back)
    X, _ = _linear_task(3, 5)
    original = VCMRegressor.from_checkpoint(ckpt)
    assert np.array_equal(model.predict(X), original.predict(X))


def test_checkpoint_bad_magic():
    data = bytearray(checkpoint_to_bytes(_checkpoint()))
    data[:4] = b"XXXX"
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(bytes(data))


def test_checkpoint_future_version():
    data = bytearray(checkpoint_to_bytes(_checkpoint()))
    data[4:6] = (99).to_bytes(2, "little")
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 99"):
        checkpoint_from_bytes(bytes(data))


def test_checkpoint_truncated():
    data = checkpoint_to_bytes(_checkpoint())
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(data[:-3])


def test_checkpoint_dim_mismatch():
    ckpt = _checkpoint()
    with pytest.raises(CheckpointError):
        ModelCheckpoint(ckpt.config, ckpt.weights, ("a", "b"))
    bad = init_weights(4, 5, 2)
    with pytest.raises(CheckpointError):
        ModelCheckpoint(ckpt.config, bad, ("a", "b", "c"))
