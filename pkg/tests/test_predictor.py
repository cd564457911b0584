import numpy as np
import pytest
from scipy.special import expit

from orfseg.imagecore import FormatError, Sample
from orfseg.patching import DatasetKind, LabeledPatch, PatchDataset, PatchSpec, TilingConfig, build_dataset
from orfseg.predictor import (LogisticPixelModel, OraclePredictor, PatchPredictor, TrainConfig,
                              dataset_arrays, extract_features, load_model, loss_and_gradient,
                              predict, save_model, train)


def numeric_gradient(w, X, y, l2, h=1e-6):
    g = np.zeros_like(w)
    for k in range(len(w)):
        e = np.zeros_like(w)
        e[k] = h
        g[k] = (loss_and_gradient(w + e, X, y, l2)[0] - loss_and_gradient(w - e, X, y, l2)[0]) / (2 * h)
    return g


def test_features_constant_patch():
    f = extract_features(np.full((6, 6), 0.3), 5)
    assert f.shape == (6, 6, 4)
    np.testing.assert_allclose(f.reshape(-1, 4), np.tile([0.3, 0.3, 0.0, 1.0], (36, 1)), atol=1e-7)


def test_features_window_one(rng):
    patch = rng.random((5, 4))
    f = extract_features(patch, 1)
    assert np.array_equal(f[..., 1], patch)
    assert np.all(f[..., 2] == 0)


def test_features_hand_3x3():
    patch = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6], [0.7, 0.8, 0.9]])
    f = extract_features(patch, 3)
    center = f[1, 1]
    assert center[0] == 0.5
    assert center[1] == pytest.approx(0.5, abs=1e-12)
    assert center[2] == pytest.approx(np.std(patch), abs=1e-9)
    # corner window clamps: rows/cols {0,0,1}
    corner = patch[[0, 0, 1]][:, [0, 0, 1]]
    assert f[0, 0, 1] == pytest.approx(corner.mean(), abs=1e-12)
    assert f[0, 0, 2] == pytest.approx(corner.std(), abs=1e-7)


def test_features_match_explicit_windows(rng):
    patch = rng.random((9, 11))
    f = extract_features(patch, 5)
    padded = np.pad(patch, 2, mode="edge")
    for r, c in [(0, 0), (4, 5), (8, 10), (2, 9)]:
        win = padded[r:r + 5, c:c + 5]
        assert f[r, c, 1] == pytest.approx(win.mean(), abs=1e-12)
        assert f[r, c, 2] == pytest.approx(win.std(), abs=1e-6)


def test_predict_zero_and_bias_weights(rng):
    patch = rng.random((4, 4))
    assert np.all(LogisticPixelModel.from_weights([0, 0, 0, 0]).predict_proba(patch) == 0.5)
    sat = LogisticPixelModel.from_weights([0, 0, 0, 10]).predict_proba(patch)
    assert np.all(np.abs(sat - 1.0) < 1e-4)


def test_predict_hand_2x2():
    patch = np.array([[0.0, 1.0], [0.5, 0.25]])
    model = LogisticPixelModel.from_weights([2.0, 0.0, 0.0, -1.0], window=1)
    expected = 1 / (1 + np.exp(-(2 * patch - 1)))
    np.testing.assert_allclose(model.predict_proba(patch), expected, rtol=0, atol=1e-15)
    assert predict(model, patch).shape == (2, 2)


def test_predict_provenance_invariant(rng):
    m = LogisticPixelModel.from_weights(rng.normal(size=4))
    patch = rng.random((8, 8))
    assert np.array_equal(m.predict_proba(patch, PatchSpec(0, 0)), m.predict_proba(patch, PatchSpec(8, 16)))
    assert isinstance(m, PatchPredictor)


def test_gradient_single_pixel_at_zero():
    f = np.array([[0.4, 0.3, 0.1, 1.0]])
    _, g = loss_and_gradient(np.zeros(4), f, np.array([1.0]), 0.0)
    np.testing.assert_allclose(g, -0.5 * f[0])
    np.testing.assert_allclose(g, numeric_gradient(np.zeros(4), f, np.array([1.0]), 0.0), atol=1e-8)


def test_gradient_finite_differences(rng):
    for _ in range(5):
        X = np.column_stack([rng.random((50, 3)), np.ones(50)])
        y = (rng.random(50) < 0.5).astype(float)
        w = rng.normal(0, 2, 4)
        _, g = loss_and_gradient(w, X, y, 1e-3)
        num = numeric_gradient(w, X, y, 1e-3)
        rel = np.abs(g - num) / np.maximum(np.abs(num), 1e-8)
        assert rel.max() < 1e-4


def _separable_dataset():
    rng = np.random.default_rng(0)
    patches = []
    for k in range(6):
        lab = np.zeros((16, 16), np.uint8)
        lab[4:12, 2 + k: 10 + k] = 1
        img = np.where(lab == 1, 0.3, 0.9)
        patches.append(LabeledPatch(img, lab, f"p{k}", PatchSpec(0, 0)))
    return PatchDataset(DatasetKind.SEQUENTIAL, patches)


def test_train_separable_accuracy():
    ds = _separable_dataset()
    model = train(ds, TrainConfig(learning_rate=1.0, epochs=2000, minibatch=None))
    acc = np.mean([np.mean(model.predict(p.image) == p.label) for p in ds.patches])
    assert acc >= 0.99
    assert model.loss_history_[-1] < model.loss_history_[0]


def test_train_epochs_zero_returns_init():
    init = LogisticPixelModel.from_weights([0.1, -0.2, 0.3, 0.4])
    out = train(_separable_dataset(), TrainConfig(epochs=0), init=init)
    assert np.array_equal(out.coef_, init.coef_)
    assert np.array_equal(train(_separable_dataset(), TrainConfig(epochs=0)).coef_, np.zeros(4))


def test_train_empty_dataset():
    with pytest.raises(ValueError):
        train(PatchDataset(DatasetKind.MIX, []), TrainConfig())


def test_full_batch_loss_non_increasing(small_samples):
    ds = build_dataset(small_samples, TilingConfig(64, 32, 16), "sequential")
    for lr in (0.1, 0.5):
        model = train(ds, TrainConfig(learning_rate=lr, epochs=15, minibatch=None))
        h = np.array(model.loss_history_)
        assert np.all(np.diff(h) <= 1e-12)


def test_train_deterministic(small_samples):
    ds = build_dataset(small_samples, TilingConfig(64, 32, 16), "sequential")
    a = train(ds, TrainConfig(epochs=3, minibatch=256, seed=5))
    b = train(ds, TrainConfig(epochs=3, minibatch=256, seed=5))
    assert np.array_equal(a.coef_, b.coef_)


def test_finetune_starts_from_init(small_samples):
    ds = build_dataset(small_samples, TilingConfig(64, 32, 16), "sequential")
    init = LogisticPixelModel.from_weights([-3.0, -3.0, 0.0, 3.0])
    tuned = train(ds, TrainConfig(epochs=1), init=init)
    assert tuned.loss_history_[0] == pytest.approx(
        loss_and_gradient(init.coef_, *dataset_arrays(ds, 5), 1e-4)[0])


def test_oracle_predictor():
    truth = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.uint8)
    o = OraclePredictor(truth)
    out = o.predict_proba(np.zeros((4, 4)), PatchSpec(2, 4))
    assert np.array_equal(out, truth[2:6, 4:8])
    assert np.all(OraclePredictor(np.ones((8, 8))).predict_proba(np.zeros((4, 4)), PatchSpec(0, 0)) == 1)
    assert np.all(OraclePredictor(np.zeros((8, 8))).predict_proba(np.zeros((4, 4)), PatchSpec(4, 4)) == 0)
    with pytest.raises(ValueError):
        o.predict_proba(np.zeros((4, 4)), PatchSpec(6, 0))
    with pytest.raises(ValueError):
        o.predict_proba(np.zeros((4, 4)))


def test_model_file_roundtrip(tmp_path, rng):
    m = LogisticPixelModel.from_weights([0.1, -0.25, 3.0, -1.5], window=5)
    save_model(m, tmp_path / "m.lpm")
    lines = (tmp_path / "m.lpm").read_text().splitlines()
    assert lines[0] == "LPM1" and lines[1] == "5" and len(lines) == 3
    assert np.array_equal(load_model(tmp_path / "m.lpm").coef_, m.coef_)
    w = rng.normal(size=4) * 1e3
    save_model(LogisticPixelModel.from_weights(w, 7), tmp_path / "r.lpm")
    back = load_model(tmp_path / "r.lpm")
    assert back.window == 7 and np.array_equal(back.coef_, w)


@pytest.mark.parametrize("text", ["LPMX\n5\n1 2 3 4\n", "LPM1\n5\n1 2 3\n", "LPM1\n4\n1 2 3 4\n"])
def test_model_file_errors(tmp_path, text):
    (tmp_path / "bad.lpm").write_text(text)
    with pytest.raises(FormatError):
        load_model(tmp_path / "bad.lpm")
