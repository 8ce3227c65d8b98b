"""Predictor tests: forward math, training, gradients, bounds, IO."""

import json

import numpy as np
import pytest

from freqdispatch.mlp import (
    ArchMismatch,
    CorruptWeights,
    DimensionMismatch,
    EmptyBox,
    EmptyDataset,
    KinkProximity,
    MlpError,
    MlpNet,
    Normalizer,
    TrainConfig,
    _normed_forward,
    forward,
    gradient_check,
    init_net,
    interval_bounds,
    load_net,
    pre_activations,
    save_net,
    train,
)


class _DS:
    def __init__(self, X, Y, fnames=None, lnames=None):
        self.features = X
        self.labels = Y
        self.feature_names = fnames or tuple(
            f"f{i}" for i in range(X.shape[1]))
        self.label_names = lnames or tuple(
            f"l{i}" for i in range(Y.shape[1]))


def identity_net():
    return MlpNet(layer_dims=(1, 1, 1),
                  weights=[np.array([[1.0]]), np.array([[1.0]])],
                  biases=[np.zeros(1), np.zeros(1)],
                  in_norm=Normalizer.identity(1),
                  out_norm=Normalizer.identity(1))


@pytest.fixture(scope="module")
def linear_ds():
    rng = np.random.default_rng(1)
    X = rng.uniform(-1, 1, size=(500, 5))
    A = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    return _DS(X, X @ A.T + b)


@pytest.fixture(scope="module")
def linear_net(linear_ds):
    return train(linear_ds, (5, 32, 3), TrainConfig(seed=3))


# -- forward ----------------------------------------------------------------

def test_zero_net_returns_output_mean():
    net = MlpNet(layer_dims=(2, 3, 2),
                 weights=[np.zeros((3, 2)), np.zeros((2, 3))],
                 biases=[np.zeros(3), np.zeros(2)],
                 in_norm=Normalizer.identity(2),
                 out_norm=Normalizer(np.array([4.0, -1.0]),
                                     np.array([2.0, 3.0])))
    y = forward(net, [7.0, 7.0])
    assert np.allclose(y, [4.0, -1.0])


def test_relu_clips_negative():
    assert forward(identity_net(), [-2.0])[0] == 0.0


def test_relu_passes_positive():
    assert forward(identity_net(), [3.0])[0] == pytest.approx(3.0)


def test_forward_rejects_wrong_length():
    with pytest.raises(DimensionMismatch):
        forward(identity_net(), [1.0, 2.0])


def test_forward_piecewise_linear_within_region():
    rng = np.random.default_rng(5)
    net = init_net((3, 8, 2), rng)
    x1 = rng.normal(size=3)
    # small perturbation keeps the activation pattern with high odds
    x2 = x1 + 1e-3 * rng.normal(size=3)
    s1 = [np.sign(z) for z in pre_activations(net, x1)]
    s2 = [np.sign(z) for z in pre_activations(net, x2)]
    if not all(np.array_equal(a, b) for a, b in zip(s1, s2)):
        pytest.skip("perturbation crossed a kink")
    lam = 0.37
    mid = lam * x1 + (1 - lam) * x2
    want = lam * forward(net, x1) + (1 - lam) * forward(net, x2)
    assert np.allclose(forward(net, mid), want, atol=1e-9)


def test_unit_invariance_with_fitted_normalizers(linear_ds):
    scaled = _DS(linear_ds.features * 100.0, linear_ds.labels)
    n1, _ = train(linear_ds, (5, 16, 3), TrainConfig(epochs=30, seed=9))
    n2, _ = train(scaled, (5, 16, 3), TrainConfig(epochs=30, seed=9))
    x = linear_ds.features[17]
    assert np.allclose(forward(n1, x), forward(n2, 100.0 * x), atol=1e-9)


# -- training ---------------------------------------------------------------

def test_linear_target_fits_below_1e4(linear_net):
    _, rep = linear_net
    assert rep.final_val_mse < 1e-4


def test_training_beats_initial_validation(linear_net):
    net, rep = linear_net
    assert rep.final_val_mse <= rep.val_loss[0]
    assert all(v >= 0 and np.isfinite(v) for v in rep.val_loss)
    assert all(v >= 0 and np.isfinite(v) for v in rep.train_loss)


def test_smoothed_train_loss_non_increasing(linear_net):
    _, rep = linear_net
    w = 5
    tl = np.array(rep.train_loss)
    sm = np.convolve(tl, np.ones(w) / w, mode="valid")
    # non-increasing up to numerical wiggle relative to scale
    assert np.all(np.diff(sm) <= 1e-3 * sm[0])


def test_train_deterministic(linear_ds):
    a, _ = train(linear_ds, (5, 8, 3), TrainConfig(epochs=25, seed=11))
    b, _ = train(linear_ds, (5, 8, 3), TrainConfig(epochs=25, seed=11))
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))


def test_zero_epochs_rejected():
    with pytest.raises(MlpError):
        TrainConfig(epochs=0)


def test_empty_dataset_rejected():
    with pytest.raises(EmptyDataset):
        train(_DS(np.zeros((0, 3)), np.zeros((0, 2))), (3, 4, 2))


def test_arch_mismatch_rejected(linear_ds):
    with pytest.raises(ArchMismatch):
        train(linear_ds, (4, 8, 3))


def test_normalizers_fit_on_training_split_only(linear_ds):
    cfg = TrainConfig(epochs=1, seed=2)
    net, _ = train(linear_ds, (5, 8, 3), cfg)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(linear_ds.features))
    n_val = int(round(len(perm) * cfg.val_fraction))
    tr = perm[n_val:]
    want = linear_ds.features[tr].mean(axis=0)
    assert np.allclose(net.in_norm.mean, want, atol=1e-12)


def test_constant_feature_std_guard():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(50, 3))
    X[:, 1] = 7.0  # constant column
    Y = X[:, :1].copy()
    net, _ = train(_DS(X, Y), (3, 4, 1), TrainConfig(epochs=2, seed=0))
    assert net.in_norm.std[1] == 1.0
    assert np.isfinite(forward(net, X[0])).all()


# -- gradient check ---------------------------------------------------------

def _point_off_kinks(net, rng, dim):
    for _ in range(50):
        x = rng.normal(size=dim)
        try:
            return x, gradient_check(net, x)
        except KinkProximity:
            continue
    raise AssertionError("could not sample away from kinks")


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = init_net((4, 8, 8, 3), rng)
    _, err = _point_off_kinks(net, rng, 4)
    assert err <= 1e-4


def test_gradient_exact_for_linear_net():
    rng = np.random.default_rng(2)
    net = init_net((4, 3), rng)
    err = gradient_check(net, rng.normal(size=4))
    assert err <= 1e-7


def test_gradient_check_flags_kink():
    net = identity_net()
    with pytest.raises(KinkProximity):
        gradient_check(net, [0.0])


# -- interval bounds --------------------------------------------------------

def _one_neuron_net(w, b):
    return MlpNet(layer_dims=(len(w), 1, 1),
                  weights=[np.array([w]), np.array([[1.0]])],
                  biases=[np.array([b]), np.zeros(1)],
                  in_norm=Normalizer.identity(len(w)),
                  out_norm=Normalizer.identity(1))


def test_bounds_affine_image():
    nb = interval_bounds(_one_neuron_net([1.0], 0.0), [-1.0], [2.0])
    assert nb.lower[0][0] == pytest.approx(-1.0)
    assert nb.upper[0][0] == pytest.approx(2.0)


def test_bounds_sign_flip():
    nb = interval_bounds(_one_neuron_net([-1.0], 0.0), [-1.0], [2.0])
    assert nb.lower[0][0] == pytest.approx(-2.0)
    assert nb.upper[0][0] == pytest.approx(1.0)


def test_bounds_interval_sum():
    nb = interval_bounds(_one_neuron_net([1.0, 1.0], 0.0),
                         [0.0, 0.0], [1.0, 1.0])
    assert nb.lower[0][0] == pytest.approx(0.0)
    assert nb.upper[0][0] == pytest.approx(2.0)


def test_bounds_reject_empty_box():
    with pytest.raises(EmptyBox):
        interval_bounds(_one_neuron_net([1.0], 0.0), [2.0], [1.0])


def test_bounds_sound_on_10000_random_inputs():
    rng = np.random.default_rng(7)
    net = init_net((6, 24, 16, 4), rng)
    lo = rng.uniform(-3, 0, 6)
    hi = lo + rng.uniform(0.5, 4, 6)
    nb = interval_bounds(net, lo, hi)
    xs = rng.uniform(lo, hi, size=(10000, 6))
    _, _, pres = _normed_forward(net, net.in_norm.apply(xs))
    for layer, z in enumerate(pres):
        assert (z >= nb.lower[layer] - 1e-9).all()
        assert (z <= nb.upper[layer] + 1e-9).all()


# -- persistence ------------------------------------------------------------

def test_save_load_round_trip(linear_net, tmp_path):
    net, _ = linear_net
    p = tmp_path / "w.json"
    save_net(net, p)
    again = load_net(p)
    rng = np.random.default_rng(3)
    xs = rng.uniform(-2, 2, size=(100, 5))
    assert np.abs(forward(net, xs) - forward(again, xs)).max() <= 1e-12
    assert again.layer_dims == net.layer_dims
    assert again.feature_names == net.feature_names


def test_truncated_file_rejected(linear_net, tmp_path):
    net, _ = linear_net
    p = tmp_path / "w.json"
    save_net(net, p)
    blob = p.read_text()
    p.write_text(blob[:len(blob) // 2])
    with pytest.raises(CorruptWeights):
        load_net(p)


def test_version_mismatch_rejected(linear_net, tmp_path):
    net, _ = linear_net
    p = tmp_path / "w.json"
    save_net(net, p)
    doc = json.loads(p.read_text())
    doc["version"] = 99
    p.write_text(json.dumps(doc))
    with pytest.raises(CorruptWeights):
        load_net(p)


def test_inconsistent_dims_rejected(linear_net, tmp_path):
    net, _ = linear_net
    p = tmp_path / "w.json"
    save_net(net, p)
    doc = json.loads(p.read_text())
    doc["layer_dims"] = [5, 31, 3]
    p.write_text(json.dumps(doc))
    with pytest.raises(CorruptWeights):
        load_net(p)
