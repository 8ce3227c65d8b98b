"""Feedforward ReLU predictor: training, checking, interval bounds.

The network maps raw features through a fitted z-score normalizer, a
stack of ReLU layers, and an output denormalizer. Training is Adam on
mean squared error with a held-out validation split; the weights from
the best validation epoch are returned. Everything is plain numpy and
deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

WEIGHTS_VERSION = 1
KINK_TOL = 1e-4


class MlpError(Exception):
    pass


class DimensionMismatch(MlpError):
    pass


class EmptyDataset(MlpError):
    pass


class ArchMismatch(MlpError):
    pass


class KinkProximity(MlpError):
    """An input sits too close to a ReLU kink for finite differences."""


class EmptyBox(MlpError):
    pass


class CorruptWeights(MlpError):
    pass


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data: np.ndarray) -> "Normalizer":
        mean = data.mean(axis=0)
        std = data.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant feature guard
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, dim: int) -> "Normalizer":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def invert(self, y: np.ndarray) -> np.ndarray:
        return y * self.std + self.mean


@dataclass
class MlpNet:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]          # (out_dim, in_dim) per layer
    biases: list[np.ndarray]
    in_norm: Normalizer
    out_norm: Normalizer
    feature_names: tuple[str, ...] = ()
    label_names: tuple[str, ...] = ()

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2:
            raise DimensionMismatch("need at least input and output dims")
        if len(self.weights) != len(dims) - 1:
            raise DimensionMismatch("weight count does not match dims")
        for m, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[m + 1], dims[m]):
                raise DimensionMismatch(
                    f"layer {m}: weight shape {w.shape} != "
                    f"({dims[m + 1]}, {dims[m]})")
            if b.shape != (dims[m + 1],):
                raise DimensionMismatch(f"layer {m}: bias shape {b.shape}")

    @property
    def n_inputs(self) -> int:
        return self.layer_dims[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_dims[-1]

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return self.layer_dims[1:-1]


@dataclass
class TrainConfig:
    epochs: int = 800
    batch_size: int = 32
    learning_rate: float = 3e-3
    val_fraction: float = 0.2
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise MlpError("epochs must be at least 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise MlpError("val_fraction must lie in (0, 1)")
        if self.batch_size < 1:
            raise MlpError("batch_size must be at least 1")


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    final_val_mse: float                 # normalized units, best epoch
    per_label_val_mse: dict[str, float]  # raw units
    best_epoch: int


def _normed_forward(net: MlpNet, xn: np.ndarray):
    """Forward in normalized space; returns activations and pre-acts."""
    acts = [xn]
    pres = []
    a = xn
    n_hidden = len(net.weights) - 1
    for m in range(n_hidden):
        z = a @ net.weights[m].T + net.biases[m]
        pres.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    out = a @ net.weights[-1].T + net.biases[-1]
    return out, acts, pres


def forward(net: MlpNet, x) -> np.ndarray:
    """Predict raw labels from raw features; accepts 1-D or 2-D x."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != net.n_inputs:
        raise DimensionMismatch(
            f"expected {net.n_inputs} features, got {arr.shape[1]}")
    out, _, _ = _normed_forward(net, net.in_norm.apply(arr))
    y = net.out_norm.invert(out)
    return y[0] if single else y


def pre_activations(net: MlpNet, x) -> list[np.ndarray]:
    """Hidden pre-activation values for a single raw input."""
    arr = np.asarray(x, dtype=float)[None, :]
    if arr.shape[1] != net.n_inputs:
        raise DimensionMismatch("feature length mismatch")
    _, _, pres = _normed_forward(net, net.in_norm.apply(arr))
    return [p[0] for p in pres]


def init_net(arch, rng, feature_names=(), label_names=()) -> MlpNet:
    """He-initialized network with identity normalizers."""
    dims = tuple(int(d) for d in arch)
    ws, bs = [], []
    for m in range(len(dims) - 1):
        scale = math.sqrt(2.0 / dims[m])
        ws.append(rng.normal(0.0, scale, size=(dims[m + 1], dims[m])))
        bs.append(np.zeros(dims[m + 1]))
    return MlpNet(layer_dims=dims, weights=ws, biases=bs,
                  in_norm=Normalizer.identity(dims[0]),
                  out_norm=Normalizer.identity(dims[-1]),
                  feature_names=tuple(feature_names),
                  label_names=tuple(label_names))


def _loss_and_grads(net: MlpNet, xn, tn):
    """Mean squared error and parameter gradients, normalized space."""
    out, acts, pres = _normed_forward(net, xn)
    diff = out - tn
    n, k = diff.shape
    loss = float((diff * diff).mean())
    g = 2.0 * diff / (n * k)
    gws = [None] * len(net.weights)
    gbs = [None] * len(net.biases)
    # output layer
    gws[-1] = g.T @ acts[-1]
    gbs[-1] = g.sum(axis=0)
    upstream = g @ net.weights[-1]
    for m in range(len(net.weights) - 2, -1, -1):
        upstream = upstream * (pres[m] > 0.0)
        gws[m] = upstream.T @ acts[m]
        gbs[m] = upstream.sum(axis=0)
        if m > 0:
            upstream = upstream @ net.weights[m]
    return loss, gws, gbs


def train(dataset, arch, cfg: TrainConfig | None = None):
    """Fit a net to dataset.features -> dataset.labels.

    dataset must expose features (n, d), labels (n, k), and optionally
    feature_names / label_names. Returns (MlpNet, TrainReport); the
    net carries the weights of the best validation epoch.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(dataset.features, dtype=float)
    Y = np.asarray(dataset.labels, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("dataset has no rows")
    n, d = X.shape
    k = Y.shape[1]
    dims = tuple(int(a) for a in arch)
    if dims[0] != d or dims[-1] != k:
        raise ArchMismatch(f"arch {dims} does not match data ({d} -> {k})")
    if n < 2:
        raise EmptyDataset("need at least 2 samples for a split")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = min(max(int(round(n * cfg.val_fraction)), 1), n - 1)
    val_idx = perm[:n_val]
    tr_idx = perm[n_val:]

    in_norm = Normalizer.fit(X[tr_idx])
    out_norm = Normalizer.fit(Y[tr_idx])
    Xn_tr = in_norm.apply(X[tr_idx])
    Yn_tr = out_norm.apply(Y[tr_idx])
    Xn_val = in_norm.apply(X[val_idx])
    Yn_val = out_norm.apply(Y[val_idx])

    names_f = tuple(getattr(dataset, "feature_names", ()) or ())
    names_l = tuple(getattr(dataset, "label_names", ()) or ())
    net = init_net(dims, rng, names_f, names_l)
    net.in_norm = in_norm
    net.out_norm = out_norm

    params = net.weights + net.biases
    m_adam = [np.zeros_like(p) for p in params]
    v_adam = [np.zeros_like(p) for p in params]
    step = 0

    def val_mse():
        out, _, _ = _normed_forward(net, Xn_val)
        return float(((out - Yn_val) ** 2).mean())

    best = val_mse()
    best_state = ([w.copy() for w in net.weights],
                  [b.copy() for b in net.biases])
    best_epoch = -1
    tr_hist, val_hist = [], []
    n_tr = len(tr_idx)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n_tr)
        ep_loss = 0.0
        n_batches = 0
        for lo in range(0, n_tr, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            loss, gws, gbs = _loss_and_grads(net, Xn_tr[sel], Yn_tr[sel])
            ep_loss += loss
            n_batches += 1
            step += 1
            grads = gws + gbs
            b1c = 1.0 - cfg.adam_beta1 ** step
            b2c = 1.0 - cfg.adam_beta2 ** step
            for p, g, mm, vv in zip(params, grads, m_adam, v_adam):
                mm *= cfg.adam_beta1
                mm += (1.0 - cfg.adam_beta1) * g
                vv *= cfg.adam_beta2
                vv += (1.0 - cfg.adam_beta2) * g * g
                p -= (cfg.learning_rate * (mm / b1c)
                      / (np.sqrt(vv / b2c) + cfg.adam_eps))
        tr_hist.append(ep_loss / max(n_batches, 1))
        v = val_mse()
        val_hist.append(v)
        if v < best:
            best = v
            best_state = ([w.copy() for w in net.weights],
                          [b.copy() for b in net.biases])
            best_epoch = epoch

    net.weights = best_state[0]
    net.biases = best_state[1]

    out, _, _ = _normed_forward(net, Xn_val)
    raw_err = out_norm.invert(out) - Y[val_idx]
    per_label = {}
    for j in range(k):
        name = names_l[j] if j < len(names_l) else f"label_{j}"
        per_label[name] = float((raw_err[:, j] ** 2).mean())
    report = TrainReport(train_loss=tr_hist, val_loss=val_hist,
                         final_val_mse=best,
                         per_label_val_mse=per_label,
                         best_epoch=best_epoch)
    return net, report


def gradient_check(net: MlpNet, x) -> float:
    """Max relative backprop error vs central finite differences.

    Uses the scalar loss 0.5*||normed_forward(x)||^2. Raises
    KinkProximity when any hidden pre-activation sits within 1e-4 of
    zero, where finite differences straddle the kink.
    """
    arr = np.asarray(x, dtype=float)[None, :]
    if arr.shape[1] != net.n_inputs:
        raise DimensionMismatch("feature length mismatch")
    xn = net.in_norm.apply(arr)
    for z in _normed_forward(net, xn)[2]:
        if np.abs(z).min() <= KINK_TOL:
            raise KinkProximity("input too close to a ReLU kink")

    def loss_at() -> float:
        out, _, _ = _normed_forward(net, xn)
        return 0.5 * float((out * out).sum())

    # analytic gradient of 0.5*||out||^2
    out, acts, pres = _normed_forward(net, xn)
    g = out
    gws = [None] * len(net.weights)
    gbs = [None] * len(net.biases)
    gws[-1] = g.T @ acts[-1]
    gbs[-1] = g.sum(axis=0)
    upstream = g @ net.weights[-1]
    for m in range(len(net.weights) - 2, -1, -1):
        upstream = upstream * (pres[m] > 0.0)
        gws[m] = upstream.T @ acts[m]
        gbs[m] = upstream.sum(axis=0)
        if m > 0:
            upstream = upstream @ net.weights[m]

    h = 1e-5
    worst = 0.0
    for analytic, param in zip(gws + gbs, net.weights + net.biases):
        it = np.nditer(param, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            keep = param[idx]
            param[idx] = keep + h
            up = loss_at()
            param[idx] = keep - h
            dn = loss_at()
            param[idx] = keep
            fd = (up - dn) / (2.0 * h)
            ref = max(abs(analytic[idx]), abs(fd), 1e-8)
            worst = max(worst, abs(analytic[idx] - fd) / ref)
    return worst


@dataclass
class NeuronBounds:
    """Sound pre-activation intervals per hidden layer for an input box."""

    lower: list[np.ndarray]
    upper: list[np.ndarray]
    input_lo: np.ndarray   # raw feature units
    input_hi: np.ndarray

    def n_neurons(self) -> int:
        return sum(lo.size for lo in self.lower)


def interval_bounds(net: MlpNet, input_lo, input_hi) -> NeuronBounds:
    """Propagate the raw-feature box through the normalized layers."""
    lo = np.asarray(input_lo, dtype=float)
    hi = np.asarray(input_hi, dtype=float)
    if lo.shape != (net.n_inputs,) or hi.shape != (net.n_inputs,):
        raise DimensionMismatch("box does not match the feature count")
    if np.any(lo > hi):
        raise EmptyBox("some feature has lo > hi")
    a_lo = net.in_norm.apply(lo)
    a_hi = net.in_norm.apply(hi)
    lows, highs = [], []
    for m in range(len(net.weights) - 1):
        w = net.weights[m]
        wp = np.maximum(w, 0.0)
        wn = np.minimum(w, 0.0)
        z_lo = wp @ a_lo + wn @ a_hi + net.biases[m]
        z_hi = wp @ a_hi + wn @ a_lo + net.biases[m]
        lows.append(z_lo)
        highs.append(z_hi)
        a_lo = np.maximum(z_lo, 0.0)
        a_hi = np.maximum(z_hi, 0.0)
    return NeuronBounds(lower=lows, upper=highs,
                        input_lo=lo.copy(), input_hi=hi.copy())


def save_net(net: MlpNet, path) -> None:
    doc = {
        "version": WEIGHTS_VERSION,
        "layer_dims": list(net.layer_dims),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "in_mean": net.in_norm.mean.tolist(),
        "in_std": net.in_norm.std.tolist(),
        "out_mean": net.out_norm.mean.tolist(),
        "out_std": net.out_norm.std.tolist(),
        "feature_names": list(net.feature_names),
        "label_names": list(net.label_names),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_net(path) -> MlpNet:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptWeights(f"cannot read weights: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("version") != WEIGHTS_VERSION:
        raise CorruptWeights(
            f"unsupported weights version {doc.get('version')!r}"
            if isinstance(doc, dict) else "weights file is not an object")
    try:
        dims = tuple(int(d) for d in doc["layer_dims"])
        ws = [np.array(w, dtype=float) for w in doc["weights"]]
        bs = [np.array(b, dtype=float) for b in doc["biases"]]
        net = MlpNet(
            layer_dims=dims, weights=ws, biases=bs,
            in_norm=Normalizer(np.array(doc["in_mean"], dtype=float),
                               np.array(doc["in_std"], dtype=float)),
            out_norm=Normalizer(np.array(doc["out_mean"], dtype=float),
                                np.array(doc["out_std"], dtype=float)),
            feature_names=tuple(doc.get("feature_names", ())),
            label_names=tuple(doc.get("label_names", ())))
    except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
        raise CorruptWeights(f"malformed weights file: {exc}") from exc
    for arr in net.weights + net.biases + [net.in_norm.mean, net.in_norm.std,
                                           net.out_norm.mean,
                                           net.out_norm.std]:
        if not np.all(np.isfinite(arr)):
            raise CorruptWeights("non-finite values in weights file")
    if np.any(net.in_norm.std <= 0) or np.any(net.out_norm.std <= 0):
        raise CorruptWeights("normalizer stds must be positive")
    return net
