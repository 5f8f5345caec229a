"""Baselines and chaos-backbone classifiers behind one layered interface.

A model is an ordered list of layers plus the architecture record that
rebuilt it. Trainable parameters are addressed as ``"layer.param"``; frozen
backbone arrays (reservoir weight, coupling matrix) never appear there.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .autodiff import (
    ConvBlock,
    Dense,
    EsnBackbone,
    Normalize,
    OdeBackbone,
    loss_and_grads,
    run_layers,
)
from .dynamics import CoupledSto, EsnMap, Lorenz96
from .numerics import RngStream, rescale_to_radius

FORMAT_VERSION = 1
MNIST_DIM = 784
N_CLASSES = 10


class Model:
    def __init__(self, layers, architecture, seed):
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")
        self.layers = layers
        self.architecture = architecture
        self.seed = seed

    def __repr__(self):
        return f"Model({self.architecture.get('family')}, layers={[l.name for l in self.layers]})"

    def layer(self, name):
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)

    def index(self, name):
        return [l.name for l in self.layers].index(name)

    def forward(self, X, tape=None):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        out = run_layers(self.layers, X[None, :] if single else X, tape)
        return out[0] if single else out

    def forward_range(self, X, start=0, stop=None):
        """Run ``layers[start:stop]``; lets callers inject signals between layers."""
        return run_layers(self.layers[start:stop], X)

    def predict(self, X, batch=1000):
        X = np.asarray(X, dtype=np.float64)
        return np.concatenate([np.argmax(self.forward(X[i:i + batch]), axis=1)
                               for i in range(0, len(X), batch)]) if len(X) else np.zeros(0, int)

    def loss_and_grads(self, X, labels, loss="ce"):
        return loss_and_grads(self.layers, X, labels, loss)

    def params(self):
        """Live references to the trainable arrays."""
        return {f"{l.name}.{k}": v for l in self.layers if l.trainable for k, v in l.params.items()}

    def set_params(self, new):
        by_layer = {}
        for key, v in new.items():
            lname, pname = key.rsplit(".", 1)
            by_layer.setdefault(lname, {})[pname] = v
        for lname, d in by_layer.items():
            layer = self.layer(lname)
            if not layer.trainable:
                raise ValueError(f"layer {lname!r} is frozen")
            layer.replace_params(d)

    def frozen_arrays(self):
        out = {}
        for l in self.layers:
            sys = getattr(l, "system", None)
            if isinstance(sys, EsnMap):
                out[f"{l.name}.W"] = sys.W
            elif isinstance(sys, CoupledSto):
                out[f"{l.name}.W_cp"] = sys.W_cp
        return out

    def backbone_layers(self):
        return [l for l in self.layers if isinstance(l, (EsnBackbone, OdeBackbone))]

    def save(self, path):
        save_checkpoint(self, path)


def _uniform(gen, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return gen.uniform(-bound, bound, shape)


def _streams(seed):
    root = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    # stream 0 draws frozen backbones, stream 1 trainable initial values
    return root.substream(0), root.substream(1).generator()


def linear(in_dim=MNIST_DIM, n_classes=N_CLASSES, seed=0):
    _, gen = _streams(seed)
    layers = [Dense("out", _uniform(gen, (n_classes, in_dim), in_dim), _uniform(gen, n_classes, in_dim))]
    return Model(layers, dict(family="linear", in_dim=in_dim, n_classes=n_classes), seed)


def mlp(widths=(MNIST_DIM, 500, N_CLASSES), rho=None, seed=0):
    """tanh MLP; with ``rho`` every square hidden weight is rescaled to that spectral radius."""
    widths = list(widths)
    if len(widths) < 2:
        raise ValueError("need at least input and output widths")
    _, gen = _streams(seed)
    layers = []
    n_layers = len(widths) - 1
    for i in range(n_layers):
        fi, fo = widths[i], widths[i + 1]
        W = _uniform(gen, (fo, fi), fi)
        b = _uniform(gen, fo, fi)
        last = i == n_layers - 1
        if rho is not None and not last and i > 0:
            if fo != fi:
                raise ValueError("spectral-radius initialization needs square hidden layers")
            W = rescale_to_radius(W, rho)
        layers.append(Dense("out" if last else f"fc{i + 1}", W, b, "identity" if last else "tanh"))
    return Model(layers, dict(family="mlp", widths=widths, rho=rho), seed)


def hidden_square_layers(model):
    return [l for l in model.layers if isinstance(l, Dense) and l.activation == "tanh"
            and l.params["W"].shape[0] == l.params["W"].shape[1]]


def _conv_layer(gen, channels=8, kernel=5, side=28, pool=2):
    fan_in = kernel * kernel
    return ConvBlock("conv", _uniform(gen, (channels, kernel, kernel), fan_in),
                     _uniform(gen, channels, fan_in), side=side, pool=pool)


def cnn(hidden=600, channels=8, kernel=5, side=28, n_classes=N_CLASSES, seed=0):
    _, gen = _streams(seed)
    conv = _conv_layer(gen, channels, kernel, side)
    f = conv.out_dim
    layers = [conv,
              Dense("fc", _uniform(gen, (hidden, f), f), _uniform(gen, hidden, f), "tanh"),
              Dense("out", _uniform(gen, (n_classes, hidden), hidden), _uniform(gen, n_classes, hidden))]
    return Model(layers, dict(family="cnn", hidden=hidden, channels=channels, kernel=kernel,
                              side=side, n_classes=n_classes), seed)


def _read_in(gen, n, in_dim):
    return Dense("read_in", _uniform(gen, (n, in_dim), in_dim))


def _read_out(gen, n, n_classes, bias):
    return Dense("read_out", _uniform(gen, (n_classes, n), n), _uniform(gen, n_classes, n) if bias else None)


def ffesn(n=500, rho=1.0, T=1, density=0.5, in_dim=MNIST_DIM, n_classes=N_CLASSES,
          bias_out=False, activation="tanh", seed=0):
    """``x0 = W_in u``, ``T`` reservoir steps ``x <- f(W' x)``, ``y = W_out x_T``."""
    bstream, gen = _streams(seed)
    esn = EsnMap.random(n, rho, density, bstream, activation)
    layers = [_read_in(gen, n, in_dim), EsnBackbone("reservoir", esn, T),
              _read_out(gen, n, n_classes, bias_out)]
    arch = dict(family="ffesn", n=n, rho=rho, T=T, density=density, in_dim=in_dim,
                n_classes=n_classes, bias_out=bias_out, activation=activation)
    return Model(layers, arch, seed)


def lorenz(n=500, F=0.5, T=0.4, dt=0.01, in_dim=MNIST_DIM, n_classes=N_CLASSES, bias_out=True,
           grad_mode="adjoint", seed=0):
    """``x0 = W_in u``, Lorenz-96 flow for time ``T``, ``y = W_out [x(T); 1]``."""
    _, gen = _streams(seed)
    layers = [_read_in(gen, n, in_dim),
              OdeBackbone("flow", Lorenz96(F, n), T, dt, renormalize=False, grad_mode=grad_mode),
              _read_out(gen, n, n_classes, bias_out)]
    arch = dict(family="lorenz", n=n, F=F, T=T, dt=dt, in_dim=in_dim, n_classes=n_classes,
                bias_out=bias_out, grad_mode=grad_mode)
    return Model(layers, arch, seed)


def _sto_stage(name, n_osc, A_cp, T, dt, stream, grad_mode):
    return OdeBackbone(name, CoupledSto(n_osc, A_cp, rng=stream), T, dt, renormalize=True,
                       grad_mode=grad_mode)


def deep_csto(n_osc=50, A_cp=(10.0, 0.1, 10.0), T=(0.1, 0.1, 0.1), dt=0.002, in_dim=MNIST_DIM,
              n_classes=N_CLASSES, bias_out=True, conv=False, grad_mode="adjoint", seed=0):
    """Stages of coupled oscillators joined by trainable ``W_k`` and renormalization.

    Times are in ns. With ``conv`` a convolution block feeds the read-in.
    """
    A_cp = [float(a) for a in np.atleast_1d(A_cp)]
    T = [float(t) for t in np.atleast_1d(T)]
    if len(T) == 1 and len(A_cp) > 1:
        T = T * len(A_cp)
    if len(T) != len(A_cp):
        raise ValueError("one horizon per stage is required")
    bstream, gen = _streams(seed)
    d = 3 * n_osc
    layers = []
    feat = in_dim
    if conv:
        c = _conv_layer(gen)
        layers.append(c)
        feat = c.out_dim
    layers += [_read_in(gen, d, feat), Normalize("norm1")]
    for k, (a, t) in enumerate(zip(A_cp, T), start=1):
        if k > 1:
            layers += [Dense(f"W_{k}", _uniform(gen, (d, d), d)), Normalize(f"norm{k}")]
        layers.append(_sto_stage(f"sto{k}" if len(A_cp) > 1 else "sto", n_osc, a, t, dt,
                                 bstream.substream(k), grad_mode))
    layers.append(_read_out(gen, d, n_classes, bias_out))
    family = "conv_csto" if conv else ("csto" if len(A_cp) == 1 else "deep_csto")
    arch = dict(family=family, n_osc=n_osc, A_cp=A_cp, T=T, dt=dt, in_dim=in_dim,
                n_classes=n_classes, bias_out=bias_out, conv=conv, grad_mode=grad_mode)
    return Model(layers, arch, seed)


def csto(n_osc=50, A_cp=17.8, T=0.3, dt=0.002, **kw):
    """``x0 = f_norm(W_in u)``, coupled-oscillator flow for ``T`` ns, biased read-out."""
    return deep_csto(n_osc, [A_cp], [T], dt, **kw)


def conv_csto(n_osc=50, A_cp=745.0, T=0.2, dt=0.002, **kw):
    return deep_csto(n_osc, [A_cp], [T], dt, conv=True, **kw)


BUILDERS = {
    "linear": linear,
    "mlp": mlp,
    "cnn": cnn,
    "ffesn": ffesn,
    "lorenz": lorenz,
    "csto": lambda **kw: deep_csto(**kw),
    "deep_csto": deep_csto,
    "conv_csto": lambda **kw: deep_csto(**kw),
}


def build(architecture, seed=0):
    arch = dict(architecture)
    family = arch.pop("family")
    if family not in BUILDERS:
        raise ValueError(f"unknown model family {family!r}")
    if family in ("csto", "conv_csto"):
        arch["conv"] = family == "conv_csto"
    return BUILDERS[family](seed=seed, **arch)


def _seed_record(seed):
    if isinstance(seed, RngStream):
        return {"seed": seed.seed, "stream": seed.stream}
    return {"seed": int(seed), "stream": None}


def _seed_from(rec):
    return rec["seed"] if rec["stream"] is None else RngStream(rec["seed"], rec["stream"])


def save_checkpoint(model, path):
    """Directory with ``manifest.json`` and one little-endian float64 blob per array."""
    os.makedirs(path, exist_ok=True)
    entries = []
    arrays = [("param", k, v) for k, v in model.params().items()]
    arrays += [("frozen", k, v) for k, v in model.frozen_arrays().items()]
    for kind, key, arr in arrays:
        fname = f"{kind}__{key}.bin"
        np.ascontiguousarray(arr, dtype="<f8").tofile(os.path.join(path, fname))
        entries.append({"name": key, "kind": kind, "shape": list(arr.shape), "file": fname})
    manifest = {"format_version": FORMAT_VERSION, "architecture": model.architecture,
                "seeds": _seed_record(model.seed), "arrays": entries}
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path):
    try:
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {err}") from err
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {manifest.get('format_version')!r}")
    model = build(manifest["architecture"], seed=_seed_from(manifest["seeds"]))
    frozen = model.frozen_arrays()
    params = {}
    for e in manifest["arrays"]:
        arr = np.fromfile(os.path.join(path, e["file"]), dtype="<f8")
        if arr.size != int(np.prod(e["shape"])):
            raise CheckpointError(f"blob {e['file']} has {arr.size} values, expected shape {e['shape']}")
        arr = arr.reshape(e["shape"]).astype(np.float64)
        if e["kind"] == "param":
            params[e["name"]] = arr
        elif not np.array_equal(frozen[e["name"]], arr):
            raise CheckpointError(f"frozen array {e['name']} does not match its seeded rebuild")
    model.set_params(params)
    return model

