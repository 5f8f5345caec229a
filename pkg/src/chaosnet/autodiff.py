"""Reverse- and forward-mode products for the layers the models are built from.

Layers are stateless with respect to a pass: ``forward`` returns the output
and a context holding whatever the backward pass needs, so one layer can be
used from several threads at once. Inputs carry a leading batch axis.

Every layer exposes

* ``forward(X) -> (Y, ctx)``
* ``vjp(ctx, G)``: rows of ``G`` pulled back through the layer
* ``jvp(ctx, V)``: tangent rows pushed forward (a context built from a
  single sample broadcasts over any number of tangent rows)
* ``param_grads(ctx, G)``: dict of parameter gradients summed over the batch
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dynamics import (
    DivergenceError,
    rk4_step,
    rk4_step_jvp,
    rk4_step_vjp,
    step_sizes,
)


class UsageError(RuntimeError):
    """An API call made out of order, e.g. backward before any forward."""


class ConsistencyError(RuntimeError):
    """Stored forward data does not match what the backward pass expects."""


_ACT = {
    "identity": (lambda z: z, None),
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
}


class Layer:
    name: str = "layer"
    depth = 1
    params: dict = {}
    trainable = True

    def param_grads(self, ctx, G):
        return {}

    def replace_params(self, new):
        for k, v in new.items():
            if self.params[k].shape != np.shape(v):
                raise ValueError(f"{self.name}.{k}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k] = np.array(v, dtype=np.float64)


class Dense(Layer):
    """``act(X W^T + b)``; ``b`` may be omitted."""

    def __init__(self, name, W, b=None, activation="identity", trainable=True):
        if activation not in _ACT:
            raise ValueError(f"unknown activation {activation!r}")
        self.name = name
        self.params = {"W": np.array(W, dtype=np.float64)}
        if b is not None:
            self.params["b"] = np.array(b, dtype=np.float64)
        self.activation = activation
        self.trainable = trainable

    @property
    def in_dim(self):
        return self.params["W"].shape[1]

    @property
    def out_dim(self):
        return self.params["W"].shape[0]

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: input width {X.shape[-1]}, expected {self.in_dim}")
        Z = X @ self.params["W"].T
        if "b" in self.params:
            Z = Z + self.params["b"]
        Y = _ACT[self.activation][0](Z)
        return Y, {"X": X, "Y": Y}

    def _local(self, ctx, G):
        d = _ACT[self.activation][1]
        return G if d is None else G * d(ctx["Y"])

    def vjp(self, ctx, G):
        return self._local(ctx, G) @ self.params["W"]

    def jvp(self, ctx, V):
        Z = V @ self.params["W"].T
        d = _ACT[self.activation][1]
        return Z if d is None else Z * d(ctx["Y"])

    def param_grads(self, ctx, G):
        Gz = self._local(ctx, G)
        out = {"W": Gz.T @ ctx["X"]}
        if "b" in self.params:
            out["b"] = Gz.sum(axis=0)
        return out


def Affine(name, W, b=None, trainable=True):
    return Dense(name, W, b, activation="identity", trainable=trainable)


class Normalize(Layer):
    """Per-block projection onto the unit sphere (blocks of ``block`` entries)."""

    depth = 0
    trainable = False

    def __init__(self, name="norm", block=3, floor=1e-12):
        self.name = name
        self.block = block
        self.floor = floor
        self.params = {}

    def _blocks(self, X):
        return X.reshape(X.shape[:-1] + (X.shape[-1] // self.block, self.block))

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] % self.block:
            raise ValueError(f"{self.name}: width {X.shape[-1]} is not a multiple of {self.block}")
        B = self._blocks(X)
        nrm = np.linalg.norm(B, axis=-1, keepdims=True)
        if np.any(nrm < self.floor) or not np.all(np.isfinite(nrm)):
            raise ValueError(f"{self.name}: block norm below {self.floor:g} cannot be normalized")
        U = B / nrm
        return U.reshape(X.shape), {"U": U, "nrm": nrm}

    def vjp(self, ctx, G):
        Gb = self._blocks(G)
        U = ctx["U"]
        out = (Gb - U * np.sum(U * Gb, axis=-1, keepdims=True)) / ctx["nrm"]
        return out.reshape(G.shape)

    jvp = vjp  # symmetric Jacobian


class ConvBlock(Layer):
    """Single-channel valid convolution, bias, tanh and non-overlapping average pooling."""

    def __init__(self, name, K, b, side=28, pool=2, trainable=True):
        K = np.array(K, dtype=np.float64)
        if K.ndim != 3 or K.shape[1] != K.shape[2]:
            raise ValueError("kernel must be shaped (channels, k, k)")
        self.name = name
        self.params = {"K": K, "b": np.array(b, dtype=np.float64)}
        self.side = side
        self.pool = pool
        self.trainable = trainable
        conv = side - K.shape[1] + 1
        if conv % pool:
            raise ValueError("pooling must tile the convolution output")

    @property
    def channels(self):
        return self.params["K"].shape[0]

    @property
    def conv_side(self):
        return self.side - self.params["K"].shape[1] + 1

    @property
    def out_dim(self):
        return self.channels * (self.conv_side // self.pool) ** 2

    def _images(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.side * self.side:
            raise ValueError(f"{self.name}: expected {self.side}x{self.side} images, got width {X.shape[-1]}")
        return X.reshape(-1, self.side, self.side)

    def _conv(self, imgs):
        k = self.params["K"].shape[1]
        patches = sliding_window_view(imgs, (k, k), axis=(1, 2))
        return np.einsum("bijkl,ckl->bcij", patches, self.params["K"], optimize=True)

    def _pool(self, A):
        b, c, s, _ = A.shape
        p = self.pool
        return A.reshape(b, c, s // p, p, s // p, p).mean(axis=(3, 5)).reshape(b, -1)

    def _unpool(self, G):
        c, s, p = self.channels, self.conv_side, self.pool
        Gp = G.reshape(-1, c, s // p, s // p) / (p * p)
        return np.repeat(np.repeat(Gp, p, axis=2), p, axis=3)

    def forward(self, X):
        imgs = self._images(X)
        A = np.tanh(self._conv(imgs) + self.params["b"][None, :, None, None])
        return self._pool(A), {"imgs": imgs, "A": A}

    def _dz(self, ctx, G):
        return self._unpool(G) * (1.0 - ctx["A"] ** 2)

    def vjp(self, ctx, G):
        dz = self._dz(ctx, G)
        K = self.params["K"]
        k = K.shape[1]
        s = self.conv_side
        out = np.zeros((dz.shape[0], self.side, self.side))
        for u in range(k):
            for v in range(k):
                out[:, u:u + s, v:v + s] += np.einsum("bcij,c->bij", dz, K[:, u, v])
        return out.reshape(dz.shape[0], -1)

    def jvp(self, ctx, V):
        dz = self._conv(self._images(V)) * (1.0 - ctx["A"] ** 2)
        return self._pool(dz)

    def param_grads(self, ctx, G):
        dz = self._dz(ctx, G)
        k = self.params["K"].shape[1]
        patches = sliding_window_view(ctx["imgs"], (k, k), axis=(1, 2))
        return {"K": np.einsum("bcij,bijkl->ckl", dz, patches, optimize=True),
                "b": dz.sum(axis=(0, 2, 3))}


class EsnBackbone(Layer):
    """``T`` applications of a frozen discrete map; backward is BPTT."""

    trainable = False

    def __init__(self, name, system, T):
        if int(T) != T or T < 0:
            raise ValueError("T must be a non-negative integer")
        self.name = name
        self.system = system
        self.T = int(T)
        self.params = {}

    @property
    def depth(self):
        return self.T

    def forward(self, X):
        x = np.asarray(X, dtype=np.float64)
        states = [x]
        for i in range(self.T):
            x = self.system.step(x)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"{self.name}: non-finite state at step {i + 1}",
                                      last_state=states[-1], time=i)
            states.append(x)
        return x, {"states": states}

    def vjp(self, ctx, G):
        s = ctx["states"]
        for i in range(self.T - 1, -1, -1):
            G = self.system.vjp(s[i], G, y=s[i + 1])
        return G

    def jvp(self, ctx, V):
        s = ctx["states"]
        for i in range(self.T):
            V = self.system.jvp(s[i], V, y=s[i + 1])
        return V


def hermite_midpoint(x0, x1, f0, f1, h):
    """Cubic Hermite interpolant of a step evaluated at its midpoint."""
    return 0.5 * (x0 + x1) + (h / 8.0) * (f0 - f1)


class OdeBackbone(Layer):
    """Fixed continuous flow over ``[0, T]`` by RK4 with every step stored.

    ``grad_mode="adjoint"`` integrates the adjoint equation backward with
    RK4 on the stored trajectory (cubic Hermite midpoints);
    ``grad_mode="discrete"`` transposes the RK4 steps exactly.
    """

    trainable = False

    def __init__(self, name, system, T, dt, renormalize=None, grad_mode="adjoint"):
        if grad_mode not in ("adjoint", "discrete"):
            raise ValueError(f"unknown grad_mode {grad_mode!r}")
        self.name = name
        self.system = system
        self.T = float(T)
        self.dt = float(dt)
        self.renormalize = hasattr(system, "project") if renormalize is None else renormalize
        self.grad_mode = grad_mode
        self.params = {}
        self.steps = step_sizes(self.T, self.dt)

    @property
    def depth(self):
        return self.T

    def forward(self, X):
        x = np.asarray(X, dtype=np.float64)
        f = self.system.field
        states = [x]
        t = 0.0
        for h in self.steps:
            x_new = rk4_step(f, x, h)
            if self.renormalize:
                x_new = self.system.project(x_new)
            if not np.all(np.isfinite(x_new)):
                raise DivergenceError(f"{self.name}: non-finite state at t={t + h:g}",
                                      last_state=x, time=t)
            x = x_new
            t += h
            states.append(x)
        return x, {"states": states, "steps": list(self.steps)}

    def _check(self, ctx):
        if len(ctx["states"]) != len(ctx["steps"]) + 1:
            raise ConsistencyError(f"{self.name}: {len(ctx['states'])} stored states for "
                                   f"{len(ctx['steps'])} steps")

    def vjp(self, ctx, G, mode=None):
        self._check(ctx)
        mode = mode or self.grad_mode
        states, steps = ctx["states"], ctx["steps"]
        if mode == "discrete":
            for k in range(len(steps) - 1, -1, -1):
                G = rk4_step_vjp(self.system, states[k], G, steps[k], self.renormalize)
            return G
        return self._adjoint(states, steps, G)

    def _adjoint(self, states, steps, lam):
        # d(lam)/ds = J(x(T - s))^T lam in reversed time s
        sys = self.system
        f_next = sys.field(states[-1])
        for k in range(len(steps) - 1, -1, -1):
            h = steps[k]
            x0, x1 = states[k], states[k + 1]
            f0 = sys.field(x0)
            xm = hermite_midpoint(x0, x1, f0, f_next, h)
            l1 = sys.vjp(x1, lam)
            l2 = sys.vjp(xm, lam + 0.5 * h * l1)
            l3 = sys.vjp(xm, lam + 0.5 * h * l2)
            l4 = sys.vjp(x0, lam + h * l3)
            lam = lam + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
            f_next = f0
        return lam

    def jvp(self, ctx, V):
        self._check(ctx)
        states, steps = ctx["states"], ctx["steps"]
        for k, h in enumerate(steps):
            V = rk4_step_jvp(self.system, states[k], V, h, self.renormalize)
        return V


def softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient ``(softmax(z) - onehot(y)) / batch``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    Z = logits - logits.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(Z).sum(axis=-1))
    loss = float(np.mean(logsum - Z[np.arange(n), labels]))
    P = np.exp(Z - logsum[:, None])
    P[np.arange(n), labels] -= 1.0
    return loss, P / n


def mse(outputs, labels):
    """Mean over the batch of ``0.5 * ||y - onehot(label)||^2``."""
    outputs = np.asarray(outputs, dtype=np.float64)
    n = outputs.shape[0]
    T = np.zeros_like(outputs)
    T[np.arange(n), np.asarray(labels)] = 1.0
    R = outputs - T
    return float(0.5 * np.sum(R * R) / n), R / n


LOSSES = {"ce": softmax_cross_entropy, "mse": mse}


@dataclass
class TapeEntry:
    layer: Layer
    x: np.ndarray
    y: np.ndarray
    ctx: dict


class Tape:
    """Ordered record of layer applications from one forward pass."""

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def record(self, layer, x, y, ctx):
        self.entries.append(TapeEntry(layer, x, y, ctx))

    def __len__(self):
        return len(self.entries)

    def replay(self):
        """Recompute every recorded layer from its stored input; returns the outputs."""
        if not self.entries:
            raise UsageError("nothing recorded on the tape")
        outs = []
        for e in self.entries:
            y, _ = e.layer.forward(e.x)
            outs.append(y)
        return outs

    def backward(self, G):
        """Pull ``G`` back through the tape; returns ``(dX, grads)``.

        ``grads`` maps ``"layer.param"`` to gradients of trainable layers only.
        """
        if not self.entries:
            raise UsageError("backward called before any forward pass was recorded")
        grads = {}
        for e in reversed(self.entries):
            if e.layer.trainable and e.layer.params:
                for k, g in e.layer.param_grads(e.ctx, G).items():
                    grads[f"{e.layer.name}.{k}"] = g
            G = e.layer.vjp(e.ctx, G)
        return G, grads


def run_layers(layers, X, tape=None):
    X = np.asarray(X, dtype=np.float64)
    for layer in layers:
        Y, ctx = layer.forward(X)
        if tape is not None:
            tape.record(layer, X, Y, ctx)
        X = Y
    return X


def loss_and_grads(layers, X, labels, loss="ce"):
    """Forward the batch, evaluate ``loss`` and backpropagate; returns ``(loss, grads, outputs)``."""
    tape = Tape()
    out = run_layers(layers, X, tape)
    value, G = LOSSES[loss](out, labels)
    _, grads = tape.backward(G)
    return value, grads, out


def bptt_fixed_backbone(model, X, labels, loss="ce"):
    """Gradients of a model with a discrete frozen backbone (read-in/read-out only)."""
    if not any(isinstance(l, EsnBackbone) for l in model.layers):
        raise TypeError("model has no discrete backbone")
    value, grads, _ = loss_and_grads(model.layers, X, labels, loss)
    return value, grads


def adjoint_gradient(model, X, labels, loss="ce", mode="adjoint"):
    """Gradients of a model with continuous backbones, backward pass by ``mode``."""
    ode = [l for l in model.layers if isinstance(l, OdeBackbone)]
    if not ode:
        raise TypeError("model has no continuous backbone")
    saved = [l.grad_mode for l in ode]
    try:
        for l in ode:
            l.grad_mode = mode
        value, grads, _ = loss_and_grads(model.layers, X, labels, loss)
    finally:
        for l, m in zip(ode, saved):
            l.grad_mode = m
    return value, grads
