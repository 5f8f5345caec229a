"""Heavy-ball SGD, the training loop and the accuracy / convergence metrics."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import DivergenceError
from .numerics import RngStream, spectral_radius


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, message, epoch, batch):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    lr: float = 5e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 15
    seed: int = 0
    eval_every: int = 1
    tol: float = 5e-4
    loss: str = "ce"
    frozen: tuple = ()

    def to_dict(self):
        d = asdict(self)
        d["frozen"] = list(self.frozen)
        return d


def sgd_momentum_step(params, grads, velocity, lr, momentum, frozen=()):
    """``v <- momentum*v - lr*g``; ``p <- p + v``, in place. Keys in ``frozen`` are left alone."""
    for key, g in grads.items():
        if key in frozen:
            continue
        if key not in params:
            raise KeyError(f"gradient for unknown parameter {key!r}")
        p = params[key]
        if p.shape != np.shape(g):
            raise ValueError(f"{key}: gradient shape {np.shape(g)} != parameter shape {p.shape}")
        v = velocity.get(key)
        if v is None:
            v = velocity[key] = np.zeros_like(p)
        v *= momentum
        v -= lr * g
        p += v
    return params, velocity


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    spectral_radii: list = field(default_factory=list)  # per record: (epoch, [rho per layer])
    test_size: int = 0
    best_epoch: int = 0
    best_params: dict | None = None

    def record(self, epoch, train_loss, test_loss, test_acc, wall):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epoch indices must increase")
        if not 0.0 <= test_acc <= 1.0:
            raise ValueError("accuracy outside [0, 1]")
        self.epochs.append(epoch)
        self.train_loss.append(float(train_loss))
        self.test_loss.append(float(test_loss))
        self.test_acc.append(float(test_acc))
        self.wall_time.append(float(wall))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_loss", "test_acc"])
            for row in zip(self.epochs, self.train_loss, self.test_loss, self.test_acc):
                w.writerow([row[0]] + [repr(v) for v in row[1:]])

    def summary(self, tol=5e-4):
        m = metric_suite(self, tol)
        return {"epochs": len(self.epochs), "best_acc": m.best_acc, "epsilon": m.epsilon,
                "loglabel": m.loglabel, "convergence_epoch": m.convergence_epoch,
                "best_epoch": self.best_epoch, "final_acc": self.test_acc[-1] if self.test_acc else None,
                "test_size": self.test_size, "spectral_radii": self.spectral_radii}

    def to_json(self, path, tol=5e-4):
        with open(path, "w") as fh:
            json.dump(self.summary(tol), fh, indent=2, sort_keys=True)


def evaluate(model, X, y, loss="ce", batch=1000):
    from .autodiff import LOSSES

    total, correct = 0.0, 0
    for i in range(0, len(X), batch):
        out = model.forward(X[i:i + batch])
        value, _ = LOSSES[loss](out, y[i:i + batch])
        total += value * len(out)
        correct += int(np.sum(np.argmax(out, axis=1) == y[i:i + batch]))
    n = max(len(X), 1)
    return total / n, correct / n


class SpectralRadiusTracker:
    """Records the spectral radius of every square hidden weight each ``cadence`` epochs."""

    def __init__(self, model, cadence=1):
        from .models import hidden_square_layers

        self.layers = hidden_square_layers(model)
        if not self.layers:
            raise TypeError("model has no square hidden layers to track")
        self.cadence = cadence
        self.trajectory = []

    def __call__(self, epoch):
        if epoch % self.cadence == 0:
            self.trajectory.append((epoch, [spectral_radius(l.params["W"]) for l in self.layers]))


def track_spectral_radius(model, cadence=1):
    tracker = SpectralRadiusTracker(model, cadence)
    tracker(0)
    return tracker


def train(model, train_set, test_set, config=None, callbacks=(), on_epoch=None):
    """Minibatch training with a seeded shuffle; keeps the best-accuracy parameters.

    ``train_set`` and ``test_set`` are ``(inputs, labels)`` pairs or objects
    with ``inputs``/``labels``. Callbacks receive the epoch number after it
    finishes.
    """
    cfg = config or TrainConfig()
    Xtr, ytr = _xy(train_set)
    Xte, yte = _xy(test_set)
    params = model.params()
    velocity = {}
    hist = TrainHistory(test_size=len(Xte))
    shuffle = RngStream(cfg.seed, 7)
    best = -1.0
    n = len(Xtr)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = shuffle.substream(epoch).generator().permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                value, grads, _ = model.loss_and_grads(Xtr[idx], ytr[idx], cfg.loss)
            except (DivergenceError, FloatingPointError) as err:
                raise TrainingDivergenceError(str(err), epoch, b) from err
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergenceError("non-finite loss or gradient", epoch, b)
            sgd_momentum_step(params, grads, velocity, cfg.lr, cfg.momentum, cfg.frozen)
            losses.append(value * len(idx))
        if epoch % cfg.eval_every and epoch != cfg.epochs:
            continue
        try:
            test_loss, acc = evaluate(model, Xte, yte, cfg.loss)
        except (DivergenceError, FloatingPointError) as err:
            raise TrainingDivergenceError(str(err), epoch, -1) from err
        hist.record(epoch, sum(losses) / n, test_loss, acc, time.perf_counter() - t0)
        if acc > best:
            best = acc
            hist.best_epoch = epoch
            hist.best_params = {k: v.copy() for k, v in params.items()}
        for cb in callbacks:
            cb(epoch)
        if on_epoch is not None:
            on_epoch(hist)
    for cb in callbacks:
        if isinstance(cb, SpectralRadiusTracker):
            hist.spectral_radii = cb.trajectory
    return hist


def _xy(ds):
    if isinstance(ds, tuple):
        X, y = ds
    else:
        X, y = ds.inputs, ds.labels
    return np.asarray(X, dtype=np.float64), np.asarray(y)


@dataclass(frozen=True)
class Metrics:
    best_acc: float
    epsilon: float
    loglabel: float
    convergence_epoch: int
    capped: bool


def loglabel(epsilon, test_size):
    """``|ln eps|``, with a perfect score capped at ``eps = 1/(2 test_size)``."""
    capped = epsilon <= 0.0
    if capped:
        if test_size <= 0:
            raise ValueError("test_size is needed to cap a zero error")
        epsilon = 1.0 / (2.0 * test_size)
    return abs(math.log(epsilon)), capped


def convergence_epoch(accuracies, tol, epochs=None):
    """First epoch (1-based unless ``epochs`` given) whose accuracy is within ``tol`` of the best."""
    acc = list(accuracies)
    if not acc:
        raise ValueError("empty history")
    target = max(acc) - tol
    for i, a in enumerate(acc):
        if a >= target:
            return epochs[i] if epochs is not None else i + 1
    raise AssertionError("unreachable")


def metric_suite(history, tol=5e-4):
    acc = history.test_acc if isinstance(history, TrainHistory) else list(history)
    if not acc:
        raise ValueError("empty history")
    best = max(acc)
    eps = 1.0 - best
    size = history.test_size if isinstance(history, TrainHistory) else 0
    ll, capped = loglabel(eps, size)
    epochs = history.epochs if isinstance(history, TrainHistory) else None
    return Metrics(best, eps, ll, convergence_epoch(acc, tol, epochs), capped)


def alpha_series(losses):
    """``alpha_t = (loss_t - loss_min) / loss_min`` over a loss history."""
    losses = np.asarray(losses, dtype=np.float64)
    lmin = losses.min()
    if lmin <= 0:
        raise ValueError("alpha needs a positive minimum loss")
    return (losses - lmin) / lmin


def alpha_convergence_epoch(losses, threshold=0.01):
    """First 1-based epoch with ``alpha_t <= threshold``."""
    a = alpha_series(losses)
    return int(np.argmax(a <= threshold)) + 1
