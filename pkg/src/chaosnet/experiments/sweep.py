"""Grid sweeps over (dynamics parameter, horizon) with resumable per-cell results."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .. import models as M
from ..data import load_mnist, synth_2d
from ..dynamics import CoupledSto, DivergenceError, EsnMap
from ..lyapunov import ftmle_model, lyapunov_time, mle_benettin
from ..numerics import RngStream
from ..training import TrainingDivergenceError, loglabel, metric_suite, train
from .config import ExperimentConfig


@lru_cache(maxsize=4)
def _load(dataset_json):
    ds = json.loads(dataset_json)
    if ds["name"] == "mnist":
        tr = load_mnist("train", ds.get("data_dir")).subset(ds.get("n_train"))
        te = load_mnist("test", ds.get("data_dir")).subset(ds.get("n_test"))
        return tr, te
    train_set, _ = synth_2d(ds.get("kind", "clusters"), ds.get("n_train") or 2000, 1, seed=ds.get("seed", 0))
    test_set, _ = synth_2d(ds.get("kind", "clusters"), ds.get("n_test") or 1000, 1, seed=ds.get("seed", 0) + 1)
    return train_set, test_set


def load_dataset(dataset):
    """``(train, test)`` for a config dataset entry; repeated calls share the arrays."""
    return _load(json.dumps(dataset, sort_keys=True))


def trial_seed(cfg, i, j, trial):
    a2 = cfg.axes()[1]
    return RngStream(cfg.seed, i * len(a2["values"]) + j).substream(trial)


def model_kwargs(cfg, a1, a2):
    kw = dict(cfg.model)
    ax1, ax2 = cfg.axes()
    if ax1["name"] != "_":
        kw[ax1["name"]] = a1
    if ax2["name"] != "_":
        kw[ax2["name"]] = int(a2) if (ax2["name"] == "T" and cfg.family == "ffesn") else a2
    return kw


def backbone_name(model, requested=None):
    if requested:
        return requested
    bb = model.backbone_layers()
    return bb[0].name if bb else model.layers[-1].name


def run_trial(cfg: ExperimentConfig, a1, a2, seed, data=None):
    """Train one model for one grid cell and trial; returns a JSON-ready dict."""
    train_set, test_set = data or load_dataset(cfg.dataset)
    model = M.build({"family": cfg.family, **model_kwargs(cfg, a1, a2)}, seed=seed)
    tc = cfg.train_config()
    out = {"seed": [seed.seed, seed.stream] if isinstance(seed, RngStream) else seed}
    try:
        hist = train(model, train_set, test_set, tc)
    except TrainingDivergenceError as err:
        out.update(status="diverged", error=str(err))
        return out, model, None
    m = metric_suite(hist, cfg.tol)
    out.update(status="ok", best_acc=m.best_acc, convergence_epoch=m.convergence_epoch,
               test_acc=hist.test_acc, train_loss=hist.train_loss)
    out["mean_ftmle"] = None
    if cfg.ftmle_samples:
        name = backbone_name(model, cfg.ftmle_layer)
        if model.layer(name).depth > 0:
            X = test_set.inputs[:cfg.ftmle_samples]
            try:
                rep = ftmle_model(model, X, layers=[name], rng=RngStream(cfg.seed, 99))
                out["mean_ftmle"] = rep.layer(name).mean
            except (DivergenceError, FloatingPointError) as err:
                out["ftmle_error"] = str(err)
    return out, model, hist


def _cell(cfg, i, j, data=None):
    a1v, a2v = cfg.axes()[0]["values"][i], cfg.axes()[1]["values"][j]
    trials = []
    for t in range(cfg.trials):
        res, _, _ = run_trial(cfg, a1v, a2v, trial_seed(cfg, i, j, t), data)
        trials.append(res)
    ok = [r for r in trials if r["status"] == "ok"]
    cell = {"i": i, "j": j, "axis1": a1v, "axis2": a2v, "trials": trials,
            "status": "ok" if ok else "diverged"}
    if ok:
        accs = [r["best_acc"] for r in ok]
        test_size = len((data or load_dataset(cfg.dataset))[1])
        mean_acc = float(np.mean(accs))
        # epsilon and |ln eps| of a cell use the trial-mean of best accuracies
        eps = 1.0 - mean_acc
        ll, _ = loglabel(eps, test_size)
        ft = [r["mean_ftmle"] for r in ok if r.get("mean_ftmle") is not None]
        cell.update(best_acc=max(accs), mean_acc=mean_acc, epsilon=eps, loglabel=ll,
                    convergence_epoch=float(np.mean([r["convergence_epoch"] for r in ok])),
                    mean_ftmle=float(np.mean(ft)) if ft else None)
    return cell


def _cell_worker(cfg_dict, i, j):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return _cell(cfg, i, j)


def backbone_mle(cfg, a1, a2, seed=0):
    """MLE of the autonomous backbone at one axis-1 value, from a random initial state."""
    model = M.build({"family": cfg.family, **model_kwargs(cfg, a1, a2)}, seed=RngStream(cfg.seed, 0))
    bbs = model.backbone_layers()
    if not bbs:
        return None
    layer = bbs[0]
    sysm = layer.system
    gen = RngStream(seed, 3).generator()
    if isinstance(sysm, EsnMap):
        x0 = gen.uniform(-1, 1, sysm.dim)
        return mle_benettin(sysm, x0, 500, 1, rng=gen)
    if isinstance(sysm, CoupledSto):
        return mle_benettin(sysm, sysm.random_state(gen), 20.0, 0.1, dt=layer.dt, rng=gen)
    x0 = sysm.F + 0.5 * gen.standard_normal(sysm.dim)
    return mle_benettin(sysm, x0, 100.0, 1.0, dt=layer.dt, rng=gen)


@dataclass
class SweepGrid:
    axis1: dict
    axis2: dict
    cells: list  # row-major over (axis1, axis2)
    lyapunov: list = field(default_factory=list)  # (axis1 value, mle, lyapunov time)

    @property
    def shape(self):
        return len(self.axis1["values"]), len(self.axis2["values"])

    def cell(self, i, j):
        return self.cells[i * self.shape[1] + j]

    @property
    def complete(self):
        return all(c is not None for c in self.cells)

    @property
    def any_diverged(self):
        return any(c is not None and c["status"] == "diverged" for c in self.cells)

    def to_dict(self):
        return {"axis1": self.axis1, "axis2": self.axis2, "cells": self.cells, "lyapunov": self.lyapunov}

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    def to_csv(self, path):
        cols = ["best_acc", "mean_acc", "epsilon", "loglabel", "convergence_epoch", "mean_ftmle"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.axis1["name"], self.axis2["name"]] + cols + ["status", "seeds"])
            for c in self.cells:
                if c is None:
                    continue
                seeds = ";".join(":".join(str(v) for v in np.atleast_1d(t["seed"])) for t in c["trials"])
                w.writerow([repr(c["axis1"]), repr(c["axis2"])]
                           + ["" if c.get(k) is None else repr(c[k]) for k in cols] + [c["status"], seeds])

    def lyapunov_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.axis1["name"], "mle", "lyapunov_time"])
            for a, mle, lt in self.lyapunov:
                w.writerow([repr(a), repr(mle), "inf" if math.isinf(lt) else repr(lt)])


def _cell_path(out_dir, i, j):
    return os.path.join(out_dir, "cells", f"cell_{i:03d}_{j:03d}.json")


def run_sweep(cfg: ExperimentConfig, jobs=1, resume=True, max_cells=None, mle=True, log=None):
    """Train every (cell, trial), writing one JSON file per cell as it finishes.

    Existing cell files are reused when ``resume`` is set, so an interrupted
    sweep continues where it stopped. ``max_cells`` caps the number of new
    cells computed in this call (the grid is then incomplete).
    """
    a1, a2 = cfg.axes()
    n1, n2 = len(a1["values"]), len(a2["values"])
    os.makedirs(os.path.join(cfg.out_dir, "cells"), exist_ok=True)
    cfg.to_json(os.path.join(cfg.out_dir, "config.json"))
    cells = [None] * (n1 * n2)
    todo = []
    for i in range(n1):
        for j in range(n2):
            p = _cell_path(cfg.out_dir, i, j)
            if resume and os.path.exists(p):
                with open(p) as fh:
                    cells[i * n2 + j] = json.load(fh)
            else:
                todo.append((i, j))
    if max_cells is not None:
        todo = todo[:max_cells]

    def store(cell):
        p = _cell_path(cfg.out_dir, cell["i"], cell["j"])
        with open(p + ".tmp", "w") as fh:
            json.dump(cell, fh, sort_keys=True)
        os.replace(p + ".tmp", p)
        # round-trip through JSON so fresh and resumed grids are identical
        with open(p) as fh:
            cells[cell["i"] * n2 + cell["j"]] = json.load(fh)
        if log:
            log(f"cell ({cell['i']},{cell['j']}) {a1['name']}={cell['axis1']} {a2['name']}={cell['axis2']}: "
                f"{cell['status']} {cell.get('mean_acc', '')}")

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(_cell_worker, cfg.to_dict(), i, j) for i, j in todo]
            for f in futs:
                store(f.result())
    else:
        data = load_dataset(cfg.dataset) if todo else None
        for i, j in todo:
            store(_cell(cfg, i, j, data))
    grid = SweepGrid(a1, a2, cells)
    if mle and grid.complete:
        for i, v in enumerate(a1["values"]):
            try:
                m = backbone_mle(cfg, v, a2["values"][0], seed=cfg.seed + i)
            except (DivergenceError, FloatingPointError):
                m = None
            if m is not None:
                grid.lyapunov.append((v, m, lyapunov_time(m)))
        grid.lyapunov_csv(os.path.join(cfg.out_dir, "lyapunov.csv"))
    if grid.complete:
        grid.to_json(os.path.join(cfg.out_dir, "grid.json"))
        grid.to_csv(os.path.join(cfg.out_dir, "grid.csv"))
    return grid
