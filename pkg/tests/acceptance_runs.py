"""Measurements behind the acceptance suite, with an on-disk result cache.

Every ``cN()`` returns a JSON-ready dict of measured quantities. Results are
cached under ``$CHAOSNET_ACCEPT_CACHE`` (default ``<repo>/.acceptance_cache``)
keyed by a hash of the library sources and the run settings, so editing the
library invalidates them. Run ``python tests/acceptance_runs.py c3 c9 ...``
to fill the cache ahead of ``pytest``.
"""

import hashlib
import inspect
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

HERE = Path(__file__).resolve().parent
sys.path.insert(0, str(HERE))

from chaosnet import models as M  # noqa: E402
from chaosnet.autodiff import adjoint_gradient  # noqa: E402
from chaosnet.data import load_mnist, synth_2d  # noqa: E402
from chaosnet.dynamics import CoupledSto, EsnMap, LinearMap, Lorenz96, flow, integrate_rk4  # noqa: E402
from chaosnet.experiments.analysis import boundary_mask, noise_study  # noqa: E402
from chaosnet.experiments.config import preset  # noqa: E402
from chaosnet.experiments.sweep import run_sweep  # noqa: E402
from chaosnet.lyapunov import ftmle_model, ftmle_system, mle_benettin  # noqa: E402
from chaosnet.numerics import RngStream  # noqa: E402
from chaosnet.training import TrainConfig, alpha_convergence_epoch, train  # noqa: E402
from gradcheck import SMALL, build_small, fd_check, small_batch  # noqa: E402
from oracles import llg_implicit, perturbation_ftmle, unit_state  # noqa: E402

CACHE = Path(os.environ.get("CHAOSNET_ACCEPT_CACHE", HERE.parent / ".acceptance_cache"))


def source_hash():
    h = hashlib.sha256()
    root = HERE.parent / "src" / "chaosnet"
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(p.read_bytes())
    for name in ("gradcheck.py", "oracles.py"):
        h.update((HERE / name).read_bytes())
    return h.hexdigest()[:16]


def cached(name, settings):
    """Decorator: memoise a measurement on disk under (name, settings, sources)."""
    def wrap(fn):
        def run():
            ident = [name, settings, source_hash(), inspect.getsource(fn)]
            key = hashlib.sha256(json.dumps(ident, sort_keys=True).encode()).hexdigest()[:16]
            path = CACHE / f"{name}-{key}.json"
            if path.exists():
                return json.loads(path.read_text())
            CACHE.mkdir(parents=True, exist_ok=True)
            t0 = time.time()
            out = fn(settings, CACHE / f"{name}-{key}")
            out["runtime_s"] = time.time() - t0
            path.write_text(json.dumps(out, indent=1, sort_keys=True))
            return out
        run.__name__ = name
        return run
    return wrap


def _mnist(n_train=None, n_test=None):
    return load_mnist("train").subset(n_train), load_mnist("test").subset(n_test)


def _fit(model, tr, te, epochs, lr=5e-3, seed=0):
    h = train(model, tr, te, TrainConfig(epochs=epochs, lr=lr, seed=seed))
    return h


# ---- 1, 2: full-MNIST baselines ---------------------------------------------

@cached("c1", {"epochs": 20, "seed": 0})
def c1(s, _):
    tr, te = _mnist()
    h = _fit(M.linear(seed=s["seed"]), tr, te, s["epochs"])
    return {"best_acc": max(h.test_acc), "test_acc": h.test_acc}


@cached("c2", {"epochs": 40, "seed": 0, "runs": [[1.0, 1], [1.8, 2]]})
def c2(s, _):
    tr, te = _mnist()
    out = {}
    for rho, T in s["runs"]:
        h = _fit(M.ffesn(n=500, rho=rho, T=T, seed=s["seed"]), tr, te, s["epochs"])
        out[f"rho{rho}_T{T}"] = {"best_acc": max(h.test_acc), "test_acc": h.test_acc}
    return out


# ---- 3, 4: desk FFESN sweep and FTMLE signs ---------------------------------

@cached("c3", {"preset": "ffesn", "profile": "desk"})
def c3(s, folder):
    cfg = preset(s["preset"], s["profile"], out_dir=str(folder))
    grid = run_sweep(cfg, mle=True, log=lambda m: print(m, flush=True))
    cells = [{k: c.get(k) for k in ("axis1", "axis2", "mean_acc", "best_acc", "mean_ftmle", "status")}
             for c in grid.cells]
    return {"cells": cells, "lyapunov": grid.lyapunov}


@cached("c4", {"rho": 1.8, "horizons": [5, 50], "samples": 200, "seed": 0, "mle_steps": 2000})
def c4(s, _):
    _, te = _mnist(n_test=s["samples"])
    out = {}
    for T in s["horizons"]:
        m = M.ffesn(n=500, rho=s["rho"], T=T, seed=s["seed"])
        rep = ftmle_model(m, te.inputs, layers=["reservoir"], rng=RngStream(s["seed"], 99))
        out[f"ftmle_T{T}"] = rep.layer("reservoir").mean
    esn = m.layer("reservoir").system
    gen = RngStream(s["seed"], 3).generator()
    out["mle"] = mle_benettin(esn, gen.uniform(-1, 1, esn.dim), s["mle_steps"], 1, rng=gen)
    return out


# ---- 5, 6, 7: numerical checks ------------------------------------------------

@cached("c5", {"linear_maps": 5, "seed": 0})
def c5(s, _):
    gen = np.random.default_rng(s["seed"])
    errs = {"linear": [], "lorenz": [], "sto": []}
    for k in range(s["linear_maps"]):
        n = 8 + 2 * k
        A = gen.standard_normal((n, n)) / math.sqrt(n) * (0.6 + 0.2 * k)
        sysm = LinearMap(A)
        x0 = gen.standard_normal(n)
        T = 6

        def iterate(x, A=A, T=T):
            for _ in range(T):
                x = A @ x
            return x
        errs["linear"].append(abs(ftmle_system(sysm, x0, T) - perturbation_ftmle(iterate, x0, T, seed=k)))
    L = Lorenz96(8.0, 10)
    x0 = 8.0 + gen.standard_normal(10)
    errs["lorenz"].append(abs(ftmle_system(L, x0, 2.0, 0.01)
                              - perturbation_ftmle(lambda x: flow(L, x, 2.0, 0.01), x0, 2.0)))
    sto = CoupledSto(5, 17.8, rng=RngStream(s["seed"], 1))
    x0 = unit_state(5, 1)
    T, dt = 0.1, 0.001
    lam = ftmle_system(sto, x0, T, dt)
    ref = perturbation_ftmle(lambda x: flow(sto, x, T, dt), x0, T)
    errs["sto"].append(abs(lam - ref))
    return {k: max(v) for k, v in errs.items()}


@cached("c6", {"families": sorted(SMALL)})
def c6(s, _):
    fd = {}
    adj = {}
    for name in s["families"]:
        m = build_small(name)
        X, y = small_batch(m)
        fd[name] = max(fd_check(m, X, y).values())
        if name in ("lorenz", "csto", "deep_csto", "conv_csto"):
            _, ga = adjoint_gradient(m, X, y, mode="adjoint")
            _, gd = adjoint_gradient(m, X, y, mode="discrete")
            adj[name] = max(float(np.linalg.norm(ga[k] - gd[k]) / np.linalg.norm(gd[k])) for k in gd)
    return {"fd": fd, "adjoint_vs_discrete": adj}


@cached("c7", {"seed": 0})
def c7(s, _):
    x_eq = np.full(20, 5.0)
    drift = float(np.max(np.abs(integrate_rk4(Lorenz96(5.0, 20), x_eq, 10.0, 0.01, record=False).final - x_eq)))
    L = Lorenz96(5.0, 10)
    x0 = 5.0 + np.random.default_rng(s["seed"]).standard_normal(10)
    ref = flow(L, x0, 1.0, 0.02 / 8)
    e1 = np.linalg.norm(flow(L, x0, 1.0, 0.02) - ref)
    e2 = np.linalg.norm(flow(L, x0, 1.0, 0.01) - ref)
    sto = CoupledSto(4, 10.0, rng=0)
    xf = integrate_rk4(sto, unit_state(4, 0), 1.0, 1e-4, renormalize=True, record=False).final
    norm_err = float(np.max(np.abs(np.linalg.norm(xf.reshape(4, 3), axis=1) - 1)))
    llg = 0.0
    for k in range(20):
        sto = CoupledSto(6, [0.1, 10.0, 17.8, 100.0][k % 4], rng=k)
        x = unit_state(6, 100 + k)
        ref = llg_implicit(sto, x)
        llg = max(llg, float(np.max(np.abs(sto.field(x) - ref)) / np.max(np.abs(ref))))
    return {"equilibrium_drift": drift, "rk4_order": math.log2(e1 / e2), "sto_norm_error": norm_err,
            "llg_rel_error": llg}


# ---- 8: bifurcation signs -----------------------------------------------------

@cached("c8", {"lorenz_F": [0.5, 2.0, 5.0], "lorenz_n": 500, "lorenz_T": 200.0,
               "sto_A": [0.1, 10.0], "sto_n": 10, "sto_T": 50.0, "sto_dt": 0.005, "seed": 1})
def c8(s, _):
    out = {"lorenz": {}, "sto": {}}
    for F in s["lorenz_F"]:
        x0 = F + 0.5 * np.random.default_rng(s["seed"]).standard_normal(s["lorenz_n"])
        out["lorenz"][str(F)] = mle_benettin(Lorenz96(F, s["lorenz_n"]), x0, s["lorenz_T"], 1.0, 0.01)
    for A in s["sto_A"]:
        sto = CoupledSto(s["sto_n"], A, rng=RngStream(0, 1))
        gen = RngStream(s["seed"], 3).generator()
        out["sto"][str(A)] = mle_benettin(sto, sto.random_state(gen), s["sto_T"], 0.1, dt=s["sto_dt"], rng=gen)
    return out


# ---- 9, 10: desk CSTO and its noise study -------------------------------------

C9 = {"n_osc": 50, "A_cp": 17.8, "T": 0.3, "dt": 0.005, "n_train": 10000, "n_test": 2000, "epochs": 15, "seed": 0}


@cached("c9", C9)
def c9(s, folder):
    tr, te = _mnist(s["n_train"], s["n_test"])
    lin = _fit(M.linear(seed=s["seed"]), tr, te, s["epochs"])
    m = M.csto(n_osc=s["n_osc"], A_cp=s["A_cp"], T=s["T"], dt=s["dt"], seed=s["seed"])
    h = train(m, tr, te, TrainConfig(epochs=s["epochs"], seed=s["seed"]),
              on_epoch=lambda h: print(f"csto epoch {h.epochs[-1]} acc {h.test_acc[-1]:.4f}", flush=True))
    m.set_params(h.best_params)
    m.save(folder / "checkpoint")
    return {"linear_acc": max(lin.test_acc), "csto_acc": max(h.test_acc), "csto_history": h.test_acc,
            "checkpoint": str(folder / "checkpoint")}


@cached("c10", {"c9": C9, "samples": 1000, "sn_exponents": [-2.0, 12.0, 0.1], "trials": 5, "seed": 0})
def c10(s, _):
    ck = c9()["checkpoint"]
    model = M.load_checkpoint(ck)
    _, te = _mnist(n_test=s["samples"])
    lo, hi, step = s["sn_exponents"]
    sn = [10.0 ** e for e in np.arange(lo, hi + step / 2, step)]
    rows = noise_study(model, te.inputs, te.labels, sn, trials=s["trials"], seed=s["seed"])
    return {"rows": rows}


# ---- 11: MLP initialisation ----------------------------------------------------

@cached("c11", {"widths": [784, 256, 256, 256, 256, 10], "rhos": [0.3, 2.3], "seeds": [0, 1, 2, 3, 4],
                "epochs": 40, "lr": 1e-3, "n_train": 10000, "n_test": 2000})
def c11(s, _):
    tr, te = _mnist(s["n_train"], s["n_test"])
    out = []
    for seed in s["seeds"]:
        rec = {"seed": seed}
        for rho in s["rhos"]:
            h = _fit(M.mlp(s["widths"], rho=rho, seed=seed), tr, te, s["epochs"], lr=s["lr"], seed=seed)
            rec[str(rho)] = {"alpha_epoch": alpha_convergence_epoch(h.test_loss), "test_loss": h.test_loss}
        print(seed, {r: rec[str(r)]["alpha_epoch"] for r in s["rhos"]}, flush=True)
        out.append(rec)
    return {"trials": out}


# ---- 12: 2-D FTMLE maps ------------------------------------------------------

@cached("c12", {"width": 32, "n_classes": 3, "epochs": 20, "seeds": [0, 1, 2], "extent": 3.0, "boundary_frac": 0.05})
def c12(s, _):
    out = []
    radius = s["boundary_frac"] * 2 * s["extent"]
    for seed in s["seeds"]:
        tr, grid = synth_2d("clusters", n_classes=s["n_classes"], seed=seed, extent=s["extent"])
        te, _ = synth_2d("clusters", n_classes=s["n_classes"], seed=seed + 100, extent=s["extent"])
        w = s["width"]
        m = M.mlp([2, w, w, w, w, s["n_classes"]], seed=seed)
        h = _fit(m, tr, te, s["epochs"], seed=seed)
        m.set_params(h.best_params)
        lam = ftmle_model(m, grid, rng=RngStream(seed, 99)).overall.values
        near = boundary_mask(grid, m.predict(grid), radius)
        out.append({"seed": seed, "acc": max(h.test_acc), "near": int(near.sum()),
                    "frac_above_median": float(np.mean(lam[near] > np.median(lam)))})
    return {"runs": out}


ALL = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12]

if __name__ == "__main__":
    wanted = sys.argv[1:] or [f.__name__ for f in ALL]
    for f in ALL:
        if f.__name__ in wanted:
            t = time.time()
            f()
            print(f"{f.__name__} done in {time.time() - t:.0f}s", flush=True)
