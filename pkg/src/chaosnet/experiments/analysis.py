"""Bifurcation scans, FTMLE reports, PCA of backbone states and noise studies."""

from __future__ import annotations

import csv
import math

import numpy as np
from scipy.spatial import cKDTree

from ..data import NoiseSpec, inject_noise, state_variance
from ..dynamics import CoupledSto, DivergenceError, EsnMap, LinearField, Lorenz96, integrate_rk4
from ..lyapunov import ftmle_model, mle_benettin, write_ftmle_csv, write_ftmle_map_csv
from ..numerics import RngStream, pca

BIFURCATION_FAMILIES = ("lorenz", "csto", "esn", "linear")


def _system(family, value, dim):
    if family == "lorenz":
        return Lorenz96(value, dim)
    if family == "csto":
        return CoupledSto(dim, value, rng=RngStream(0, 1))
    if family == "esn":
        return EsnMap.random(dim, value, rng=RngStream(0, 1))
    if family == "linear":
        # dx/dt = -x + F
        return LinearField(-np.eye(dim), np.full(dim, float(value)))
    raise ValueError(f"unknown family {family!r}; choose from {BIFURCATION_FAMILIES}")


def _initial(family, sysm, gen):
    if family == "csto":
        return sysm.random_state(gen)
    if family == "esn":
        return gen.uniform(-1, 1, sysm.dim)
    return gen.standard_normal(sysm.dim)


def final_quarter_extrema(series, rtol=1e-9):
    """Local maxima and minima of the last quarter of a series; its final value if there are none."""
    s = np.asarray(series)[-max(len(series) // 4, 3):]
    if s.max() - s.min() <= rtol * max(1.0, abs(s).max()):
        return [float(s[-1])]
    mid = s[1:-1]
    ext = mid[((mid > s[:-2]) & (mid >= s[2:])) | ((mid < s[:-2]) & (mid <= s[2:]))]
    return [float(v) for v in ext] if len(ext) else [float(s[-1])]


def bifurcation_scan(family, values, T=20.0, dim=None, dt=None, n_init=4, seed=0,
                     mle_T=None, coordinate=0):
    """Per parameter value: final-quarter extrema of one coordinate over random starts plus the MLE."""
    dim = dim or {"lorenz": 20, "csto": 10, "esn": 100, "linear": 1}[family]
    dt = dt or {"lorenz": 0.01, "csto": 0.005, "esn": None, "linear": 0.01}[family]
    rows = []
    for k, v in enumerate(values):
        sysm = _system(family, v, dim)
        gen = RngStream(seed, k).generator()
        pts = []
        row = {"param": float(v), "status": "ok"}
        try:
            for _ in range(n_init):
                x0 = _initial(family, sysm, gen)
                if family == "esn":
                    xs = [x0]
                    for _ in range(int(T)):
                        xs.append(sysm.step(xs[-1]))
                    series = np.array(xs)[:, coordinate]
                else:
                    series = integrate_rk4(sysm, x0, T, dt).states[:, coordinate]
                pts += final_quarter_extrema(series)
            x0 = _initial(family, sysm, gen)
            if family == "esn":
                row["mle"] = mle_benettin(sysm, x0, mle_T or 1000, 1, rng=gen)
            elif family == "csto":
                row["mle"] = mle_benettin(sysm, x0, mle_T or 20.0, 0.1, dt=dt, rng=gen)
            else:
                row["mle"] = mle_benettin(sysm, x0, mle_T or 100.0, 1.0, dt=dt, rng=gen)
        except (DivergenceError, FloatingPointError):
            row["status"] = "diverged"
            row.setdefault("mle", math.nan)
        row["points"] = pts
        rows.append(row)
    return rows


def write_bifurcation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["param", "x", "mle", "status"])
        for r in rows:
            for x in r["points"] or [math.nan]:
                w.writerow([repr(r["param"]), repr(x), repr(r["mle"]), r["status"]])


def ftmle_report(model, inputs, layers=None, out_csv=None, ids=None, m=5, seed=0):
    rep = ftmle_model(model, inputs, m=m, layers=layers, rng=RngStream(seed, 99), ids=ids)
    if out_csv:
        write_ftmle_csv(out_csv, rep)
    return rep


def ftmle_map(model, points, out_csv=None, seed=0):
    """Overall-model FTMLE at every 2-D grid point."""
    rep = ftmle_model(model, points, rng=RngStream(seed, 99))
    vals = rep.overall.values
    if out_csv:
        write_ftmle_map_csv(out_csv, points, vals)
    return vals


def boundary_mask(points, predictions, radius):
    """Points with a differently classified grid point within ``radius``."""
    tree = cKDTree(points)
    near = np.zeros(len(points), dtype=bool)
    for i, nb in enumerate(tree.query_ball_point(points, radius)):
        near[i] = np.any(predictions[nb] != predictions[i])
    return near


def backbone_states(model, X, stage="final"):
    """Backbone input (``initial``) or output (``final``) states for a batch."""
    bbs = model.backbone_layers()
    if not bbs:
        raise ValueError("model has no backbone")
    k = model.index(bbs[0].name)
    if stage == "initial":
        return model.forward_range(X, 0, k)
    if stage == "final":
        return model.forward_range(X, 0, k + 1)
    raise ValueError("stage must be 'initial' or 'final'")


def pca_states(model, X, labels, stage="final", k=2, out_csv=None):
    S = backbone_states(model, X, stage)
    comps, proj, var = pca(S, k)
    if out_csv:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"pc{i + 1}" for i in range(k)] + ["label"])
            for p, y in zip(proj, labels):
                w.writerow([repr(float(v)) for v in p] + [int(y)])
    return {"components": comps, "projections": proj, "explained_variance": var,
            "total_variance": float(np.var(S, axis=0, ddof=1).sum())}


def _error(logits, y):
    return float(np.mean(np.argmax(logits, axis=1) != y))


def noise_study(model, X, y, sn_ratios, kinds=("observational", "dynamical"), trials=5, seed=0):
    """``1 - accuracy`` under additive Gaussian noise at each SN ratio.

    Observational noise joins the read-in output before normalization;
    dynamical noise joins the final backbone state before the read-out.
    The clean pass up to each injection point is computed once.
    """
    i_in = model.index("read_in")
    i_out = model.index("read_out")
    h_in = model.forward_range(X, 0, i_in + 1)
    h_fin = model.forward_range(h_in, i_in + 1, i_out)
    clean = _error(model.forward_range(h_fin, i_out), y)
    var = {"observational": state_variance(h_in), "dynamical": state_variance(h_fin)}
    rows = []
    for kind in kinds:
        for sn in sn_ratios:
            errs = []
            for t in range(trials):
                spec = NoiseSpec(kind, sn, seed)
                if kind == "observational":
                    noisy = inject_noise(h_in, spec, var[kind], trial=t)
                    out = model.forward_range(noisy, i_in + 1)
                else:
                    out = model.forward_range(inject_noise(h_fin, spec, var[kind], trial=t), i_out)
                errs.append(_error(out, y))
            rows.append({"kind": kind, "sn_ratio": float(sn), "mean_error": float(np.mean(errs)),
                         "std_error": float(np.std(errs)), "clean_error": clean, "trials": trials})
    return rows


def write_rows_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
