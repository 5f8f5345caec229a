"""Finite-time and asymptotic maximal Lyapunov exponents.

All exponents use the natural logarithm and the Euclidean norm. Horizons are
step counts for maps and layered models and time for continuous fields.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator

from .dynamics import DivergenceError, _rk4_tangent_step, step_sizes, tangent_propagate
from .numerics import RngStream, as_rng, truncated_randomized_svd

FULL_SVD_MAX_DIM = 64


def sigma_max(J, m=5, rng=None):
    """Top singular value: full SVD for small Jacobians, randomized otherwise."""
    if isinstance(J, LinearOperator):
        rows, cols = J.shape
        if min(rows, cols) <= FULL_SVD_MAX_DIM:
            J = J.matmat(np.eye(cols)) if cols <= rows else J.rmatmat(np.eye(rows)).T
        else:
            return float(truncated_randomized_svd(J, m=m, rng=rng)[0])
    J = np.asarray(J, dtype=np.float64)
    if min(J.shape) <= FULL_SVD_MAX_DIM:
        return float(np.linalg.svd(J, compute_uv=False)[0])
    return float(truncated_randomized_svd(J, m=m, rng=rng)[0])


def ftmle_from_jacobian(J, horizon, m=5, rng=None):
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    s = sigma_max(J, m=m, rng=rng)
    return math.log(s) / horizon if s > 0 else -math.inf


def ftmle_system(system, x0, T, dt=None, renormalize=None, m=5, rng=None):
    """``(1/T) log sigma_max(J_T)`` for the flow of ``system`` started at ``x0``."""
    if T <= 0:
        raise ValueError("T must be positive")
    J = tangent_propagate(system, x0, T, dt, renormalize)
    return ftmle_from_jacobian(J, T, m=m, rng=rng)


def lyapunov_time(mle):
    """E-folding predictability time ``1/MLE``; ``math.inf`` when nothing expands."""
    return 1.0 / mle if mle > 0 else math.inf


def mle_benettin(system, x0, T_total, renorm_interval=None, dt=None, discard=None,
                 renormalize=None, rng=None, return_state=False):
    """Maximal Lyapunov exponent by renormalised tangent-vector growth.

    For maps, ``T_total``, ``renorm_interval`` and ``discard`` count steps
    (renormalisation every step by default). ``discard`` defaults to 20 % of
    ``T_total`` and the log growth accumulated before it is dropped.
    """
    discrete = getattr(system, "kind", "continuous") == "discrete"
    if discard is None:
        discard = 0.2 * T_total
    if discard >= T_total:
        raise ValueError("discard must be shorter than T_total")
    if renorm_interval is None:
        renorm_interval = 1 if discrete else 1.0
    x = np.array(x0, dtype=np.float64)
    v = as_rng(rng).standard_normal(x.shape[-1])
    if renormalize is None:
        renormalize = hasattr(system, "project")
    if renormalize:
        v = system.project_jvp(x, v)
    v /= np.linalg.norm(v)
    log_sum = 0.0
    counted = 0.0
    t = 0.0
    if discrete:
        n_total = int(T_total)
        every = max(int(renorm_interval), 1)
        for i in range(1, n_total + 1):
            y = system.step(x)
            v = system.jvp(x, v, y=y)
            x = y
            if i % every == 0 or i == n_total:
                nv = np.linalg.norm(v)
                if not np.isfinite(nv) or not np.all(np.isfinite(x)):
                    raise DivergenceError(f"non-finite tangent at step {i}", last_state=x, time=i)
                if nv == 0.0:
                    return (-math.inf, x) if return_state else -math.inf
                v /= nv
                if i > discard:
                    log_sum += math.log(nv)
                    counted = i - discard if counted == 0 and (i - every) < discard else counted + every
        value = log_sum / counted if counted else float("nan")
        return (value, x) if return_state else value
    if dt is None:
        raise ValueError("continuous systems need dt")
    n_seg = int(round(T_total / renorm_interval))
    for seg in range(n_seg):
        for h in step_sizes(renorm_interval, dt):
            x, V = _rk4_tangent_step(system, x, v[None, :], h)
            v = V[0]
            if renormalize:
                v = system.project_jvp(x, v)
                x = system.project(x)
        t += renorm_interval
        nv = np.linalg.norm(v)
        if not np.isfinite(nv) or not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite tangent at t={t:g}", last_state=x, time=t)
        if nv == 0.0:
            return (-math.inf, x) if return_state else -math.inf
        v /= nv
        if t > discard + 1e-12:
            log_sum += math.log(nv)
            counted += renorm_interval
    value = log_sum / counted if counted else float("nan")
    return (value, x) if return_state else value


@dataclass
class FtmleReport:
    """Per-sample finite-time exponents with their summary statistics."""

    per_sample: list  # (sample_id, lambda)
    horizon: float

    @classmethod
    def from_values(cls, values, horizon, ids=None):
        values = [float(v) for v in values]
        ids = list(range(len(values))) if ids is None else list(ids)
        return cls(per_sample=list(zip(ids, values)), horizon=horizon)

    @property
    def values(self):
        return np.array([v for _, v in self.per_sample], dtype=np.float64)

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    @property
    def max(self):
        return float(np.max(self.values))

    def summary(self):
        return {"mean": self.mean, "std": self.std, "max": self.max, "horizon": self.horizon,
                "n": len(self.per_sample)}


@dataclass
class LayerwiseFtmle:
    overall: FtmleReport
    per_layer: list = field(default_factory=list)  # (layer name, FtmleReport), forward order

    def layer(self, name):
        for n, rep in self.per_layer:
            if n == name:
                return rep
        raise KeyError(name)


class UnsupportedLayerError(TypeError):
    def __init__(self, layer_name):
        super().__init__(f"layer {layer_name!r} has no exact Jacobian products")
        self.layer_name = layer_name


def _chain_operator(entries):
    """LinearOperator for the Jacobian of a chain of recorded layer applications."""
    first, last = entries[0], entries[-1]
    n_in = first.x.shape[-1]
    n_out = last.y.shape[-1]

    def matmat(V):
        U = np.asarray(V).T
        for e in entries:
            U = e.layer.jvp(e.ctx, U)
        return U.T

    def rmatmat(G):
        U = np.asarray(G).T
        for e in reversed(entries):
            U = e.layer.vjp(e.ctx, U)
        return U.T

    return LinearOperator((n_out, n_in), matvec=lambda v: matmat(v[:, None])[:, 0],
                          rmatvec=lambda g: rmatmat(g[:, None])[:, 0],
                          matmat=matmat, rmatmat=rmatmat, dtype=np.float64)


def _entries_for(model, x):
    from .autodiff import Tape

    tape = Tape()
    model.forward(np.asarray(x, dtype=np.float64)[None, :], tape=tape)
    for e in tape.entries:
        if not (hasattr(e.layer, "jvp") and hasattr(e.layer, "vjp")):
            raise UnsupportedLayerError(e.layer.name)
    return tape.entries


def model_jacobian_operator(model, x, layers=None):
    """Jacobian operator of the whole model (or of the named layer span) at one input."""
    entries = _entries_for(model, x)
    if layers is not None:
        entries = [e for e in entries if e.layer.name in set(layers)]
    return _chain_operator(entries), sum(e.layer.depth for e in entries)


def ftmle_model(model, inputs, m=5, layers=None, rng=None, ids=None):
    """Overall and layer-wise FTMLE of a layered model over a batch of inputs.

    The overall horizon is the summed depth of all layers; each layer uses
    its own input as base point and its own depth as horizon.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    overall_vals = []
    layer_vals = {}
    order = []
    horizon_total = None
    for x in inputs:
        entries = _entries_for(model, x)
        if horizon_total is None:
            horizon_total = sum(e.layer.depth for e in entries)
            order = [e.layer.name for e in entries if layers is None or e.layer.name in layers]
        op = _chain_operator(entries)
        overall_vals.append(ftmle_from_jacobian(op, horizon_total, m=m, rng=rng))
        for e in entries:
            if e.layer.name not in order:
                continue
            if e.layer.depth <= 0:
                continue
            layer_vals.setdefault(e.layer.name, []).append(
                ftmle_from_jacobian(_chain_operator([e]), e.layer.depth, m=m, rng=rng))
    overall = FtmleReport.from_values(overall_vals, horizon_total, ids)
    per_layer = []
    for name in order:
        if name in layer_vals:
            depth = next(e.layer.depth for e in entries if e.layer.name == name)
            per_layer.append((name, FtmleReport.from_values(layer_vals[name], depth, ids)))
    return LayerwiseFtmle(overall=overall, per_layer=per_layer)


def write_ftmle_csv(path, report):
    """Rows ``sample_id, layer, lambda``; the overall model is labelled ``overall``."""
    rows = []
    if isinstance(report, LayerwiseFtmle):
        rows += [(sid, "overall", lam) for sid, lam in report.overall.per_sample]
        for name, rep in report.per_layer:
            rows += [(sid, name, lam) for sid, lam in rep.per_sample]
    else:
        rows += [(sid, "overall", lam) for sid, lam in report.per_sample]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "layer", "lambda"])
        for sid, name, lam in rows:
            w.writerow([sid, name, repr(float(lam))])


def write_ftmle_map_csv(path, points, values):
    points = np.asarray(points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "lambda"])
        for (px, py), lam in zip(points, values):
            w.writerow([repr(float(px)), repr(float(py)), repr(float(lam))])
