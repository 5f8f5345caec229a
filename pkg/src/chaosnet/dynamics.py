"""Backbone dynamical systems, a fixed-step RK4 integrator and tangent propagation.

States may carry leading batch axes; every field, step and Jacobian product
acts on the last axis. Tangent vectors are stored as rows, so a set of ``k``
tangents at a single state has shape ``(k, dim)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RngStream, rescale_to_radius, spectral_radius


class DivergenceError(FloatingPointError):
    """A trajectory left the finite reals."""

    def __init__(self, message, last_state=None, time=None):
        super().__init__(message)
        self.last_state = last_state
        self.time = time


class InvalidStateError(ValueError):
    pass


ACTIVATIONS = {
    "tanh": (np.tanh, lambda y: 1.0 - y * y),
    "identity": (lambda z: z, lambda y: np.ones_like(y)),
}


class EsnMap:
    """Autonomous reservoir map ``x -> f(W x)`` with a frozen internal weight."""

    kind = "discrete"

    def __init__(self, W, activation="tanh"):
        W = np.array(W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("internal weight must be square")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        W.setflags(write=False)
        self.W = W
        self.activation = activation
        self._f, self._df = ACTIVATIONS[activation]

    @property
    def dim(self):
        return self.W.shape[0]

    def _check(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.dim}")

    def step(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return self._f(x @ self.W.T)

    def jvp(self, x, v, y=None):
        """``diag(f'(W x)) W v``; pass ``y = step(x)`` to reuse the forward value."""
        if y is None:
            y = self.step(x)
        return self._df(y) * (v @ self.W.T)

    def vjp(self, x, g, y=None):
        if y is None:
            y = self.step(x)
        return (self._df(y) * g) @ self.W

    def jacobian(self, x):
        y = self.step(x)
        return self._df(y)[:, None] * self.W

    @classmethod
    def random(cls, n, rho, density=0.5, rng=0, activation="tanh"):
        rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
        from .numerics import sparse_random_matrix

        return cls(sparse_random_matrix(n, density, rho, rng), activation)


class Lorenz96:
    """Cyclic Lorenz-96 field ``dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F``."""

    kind = "continuous"

    def __init__(self, F, dim):
        if dim < 4:
            raise ValueError("Lorenz-96 needs dim >= 4")
        self.F = float(F)
        self.dim = int(dim)

    def _check(self, x):
        if x.shape[-1] != self.dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.dim}")

    def field(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        xp1 = np.roll(x, -1, axis=-1)
        xm1 = np.roll(x, 1, axis=-1)
        xm2 = np.roll(x, 2, axis=-1)
        return (xp1 - xm2) * xm1 - x + self.F

    def jvp(self, x, v):
        r = lambda a, k: np.roll(a, k, axis=-1)
        return (r(v, -1) - r(v, 2)) * r(x, 1) + (r(x, -1) - r(x, 2)) * r(v, 1) - v

    def vjp(self, x, g):
        r = lambda a, k: np.roll(a, k, axis=-1)
        # (J^T g)_j = g_{j-1} x_{j-2} - g_{j+2} x_{j+1} + g_{j+1} (x_{j+2} - x_{j-1}) - g_j
        return r(g, 1) * r(x, 2) - r(g, -2) * r(x, -1) + r(g, -1) * (r(x, -2) - r(x, 1)) - g

    def jacobian(self, x):
        x = np.asarray(x, dtype=np.float64)
        n = self.dim
        J = -np.eye(n)
        i = np.arange(n)
        J[i, (i + 1) % n] += x[(i - 1) % n]
        J[i, (i - 2) % n] -= x[(i - 1) % n]
        J[i, (i - 1) % n] += x[(i + 1) % n] - x[(i - 2) % n]
        return J


HBAR_ERG_S = 1.054571817e-27
E_CHARGE_C = 1.602176634e-19


@dataclass(frozen=True)
class StoParams:
    """Physical constants of one spin-torque oscillator, CGS-Gaussian units.

    ``hbar`` is in erg*s and ``e_charge`` in coulomb, so with ``I_cur`` in
    ampere the spin-torque field ``hbar*eta*I / (2 e M V)`` comes out in Oe.
    """

    M_s: float = 1448.3  # emu/cc
    H_K: float = 18.616e3  # Oe
    H_appl: float = 200.0  # Oe
    Vol: float = math.pi * 60.0**2 * 2.0 * 1e-21  # cm^3
    eta: float = 0.537
    lambda_stt: float = 0.288
    gamma: float = 1.764e7  # rad/(Oe s)
    alpha_g: float = 0.005
    I_cur: float = 2.5e-3  # A
    p: tuple = (1.0, 0.0, 0.0)
    hbar: float = HBAR_ERG_S
    e_charge: float = E_CHARGE_C

    def __post_init__(self):
        if abs(np.linalg.norm(self.p) - 1.0) > 1e-12:
            raise ValueError("pinned-layer direction p must be a unit vector")
        for name in ("M_s", "Vol", "eta", "gamma", "alpha_g", "I_cur", "hbar", "e_charge"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def spin_torque_prefactor(self):
        """``hbar eta I / (2 e M V)`` in Oe, before the ``1 + lambda m.p`` asymmetry."""
        return self.hbar * self.eta * self.I_cur / (2.0 * self.e_charge * self.M_s * self.Vol)

    @property
    def demag_anisotropy(self):
        return self.H_K - 4.0 * math.pi * self.M_s


def _cross(a, b):
    # np.cross is slow for small trailing axes; spell it out
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx], axis=-1)


def _dot(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


class CoupledSto:
    """Ampere-field coupled spin-torque oscillators in explicit Landau-Lifshitz form.

    The state is the flattened stack of unit magnetizations
    ``(m_1x, m_1y, m_1z, m_2x, ...)``. Time is measured in ``time_unit``
    seconds (nanoseconds by default), so exponents come out per ns.
    """

    kind = "continuous"

    def __init__(self, n_osc=200, A_cp=10.0, W_cp=None, params=None, rng=0, time_unit=1e-9):
        self.n_osc = int(n_osc)
        self.A_cp = float(A_cp)
        self.params = params or StoParams()
        self.time_unit = float(time_unit)
        if W_cp is None:
            rng = rng if isinstance(rng, RngStream) else RngStream(int(rng))
            W_cp = rng.generator().uniform(-1.0, 1.0, (self.n_osc, self.n_osc))
            W_cp = rescale_to_radius(W_cp, 1.0)
        W_cp = np.array(W_cp, dtype=np.float64)
        if W_cp.shape != (self.n_osc, self.n_osc):
            raise ValueError("W_cp must be n_osc x n_osc")
        W_cp.setflags(write=False)
        self.W_cp = W_cp
        pr = self.params
        self._p = np.array(pr.p, dtype=np.float64)
        self._c = -pr.gamma * self.time_unit / (1.0 + pr.alpha_g**2)
        self._beta = pr.spin_torque_prefactor
        self._D = pr.demag_anisotropy

    @property
    def dim(self):
        return 3 * self.n_osc

    def _blocks(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"state has dimension {x.shape[-1]}, expected {self.dim}")
        return x.reshape(x.shape[:-1] + (self.n_osc, 3))

    def _validate(self, m):
        nrm = np.sqrt(_dot(m, m))
        if not np.all(np.isfinite(m)) or np.any(nrm < 1e-12):
            raise InvalidStateError("magnetization blocks must be finite and non-zero")

    def _comps(self, x):
        m = self._blocks(x)
        return m[..., 0], m[..., 1], m[..., 2]

    def _interleave(self, ax, ay, az):
        out = np.empty(ax.shape[:-1] + (self.dim,))
        out[..., 0::3] = ax
        out[..., 1::3] = ay
        out[..., 2::3] = az
        return out

    def _forward(self, mx, my, mz):
        # m x (p x m) = p|m|^2 - m(m.p) and m x (m x H) = m(m.H) - H|m|^2 keep
        # the explicit form exact even for stage points slightly off the sphere
        pr = self.params
        px, py, pz = self._p
        hx = self.A_cp * (mx @ self.W_cp.T)
        hz = pr.H_appl + self._D * mz
        mm = mx * mx + my * my + mz * mz
        mp = mx * px + my * py + mz * pz
        mH = mx * hx + mz * hz
        s = self._beta / (1.0 + pr.lambda_stt * mp)
        cx, cy, cz = my * pz - mz * py, mz * px - mx * pz, mx * py - my * px  # m x p
        return dict(hx=hx, hz=hz, mm=mm, mp=mp, mH=mH, s=s, c=(cx, cy, cz))

    def _A(self, mx, my, mz, f):
        a = self.params.alpha_g
        px, py, pz = self._p
        hx, hz, mm, mp, mH, s = f["hx"], f["hz"], f["mm"], f["mp"], f["mH"], f["s"]
        cx, cy, cz = f["c"]
        smm = a * s * mm
        Ax = my * hz + s * (px * mm - mx * mp) + a * (mx * mH - hx * mm) + smm * cx
        Ay = mz * hx - mx * hz + s * (py * mm - my * mp) + a * my * mH + smm * cy
        Az = -my * hx + s * (pz * mm - mz * mp) + a * (mz * mH - hz * mm) + smm * cz
        return Ax, Ay, Az

    def field(self, x):
        m = self._blocks(x)
        self._validate(m)
        mx, my, mz = m[..., 0], m[..., 1], m[..., 2]
        Ax, Ay, Az = self._A(mx, my, mz, self._forward(mx, my, mz))
        c = self._c
        return self._interleave(c * Ax, c * Ay, c * Az)

    def spin_torque_field(self, x):
        mx, my, mz = self._comps(x)
        px, py, pz = self._p
        return self._beta / (1.0 + self.params.lambda_stt * (mx * px + my * py + mz * pz))

    def effective_field(self, x):
        mx, my, mz = self._comps(x)
        f = self._forward(mx, my, mz)
        return np.stack([f["hx"], np.zeros_like(f["hx"]), f["hz"]], axis=-1)

    def jvp(self, x, v):
        mx, my, mz = self._comps(x)
        dx, dy, dz = self._comps(v)
        pr = self.params
        a = pr.alpha_g
        px, py, pz = self._p
        f = self._forward(mx, my, mz)
        hx, hz, mm, mp, mH, s = f["hx"], f["hz"], f["mm"], f["mp"], f["mH"], f["s"]
        cx, cy, cz = f["c"]
        dhx = self.A_cp * (dx @ self.W_cp.T)
        dhz = self._D * dz
        dmm = 2.0 * (mx * dx + my * dy + mz * dz)
        dmp = dx * px + dy * py + dz * pz
        dmH = dx * hx + dz * hz + mx * dhx + mz * dhz
        ds = -s * pr.lambda_stt * dmp / (1.0 + pr.lambda_stt * mp)
        dcx, dcy, dcz = dy * pz - dz * py, dz * px - dx * pz, dx * py - dy * px
        k = a * (ds * mm + s * dmm)
        smm = a * s * mm
        Ax = (dy * hz + my * dhz + ds * (px * mm - mx * mp) + s * (px * dmm - dx * mp - mx * dmp)
              + a * (dx * mH + mx * dmH - dhx * mm - hx * dmm) + k * cx + smm * dcx)
        Ay = (dz * hx + mz * dhx - dx * hz - mx * dhz + ds * (py * mm - my * mp)
              + s * (py * dmm - dy * mp - my * dmp) + a * (dy * mH + my * dmH) + k * cy + smm * dcy)
        Az = (-dy * hx - my * dhx + ds * (pz * mm - mz * mp) + s * (pz * dmm - dz * mp - mz * dmp)
              + a * (dz * mH + mz * dmH - dhz * mm - hz * dmm) + k * cz + smm * dcz)
        c = self._c
        return self._interleave(c * Ax, c * Ay, c * Az)

    def vjp(self, x, g):
        mx, my, mz = self._comps(x)
        gx, gy, gz = (self._c * q for q in self._comps(g))
        pr = self.params
        a = pr.alpha_g
        px, py, pz = self._p
        f = self._forward(mx, my, mz)
        hx, hz, mm, mp, mH, s = f["hx"], f["hz"], f["mm"], f["mp"], f["mH"], f["s"]
        cx, cy, cz = f["c"]
        gp = gx * px + gy * py + gz * pz
        gm = gx * mx + gy * my + gz * mz
        gH = gx * hx + gz * hz
        gc = gx * cx + gy * cy + gz * cz
        # m x H with H = (hx, 0, hz): d/dm is H x g, d/dH is g x m
        rx = -hz * gy
        ry = hz * gx - hx * gz
        rz = hx * gy
        gHx = gy * mz - gz * my
        gHz = gx * my - gy * mx
        # spin-torque term s (p|m|^2 - m (m.p))
        gs = gp * mm - gm * mp + a * mm * gc
        gmm = s * gp - a * gH + a * s * gc
        rx = rx - s * mp * gx + a * mH * gx
        ry = ry - s * mp * gy + a * mH * gy
        rz = rz - s * mp * gz + a * mH * gz
        gmp = -s * gm + gs * (-s * pr.lambda_stt / (1.0 + pr.lambda_stt * mp))
        gmH = a * gm
        gHx = gHx - a * mm * gx + gmH * mx
        gHz = gHz - a * mm * gz + gmH * mz
        # a s |m|^2 (m x p): d/dm of g.(m x p) is p x g
        w = a * s * mm
        rx = rx + w * (py * gz - pz * gy) + gmH * hx + 2.0 * gmm * mx + gmp * px
        ry = ry + w * (pz * gx - px * gz) + 2.0 * gmm * my + gmp * py
        rz = rz + w * (px * gy - py * gx) + gmH * hz + 2.0 * gmm * mz + gmp * pz
        rx = rx + self.A_cp * (gHx @ self.W_cp)
        rz = rz + self._D * gHz
        return self._interleave(rx, ry, rz)

    def jacobian(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.jvp(x, np.eye(self.dim)).T

    # per-oscillator normalization used as the optional post-step projection
    def project(self, x):
        m = self._blocks(x)
        nrm = np.sqrt(_dot(m, m))
        return (m / nrm[..., None]).reshape(np.shape(x))

    def project_jvp(self, x, v):
        m = self._blocks(x)
        dm = self._blocks(v)
        nrm = np.sqrt(_dot(m, m))
        mh = m / nrm[..., None]
        out = (dm - mh * _dot(mh, dm)[..., None]) / nrm[..., None]
        return out.reshape(out.shape[:-2] + (self.dim,))

    project_vjp = project_jvp  # the projection Jacobian is symmetric

    def random_state(self, rng=0, batch=()):
        gen = rng.generator() if isinstance(rng, RngStream) else np.random.default_rng(rng)
        m = gen.standard_normal(tuple(batch) + (self.n_osc, 3))
        m /= np.linalg.norm(m, axis=-1, keepdims=True)
        return m.reshape(tuple(batch) + (self.dim,))


class LinearField:
    """``dx/dt = A x``; used as an analytically solvable test system."""

    kind = "continuous"

    def __init__(self, A, b=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = None if b is None else np.asarray(b, dtype=np.float64)

    @property
    def dim(self):
        return self.A.shape[0]

    def field(self, x):
        out = np.asarray(x) @ self.A.T
        return out if self.b is None else out + self.b

    def jvp(self, x, v):
        return v @ self.A.T

    def vjp(self, x, g):
        return g @ self.A

    def jacobian(self, x):
        return self.A.copy()


class LinearMap:
    """``x -> A x``; the discrete counterpart of :class:`LinearField`."""

    kind = "discrete"

    def __init__(self, A):
        self.A = np.asarray(A, dtype=np.float64)

    @property
    def dim(self):
        return self.A.shape[0]

    def step(self, x):
        return np.asarray(x) @ self.A.T

    def jvp(self, x, v, y=None):
        return v @ self.A.T

    def vjp(self, x, g, y=None):
        return g @ self.A

    def jacobian(self, x):
        return self.A.copy()


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray | None
    final: np.ndarray
    steps: list = field(default_factory=list)

    def to_csv(self, path):
        if self.states is None:
            raise ValueError("trajectory was integrated without recording states")
        write_trajectory_csv(path, self.times, self.states)


def write_trajectory_csv(path, times, states):
    states = np.asarray(states)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(states.shape[-1])])
        for t, x in zip(times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in np.ravel(x)])


def step_sizes(T, dt):
    """Fixed steps of size ``dt`` whose final entry is shortened to land exactly on ``T``."""
    if T < 0:
        raise ValueError("T must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if T == 0:
        return []
    n_full = int(math.floor(T / dt + 1e-9))
    hs = [dt] * n_full
    rest = T - n_full * dt
    if rest > 1e-12 * max(T, 1.0):
        hs.append(rest)
    elif n_full == 0:
        hs.append(T)
    return hs


def _field_fn(system):
    return system.field if hasattr(system, "field") else system


def rk4_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_rk4(system, x0, T, dt, renormalize=None, record=True):
    """Classical fixed-step RK4 from ``x0`` over ``[0, T]``.

    ``system`` is a callable field or an object with ``field``. When
    ``renormalize`` is true (default for systems that define ``project``),
    the projection runs after every step.
    """
    f = _field_fn(system)
    if renormalize is None:
        renormalize = hasattr(system, "project")
    project = system.project if renormalize else None
    x = np.array(x0, dtype=np.float64)
    hs = step_sizes(T, dt)
    times = np.concatenate([[0.0], np.cumsum(hs)]) if hs else np.array([0.0])
    states = [x.copy()] if record else None
    t = 0.0
    for h in hs:
        x_new = rk4_step(f, x, h)
        if project is not None:
            x_new = project(x_new)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite state at t={t + h:g}", last_state=x, time=t)
        x = x_new
        t += h
        if record:
            states.append(x.copy())
    if hs:
        times[-1] = T
    return Trajectory(times=times, states=np.array(states) if record else None, final=x, steps=hs)


def _rk4_tangent_step(sys, x, V, h):
    """One RK4 step of the state and its variational equation with the same stages."""
    f = sys.field
    k1 = f(x)
    l1 = sys.jvp(x, V)
    x2 = x + 0.5 * h * k1
    k2 = f(x2)
    l2 = sys.jvp(x2, V + 0.5 * h * l1)
    x3 = x + 0.5 * h * k2
    k3 = f(x3)
    l3 = sys.jvp(x3, V + 0.5 * h * l2)
    x4 = x + h * k3
    k4 = f(x4)
    l4 = sys.jvp(x4, V + h * l3)
    x_new = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    V_new = V + (h / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
    return x_new, V_new


def propagate_tangents(system, x0, V0, T, dt=None, renormalize=None):
    """Carry tangent rows ``V0`` (shape ``(k, dim)``) along the trajectory from ``x0``.

    Discrete systems take ``T`` as an integer step count. Returns
    ``(x_T, V_T)``; row ``j`` of ``V_T`` is ``J_T @ V0[j]``.
    """
    x = np.array(x0, dtype=np.float64)
    V = np.array(V0, dtype=np.float64)
    if getattr(system, "kind", "continuous") == "discrete":
        n = int(T)
        if n != T or n < 0:
            raise ValueError("discrete systems need a non-negative integer step count")
        for i in range(n):
            y = system.step(x)
            V = system.jvp(x, V, y=y)
            x = y
            if not np.all(np.isfinite(x)) or not np.all(np.isfinite(V)):
                raise DivergenceError(f"non-finite state at step {i + 1}", last_state=x, time=i)
        return x, V
    if dt is None:
        raise ValueError("continuous systems need dt")
    if renormalize is None:
        renormalize = hasattr(system, "project")
    t = 0.0
    for h in step_sizes(T, dt):
        x_new, V_new = _rk4_tangent_step(system, x, V, h)
        if renormalize:
            V_new = system.project_jvp(x_new, V_new)
            x_new = system.project(x_new)
        if not np.all(np.isfinite(x_new)) or not np.all(np.isfinite(V_new)):
            raise DivergenceError(f"non-finite state at t={t + h:g}", last_state=x, time=t)
        x, V = x_new, V_new
        t += h
    return x, V


def tangent_propagate(system, x0, T, dt=None, renormalize=None):
    """Jacobian ``J_T = d x_T / d x_0`` of the flow (or of ``T`` map steps)."""
    x0 = np.asarray(x0, dtype=np.float64)
    _, V = propagate_tangents(system, x0, np.eye(x0.shape[-1]), T, dt, renormalize)
    return V.T


def flow(system, x0, T, dt=None, renormalize=None):
    """Final state after ``T`` (steps for discrete maps, time for fields)."""
    if getattr(system, "kind", "continuous") == "discrete":
        x = np.array(x0, dtype=np.float64)
        for _ in range(int(T)):
            x = system.step(x)
        return x
    return integrate_rk4(system, x0, T, dt, renormalize=renormalize, record=False).final


def rk4_stages(f, x, h):
    """Stage points and slopes of one RK4 step, recomputed exactly as the forward pass did."""
    k1 = f(x)
    x2 = x + 0.5 * h * k1
    k2 = f(x2)
    x3 = x + 0.5 * h * k2
    k3 = f(x3)
    x4 = x + h * k3
    k4 = f(x4)
    x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (x, x2, x3, x4), x_new


def rk4_step_vjp(system, x, g, h, renormalize=False):
    """Transpose of the Jacobian of one (optionally projected) RK4 step applied to ``g``."""
    (x1, x2, x3, x4), x_new = rk4_stages(system.field, x, h)
    if renormalize:
        g = system.project_vjp(x_new, g)
    gx = g
    gk1 = (h / 6.0) * g
    gk2 = (h / 3.0) * g
    gk3 = (h / 3.0) * g
    gk4 = (h / 6.0) * g
    gx4 = system.vjp(x4, gk4)
    gx = gx + gx4
    gk3 = gk3 + h * gx4
    gx3 = system.vjp(x3, gk3)
    gx = gx + gx3
    gk2 = gk2 + 0.5 * h * gx3
    gx2 = system.vjp(x2, gk2)
    gx = gx + gx2
    gk1 = gk1 + 0.5 * h * gx2
    return gx + system.vjp(x1, gk1)


def rk4_step_jvp(system, x, v, h, renormalize=False):
    """Tangent map of one (optionally projected) RK4 step applied to ``v``."""
    x_new, v_new = _rk4_tangent_step(system, x, v, h)
    if renormalize:
        v_new = system.project_jvp(x_new, v_new)
    return v_new
