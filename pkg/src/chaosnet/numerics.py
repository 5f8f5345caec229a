"""Dense linear-algebra helpers: seeded streams, spectral estimates and PCA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, aslinearoperator, eigs


class ConvergenceError(RuntimeError):
    """Raised when an iterative estimate does not settle within its budget."""

    def __init__(self, message, best_estimate, iterations):
        super().__init__(f"{message} (best estimate {best_estimate!r} after {iterations} iterations)")
        self.best_estimate = best_estimate
        self.iterations = iterations


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream identified by ``(seed, stream)``.

    Two streams with the same pair always yield the same sequence. Use
    :meth:`substream` to hand independent streams to parallel workers.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(seq))

    def substream(self, index: int) -> "RngStream":
        # fold the parent stream id into the seed so children never collide with siblings
        return RngStream(seed=int(self.seed) * 1_000_003 + int(self.stream), stream=int(index))


def as_rng(rng) -> np.random.Generator:
    if rng is None:
        return RngStream(0).generator()
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(int(rng)).generator()


def _check_finite(A, name="matrix"):
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")


def max_singular_value(A, tol=1e-10, max_iters=10_000, rng=None):
    """Largest singular value of ``A`` by power iteration on the smaller Gram matrix.

    Returns ``(sigma_max, iterations)``. Iteration stops once the Gram
    residual ``||G v - mu v||`` drops below ``tol * mu``, which bounds the
    relative error of ``mu`` by ``tol``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise ValueError("max_singular_value needs a non-empty 2-D matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    _check_finite(A)
    G = A @ A.T if A.shape[0] <= A.shape[1] else A.T @ A
    scale = np.abs(G).max()
    if scale == 0.0:
        return 0.0, 0
    G = G / scale
    v = as_rng(rng).standard_normal(G.shape[0])
    v /= np.linalg.norm(v)
    mu = 0.0
    for it in range(1, max_iters + 1):
        w = G @ v
        mu = float(v @ w)
        res = np.linalg.norm(w - mu * v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0, it
        if res <= tol * abs(mu):
            return float(np.sqrt(max(mu, 0.0) * scale)), it
        v = w / nrm
    raise ConvergenceError("power iteration for sigma_max did not converge",
                           float(np.sqrt(max(mu, 0.0) * scale)), max_iters)


def _operator(A):
    if isinstance(A, LinearOperator):
        return A
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    return aslinearoperator(A)


def truncated_randomized_svd(A, m=5, oversample=10, power_iters=2, rng=None, tol=1e-6, max_power_iters=200):
    """Top-``m`` singular values of ``A`` by randomized range finding.

    ``A`` may be a dense matrix or a ``scipy.sparse.linalg.LinearOperator``
    (only ``matmat``/``rmatmat`` are used), which lets Jacobians be probed
    without being formed.

    ``power_iters`` subspace iterations always run. With ``tol`` set, more
    follow until the leading value changes by less than ``tol`` relative
    between iterations; a small gap under sigma_1 otherwise leaves it
    noticeably underestimated. ``tol=None`` gives the plain fixed-count
    algorithm.
    """
    op = _operator(A)
    rows, cols = op.shape
    if m < 1 or m > min(rows, cols):
        raise ValueError(f"m={m} must lie in [1, min(rows, cols)={min(rows, cols)}]")
    k = min(m + oversample, min(rows, cols))
    omega = as_rng(rng).standard_normal((cols, k))
    Q, _ = np.linalg.qr(op.matmat(omega))
    s = None
    for it in range(max_power_iters if tol is not None else power_iters):
        Z, _ = np.linalg.qr(op.rmatmat(Q))
        Q, _ = np.linalg.qr(op.matmat(Z))
        if tol is None or it + 1 < power_iters:
            continue
        prev = s
        s = np.linalg.svd(op.rmatmat(Q).T, compute_uv=False)
        if prev is not None and abs(s[0] - prev[0]) <= tol * max(s[0], 1e-300):
            break
    if s is None:
        s = np.linalg.svd(op.rmatmat(Q).T, compute_uv=False)  # singular values of Q^T A
    return np.sort(np.abs(s))[::-1][:m]


def _two_step_estimate(y0, y1, y2):
    """Modulus of the dominant eigenvalue(s) seen in three power iterates.

    A dominant complex pair keeps iterates inside a rotating plane, so
    ``y2 = a*y1 + b*y0`` and the pair solves ``z^2 - a z - b = 0``.
    """
    n0 = np.linalg.norm(y0)
    n1 = np.linalg.norm(y1)
    if n1 == 0.0:
        return 0.0
    cosang = abs(y0 @ y1) / (n0 * n1)
    if 1.0 - cosang < 1e-14:
        return n1 / n0
    M = np.stack([y1, y0], axis=1)
    (a, b), *_ = np.linalg.lstsq(M, y2, rcond=None)
    roots = np.roots([1.0, -a, -b])
    return float(np.max(np.abs(roots)))


def _power_radius(B, tol, max_iters, rng):
    n = B.shape[0]
    y = as_rng(rng).standard_normal(n)
    y /= np.linalg.norm(y)
    history = []
    est = 0.0
    for it in range(1, max_iters + 1):
        y1 = B @ y
        y2 = B @ y1
        if np.linalg.norm(y2) == 0.0 and np.linalg.norm(y1) == 0.0:
            return 0.0
        est = _two_step_estimate(y, y1, y2)
        history.append(est)
        # geometric convergence makes one small step an unreliable stop signal
        if len(history) >= 6:
            window = history[-6:]
            if max(window) - min(window) <= tol * 0.1 * max(est, 1e-300):
                return est
        nrm = np.linalg.norm(y2)
        y = y2 / nrm if nrm > 0 else y1 / np.linalg.norm(y1)
    raise ConvergenceError("power iteration for spectral radius did not converge", est, max_iters)


def _arnoldi_radius(B, tol, max_iters, rng):
    n = B.shape[0]
    if n <= 12:
        return float(np.max(np.abs(np.linalg.eigvals(B))))
    v0 = as_rng(rng).standard_normal(n)
    try:
        vals = eigs(B, k=6, which="LM", v0=v0, tol=min(tol, 1e-12) * 1e-2,
                    maxiter=max_iters, return_eigenvectors=False)
    except ArpackNoConvergence as err:
        best = float(np.max(np.abs(err.eigenvalues))) if len(err.eigenvalues) else float("nan")
        raise ConvergenceError("Arnoldi iteration for spectral radius did not converge", best, max_iters) from err
    return float(np.max(np.abs(vals)))


def spectral_radius(A, tol=1e-10, max_iters=10_000, rng=None, method="arnoldi"):
    """Largest eigenvalue modulus of a square matrix.

    ``method="power"`` runs plain power iteration and resolves a rotating
    dominant pair by fitting the two-step recurrence of successive iterates.
    It is slow when several eigenvalues crowd the spectral edge, as they do
    for random reservoirs, so the default is implicitly restarted Arnoldi.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("spectral_radius needs a square matrix")
    _check_finite(A)
    if A.shape[0] == 1:
        return float(abs(A[0, 0]))
    scale = np.abs(A).max()
    if scale == 0.0:
        return 0.0
    B = A / scale
    if method == "power":
        try:
            return _power_radius(B, tol, max_iters, rng) * scale
        except ConvergenceError as err:
            raise ConvergenceError("power iteration for spectral radius did not converge",
                                   err.best_estimate * scale, err.iterations) from None
    if method == "arnoldi":
        return _arnoldi_radius(B, tol, max_iters, rng) * scale
    raise ValueError(f"unknown method {method!r}")


def rescale_to_radius(A, target_rho, **kwargs):
    rho = spectral_radius(A, **kwargs)
    if rho == 0.0:
        raise ValueError("cannot rescale a matrix with zero spectral radius")
    return np.asarray(A, dtype=np.float64) * (target_rho / rho)


def sparse_random_matrix(n, density, target_rho, rng: RngStream, max_attempts=8):
    """Dense storage of a Bernoulli(density)-masked uniform[-1, 1] matrix scaled to ``target_rho``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    if not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    for attempt in range(max_attempts):
        gen = (rng if attempt == 0 else rng.substream(attempt)).generator()
        mask = gen.random((n, n)) < density
        W = np.where(mask, gen.uniform(-1.0, 1.0, (n, n)), 0.0)
        rho = spectral_radius(W)
        if rho > 0.0:
            return W * (target_rho / rho)
    raise ValueError(f"zero spectral radius in {max_attempts} draws (n={n}, density={density})")


def pca(X, k):
    """Principal components of ``X`` (samples x features), centred but not scaled.

    Returns ``(components, projections, explained_variance)`` with
    ``components`` shaped ``(features, k)``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("pca needs a 2-D array with at least 2 samples")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k={k} must lie in [1, {d}]")
    Xc = X - X.mean(axis=0)
    _, s, Vt = np.linalg.svd(Xc, full_matrices=k > min(n, d))
    var = np.zeros(k)
    r = min(k, s.size)
    var[:r] = s[:r] ** 2 / (n - 1)
    components = Vt[:k].T.copy()
    # sign convention: largest-magnitude loading positive, so output is stable
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(k)])
    signs[signs == 0] = 1.0
    components *= signs
    return components, Xc @ components, var
