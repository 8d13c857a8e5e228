"""Small dense linear algebra: Jacobi eigensolver, power iteration, Hutchinson.

Sizes here never exceed a few hundred, so everything is dense numpy.
Matrix-vector oracles accept either a vector of shape ``(d,)`` or a block of
vectors of shape ``(d, k)`` and must return the same shape.
"""
from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .rng import RngStream

SYM_TOL = 1e-12
JACOBI_TOL = 1e-12


class LinAlgError(ValueError):
    pass


class EigEstimate(NamedTuple):
    value: float
    vector: np.ndarray
    degenerate: bool
    history: np.ndarray


class TraceEstimate(NamedTuple):
    mean: float
    stderr: float
    samples: np.ndarray


def as_symmetric(m, tol: float = SYM_TOL) -> np.ndarray:
    a = np.atleast_2d(np.asarray(m, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinAlgError(f"expected a square matrix, got shape {a.shape}")
    asym = np.max(np.abs(a - a.T)) if a.size else 0.0
    if asym > tol * max(1.0, np.max(np.abs(a))):
        raise LinAlgError(f"matrix is not symmetric: max |m - m.T| = {asym:.3e}")
    return 0.5 * (a + a.T)


def sym_eigendecompose(m, tol: float = JACOBI_TOL, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition.

    Returns ``(values, Q)`` with eigenvalues in descending order and
    orthonormal eigenvectors in the columns of ``Q``.
    """
    a = as_symmetric(m)
    n = a.shape[0]
    q = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol * scale or off == 0.0:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = a[p, r]
                if abs(apr) < 1e-300:
                    continue
                theta = (a[r, r] - a[p, p]) / (2.0 * apr)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and r
                ap = a[:, p].copy()
                ar = a[:, r].copy()
                a[:, p] = c * ap - s * ar
                a[:, r] = s * ap + c * ar
                ap = a[p, :].copy()
                ar = a[r, :].copy()
                a[p, :] = c * ap - s * ar
                a[r, :] = s * ap + c * ar
                qp = q[:, p].copy()
                qr = q[:, r].copy()
                q[:, p] = c * qp - s * qr
                q[:, r] = s * qp + c * qr
    else:
        raise LinAlgError("Jacobi sweeps did not converge")
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], q[:, order]


def power_iteration_top_eig(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    iters: int = 50,
    stream: RngStream | None = None,
    weights: np.ndarray | None = None,
) -> EigEstimate:
    """Dominant eigenvalue of a symmetric (or weight-symmetrizable) operator.

    ``weights`` defines the inner product <a, b> = sum(w * a * b); pass the
    diagonal of P to run on P^-1 H, which is self-adjoint in that metric.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    stream = stream or RngStream(0)
    w = np.ones(dim) if weights is None else np.asarray(weights, dtype=float)
    v = stream.gaussian(dim)
    v /= np.sqrt(np.sum(w * v * v))
    history = np.empty(iters)
    rq = 0.0
    for k in range(iters):
        av = np.asarray(apply(v), dtype=float)
        rq = float(np.sum(w * v * av))
        history[k] = rq
        nrm = np.sqrt(np.sum(w * av * av))
        if not np.isfinite(nrm):
            raise LinAlgError("operator produced non-finite output")
        if nrm == 0.0:
            return EigEstimate(0.0, v, True, history[: k + 1])
        v = av / nrm
    return EigEstimate(rq, v, False, history)


def hutchinson_trace(
    apply: Callable[[np.ndarray], np.ndarray],
    dim: int,
    probes: int = 500,
    stream: RngStream | None = None,
    block: int | None = None,
    weights: np.ndarray | None = None,
) -> TraceEstimate:
    """Rademacher estimate of tr(A) with its standard error.

    ``block`` batches probes into ``(dim, block)`` calls of ``apply``.
    ``weights`` (optional) estimates tr(diag(w) A) instead.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    stream = stream or RngStream(0)
    z = stream.rademacher(dim, probes)
    lhs = z if weights is None else np.asarray(weights, dtype=float)[:, None] * z
    block = block or 1
    samples = np.empty(probes)
    for start in range(0, probes, block):
        zb = z[:, start : start + block]
        az = np.asarray(apply(zb if block > 1 else zb[:, 0]), dtype=float).reshape(dim, -1)
        samples[start : start + zb.shape[1]] = np.sum(lhs[:, start : start + block] * az, axis=0)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(probes)) if probes > 1 else float("inf")
    return TraceEstimate(mean, se, samples)


def solve_linear_small(a, b, max_cond: float = 1e12) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.asarray(b, dtype=float)
    if a.shape[0] != a.shape[1] or a.shape[0] > 8:
        raise LinAlgError(f"expected a square matrix of size <= 8, got {a.shape}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > max_cond:
        raise LinAlgError(f"matrix is singular or ill-conditioned (cond={cond:.3e})")
    return np.linalg.solve(a, b)
