"""Curvature statistics from Hessian-vector products.

lambda_max by power iteration, the trace by Hutchinson, their preconditioned
counterparts for P^-1 H, and the relative commutator ||PH - HP||_F / ||PH||_F.
Any object with ``hvp(x, v)`` works; ``v`` may be a (d, k) block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import hutchinson_trace, power_iteration_top_eig
from .rng import RngStream

POWER_ITERS = 50
TRACE_PROBES = 500
RELCOMM_PROBES = 50
BLOCK = 100


@dataclass
class CurvatureSnapshot:
    step: int
    lambda_max: float
    trace: float
    trace_se: float
    precond_lambda_max: float | None = None
    precond_trace: float | None = None
    precond_trace_se: float | None = None
    relcomm: float | None = None
    relcomm_se: float | None = None
    negative_curvature: bool = False  # power iteration settled on a negative Rayleigh quotient

    def columns(self) -> dict:
        return {"lambda_max": self.lambda_max, "trace": self.trace,
                "precond_trace": self.precond_trace,
                "precond_lambda_max": self.precond_lambda_max, "relcomm": self.relcomm}


def _hvp_block(objective, x):
    def apply(v):
        return np.asarray(objective.hvp(x, v), dtype=float)
    return apply


def _check_p(p_diag, d):
    p = np.asarray(p_diag, dtype=float).reshape(-1)
    if p.shape[0] != d or np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise ValueError("P must be a positive diagonal of matching length")
    return p


def probe_curvature(objective, x, probes: int = TRACE_PROBES, iters: int = POWER_ITERS,
                    stream: RngStream | None = None, step: int = 0) -> CurvatureSnapshot:
    stream = stream or RngStream(0)
    d = objective.dim
    hv = _hvp_block(objective, x)
    top = power_iteration_top_eig(hv, d, iters, stream.child(0))
    tr = hutchinson_trace(hv, d, probes, stream.child(1), block=min(BLOCK, probes))
    return CurvatureSnapshot(step, top.value, tr.mean, tr.stderr,
                             negative_curvature=top.value < 0)


def probe_preconditioned(objective, x, p_diag, probes: int = TRACE_PROBES,
                         iters: int = POWER_ITERS, stream: RngStream | None = None):
    """(lambda_max, trace, trace_se) of P^-1 H.

    Power iteration runs on v -> P^-1 H v with the P inner product, where that
    operator is self-adjoint.
    """
    stream = stream or RngStream(0)
    d = objective.dim
    p = _check_p(p_diag, d)
    hv = _hvp_block(objective, x)

    def apply(v):
        out = hv(v)
        return out / (p if out.ndim == 1 else p[:, None])

    top = power_iteration_top_eig(apply, d, iters, stream.child(0), weights=p)
    tr = hutchinson_trace(apply, d, probes, stream.child(1), block=min(BLOCK, probes))
    return top.value, tr.mean, tr.stderr


def relative_commutator(objective, x, p_diag, probes: int = RELCOMM_PROBES,
                        stream: RngStream | None = None):
    """(ratio, se) for ||PH - HP||_F / ||PH||_F from Rademacher probes.

    Each probe costs two HVPs: H z and H (P z).  ``se`` is a delta-method
    standard error; the ratio is NaN when the denominator vanishes.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    stream = stream or RngStream(0)
    d = objective.dim
    p = _check_p(p_diag, d)
    z = stream.rademacher(d, probes)
    hz = np.asarray(objective.hvp(x, z), dtype=float).reshape(d, probes)
    hpz = np.asarray(objective.hvp(x, p[:, None] * z), dtype=float).reshape(d, probes)
    num = np.sum((p[:, None] * hz - hpz) ** 2, axis=0)
    den = np.sum((p[:, None] * hz) ** 2, axis=0)
    n_mean, d_mean = num.mean(), den.mean()
    if d_mean == 0.0:
        return float("nan"), float("nan")
    ratio = float(np.sqrt(n_mean / d_mean))
    if probes < 2 or n_mean == 0.0:
        return ratio, 0.0
    # delta method for sqrt(A / B) with A, B sample means
    cov = np.cov(np.vstack([num, den]), ddof=1) / probes
    ga = 0.5 / np.sqrt(n_mean * d_mean)
    gb = -0.5 * np.sqrt(n_mean) / d_mean**1.5
    var = ga * ga * cov[0, 0] + 2 * ga * gb * cov[0, 1] + gb * gb * cov[1, 1]
    return ratio, float(np.sqrt(max(var, 0.0)))


def exact_relative_commutator(h, p_diag) -> float:
    h = np.asarray(h, dtype=float)
    p = np.diag(np.asarray(p_diag, dtype=float))
    return float(np.linalg.norm(p @ h - h @ p) / np.linalg.norm(p @ h))


def make_probe(objective, probes: int = TRACE_PROBES, iters: int = POWER_ITERS,
               stream: RngStream | None = None, precond=None, relcomm_probes: int = 0):
    """Trajectory hook: probe(t, state) -> dict of CSV curvature columns.

    ``precond(state)`` returns the diagonal P to use for the preconditioned
    columns, or None to skip them.  Streams are keyed on the step so that the
    same checkpoint always sees the same probes.
    """
    stream = stream or RngStream(0)

    def probe(t, state):
        s = stream.child(int(t))
        snap = probe_curvature(objective, state.x, probes, iters, s.child(0), step=t)
        if precond is not None:
            p = precond(state)
            if p is not None:
                lm, tr, se = probe_preconditioned(objective, state.x, p, probes, iters, s.child(1))
                snap.precond_lambda_max, snap.precond_trace, snap.precond_trace_se = lm, tr, se
                if relcomm_probes:
                    snap.relcomm, snap.relcomm_se = relative_commutator(
                        objective, state.x, p, relcomm_probes, s.child(2))
        return snap.columns()

    return probe


def dense_hessian(objective, x, block: int = 256) -> np.ndarray:
    """Symmetrized Hessian from d basis HVPs; meant for small d only."""
    d = objective.dim
    cols = [np.asarray(objective.hvp(x, np.eye(d)[:, i : i + block]), dtype=float).reshape(d, -1)
            for i in range(0, d, block)]
    h = np.hstack(cols)
    return 0.5 * (h + h.T)


def exact_trace(objective, x) -> float:
    return float(np.trace(dense_hessian(objective, x)))
