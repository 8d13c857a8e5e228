"""Randomized finite-difference gradient estimators.

Four variants share one entry point: central two-point with Gaussian
directions (the default), forward differences, central with directions drawn
uniformly from the sphere of radius sqrt(d), and the average of n independent
central Gaussian estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .rng import RngStream

CENTRAL_GAUSSIAN = "central_gaussian"
FORWARD_GAUSSIAN = "forward_gaussian"
CENTRAL_SPHERE = "central_sphere"
MULTI_QUERY = "multi_query"
KINDS = (CENTRAL_GAUSSIAN, FORWARD_GAUSSIAN, CENTRAL_SPHERE, MULTI_QUERY)

DEFAULT_MU = 1e-3


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = CENTRAL_GAUSSIAN
    mu: float = DEFAULT_MU
    queries: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not (np.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if int(self.queries) < 1:
            raise ValueError(f"queries must be >= 1, got {self.queries}")
        if self.kind != MULTI_QUERY and self.queries != 1:
            raise ValueError("queries > 1 is only meaningful for the multi_query kind")
        object.__setattr__(self, "queries", int(self.queries))

    @property
    def central(self) -> bool:
        return self.kind != FORWARD_GAUSSIAN

    @property
    def evaluations(self) -> int:
        return 2 * self.queries

    @property
    def variant(self) -> str:
        """Covariance-operator tag matching this estimator."""
        return {CENTRAL_GAUSSIAN: "gaussian", CENTRAL_SPHERE: "sphere",
                MULTI_QUERY: "multi_query", FORWARD_GAUSSIAN: "forward"}[self.kind]


class EstimateSample(NamedTuple):
    directions: np.ndarray  # (n, d)
    estimate: np.ndarray
    evaluations: int
    value: float | None = None  # f(x), only when requested


def evaluate_many(objective, points) -> np.ndarray:
    """f at each row of ``points``; uses a batched ``values`` when available."""
    points = np.atleast_2d(points)
    if hasattr(objective, "values"):
        return np.asarray(objective.values(points), dtype=float)
    return np.array([objective.value(p) for p in points])


def draw_directions(cfg: EstimatorConfig, dim: int, count: int, stream: RngStream) -> np.ndarray:
    if cfg.kind == CENTRAL_SPHERE:
        return stream.sphere(count, dim)
    return stream.gaussian(count, dim)


def estimate_gradient(cfg: EstimatorConfig, objective, x, stream: RngStream,
                      with_value: bool = False) -> EstimateSample:
    """One estimate of the gradient at ``x``.

    ``with_value`` appends x itself to the batched evaluation so callers can
    log f(x) without a second pass; it does not count towards ``evaluations``.
    """
    x = np.asarray(x, dtype=float)
    mu = cfg.mu
    u = draw_directions(cfg, x.shape[0], cfg.queries, stream)
    if cfg.central:
        pts = np.concatenate([x + mu * u, x - mu * u] + ([x[None, :]] if with_value else []))
        f = evaluate_many(objective, pts)
        n = cfg.queries
        coef = (f[:n] - f[n : 2 * n]) / (2.0 * mu)
        est = coef @ u / n
        val = float(f[-1]) if with_value else None
    else:
        f = evaluate_many(objective, np.vstack([x + mu * u[0], x]))
        est = (f[0] - f[1]) / mu * u[0]
        val = float(f[1]) if with_value else None
    return EstimateSample(u, est, cfg.evaluations, val)


def estimate_gradients_batch(cfg: EstimatorConfig, objective, x, replicates: int,
                             stream: RngStream) -> np.ndarray:
    """``replicates`` independent estimates at a fixed x, shape (replicates, d)."""
    x = np.asarray(x, dtype=float)
    d, n, mu = x.shape[0], cfg.queries, cfg.mu
    u = draw_directions(cfg, d, replicates * n, stream)
    if cfg.central:
        fp = evaluate_many(objective, x + mu * u)
        fm = evaluate_many(objective, x - mu * u)
        g = ((fp - fm) / (2.0 * mu))[:, None] * u
    else:
        f0 = evaluate_many(objective, x[None, :])[0]
        g = ((evaluate_many(objective, x + mu * u) - f0) / mu)[:, None] * u
    return g.reshape(replicates, n, d).mean(axis=1)


class MeanCheck(NamedTuple):
    mean: np.ndarray
    stderr: np.ndarray
    target: np.ndarray

    def zscores(self) -> np.ndarray:
        se = np.where(self.stderr > 0, self.stderr, np.inf)
        z = np.abs(self.mean - self.target) / se
        return np.where((self.stderr == 0) & (self.mean != self.target), np.inf, z)


def estimator_mean_check(cfg: EstimatorConfig, quadratic, x, replicates: int,
                         stream: RngStream, chunk: int = 20000) -> MeanCheck:
    """Monte Carlo mean of the estimator against the true gradient H(x - x*)."""
    x = np.asarray(x, dtype=float)
    total = np.zeros_like(x)
    total_sq = np.zeros_like(x)
    done = 0
    while done < replicates:
        k = min(chunk, replicates - done)
        g = estimate_gradients_batch(cfg, quadratic, x, k, stream)
        total += g.sum(axis=0)
        total_sq += (g * g).sum(axis=0)
        done += k
    mean = total / replicates
    var = np.clip(total_sq / replicates - mean * mean, 0.0, None) * replicates / max(replicates - 1, 1)
    return MeanCheck(mean, np.sqrt(var / replicates), quadratic.gradient(x))


# --------------------------------------------------------------------------
# fourth-moment identities for Gaussian directions


def isserlis_fourth_moment(a) -> np.ndarray:
    """Closed form of E[u u^T A u u^T] for u ~ N(0, I): A + A^T + tr(A) I."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    return a + a.T + np.trace(a) * np.eye(a.shape[0])


def isserlis_weighted(a, sigma) -> np.ndarray:
    """E[S^-1/2 u u^T S^1/2 A S^1/2 u u^T S^-1/2] = A + A^T + tr(S A) S^-1.

    ``sigma`` is the positive diagonal of S.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    s = np.asarray(sigma, dtype=float)
    if np.any(s <= 0) or s.shape[0] != a.shape[0]:
        raise ValueError("sigma must be a positive vector matching A")
    return a + a.T + np.sum(s * np.diag(a)) * np.diag(1.0 / s)


def mc_fourth_moment(a, samples: int, stream: RngStream, sigma=None, chunk: int = 200000):
    """Monte Carlo estimate of the (weighted) fourth moment with per-entry SE."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    d = a.shape[0]
    s = np.ones(d) if sigma is None else np.asarray(sigma, dtype=float)
    rs, irs = np.sqrt(s), 1.0 / np.sqrt(s)
    b = rs[:, None] * a * rs[None, :]
    tot = np.zeros((d, d))
    tot_sq = np.zeros((d, d))
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        u = stream.gaussian(k, d)
        q = np.einsum("ki,ij,kj->k", u, b, u)
        # S^-1/2 u (u^T B u) u^T S^-1/2
        v = u * irs
        m = q[:, None, None] * v[:, :, None] * v[:, None, :]
        tot += m.sum(axis=0)
        tot_sq += (m * m).sum(axis=0)
        done += k
    mean = tot / samples
    var = np.clip(tot_sq / samples - mean * mean, 0.0, None) * samples / (samples - 1)
    return mean, np.sqrt(var / samples)


def estimate_gradient_rows(cfg: EstimatorConfig, objective, xs, stream: RngStream) -> np.ndarray:
    """One independent estimate per row of ``xs`` (replicates, d)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    r, d = xs.shape
    n, mu = cfg.queries, cfg.mu
    u = draw_directions(cfg, d, r * n, stream).reshape(r, n, d)
    base = xs[:, None, :]
    if cfg.central:
        fp = evaluate_many(objective, (base + mu * u).reshape(-1, d)).reshape(r, n)
        fm = evaluate_many(objective, (base - mu * u).reshape(-1, d)).reshape(r, n)
        coef = (fp - fm) / (2.0 * mu)
    else:
        fp = evaluate_many(objective, (base + mu * u).reshape(-1, d)).reshape(r, n)
        coef = (fp - evaluate_many(objective, xs)[:, None]) / mu
    return np.einsum("rn,rnd->rd", coef, u) / n
