"""Second-moment (covariance) operators of ZO methods on quadratics.

In the eigenbasis of H the per-coordinate 2x2 blocks

    W_i = [[E x_i^2, E eta x_i m_i], [E eta x_i m_i, E eta^2 m_i^2]]

evolve linearly.  The operator is stored as a dense 3d x 3d matrix acting on
the stacked coordinates (w11, w12, w22) of every block; mean-square stability
is rho(T) < 1.

Estimator variants differ only in the fourth moment E[G A G] = a A + b tr(A) I
of the direction outer product G:

    gaussian       a = 2,             b = 1
    sphere         a = 2 d / (d + 2), b = d / (d + 2)
    multi_query n  a = 1 + 1 / n,     b = 1 / n
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .estimators import EstimatorConfig, estimate_gradient_rows
from .linalg import sym_eigendecompose
from .optimizers import OptimizerState, step
from .rng import RngStream
from .stability import StabilityQuery, pole, solve_ms_critical_stepsize

VARIANTS = ("gaussian", "sphere", "multi_query")
Q_COORDS = np.array([1.0, -1.0, 1.0])  # (w11, w12, w22) of Q = [[1, -1], [-1, 1]]


class CovarianceError(ValueError):
    pass


def moment_coefficients(variant: str, d: int, queries: int = 1):
    """(a, b) with E[G A G] = a A + b tr(A) I for symmetric A."""
    if variant == "gaussian":
        return 2.0, 1.0
    if variant == "sphere":
        return 2.0 * d / (d + 2.0), d / (d + 2.0)
    if variant == "multi_query":
        if queries < 1:
            raise CovarianceError("queries must be >= 1")
        return 1.0 + 1.0 / queries, 1.0 / queries
    raise CovarianceError(f"unknown estimator variant {variant!r}")


def _as_spectrum(spectrum):
    lam = np.asarray(spectrum, dtype=float).reshape(-1)
    if lam.size == 0 or np.any(lam < -1e-12) or not np.any(lam > 0):
        raise CovarianceError("spectrum must be nonnegative and not identically zero")
    return np.clip(lam, 0.0, None)


def mean_map(x: float, beta: float) -> np.ndarray:
    """The 3x3 map W -> A W A^T with A = [[1 - x, -beta], [x, beta]]."""
    b = beta
    return np.array([
        [(1 - x) ** 2, -2 * b * (1 - x), b * b],
        [x * (1 - x), b * (1 - 2 * x), -b * b],
        [x * x, 2 * b * x, b * b],
    ])


@dataclass(frozen=True)
class OperatorMatrix:
    matrix: np.ndarray
    family: str
    eta: float
    beta: float
    spectrum: np.ndarray
    sigma: np.ndarray | None
    variant: str
    queries: int
    local: np.ndarray  # (d, 3, 3) blocks without the global coupling
    coupling: np.ndarray  # (d, d): coefficient of w11_j in the Q-pattern rows of block i

    @property
    def dim(self) -> int:
        return self.spectrum.shape[0]

    @property
    def eta_eff(self) -> float:
        return (1.0 - self.beta) * self.eta if self.family == "FrozenZOAdam" else self.eta

    def apply(self, state) -> np.ndarray:
        s = np.asarray(state, dtype=float)
        return (self.matrix @ s.reshape(-1)).reshape(s.shape)

    def rho_lower_bound(self) -> float:
        """b * eta_eff^2 * sum(lambda^2): the coupling alone already forces this."""
        _, b = moment_coefficients(self.variant, self.dim, self.queries)
        return b * self.eta_eff**2 * float(np.sum(self.spectrum**2))


def assemble_operator(family: str, spectrum, eta: float, beta: float = 0.0, sigma=None,
                      variant: str = "gaussian", queries: int = 1,
                      quadratic_scale: float = 1.0) -> OperatorMatrix:
    """Dense covariance operator.

    For ``FrozenZOAdam`` the spectrum is that of P^-1 H and ``sigma`` the
    matching eigenvalues of P; coordinates are those of P^1/2 x, the step is
    (1 - beta1) eta and beta1 plays the role of the momentum.
    ``quadratic_scale`` multiplies every term coming from E[G A G]; it exists
    for the variant cross-check and should otherwise stay at 1.
    """
    lam = _as_spectrum(spectrum)
    d = lam.shape[0]
    if not (eta > 0):
        raise CovarianceError("eta must be positive")
    if not (0.0 <= beta < 1.0):
        raise CovarianceError("momentum must lie in [0, 1)")
    if family == "ZOGD" and beta != 0.0:
        raise CovarianceError("ZOGD takes no momentum")
    if family == "FrozenZOAdam":
        if sigma is None:
            raise CovarianceError("FrozenZOAdam needs the preconditioner eigenvalues sigma")
        sig = np.asarray(sigma, dtype=float).reshape(-1)
        if sig.shape != lam.shape or np.any(sig <= 0):
            raise CovarianceError("sigma must be positive and aligned with the spectrum")
        h = (1.0 - beta) * eta
        coup = (sig[None, :] / sig[:, None]) * lam[None, :] ** 2
    elif family in ("ZOGD", "ZOGDM"):
        if sigma is not None:
            raise CovarianceError(f"{family} takes no sigma weights")
        sig = None
        h = eta
        coup = np.broadcast_to(lam**2, (d, d)).copy()
    else:
        raise CovarianceError(f"no covariance operator for family {family!r}")
    a, b = moment_coefficients(variant, d, queries)
    # E[G A G] = a A + b tr(A) I; the mean part A sits inside A W A^T
    a_noise = quadratic_scale * a - 1.0
    b_noise = quadratic_scale * b
    x = h * lam
    local = np.empty((d, 3, 3))
    for i in range(d):
        local[i] = mean_map(x[i], beta)
        local[i][:, 0] += a_noise * x[i] ** 2 * Q_COORDS
    coupling = b_noise * h * h * coup
    m = np.zeros((3 * d, 3 * d))
    for i in range(d):
        m[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = local[i]
        m[3 * i : 3 * i + 3, 0::3] += Q_COORDS[:, None] * coupling[i][None, :]
    return OperatorMatrix(m, family, float(eta), float(beta), lam, sig, variant, int(queries),
                          local, coupling)


def assemble_fo_operator(spectrum, eta: float, beta: float = 0.0) -> np.ndarray:
    """Deterministic heavy-ball covariance map W -> A W A^T in the same coordinates."""
    lam = _as_spectrum(spectrum)
    d = lam.shape[0]
    m = np.zeros((3 * d, 3 * d))
    for i in range(d):
        m[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = mean_map(eta * lam[i], beta)
    return m


# --------------------------------------------------------------------------
# states in the PSD product cone


def blocks_to_state(blocks) -> np.ndarray:
    """(d, 2, 2) symmetric blocks -> (d, 3) coordinates."""
    w = np.asarray(blocks, dtype=float)
    return np.stack([w[:, 0, 0], w[:, 0, 1], w[:, 1, 1]], axis=1)


def state_to_blocks(state) -> np.ndarray:
    s = np.asarray(state, dtype=float).reshape(-1, 3)
    out = np.empty((s.shape[0], 2, 2))
    out[:, 0, 0], out[:, 0, 1], out[:, 1, 0], out[:, 1, 1] = s[:, 0], s[:, 1], s[:, 1], s[:, 2]
    return out


def min_block_eigenvalue(state) -> float:
    s = np.asarray(state, dtype=float).reshape(-1, 3)
    tr = s[:, 0] + s[:, 2]
    disc = np.sqrt((s[:, 0] - s[:, 2]) ** 2 + 4 * s[:, 1] ** 2)
    return float(np.min(0.5 * (tr - disc)))


def random_cone_state(d: int, stream: RngStream) -> np.ndarray:
    g = stream.gaussian(d, 2, 2)
    return blocks_to_state(g @ g.transpose(0, 2, 1))


def cone_start(d: int, eps: float = 1e-6) -> np.ndarray:
    """Every block equal to Q + eps I, a strictly positive cone element."""
    return np.tile(np.array([1.0 + eps, -1.0, 1.0 + eps]), (d, 1))


def initial_state(x0, m0=None, eta: float = 1.0) -> np.ndarray:
    """Blocks of a deterministic start (x0, m0) in the eigenbasis coordinates."""
    x0 = np.asarray(x0, dtype=float)
    y0 = np.zeros_like(x0) if m0 is None else eta * np.asarray(m0, dtype=float)
    return np.stack([x0 * x0, x0 * y0, y0 * y0], axis=1)


# --------------------------------------------------------------------------
# spectral radius


class RhoEstimate(NamedTuple):
    rho: float
    iterations: int
    converged: bool


def spectral_radius_estimate(op: OperatorMatrix | np.ndarray, max_iter: int = 10000,
                             tol: float = 1e-13, start=None) -> RhoEstimate:
    """Power iteration from the cone start with a Rayleigh-quotient stop.

    The leading eigenvector lies in the cone, so the iterates never change
    sign structure; the quotient is averaged over two consecutive steps to damp
    oscillation from complex subdominant pairs.
    """
    m = op.matrix if isinstance(op, OperatorMatrix) else np.asarray(op, dtype=float)
    n = m.shape[0]
    v = cone_start(n // 3).reshape(-1) if start is None else np.asarray(start, dtype=float).reshape(-1)
    v = v / np.linalg.norm(v)
    prev = np.inf
    rq_old = None
    est = 0.0
    for k in range(1, max_iter + 1):
        w = m @ v
        rq = float(v @ w)
        est = rq if rq_old is None else 0.5 * (rq + rq_old)
        nrm = np.linalg.norm(w)
        if nrm == 0.0 or not np.isfinite(nrm):
            return RhoEstimate(0.0 if nrm == 0.0 else np.inf, k, nrm == 0.0)
        v = w / nrm
        if abs(est - prev) < tol * max(1.0, abs(est)) and k > 2:
            return RhoEstimate(abs(est), k, True)
        prev = est
        rq_old = rq
    return RhoEstimate(abs(est), max_iter, False)


def spectral_radius(op: OperatorMatrix, max_iter: int = 10000, tol: float = 1e-13) -> float:
    r = spectral_radius_estimate(op, max_iter, tol).rho
    lb = op.rho_lower_bound()
    if r < lb * (1.0 - 1e-9):
        raise CovarianceError(f"rho = {r:.12g} is below its lower bound {lb:.12g}")
    return r


def implied_ms_stepsize(family: str, spectrum, beta: float = 0.0, sigma=None,
                        variant: str = "gaussian", queries: int = 1, tol: float = 1e-10) -> float:
    """The eta at which rho(T) crosses 1, by bisection on the spectral radius."""
    lam = _as_spectrum(spectrum)

    def rho(eta):
        return spectral_radius(assemble_operator(family, lam, eta, beta, sigma, variant, queries))

    lo, hi = 0.0, 1.0 / lam.max()
    while rho(hi) < 1.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6 / lam.max():
            raise CovarianceError("no crossing found")
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if rho(mid) < 1.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# iteration and Monte Carlo


class CovTrajectory(NamedTuple):
    totals: np.ndarray  # sum_i w11 at t = 0..steps
    states: np.ndarray  # (steps + 1, d, 3)
    overflow: bool
    rate: float  # fitted per-step growth factor over the last steps


def iterate_covariance(op: OperatorMatrix, state0, steps: int) -> CovTrajectory:
    s = np.asarray(state0, dtype=float).reshape(-1, 3)
    if min_block_eigenvalue(s) < -1e-10:
        raise CovarianceError("initial state is not in the PSD cone")
    states = [s]
    overflow = False
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            s = op.apply(s)
            if not np.all(np.isfinite(s)) or np.max(np.abs(s)) > 1e300:
                overflow = True
                break
            states.append(s)
    states = np.array(states)
    totals = states[:, :, 0].sum(axis=1)
    k = min(len(totals) - 1, 20)
    rate = float(np.exp((np.log(totals[-1]) - np.log(totals[-1 - k])) / k)) if k > 0 and totals[-1] > 0 and totals[-1 - k] > 0 else float("nan")
    return CovTrajectory(totals, states, overflow, rate)


def jackknife_mean_se(samples, groups: int = 100):
    """Group-deletion jackknife SE of the mean along axis 0."""
    x = np.asarray(samples, dtype=float)
    r = x.shape[0]
    g = min(groups, r)
    idx = np.array_split(np.arange(r), g)
    total = x.sum(axis=0)
    loo = np.array([(total - x[i].sum(axis=0)) / (r - len(i)) for i in idx])
    mean = total / r
    se = np.sqrt((g - 1) / g * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    return mean, se


class MCSecondMoment(NamedTuple):
    mean_sq: np.ndarray  # E ||x_t - x*||^2, t = 0..steps
    se_sq: np.ndarray
    mean_x: np.ndarray  # (steps + 1, d) E[x_t - x*]
    se_x: np.ndarray
    samples_sq: np.ndarray | None = None  # (replicates, steps + 1) if kept


def mc_second_moment(opt_cfg, est_cfg: EstimatorConfig, quadratic, x0, steps: int,
                     replicates: int, stream: RngStream, groups: int = 100,
                     keep_samples: bool = False) -> MCSecondMoment:
    """Run ``replicates`` independent ZO trajectories in lockstep.

    Uses the same estimator and step code as single runs; divergent replicates
    are kept.
    """
    x0 = np.asarray(x0, dtype=float)
    xs = quadratic.minimizer
    big = np.tile(x0, (replicates, 1))
    state = OptimizerState(big, np.zeros_like(big), np.zeros_like(big), 0, False)
    sq = np.empty((replicates, steps + 1))
    mx = np.empty((steps + 1, x0.shape[0]))
    sx = np.empty_like(mx)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps + 1):
            e = state.x - xs
            sq[:, t] = np.sum(e * e, axis=1)
            mx[t], sx[t] = jackknife_mean_se(e, groups)
            if t == steps:
                break
            g = estimate_gradient_rows(est_cfg, quadratic, state.x, stream)
            state = _step_unchecked(opt_cfg, state, g)
    mean_sq, se_sq = jackknife_mean_se(sq, groups)
    return MCSecondMoment(mean_sq, se_sq, mx, sx, sq if keep_samples else None)


def _step_unchecked(cfg, state, g):
    # divergent replicates carry inf/nan; they must not freeze the whole batch
    s = step(cfg, state, np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0))
    bad = ~np.isfinite(g).all(axis=1)
    if np.any(bad):
        x = s.x.copy()
        x[bad] = np.inf
        s = OptimizerState(x, s.m, s.nu, s.t, s.diverged)
    return s


# --------------------------------------------------------------------------
# forward-difference floor


def forward_fd_source(spectrum) -> np.ndarray:
    """Diagonal of Q_H = E[(u^T H u)^2 u u^T] / 4 for diagonal H, u ~ N(0, I)."""
    lam = np.asarray(spectrum, dtype=float)
    s1 = lam.sum()
    s2 = np.sum(lam * lam)
    return 0.25 * (8 * lam * lam + 4 * lam * s1 + s1 * s1 + 2 * s2)


def forward_fd_source_mc(spectrum, samples: int, stream: RngStream, chunk: int = 500000):
    """Monte Carlo diagonal of Q_H with standard errors."""
    lam = np.asarray(spectrum, dtype=float)
    d = lam.shape[0]
    tot = np.zeros(d)
    tot_sq = np.zeros(d)
    done = 0
    while done < samples:
        k = min(chunk, samples - done)
        u = stream.gaussian(k, d)
        q = 0.25 * (u * u @ lam) ** 2
        v = q[:, None] * u * u
        tot += v.sum(axis=0)
        tot_sq += (v * v).sum(axis=0)
        done += k
    mean = tot / samples
    var = (tot_sq / samples - mean * mean) * samples / (samples - 1)
    return mean, np.sqrt(var / samples)


def forward_fd_stationary_covariance(spectrum, eta: float, mu: float, beta: float = 0.0) -> np.ndarray:
    """Fixed point of W -> T(W) + eta^2 mu^2 q_i Q for the forward estimator.

    Returns the (d, 3) stationary blocks; raises if rho(T) >= 1.
    """
    lam = _as_spectrum(spectrum)
    fam = "ZOGD" if beta == 0.0 else "ZOGDM"
    op = assemble_operator(fam, lam, eta, beta)
    if spectral_radius(op) >= 1.0:
        raise CovarianceError("rho(T) >= 1: no stationary covariance")
    src = (eta * mu) ** 2 * forward_fd_source(lam)[:, None] * Q_COORDS[None, :]
    n = op.matrix.shape[0]
    sol = np.linalg.solve(np.eye(n) - op.matrix, src.reshape(-1))
    return sol.reshape(-1, 3)


# --------------------------------------------------------------------------
# sphere directions


class SphereReport(NamedTuple):
    max_entry_error: float
    factor: float
    rho_sphere: float
    rho_gauss: float
    cone_ok: bool  # sum w11 after one step never larger for the sphere operator


def sphere_operator_check(spectrum, eta: float, beta: float = 0.0, stream: RngStream | None = None,
                          samples: int = 50) -> SphereReport:
    """Compare the sphere-direction operator with the Gaussian one.

    Removing every term that comes from E[G A G] leaves the same map L for
    both; the claim is T_sphere - L = d/(d+2) (T_gauss - L) entrywise.
    """
    lam = _as_spectrum(spectrum)
    d = lam.shape[0]
    fam = "ZOGD" if beta == 0.0 else "ZOGDM"
    sph = assemble_operator(fam, lam, eta, beta, variant="sphere")
    gau = assemble_operator(fam, lam, eta, beta, variant="gaussian")
    base = assemble_operator(fam, lam, eta, beta, variant="gaussian", quadratic_scale=0.0)
    f = d / (d + 2.0)
    err = float(np.max(np.abs((sph.matrix - base.matrix) - f * (gau.matrix - base.matrix))))
    stream = stream or RngStream(0)
    ok = True
    for _ in range(samples):
        s = random_cone_state(d, stream)
        ok &= bool(sph.apply(s)[:, 0].sum() <= gau.apply(s)[:, 0].sum() + 1e-12)
    return SphereReport(err, f, spectral_radius(sph), spectral_radius(gau), ok)


# --------------------------------------------------------------------------
# preconditioned coordinates


def adam_coordinates(hessian, precond, tol: float = 1e-8):
    """Joint eigenvalues (sigma, lambda_tilde) of commuting H and P.

    ``precond`` may be a positive vector (diagonal P).  Non-commuting pairs
    are refused: the theory has nothing to say about them.
    """
    h = np.asarray(hessian, dtype=float)
    p = np.asarray(precond, dtype=float)
    if h.ndim == 1 and p.ndim == 1:
        if np.any(p <= 0):
            raise CovarianceError("P must be positive definite")
        return p.copy(), h / p
    h = np.diag(h) if h.ndim == 1 else h
    p = np.diag(p) if p.ndim == 1 else p
    ph = p @ h
    den = np.linalg.norm(ph)
    rel = np.linalg.norm(ph - h @ p) / den if den > 0 else 0.0
    if rel > tol:
        raise CovarianceError(f"P and H do not commute (relative commutator {rel:.3e})")
    # a generic combination separates eigenvalues shared by one of the two
    _, q = sym_eigendecompose(h + np.pi / 7.0 * p)
    sig = np.diag(q.T @ p @ q)
    lam = np.diag(q.T @ h @ q)
    if np.any(sig <= 0):
        raise CovarianceError("P must be positive definite")
    return sig, np.clip(lam, 0.0, None) / sig


def ms_critical_for(family: str, spectrum, beta: float = 0.0) -> float:
    return solve_ms_critical_stepsize(StabilityQuery(spectrum, family, beta)).eta_ms_star


def dichotomy_points(family: str, spectrum, beta: float = 0.0):
    """(eta_ms, 0.9 eta_ms, min(1.1 eta_ms, 0.999 pole))."""
    lam = _as_spectrum(spectrum)
    e = ms_critical_for(family, lam, beta)
    top = pole(family, beta) / lam.max()
    return e, 0.9 * e, min(1.1 * e, 0.999 * top)

