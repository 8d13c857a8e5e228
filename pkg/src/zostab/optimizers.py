"""Zeroth- and first-order optimizers as pure step functions.

A config says which update rule to use; the state carries x, the momentum
buffer, Adam's second-moment EMA and the step counter.  ``step`` never looks at
the objective: callers pass either an exact gradient or an estimate, which is
how ZO and FO variants share one code path.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Union

import numpy as np

from .estimators import EstimatorConfig, estimate_gradient
from .rng import RngStream

DIVERGENCE_LOSS = 1e12


class OptimizerError(ValueError):
    pass


def _check_eta(eta):
    if not (np.isfinite(eta) and eta > 0):
        raise OptimizerError(f"eta must be positive, got {eta}")


def _check_unit(name, b):
    if not (0.0 <= b < 1.0):
        raise OptimizerError(f"{name} must lie in [0, 1), got {b}")


def _check_precond(p):
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise OptimizerError("diagonal preconditioner must be positive")
        return p, 1.0 / p
    if p.ndim != 2 or p.shape[0] != p.shape[1] or not np.allclose(p, p.T, atol=1e-12):
        raise OptimizerError("preconditioner must be a positive vector or an SPD matrix")
    try:
        np.linalg.cholesky(p)
    except np.linalg.LinAlgError:
        raise OptimizerError("preconditioner matrix is not positive definite") from None
    return p, np.linalg.inv(p)


@dataclass(frozen=True)
class ZOGD:
    eta: float
    family = "ZOGD"
    zeroth_order = True

    def __post_init__(self):
        _check_eta(self.eta)


@dataclass(frozen=True)
class ZOGDM:
    eta: float
    beta: float = 0.9
    family = "ZOGDM"
    zeroth_order = True

    def __post_init__(self):
        _check_eta(self.eta)
        _check_unit("beta", self.beta)


@dataclass(frozen=True)
class ZOAdam:
    eta: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    family = "ZOAdam"
    zeroth_order = True

    def __post_init__(self):
        _check_eta(self.eta)
        _check_unit("beta1", self.beta1)
        _check_unit("beta2", self.beta2)
        if not self.eps > 0:
            raise OptimizerError(f"eps must be positive, got {self.eps}")


@dataclass(frozen=True)
class FrozenZOAdam:
    eta: float
    beta1: float
    P: np.ndarray
    family = "FrozenZOAdam"
    zeroth_order = True
    P_inv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _check_eta(self.eta)
        _check_unit("beta1", self.beta1)
        p, pinv = _check_precond(self.P)
        object.__setattr__(self, "P", p)
        object.__setattr__(self, "P_inv", pinv)


@dataclass(frozen=True)
class GD(ZOGD):
    family = "GD"
    zeroth_order = False


@dataclass(frozen=True)
class GDM(ZOGDM):
    family = "GDM"
    zeroth_order = False


@dataclass(frozen=True)
class FrozenAdam(FrozenZOAdam):
    family = "FrozenAdam"
    zeroth_order = False


OptimizerConfig = Union[ZOGD, ZOGDM, ZOAdam, FrozenZOAdam, GD, GDM, FrozenAdam]
CONFIG_TYPES = {c.family: c for c in (ZOGD, ZOGDM, ZOAdam, FrozenZOAdam, GD, GDM, FrozenAdam)}


def make_config(family: str, **params) -> OptimizerConfig:
    if family not in CONFIG_TYPES:
        raise OptimizerError(f"unknown optimizer family {family!r}")
    return CONFIG_TYPES[family](**params)


def with_eta(cfg: OptimizerConfig, eta: float) -> OptimizerConfig:
    return replace(cfg, eta=eta)


@dataclass(frozen=True)
class OptimizerState:
    x: np.ndarray
    m: np.ndarray
    nu: np.ndarray
    t: int = 0
    diverged: bool = False

    @classmethod
    def init(cls, x0) -> "OptimizerState":
        x0 = np.array(x0, dtype=float).reshape(-1)
        return cls(x0, np.zeros_like(x0), np.zeros_like(x0), 0, False)


def _apply_pinv(cfg, v):
    pinv = cfg.P_inv
    # P is symmetric, so v @ P^-1 also covers a (replicates, d) batch of rows
    return pinv * v if pinv.ndim == 1 else v @ pinv


def _adam_precond(cfg: ZOAdam, nu, t_next):
    return (1.0 - cfg.beta1**t_next) * (np.sqrt(nu / (1.0 - cfg.beta2**t_next)) + cfg.eps)


def step(cfg: OptimizerConfig, state: OptimizerState, g) -> OptimizerState:
    """One update with gradient (or estimate) ``g``.

    A non-finite ``g`` leaves the iterate untouched and raises the divergence
    flag on the returned state.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != state.x.shape:
        raise OptimizerError(f"gradient has shape {g.shape}, state has {state.x.shape}")
    if not np.all(np.isfinite(g)):
        return replace(state, diverged=True)
    eta = cfg.eta
    fam = cfg.family
    t1 = state.t + 1
    if fam in ("ZOGD", "GD"):
        return OptimizerState(state.x - eta * g, state.m, state.nu, t1, state.diverged)
    if fam in ("ZOGDM", "GDM"):
        m = cfg.beta * state.m + g
        return OptimizerState(state.x - eta * m, m, state.nu, t1, state.diverged)
    if fam == "ZOAdam":
        m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
        nu = cfg.beta2 * state.nu + (1.0 - cfg.beta2) * g * g
        p = _adam_precond(cfg, nu, t1)
        return OptimizerState(state.x - eta * m / p, m, nu, t1, state.diverged)
    # frozen Adam, ZO or FO
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    return OptimizerState(state.x - eta * _apply_pinv(cfg, m), m, state.nu, t1, state.diverged)


def current_preconditioner(cfg: OptimizerConfig, state: OptimizerState) -> np.ndarray:
    """Diagonal of the Adam preconditioner built from the stored EMA.

    For ZO-Adam this is the preconditioner applied by the most recent step
    (bias corrections at exponent t); at t = 0 it is the start value
    (1 - beta1) eps.  Frozen variants return their fixed P.
    """
    if cfg.family == "ZOAdam":
        return _adam_precond(cfg, state.nu, max(state.t, 1))
    if cfg.family in ("FrozenZOAdam", "FrozenAdam"):
        return cfg.P.copy()
    raise OptimizerError(f"{cfg.family} has no preconditioner")


# --------------------------------------------------------------------------
# trajectories

CSV_COLUMNS = ("step", "loss", "lambda_max", "trace", "precond_trace",
               "precond_lambda_max", "relcomm")


@dataclass
class TrajectoryRecord:
    loss: np.ndarray
    eta: np.ndarray
    snapshots: dict = field(default_factory=dict)  # step -> {column: value}
    diverged: bool = False
    final_state: OptimizerState | None = None
    evaluations: int = 0

    @property
    def steps(self) -> int:
        return self.loss.shape[0]

    def snapshot_series(self, column: str):
        ks = sorted(k for k, v in self.snapshots.items() if v.get(column) is not None)
        return np.array(ks, dtype=int), np.array([self.snapshots[k][column] for k in ks])

    def rows(self):
        for t, f in enumerate(self.loss):
            snap = self.snapshots.get(t, {})
            yield [t, f] + [snap.get(c) for c in CSV_COLUMNS[2:]]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow(["" if v is None else repr(float(v)) if i else str(v)
                            for i, v in enumerate(row)])

    def __eq__(self, other):
        if not isinstance(other, TrajectoryRecord):
            return NotImplemented
        return (np.array_equal(self.loss, other.loss) and np.array_equal(self.eta, other.eta)
                and self.snapshots == other.snapshots and self.diverged == other.diverged)


def eta_schedule(schedule, steps: int) -> np.ndarray:
    """Piecewise-constant step sizes from [(start_step, eta), ...]."""
    pts = sorted((int(s), float(e)) for s, e in schedule)
    if not pts or pts[0][0] != 0:
        raise OptimizerError("schedule must start at step 0")
    out = np.empty(steps)
    for (s, e), nxt in zip(pts, pts[1:] + [(steps, None)]):
        _check_eta(e)
        out[s : nxt[0]] = e
    return out


def run_trajectory(cfg: OptimizerConfig, estimator: EstimatorConfig | None, objective, x0,
                   steps: int, stream: RngStream | None = None, schedule=None,
                   probe: Callable | None = None, probe_every: int = 0,
                   probe_steps=(), hooks=(), batch_objective: Callable | None = None
                   ) -> TrajectoryRecord:
    """Drive ``steps`` updates and log f(x_t) before each one.

    ``estimator=None`` selects exact gradients.  ``schedule`` overrides the
    config's eta with a piecewise-constant list.  ``probe(t, state)`` returns a
    dict of curvature columns and runs every ``probe_every`` steps, at every
    step listed in ``probe_steps`` and on the last step; ``hooks`` are called
    as hook(t, state, loss) every step.  ``batch_objective(t)`` swaps in the
    objective used for step t (mini-batching); the logged loss is then the
    batch loss.
    """
    if steps < 1:
        raise OptimizerError("steps must be >= 1")
    if cfg.zeroth_order and estimator is None:
        raise OptimizerError(f"{cfg.family} needs an estimator config")
    if not cfg.zeroth_order and estimator is not None:
        raise OptimizerError(f"{cfg.family} uses exact gradients; pass estimator=None")
    stream = stream or RngStream(0)
    probe_steps = frozenset(int(k) for k in probe_steps)
    etas = eta_schedule(schedule, steps) if schedule is not None else np.full(steps, cfg.eta)
    state = OptimizerState.init(x0)
    loss = np.empty(steps)
    snaps = {}
    cur = cfg
    evals = 0
    t = 0
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            if etas[t] != cur.eta:
                cur = with_eta(cfg, etas[t])
            obj = objective if batch_objective is None else batch_objective(t)
            if estimator is None:
                f, g = obj.value(state.x), obj.gradient(state.x)
                evals += 1
            else:
                s = estimate_gradient(estimator, obj, state.x, stream, with_value=True)
                f, g = s.value, s.estimate
                evals += s.evaluations
            loss[t] = f
            if not np.isfinite(f) or f > DIVERGENCE_LOSS:
                diverged = True
                break
            if probe is not None and ((probe_every and t % probe_every == 0) or t in probe_steps
                                      or t == steps - 1):
                snaps[t] = probe(t, state)
            for h in hooks:
                h(t, state, f)
            state = step(cur, state, g)
            if state.diverged:
                diverged = True
                break
    n = t + 1
    return TrajectoryRecord(loss[:n].copy(), etas[:n].copy(), snaps, diverged, state, evals)
