"""Closed-form linear-stability calculus for ZO and FO methods on quadratics.

Mean stability of every ZO method coincides with its FO counterpart.  Mean-
square stability is governed by a scalar condition S(eta) = 1 whose root is
found by bisection below the pole of S.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import solve_linear_small

ZO_FAMILIES = ("ZOGD", "ZOGDM", "FrozenZOAdam")
FO_FAMILIES = ("GD", "GDM", "FrozenAdam")
FO_OF = {"ZOGD": "GD", "ZOGDM": "GDM", "FrozenZOAdam": "FrozenAdam", "ZOAdam": "FrozenAdam"}

STABLE, CRITICAL, UNSTABLE = "stable", "critical", "unstable"
CRITICAL_TOL = 1e-12
BISECT_TOL = 1e-12


class StabilityError(ValueError):
    pass


class OutOfDomain(StabilityError):
    """Step size at or beyond the pole of the mean-square condition."""


def as_spectrum(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise StabilityError("spectrum must be a nonempty finite vector")
    if np.any(v < -1e-12):
        raise StabilityError("spectrum must be nonnegative")
    v = np.sort(np.clip(v, 0.0, None))[::-1]
    if v[0] == 0.0:
        raise StabilityError("spectrum is identically zero")
    return v


@dataclass(frozen=True)
class StabilityQuery:
    spectrum: np.ndarray
    family: str
    beta: float = 0.0

    def __post_init__(self):
        if self.family not in ZO_FAMILIES + FO_FAMILIES:
            raise StabilityError(f"unknown family {self.family!r}")
        if not (0.0 <= self.beta < 1.0):
            raise StabilityError(f"momentum must lie in [0, 1), got {self.beta}")
        if self.family in ("ZOGD", "GD") and self.beta != 0.0:
            raise StabilityError(f"{self.family} takes no momentum parameter")
        object.__setattr__(self, "spectrum", as_spectrum(self.spectrum))

    @property
    def lam_max(self) -> float:
        return float(self.spectrum[0])

    @property
    def trace(self) -> float:
        return float(self.spectrum.sum())


class StabilityReport(NamedTuple):
    eta_mean_star: float
    eta_ms_star: float
    lower_bound: float
    upper_bound: float
    classification: str | None = None


def fo_critical_stepsize(query: StabilityQuery) -> float:
    """Mean-stability threshold; for ZO families, that of the FO counterpart."""
    fam = FO_OF.get(query.family, query.family)
    lm, b = query.lam_max, query.beta
    if fam == "GD":
        return 2.0 / lm
    if fam == "GDM":
        return 2.0 * (1.0 + b) / lm
    return 2.0 * (1.0 + b) / ((1.0 - b) * lm)


def pole(family: str, beta: float) -> float:
    """Largest admissible eta * lambda_max for the mean-square condition."""
    if family in ("ZOGD", "ZOGDM"):
        return 1.0 - beta * beta
    if family == "FrozenZOAdam":
        return 1.0 + beta
    raise StabilityError(f"{family} has no mean-square condition")


def ms_condition_value(spectrum, eta: float, beta: float, family: str) -> float:
    lam = as_spectrum(spectrum)
    lam = lam[lam > 0]
    x = eta * lam
    p = pole(family, beta)
    if eta <= 0:
        raise StabilityError("eta must be positive")
    if x[0] >= p:
        raise OutOfDomain(f"eta * lambda_max = {x[0]:.6g} is not below the pole {p:.6g}")
    if family == "FrozenZOAdam":
        return float(np.sum(x / (2.0 * (1.0 - x / p))))
    return float(np.sum(x / (2.0 * (1.0 - beta) * (1.0 - x / p))))


def ms_bounds(query: StabilityQuery):
    tr, lm, b = query.trace, query.lam_max, query.beta
    if query.family == "ZOGD":
        return 2.0 / (tr + 2.0 * lm), 2.0 / tr
    if query.family == "ZOGDM":
        return 2.0 * (1.0 - b) / (tr + 2.0 * lm / (1.0 + b)), 2.0 * (1.0 - b) / tr
    if query.family == "FrozenZOAdam":
        return 2.0 / (tr + 2.0 * lm / (1.0 + b)), 2.0 / tr
    raise StabilityError(f"{query.family} has no mean-square bounds")


def solve_ms_critical_stepsize(query: StabilityQuery, probe_eta: float | None = None) -> StabilityReport:
    eta_mean = fo_critical_stepsize(query)
    if query.family in FO_FAMILIES:
        cls = None if probe_eta is None else classify_stepsize(query, probe_eta)
        return StabilityReport(eta_mean, eta_mean, eta_mean, eta_mean, cls)
    p = pole(query.family, query.beta)
    top = p / query.lam_max
    lo, hi = 0.0, top
    width = BISECT_TOL * top
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if ms_condition_value(query.spectrum, mid, query.beta, query.family) < 1.0:
            lo = mid
        else:
            hi = mid
    lower, upper = ms_bounds(query)
    cls = None if probe_eta is None else classify_stepsize(query, probe_eta)
    return StabilityReport(eta_mean, 0.5 * (lo + hi), lower, upper, cls)


def classify_stepsize(query: StabilityQuery, eta: float) -> str:
    if eta <= 0:
        raise StabilityError("eta must be positive")
    if query.family in FO_FAMILIES:
        # deterministic: mean and mean-square thresholds agree
        r = eta / fo_critical_stepsize(query)
        if abs(r - 1.0) <= CRITICAL_TOL:
            return CRITICAL
        return STABLE if r < 1.0 else UNSTABLE
    try:
        s = ms_condition_value(query.spectrum, eta, query.beta, query.family)
    except OutOfDomain:
        return UNSTABLE
    if abs(s - 1.0) <= CRITICAL_TOL:
        return CRITICAL
    return STABLE if s < 1.0 else UNSTABLE


# --------------------------------------------------------------------------
# per-coordinate local blocks


def local_block(x: float, beta: float) -> np.ndarray:
    """Local 3x3 map on (w11, w12, w22) for one coordinate with x = eta*lambda."""
    b = beta
    return np.array([
        [1.0 - 2 * x + 2 * x * x, 2 * b * (x - 1.0), b * b],
        [x - 2 * x * x, b * (1.0 - 2 * x), -b * b],
        [2 * x * x, 2 * b * x, b * b],
    ])


def jury_coefficients(x: float, beta: float):
    """(c1, c2, c3) of the monic characteristic cubic of the local block."""
    b = beta
    c1 = -b * b + 2 * b * x - b - 2 * x * x + 2 * x - 1.0
    c2 = b * (b * b + b + 1.0 - 2.0 * (b + 1.0) * x)
    c3 = -b**3
    return c1, c2, c3


def jury_local_stability(x: float, beta: float) -> bool:
    """Strict Jury test: all roots of z^3 + c1 z^2 + c2 z + c3 inside the unit disc."""
    if x < 0 or not (0.0 <= beta < 1.0):
        raise StabilityError("need x >= 0 and beta in [0, 1)")
    c1, c2, c3 = jury_coefficients(x, beta)
    # P(1) = 1 + c1 + c2 + c3 expands to 2x(1 - beta^2 - x); the factored form
    # keeps the sign exact at x = 0 where the sum cancels to rounding noise
    p1 = 2.0 * x * (1.0 - beta * beta - x)
    return bool(
        abs(c3) < 1.0
        and p1 > 0.0
        and 1.0 - c1 + c2 - c3 > 0.0
        and 1.0 - c3 * c3 > abs(c2 - c1 * c3)
    )


def gamma_local(x: float, beta: float) -> float:
    """First coordinate of (I - K)^-1 applied to the block (1, -1, 1)."""
    if not (0.0 < x < 1.0 - beta * beta):
        raise StabilityError(f"x = {x} outside (0, 1 - beta^2)")
    return (1.0 + beta) / (2.0 * x * (1.0 - beta * beta - x))


def gamma_local_solve(x: float, beta: float) -> float:
    """The same quantity through a 3x3 linear solve."""
    k = local_block(x, beta)
    return float(solve_linear_small(np.eye(3) - k, np.array([1.0, -1.0, 1.0]))[0])


# --------------------------------------------------------------------------
# training-time tracked bands


def tracked_band(family: str, trace: float, lam_max: float, eta: float, beta: float = 0.0):
    """(lower_term, threshold, upper_term); mean-square stability needs
    lower_term <= threshold, and is guaranteed when upper_term <= threshold."""
    if not (np.isfinite(trace) and np.isfinite(lam_max)):
        raise StabilityError("curvature must be finite")
    if family in ("ZOGD", "GD"):
        return trace, 2.0 / eta, trace + 2.0 * lam_max
    if family in ("ZOGDM", "GDM"):
        return trace, 2.0 * (1.0 - beta) / eta, trace + 2.0 * lam_max / (1.0 + beta)
    if family in ("ZOAdam", "FrozenZOAdam", "FrozenAdam"):
        return trace, 2.0 / eta, trace + 2.0 * lam_max / (1.0 + beta)
    raise StabilityError(f"unknown family {family!r}")
