"""Kernel profiles, normalisation and bandwidth selection."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ParameterError

logger = logging.getLogger(__name__)

__all__ = [
    "KernelSpec",
    "TabulatedProfile",
    "profile_r",
    "profile_rbar",
    "eval_rt",
    "eval_rbart",
    "select_bandwidth",
    "validate_profile",
    "BALANCE_EXPONENT",
    "balance_constant",
    "expected_ball_count",
]

#: ``t ~ h**(4/7)`` equalises ``t**(1/4)`` and ``h / t**(3/2)``.
BALANCE_EXPONENT = 4.0 / 7.0
DEFAULT_DELTA0 = 0.1
MIN_BALL_SAMPLES = 20
WARN_BALL_SAMPLES = 5


def _wendland(r):
    r = np.asarray(r, dtype=float)
    s = np.clip(1.0 - r, 0.0, None)
    return np.where(r <= 1.0, s**4 * (4.0 * r + 1.0), 0.0)


def _wendland_bar(r):
    r = np.asarray(r, dtype=float)
    s = np.clip(1.0 - r, 0.0, None)
    return np.where(r <= 1.0, s**5 * (1.0 + 2.0 * r) / 3.0, 0.0)


class TabulatedProfile:
    """User-supplied profile R given by samples on [0, 1].

    ``R`` is a cubic spline through the samples; ``R-bar`` is its exact
    antiderivative from the right, so both stay consistent.
    """

    def __init__(self, r, values):
        from scipy.interpolate import CubicSpline

        r = np.asarray(r, dtype=float)
        values = np.asarray(values, dtype=float)
        if r[0] != 0.0 or r[-1] != 1.0 or np.any(np.diff(r) <= 0):
            raise ParameterError("profile table must be increasing from 0 to 1")
        self._spline = CubicSpline(r, values, bc_type="clamped")
        self._anti = self._spline.antiderivative()
        self._total = float(self._anti(1.0))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 1.0, self._spline(np.clip(r, 0.0, 1.0)), 0.0)

    def bar(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= 1.0, self._total - self._anti(np.clip(r, 0.0, 1.0)), 0.0)


@dataclass(frozen=True)
class KernelSpec:
    """Bandwidth ``t`` (a squared length) and profile for kernels on a k-manifold.

    The ambient support radius is ``2 * sqrt(t)``.
    """

    t: float
    k: int = 2
    profile: str = "wendland_default"
    delta0: float = DEFAULT_DELTA0
    table: TabulatedProfile | None = field(default=None, compare=False, repr=False)
    warnings: tuple = ()

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ParameterError(f"bandwidth t must be positive, got {self.t}")
        if self.k < 1:
            raise ParameterError("intrinsic dimension must be >= 1")
        if self.profile not in ("wendland_default", "custom table"):
            raise ParameterError(f"unknown profile {self.profile!r}")
        if self.profile == "custom table" and self.table is None:
            raise ParameterError("custom table profile needs a table")

    @property
    def support_radius(self) -> float:
        return 2.0 * math.sqrt(self.t)

    @property
    def normalization(self) -> float:
        """C_t = (4 pi t)^(-k/2)."""
        return (4.0 * math.pi * self.t) ** (-0.5 * self.k)

    def R(self, r):
        return self.table(r) if self.table is not None else _wendland(r)

    def Rbar(self, r):
        return self.table.bar(r) if self.table is not None else _wendland_bar(r)

    def rt_of_distance(self, dist):
        """R_t as a function of the Euclidean distance."""
        dist = np.asarray(dist, dtype=float)
        return self.normalization * self.R(dist * dist / (4.0 * self.t))

    def rbart_of_distance(self, dist):
        dist = np.asarray(dist, dtype=float)
        return self.normalization * self.Rbar(dist * dist / (4.0 * self.t))

    def with_t(self, t):
        return KernelSpec(t, self.k, self.profile, self.delta0, self.table)


def profile_r(spec: KernelSpec, r):
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ParameterError("profile argument must be nonnegative")
    out = spec.R(r)
    return float(out) if out.ndim == 0 else out


def profile_rbar(spec: KernelSpec, r):
    """R-bar(r), the integral of R from r to infinity."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ParameterError("profile argument must be nonnegative")
    out = spec.Rbar(r)
    return float(out) if out.ndim == 0 else out


def _dist(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ParameterError("kernel arguments must be finite")
    return np.sqrt(np.sum((x - y) ** 2, axis=-1))


def eval_rt(spec: KernelSpec, x, y):
    """R_t(x, y) = C_t R(|x - y|^2 / 4t)."""
    out = spec.rt_of_distance(_dist(x, y))
    return float(out) if out.ndim == 0 else out


def eval_rbart(spec: KernelSpec, x, y):
    out = spec.rbart_of_distance(_dist(x, y))
    return float(out) if out.ndim == 0 else out


def validate_profile(R, Rbar=None, delta0=DEFAULT_DELTA0, n_grid=2001, tol=1e-6):
    """Check a profile against the kernel assumptions on a grid.

    Verifies nonnegativity, vanishing beyond 1, the floor ``R >= delta0`` on
    [0, 1/2] and continuity of R, R', R'' (finite-difference jumps), plus
    ``Rbar' = -R`` when ``Rbar`` is given. Returns a list of violations
    (empty when the profile passes).
    """
    problems = []
    r = np.linspace(0.0, 1.5, n_grid)
    v = np.asarray(R(r), dtype=float)
    if np.any(v < -tol):
        problems.append("R takes negative values")
    if np.any(np.abs(v[r > 1.0 + 1e-12]) > tol):
        problems.append("R does not vanish beyond r = 1")
    if np.any(v[r <= 0.5] < delta0):
        problems.append(f"R falls below delta0={delta0} on [0, 1/2]")
    dr = r[1] - r[0]
    # jumps of the second difference quotient flag a non-C2 profile
    d2 = np.diff(v, 2) / dr**2
    if np.max(np.abs(np.diff(d2))) > max(1.0, np.max(np.abs(d2))) * 0.05:
        problems.append("R does not look C2 (second derivative jumps)")
    if Rbar is not None:
        rm = r[1:-1]
        fd = (np.asarray(Rbar(rm + 1e-6)) - np.asarray(Rbar(rm - 1e-6))) / 2e-6
        if np.max(np.abs(fd + np.asarray(R(rm)))) > 1e-5:
            problems.append("Rbar' != -R")
    return problems


def expected_ball_count(t, stats) -> float:
    """Expected number of samples inside a kernel ball on a quasi-uniform cloud."""
    area_per_point = stats.mean_spacing**2
    return math.pi * 4.0 * t / area_per_point


def balance_constant(stats, min_samples=MIN_BALL_SAMPLES) -> float:
    """Smallest ``c_b`` whose balanced bandwidth gives ``min_samples`` per kernel ball."""
    t_min = min_samples * stats.mean_spacing**2 / (4.0 * math.pi)
    return t_min / stats.fill_distance**BALANCE_EXPONENT


def select_bandwidth(stats, policy="theorem_balance", *, t=None, c_b=1.0, c_d=10.0, k=2,
                     profile="wendland_default") -> KernelSpec:
    """Choose the kernel bandwidth for a cloud with resolution ``stats``.

    Parameters
    ----------
    stats : SamplingStats
    policy : {"theorem_balance", "fixed", "density"}
        ``theorem_balance``: ``t = c_b * h**(4/7)``. ``c_b="auto"`` picks the
        smallest constant for which the kernel ball of *this* cloud holds
        ``MIN_BALL_SAMPLES`` samples; when refining, calibrate once on the
        coarsest cloud with :func:`balance_constant` and pass the number.
        ``fixed``: ``t`` is passed through.
        ``density``: ``t = c_d * h**2``, keeping the expected number of
        samples per kernel ball constant under refinement.
    """
    h = stats.fill_distance
    if not h > 0:
        raise ParameterError("fill distance must be positive")
    if policy in ("theorem_balance", "balance"):
        if c_b == "auto":
            c_b = balance_constant(stats)
        value = float(c_b) * h**BALANCE_EXPONENT
    elif policy == "fixed":
        if t is None:
            raise ParameterError("fixed policy needs t")
        value = float(t)
    elif policy == "density":
        value = c_d * h * h
    else:
        raise ParameterError(f"unknown bandwidth policy {policy!r}")
    notes = ()
    count = expected_ball_count(value, stats)
    if count < WARN_BALL_SAMPLES:
        msg = f"kernel support holds ~{count:.1f} samples on average (< {WARN_BALL_SAMPLES})"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        logger.warning(msg)
        notes = (msg,)
    return KernelSpec(value, k=k, profile=profile, warnings=notes)
