"""Closed forms and numerical oracles for rollout error propagation.

Covers the two generation regimes:

  * pure step-by-step generation, whose error obeys a Lipschitz recursion and
    diverges with horizon length (upper bound, bias lower bound, variance),
  * keyframe-anchored interpolation, whose error decomposes into an anchor
    interpolation term, a velocity-leakage term damped by a factor of -1/2
    per segment, and pinned bridge noise, giving a horizon-independent bound.

Each closed form ships with an independent numerical oracle (discrete
quadratic minimizer, dense grid search, pinned-walk Monte Carlo) used by the
test suite to confirm the formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ErrorModelParams
from .errors import InvalidInput
from .seeding import as_rng

#: boundary velocity errors shrink by this factor from one segment to the next
DAMPING_FACTOR = -0.5

#: peak of the damped leakage curve, as a fraction of T * |incoming velocity error|
LEAKAGE_PEAK_COEFF = np.sqrt(3.0) / 9.0

#: geometric series sum of |DAMPING_FACTOR|**k over all segments
LEAKAGE_SERIES_SUM = 2.0

DIVERGENCE_CAP = 1e300


# ---------------------------------------------------------------------------
# divergence of pure autoregressive generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArBound:
    """Cumulative error bound value, with saturation bookkeeping for the
    exponential regime."""

    value: float
    diverged: bool = False
    saturated_step: int | None = None


def ar_error_upper_bound(lipschitz: float, step_errors, n_steps: int | None = None,
                         cap: float = DIVERGENCE_CAP) -> ArBound:
    """Geometric-weighted sum of per-step errors: sum_j L**(n-j) * eta_j.

    step_errors may be a constant (evaluated in closed form) or a sequence of
    per-step error norms. Values beyond `cap` saturate to `cap` and are
    flagged diverged, with the first saturating step recorded, so divergence
    curves stay plottable.
    """
    L = float(lipschitz)
    if L < 0.0:
        raise InvalidInput("lipschitz constant must be >= 0")
    if np.isscalar(step_errors):
        if n_steps is None or n_steps < 1:
            raise InvalidInput("n_steps must be >= 1 for a constant step error")
        eta = float(step_errors)
        if eta < 0.0:
            raise InvalidInput("step error must be >= 0")
        if L == 1.0:
            total = n_steps * eta
        else:
            try:
                growth = L ** n_steps
            except OverflowError:
                growth = np.inf
            total = eta * (growth - 1.0) / (L - 1.0) if np.isfinite(growth) else np.inf
        if total > cap or not np.isfinite(total):
            # locate the first saturating step by replaying the recursion
            return _ar_bound_recursive(L, [eta] * n_steps, cap)
        return ArBound(float(total))
    etas = [float(e) for e in step_errors]
    if n_steps is not None and n_steps != len(etas):
        raise InvalidInput("n_steps disagrees with the per-step error list")
    if not etas:
        raise InvalidInput("per-step error list is empty")
    if any(e < 0.0 for e in etas):
        raise InvalidInput("step errors must be >= 0")
    return _ar_bound_recursive(L, etas, cap)


def _ar_bound_recursive(L: float, etas: Sequence[float], cap: float) -> ArBound:
    total = 0.0
    for j, eta in enumerate(etas, start=1):
        total = L * total + eta
        if total > cap or not np.isfinite(total):
            return ArBound(cap, diverged=True, saturated_step=j)
    return ArBound(float(total))


def ar_bias_lower_bound(drift_bias: float, n_steps: int) -> float:
    """Expected-error floor N*mu under non-contractive dynamics and a
    persistent per-step drift of norm mu."""
    if drift_bias < 0.0 or n_steps < 1:
        raise InvalidInput("drift_bias must be >= 0 and n_steps >= 1")
    return n_steps * float(drift_bias)


def ar_variance(step_variance: float, n_steps: int) -> float:
    """Accumulated variance N*sigma^2 of i.i.d. per-step noise, per latent
    dimension (multiply by d for the covariance trace)."""
    if step_variance < 0.0 or n_steps < 0:
        raise InvalidInput("step_variance must be >= 0 and n_steps >= 0")
    return n_steps * float(step_variance)


def ar_upper_curve(lipschitz: float, step_error: float, n_frames: int,
                   cap: float = DIVERGENCE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame bound values and diverged flags for frames 0..n_frames-1
    (frame t holds the bound after t steps)."""
    values = np.zeros(n_frames)
    flags = np.zeros(n_frames, dtype=bool)
    total = 0.0
    saturated = False
    for t in range(1, n_frames):
        if not saturated:
            total = lipschitz * total + step_error
            if total > cap or not np.isfinite(total):
                total = cap
                saturated = True
        values[t] = total
        flags[t] = saturated
    return values, flags


# ---------------------------------------------------------------------------
# velocity-leakage damping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplineSolution:
    """Cubic a*tau^3 + b*tau^2 + c*tau + d minimizing integrated squared
    acceleration on [0, interval] under the anchored boundary conditions
    value(0) = value(interval) = 0, slope(0) = input_velocity,
    curvature(interval) = 0."""

    a: float
    b: float
    c: float
    d: float
    interval: float
    input_velocity: float

    def value(self, tau):
        tau = np.asarray(tau, dtype=float)
        return ((self.a * tau + self.b) * tau + self.c) * tau + self.d

    def slope(self, tau):
        tau = np.asarray(tau, dtype=float)
        return (3.0 * self.a * tau + 2.0 * self.b) * tau + self.c

    def curvature(self, tau):
        tau = np.asarray(tau, dtype=float)
        return 6.0 * self.a * tau + 2.0 * self.b

    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


def solve_damping_spline(interval: float, velocity_in: float) -> SplineSolution:
    """Unique accel-minimizing cubic absorbing an incoming boundary velocity
    error between two rigid anchors a distance `interval` apart."""
    T = float(interval)
    if not np.isfinite(T) or T <= 0.0:
        raise InvalidInput("interval must be positive")
    dv = float(velocity_in)
    a = dv / (2.0 * T * T)
    b = -3.0 * dv / (2.0 * T)
    return SplineSolution(a, b, dv, 0.0, T, dv)


def damping_step(velocity_in):
    """Velocity error handed to the next segment: -1/2 of the incoming one,
    independent of the segment length. Works on scalars and vectors."""
    return DAMPING_FACTOR * velocity_in


def leakage_peak(interval: float, velocity_in: float) -> tuple[float, float]:
    """Location and magnitude of the largest excursion of the damped leakage
    curve: tau* = T(1 - sqrt(3)/3), peak = (sqrt(3)/9) * T * |dv|."""
    T = float(interval)
    if not np.isfinite(T) or T <= 0.0:
        raise InvalidInput("interval must be positive")
    tau_star = T * (1.0 - np.sqrt(3.0) / 3.0)
    peak = LEAKAGE_PEAK_COEFF * T * abs(float(velocity_in))
    return float(tau_star), float(peak)


def cumulative_leakage_bound(interval: float, velocity0: float) -> float:
    """Horizon-independent cap on the leakage excursion over all segments:
    the per-segment peak times the geometric series sum 2, i.e.
    2 * (sqrt(3)/9) * T * |dv0| (~= 0.384 * T * |dv0|)."""
    T = float(interval)
    if not np.isfinite(T) or T <= 0.0:
        raise InvalidInput("interval must be positive")
    return float(LEAKAGE_SERIES_SUM * LEAKAGE_PEAK_COEFF * T * abs(float(velocity0)))


def discrete_spline_minimizer(interval: float, velocity_in: float,
                              grid_points: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Independent oracle for solve_damping_spline: minimize the sum of
    squared second central differences on a uniform grid, subject to the same
    four boundary conditions, as an equality-constrained least-squares (KKT)
    system.

    Ghost nodes carry central-difference boundary constraints and the two end
    curvature terms get trapezoidal half-weight, which keeps the discrete
    minimizer within O(1/m^2) of the continuous one. Returns (grid, values).
    """
    T = float(interval)
    if T <= 0.0:
        raise InvalidInput("interval must be positive")
    m = int(grid_points)
    if m < 6:
        raise InvalidInput("grid_points must be >= 6")
    h = T / (m - 1)
    n = m + 2  # unknowns: ghost, x_0..x_{m-1}, ghost
    w = np.ones(m)
    w[0] = w[-1] = 0.5
    A = np.zeros((m, n))
    for i in range(m):
        s = np.sqrt(w[i])
        A[i, i] = s
        A[i, i + 1] = -2.0 * s
        A[i, i + 2] = s
    C = np.zeros((4, n))
    rhs_c = np.zeros(4)
    C[0, 1] = 1.0                                    # value at 0
    C[1, m] = 1.0                                    # value at T
    C[2, 2], C[2, 0] = 1.0, -1.0                     # central slope at 0
    rhs_c[2] = 2.0 * h * float(velocity_in)
    C[3, m + 1], C[3, m], C[3, m - 1] = 1.0, -2.0, 1.0  # central curvature at T
    K = np.zeros((n + 4, n + 4))
    K[:n, :n] = 2.0 * (A.T @ A)
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.zeros(n + 4)
    rhs[n:] = rhs_c
    sol = np.linalg.solve(K, rhs)
    return np.linspace(0.0, T, m), sol[1:m + 1]


# ---------------------------------------------------------------------------
# pinned bridge statistics
# ---------------------------------------------------------------------------

def bridge_mean(tau, interval: float, left, right):
    """Convex combination of the two anchors: (1 - tau/T)*left + (tau/T)*right."""
    T = float(interval)
    if T <= 0.0:
        raise InvalidInput("interval must be positive")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0) or np.any(tau > T):
        raise InvalidInput("tau must lie in [0, interval]")
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.shape != right.shape:
        raise InvalidInput(f"anchor dimension mismatch: {left.shape} vs {right.shape}")
    lam = tau / T
    if left.ndim > 0 and np.ndim(lam) > 0:
        lam = lam[..., None]
    return (1.0 - lam) * left + lam * right


def bridge_variance(tau, interval: float, noise_std: float):
    """Variance of the pinned bridge at offset tau: tau*(T-tau)/T * sigma^2.
    Zero at both anchors, maximal (T/4 * sigma^2) at midspan."""
    T = float(interval)
    if T <= 0.0:
        raise InvalidInput("interval must be positive")
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0) or np.any(tau > T):
        raise InvalidInput("tau must lie in [0, interval]")
    out = tau * (T - tau) / T * float(noise_std) ** 2
    return float(out) if out.ndim == 0 else out


def simulate_bridge_paths(interval: float, noise_std: float, n_steps: int,
                          n_paths: int, rng=None,
                          anchors: tuple[float, float] = (0.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo oracle for the bridge statistics: a Gaussian random walk
    pinned at both endpoints (standard draped construction, exact in
    distribution at the grid points). Returns (times, paths[n_paths, n_steps+1])."""
    T = float(interval)
    if T <= 0.0 or n_steps < 1 or n_paths < 1:
        raise InvalidInput("need interval > 0, n_steps >= 1, n_paths >= 1")
    g = as_rng(rng)
    dt = T / n_steps
    steps = g.normal(0.0, float(noise_std) * np.sqrt(dt), size=(n_paths, n_steps))
    walk = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(steps, axis=1)], axis=1)
    t = np.linspace(0.0, T, n_steps + 1)
    pinned = walk - (t / T)[None, :] * walk[:, -1:]
    lo, hi = anchors
    return t, pinned + lo + (t / T)[None, :] * (hi - lo)


# ---------------------------------------------------------------------------
# unified anchored-interpolation bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundBreakdown:
    """The three terms of the anchored-interpolation error bound and their sum."""

    anchor_term: float
    leakage_term: float
    noise_term: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total",
                           self.anchor_term + self.leakage_term + self.noise_term)


def unified_bound(params: ErrorModelParams, keyframe_errors=None,
                  scenario: str = "global", n_steps: int | None = None) -> BoundBreakdown:
    """Horizon-independent error cap for keyframe-anchored interpolation:

        max anchor drift + 2*(sqrt(3)/9)*T*|dv0| + (sqrt(T)/2)*sigma_int

    The anchor term is the max of the supplied keyframe error norms; without
    them it falls back to the configured cap (globally generated anchors) or
    to (n_steps/T)*step_error when anchors are themselves generated
    step-by-step at stride T (the downsampled regime).
    """
    T = params.keyframe_interval
    if keyframe_errors is not None:
        errs = [abs(float(e)) for e in keyframe_errors]
        anchor = max(errs) if errs else 0.0
    elif scenario == "global":
        anchor = params.keyframe_error_cap
    elif scenario == "downsampled_ar":
        if n_steps is None:
            raise InvalidInput("downsampled_ar scenario needs n_steps")
        anchor = (n_steps / T) * params.step_error
    else:
        raise InvalidInput(f"unknown keyframe scenario {scenario!r}")
    leakage = cumulative_leakage_bound(T, params.velocity_error)
    noise = 0.5 * np.sqrt(T) * params.interp_noise
    return BoundBreakdown(float(anchor), float(leakage), float(noise))


def anchored_error_decomposition(err_left, err_right, tau: float, interval: float,
                                 leakage, noise):
    """Reassemble a frame error from its components: the anchor interpolation
    (1 - tau/T)*e_left + (tau/T)*e_right, plus leakage, plus local noise."""
    err_left = np.asarray(err_left, dtype=float)
    err_right = np.asarray(err_right, dtype=float)
    leakage = np.asarray(leakage, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if not (err_left.shape == err_right.shape == leakage.shape == noise.shape):
        raise InvalidInput("decomposition components must share one shape")
    return bridge_mean(tau, interval, err_left, err_right) + leakage + noise
