"""Controllable linear-Gaussian toy latent world.

The world is x_{t+1} = A x_t + u_t with a configurable spectral norm for A,
so every quantity of the error theory (state sensitivity, per-step drift,
per-step variance, boundary velocity error) is exactly controllable and every
bound is attainable or checkable in closed form.

Two generation pipelines run against the same ground truth:

  * rollout_pure_ar: step-by-step generation with per-step bias and noise,
    whose error follows the Lipschitz recursion exactly,
  * rollout_anchored: keyframe anchors plus per-interval anchored interpolation
    (anchor convex combination + damped velocity-leakage spline + pinned
    bridge noise), with overlap substitution between generation windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import os

import numpy as np

from .core import ErrorModelParams, LatentSeq, RolloutPlan, Trajectory, validate_plan
from .errormodel import (
    BoundBreakdown,
    ar_upper_curve,
    bridge_variance,
    damping_step,
    solve_damping_spline,
    unified_bound,
)
from .errors import InvalidInput
from .seeding import as_rng, derive_rng, derive_seed_sequence

SPECTRAL_NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# world configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldConfig:
    """Linear world parameters.

    dim        -- latent dimension d
    lipschitz  -- spectral norm of the dynamics matrix (state sensitivity)
    dynamics   -- "scaled_identity" or "rotation" (orthogonal mixing, same norm)
    bias       -- per-step generator drift vector (norm = the drift rate mu)
    noise_std  -- per-step, per-component generator noise sigma
    x0         -- initial latent state (frame 0, always ground truth)
    control    -- None (zero), a (d,) constant, or an (n-1, d) schedule
    seed       -- master seed; all stochastic streams derive from it
    """

    dim: int
    lipschitz: float = 1.0
    dynamics: str = "scaled_identity"
    bias: np.ndarray | None = None
    noise_std: float = 0.0
    x0: np.ndarray | None = None
    control: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidInput("dim must be >= 1")
        if self.lipschitz < 0.0:
            raise InvalidInput("lipschitz must be >= 0")
        if self.dynamics not in ("scaled_identity", "rotation"):
            raise InvalidInput(f"unknown dynamics kind {self.dynamics!r}")
        if self.noise_std < 0.0:
            raise InvalidInput("noise_std must be >= 0")
        for name in ("bias", "x0"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if v.shape != (self.dim,):
                    raise InvalidInput(f"{name} must be a ({self.dim},) vector")
                object.__setattr__(self, name, v)
        if self.control is not None:
            c = np.asarray(self.control, dtype=float)
            if c.ndim == 1:
                if c.shape != (self.dim,):
                    raise InvalidInput("constant control must be a (dim,) vector")
            elif c.ndim != 2 or c.shape[1] != self.dim:
                raise InvalidInput("control schedule must be (n, dim)")
            object.__setattr__(self, "control", c)

    def bias_vector(self) -> np.ndarray:
        return np.zeros(self.dim) if self.bias is None else self.bias

    def drift_norm(self) -> float:
        return float(np.linalg.norm(self.bias_vector()))

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.dim) if self.x0 is None else self.x0


def bias_from_norm(dim: int, norm: float) -> np.ndarray | None:
    """Drift vector of the given norm along the first axis."""
    if norm == 0.0:
        return None
    b = np.zeros(dim)
    b[0] = float(norm)
    return b


def dynamics_matrix(cfg: WorldConfig) -> np.ndarray:
    """Dynamics matrix with spectral norm exactly cfg.lipschitz: a scaled
    identity, or a scaled random orthogonal mix derived from the seed."""
    if cfg.dynamics == "scaled_identity":
        A = cfg.lipschitz * np.eye(cfg.dim)
    else:
        g = derive_rng(cfg.seed, "dynamics")
        M = g.standard_normal((cfg.dim, cfg.dim))
        Q, R = np.linalg.qr(M)
        Q = Q * np.sign(np.diag(R))  # unique orthogonal factor
        A = cfg.lipschitz * Q
    if cfg.lipschitz > 0.0:
        spec = float(np.linalg.norm(A, 2))
        if abs(spec - cfg.lipschitz) > SPECTRAL_NORM_TOL * max(1.0, cfg.lipschitz):
            raise AssertionError(f"spectral norm {spec} drifted from {cfg.lipschitz}")
    return A


def control_schedule(cfg: WorldConfig, n_frames: int) -> np.ndarray:
    """(n_frames-1, d) control inputs u_0..u_{n-2}."""
    steps = max(n_frames - 1, 0)
    if cfg.control is None:
        return np.zeros((steps, cfg.dim))
    if cfg.control.ndim == 1:
        return np.tile(cfg.control, (steps, 1))
    if cfg.control.shape[0] < steps:
        raise InvalidInput(f"control schedule has {cfg.control.shape[0]} steps, "
                           f"need {steps}")
    return cfg.control[:steps]


def controls_from_trajectory(traj: Trajectory, dim: int) -> np.ndarray:
    """Control schedule from a dense pose trajectory: per-step translation
    velocity embedded in the first three latent dimensions."""
    idx = traj.frame_indices()
    if not np.array_equal(idx, np.arange(idx[0], idx[0] + len(idx))):
        raise InvalidInput("trajectory must be dense (consecutive frame indices)")
    if dim < 3:
        raise InvalidInput("need dim >= 3 to embed translation velocity")
    vel = np.diff(traj.translations(), axis=0)
    out = np.zeros((vel.shape[0], dim))
    out[:, :3] = vel
    return out


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RolloutTrace:
    """One generated rollout next to its ground truth.

    error_norms[t] is ||generated[t] - ground_truth[t]|| (recomputable);
    bounds[t] carries the per-frame bound curve when one applies.
    """

    generated: LatentSeq
    ground_truth: LatentSeq
    error_norms: np.ndarray
    bounds: np.ndarray | None = None
    breakdown: BoundBreakdown | None = None
    segment_boundaries: tuple[int, ...] = ()
    segment_ids: np.ndarray | None = None
    keyframe_indices: tuple[int, ...] = ()
    segment_chunks: tuple[tuple[int, np.ndarray], ...] | None = None

    def final_error(self) -> float:
        return float(self.error_norms[-1])


def write_trace_csv(trace: RolloutTrace, path) -> None:
    """Trace export: frame, err_norm, bound_total, anchor, leakage, noise,
    is_keyframe, segment_id."""
    bd = trace.breakdown
    anchor = bd.anchor_term if bd else 0.0
    leak = bd.leakage_term if bd else 0.0
    noise = bd.noise_term if bd else 0.0
    kf = set(trace.keyframe_indices)
    n = len(trace.error_norms)
    bounds = trace.bounds if trace.bounds is not None else np.zeros(n)
    seg_ids = trace.segment_ids if trace.segment_ids is not None else np.zeros(n, dtype=int)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame, err_norm, bound_total, anchor, leakage, noise, is_keyframe, segment_id\n")
        for t in range(n):
            fh.write(f"{t}, {float(trace.error_norms[t])!r}, {float(bounds[t])!r}, "
                     f"{float(anchor)!r}, {float(leak)!r}, {float(noise)!r}, "
                     f"{int(t in kf)}, {int(seg_ids[t])}\n")


# ---------------------------------------------------------------------------
# ground truth and pure autoregressive rollout
# ---------------------------------------------------------------------------

def simulate_ground_truth(cfg: WorldConfig, n_frames: int) -> LatentSeq:
    """Noiseless controlled trajectory x_{t+1} = A x_t + u_t; deterministic,
    independent of the seed streams."""
    if n_frames < 1:
        raise InvalidInput("n_frames must be >= 1")
    A = dynamics_matrix(cfg)
    u = control_schedule(cfg, n_frames)
    x = np.zeros((n_frames, cfg.dim))
    x[0] = cfg.initial_state()
    for t in range(n_frames - 1):
        x[t + 1] = A @ x[t] + u[t]
    return LatentSeq(x)


def rollout_pure_ar(cfg: WorldConfig, n_frames: int, rng=None) -> RolloutTrace:
    """Step-by-step generation from the true initial frame with per-step bias
    and noise; the per-frame error satisfies e_{t+1} = A e_t + b + sigma*eps
    exactly. Frame t of the bound column holds the bias-only Lipschitz bound
    after t steps (attained with equality when noise is off)."""
    gt = simulate_ground_truth(cfg, n_frames)
    A = dynamics_matrix(cfg)
    u = control_schedule(cfg, n_frames)
    b = cfg.bias_vector()
    g = as_rng(rng if rng is not None else derive_rng(cfg.seed, "ar-noise"))
    x = np.zeros_like(gt.frames)
    x[0] = gt.frames[0]
    for t in range(n_frames - 1):
        x[t + 1] = A @ x[t] + u[t] + b
        if cfg.noise_std > 0.0:
            x[t + 1] += cfg.noise_std * g.standard_normal(cfg.dim)
    err = np.linalg.norm(x - gt.frames, axis=1)
    bounds, _ = ar_upper_curve(cfg.lipschitz, cfg.drift_norm(), n_frames)
    return RolloutTrace(LatentSeq(x), gt, err, bounds=bounds)


# ---------------------------------------------------------------------------
# keyframe generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KeyframeLatents:
    """Sparse anchor latents: sorted frame indices with one value per index."""

    indices: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if list(idx) != sorted(set(idx)):
            raise InvalidInput("keyframe indices must be sorted and unique")
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != len(idx):
            raise InvalidInput("keyframe values must be (len(indices), d)")
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("keyframe values must be finite")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def lookup(self) -> dict[int, np.ndarray]:
        return {k: self.values[i] for i, k in enumerate(self.indices)}


def generate_keyframes(cfg: WorldConfig, indices, scenario: str,
                       error_cap: float = 0.0, step_error: float | None = None,
                       step_noise: float = 0.0, rng=None) -> KeyframeLatents:
    """Anchor latents under one of two regimes.

    "global": every anchor is ground truth plus an independent perturbation of
    norm <= error_cap (frame 0, the given initial frame, stays exact).
    "downsampled_ar": anchors follow the step-by-step recursion applied once
    per keyframe jump, so their error accumulates across anchors at one
    step_error per jump (default step_error: the world's drift norm).
    """
    idx = sorted(int(i) for i in indices)
    if not idx or idx[0] != 0:
        raise InvalidInput("keyframe indices must be sorted and include 0")
    gt = simulate_ground_truth(cfg, idx[-1] + 1).frames
    g = as_rng(rng if rng is not None else derive_rng(cfg.seed, "keyframes"))
    vals = np.empty((len(idx), cfg.dim))
    vals[0] = gt[0]
    if scenario == "global":
        if error_cap < 0.0:
            raise InvalidInput("error_cap must be >= 0")
        for j, k in enumerate(idx[1:], start=1):
            direction = g.standard_normal(cfg.dim)
            norm = float(np.linalg.norm(direction))
            direction = direction / norm if norm > 0.0 else np.zeros(cfg.dim)
            vals[j] = gt[k] + g.uniform(0.0, error_cap) * direction
    elif scenario == "downsampled_ar":
        A = dynamics_matrix(cfg)
        mu = cfg.drift_norm() if step_error is None else float(step_error)
        b = cfg.bias_vector()
        bn = float(np.linalg.norm(b))
        direction = b / bn if bn > 0.0 else np.eye(cfg.dim)[0]
        step_vec = mu * direction
        err = np.zeros(cfg.dim)
        for j in range(1, len(idx)):
            for _ in range(idx[j] - idx[j - 1]):
                err = A @ err
            err = err + step_vec
            if step_noise > 0.0:
                err = err + step_noise * g.standard_normal(cfg.dim)
            vals[j] = gt[idx[j]] + err
    else:
        raise InvalidInput(f"unknown keyframe scenario {scenario!r}")
    return KeyframeLatents(tuple(idx), vals)


def keyframe_error_norms(cfg: WorldConfig, keyframes: KeyframeLatents) -> np.ndarray:
    gt = simulate_ground_truth(cfg, keyframes.indices[-1] + 1).frames
    return np.linalg.norm(keyframes.values - gt[list(keyframes.indices)], axis=1)


# ---------------------------------------------------------------------------
# keyframe-anchored interpolation rollout
# ---------------------------------------------------------------------------

def rollout_anchored(cfg: WorldConfig, plan: RolloutPlan, keyframes: KeyframeLatents,
                     sigma_int: float = 0.0, momentum: bool = True,
                     substitution: bool = True, velocity_error=None,
                     seed: int | None = None,
                     collect_segments: bool = False) -> RolloutTrace:
    """Anchored interpolation rollout over a plan.

    Each frame between consecutive anchors is the convex combination of the
    anchor latents, plus a velocity-leakage correction, plus pinned bridge
    noise of scale sigma_int. The incoming boundary velocity error enters the
    first anchor interval; with momentum on it is absorbed by the
    accel-minimizing spline and handed to the next interval damped by -1/2
    (the hand-off needs the substituted clean boundary, so it dies when
    substitution is off). With momentum off the generator rides the erroneous
    velocity and snaps back at the next anchor.

    Generation windows run in order; with substitution on, each window's
    first `overlap` frames are taken verbatim from its predecessor and the
    noise process continues through them, otherwise the window redraws those
    frames from the marginal noise law (a visible junction discontinuity).

    The per-frame bound column holds the unified anchored-interpolation bound
    for the damped pipeline (momentum and substitution on), built from the
    measured anchor errors.
    """
    violations = validate_plan(plan)
    if violations:
        raise InvalidInput(f"plan fails validation: {violations}")
    missing = [k for k in plan.keyframes if k not in set(keyframes.indices)]
    if missing:
        raise InvalidInput(f"keyframe latents missing plan anchors {missing}")
    if sigma_int < 0.0:
        raise InvalidInput("sigma_int must be >= 0")
    n = plan.total_frames
    d = cfg.dim
    gt = simulate_ground_truth(cfg, n)
    kf_idx = list(plan.keyframes)
    kf_val = keyframes.lookup()
    if velocity_error is None:
        dv0 = np.zeros(d)
    elif np.isscalar(velocity_error):
        dv0 = np.zeros(d)
        dv0[0] = float(velocity_error)
    else:
        dv0 = np.asarray(velocity_error, dtype=float)
        if dv0.shape != (d,):
            raise InvalidInput(f"velocity_error must be scalar or ({d},)")
    base_seed = cfg.seed if seed is None else int(seed)

    # deterministic field: anchor interpolation + leakage, per anchor interval
    det = np.zeros((n, d))
    intervals = list(zip(kf_idx, kf_idx[1:]))
    dv = dv0.copy()
    for j, (lo, hi) in enumerate(intervals):
        T = hi - lo
        lam = np.arange(T + 1) / T
        det[lo:hi + 1] = (1.0 - lam)[:, None] * kf_val[lo] + lam[:, None] * kf_val[hi]
        if momentum:
            shape = solve_damping_spline(T, 1.0).value(np.arange(T + 1, dtype=float))
            det[lo:hi + 1] += shape[:, None] * dv
            dv = damping_step(dv) if substitution else np.zeros(d)
        else:
            if j == 0 and T > 1:
                ramp = np.arange(T + 1, dtype=float)
                ramp[-1] = 0.0  # snap back at the next anchor
                det[lo:hi + 1] += ramp[:, None] * dv
            dv = np.zeros(d)
    if len(intervals) == 0:  # single-frame plan
        det[0] = kf_val[kf_idx[0]]

    # noise field + window assembly
    kf_set = set(kf_idx)
    kf_arr = np.array(kf_idx)
    next_kf = kf_arr[np.searchsorted(kf_arr, np.arange(n))]  # last frame is a keyframe
    x = det.copy()
    w = np.zeros((n, d))
    seg_ids = np.zeros(n, dtype=int)
    chunks: list[tuple[int, np.ndarray]] = []
    p = plan.overlap
    for si, seg in enumerate(plan.segments):
        g = derive_rng(base_seed, "interp-noise", si)
        start = seg.start
        if si > 0 and substitution:
            gen_from = min(start + p, seg.end + 1)
        else:
            gen_from = start
        for t in range(gen_from, seg.end + 1):
            if t in kf_set:
                w[t] = 0.0
            elif si > 0 and not substitution and t < start + p:
                # fresh draw from the marginal law, ignoring the predecessor
                var = bridge_variance(t - _prev_kf(kf_idx, t), _interval_of(kf_idx, t), sigma_int)
                w[t] = np.sqrt(var) * g.standard_normal(d)
            else:
                remaining = next_kf[t] - (t - 1)
                frac = (remaining - 1) / remaining
                w[t] = w[t - 1] * frac + sigma_int * np.sqrt(frac) * g.standard_normal(d)
            x[t] = det[t] + w[t]
            seg_ids[t] = si
        if collect_segments:
            chunks.append((start, x[start:seg.end + 1].copy()))

    err = np.linalg.norm(x - gt.frames, axis=1)
    max_T = max((hi - lo for lo, hi in intervals), default=1)
    params = ErrorModelParams(lipschitz=cfg.lipschitz, step_error=cfg.drift_norm(),
                              drift_bias=cfg.drift_norm(), step_variance=cfg.noise_std ** 2,
                              keyframe_interval=max_T, interp_noise=sigma_int,
                              velocity_error=float(np.linalg.norm(dv0)))
    kf_errs = [float(np.linalg.norm(kf_val[k] - gt.frames[k])) for k in kf_idx]
    breakdown = unified_bound(params, keyframe_errors=kf_errs)
    bounds = np.full(n, breakdown.total)
    return RolloutTrace(LatentSeq(x), gt, err, bounds=bounds, breakdown=breakdown,
                        segment_boundaries=tuple(s.start for s in plan.segments[1:]),
                        segment_ids=seg_ids, keyframe_indices=tuple(kf_idx),
                        segment_chunks=tuple(chunks) if collect_segments else None)


def _prev_kf(kf_idx: list[int], t: int) -> int:
    return max(k for k in kf_idx if k <= t)


def _interval_of(kf_idx: list[int], t: int) -> int:
    lo = _prev_kf(kf_idx, t)
    hi = min(k for k in kf_idx if k > t)
    return hi - lo


# ---------------------------------------------------------------------------
# pipeline comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    """Per-frame Monte-Carlo means for the two pipelines."""

    frames: np.ndarray
    ar_mean_error: np.ndarray
    ar_mse: np.ndarray
    anchored_mean_error: dict[str, np.ndarray]
    anchored_mse: dict[str, np.ndarray]
    trials: int

    def final_ratio(self, scenario: str) -> float:
        """Final-frame mean error of the step-by-step pipeline over the
        anchored pipeline's."""
        anchored = self.anchored_mean_error[scenario][-1]
        return float(self.ar_mean_error[-1] / anchored) if anchored > 0 else float("inf")


def resolve_threads(threads: int | None = None) -> int:
    """Trial parallelism: explicit argument, else the ROLLBOUND_SIM_THREADS
    environment variable (0 = auto), else serial."""
    if threads is None:
        raw = os.environ.get("ROLLBOUND_SIM_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError:
            raise InvalidInput(f"ROLLBOUND_SIM_THREADS must be an integer, got {raw!r}")
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, threads)


def compare_pipelines(cfg: WorldConfig, plan: RolloutPlan,
                      scenarios=("global", "downsampled_ar"), trials: int = 1,
                      seed: int | None = None, sigma_int: float = 0.0,
                      velocity_error=None, kf_error_cap: float = 0.0,
                      kf_step_error: float | None = None,
                      threads: int | None = None) -> ComparisonReport:
    """Monte-Carlo comparison of the two pipelines over independent trials
    with deterministically derived per-trial seeds. Aggregation is
    order-independent (running sums), so trials may execute concurrently."""
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    base = cfg.seed if seed is None else int(seed)
    n = plan.total_frames
    scenarios = tuple(scenarios)

    def one_trial(i: int):
        ar = rollout_pure_ar(cfg, n, rng=derive_rng(base, "trial-ar", i))
        out = {}
        for sc in scenarios:
            kf = generate_keyframes(cfg, plan.keyframes, sc, error_cap=kf_error_cap,
                                    step_error=kf_step_error,
                                    rng=derive_rng(base, f"trial-kf-{sc}", i))
            child = int(derive_seed_sequence(base, f"trial-anchored-{sc}", i)
                        .generate_state(1)[0])
            out[sc] = rollout_anchored(cfg, plan, kf, sigma_int=sigma_int,
                                       velocity_error=velocity_error, seed=child)
        return ar.error_norms, {sc: tr.error_norms for sc, tr in out.items()}

    workers = resolve_threads(threads)
    if workers > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_trial, range(trials)))
    else:
        results = [one_trial(i) for i in range(trials)]

    ar_sum = np.zeros(n)
    ar_sq = np.zeros(n)
    dc_sum = {sc: np.zeros(n) for sc in scenarios}
    dc_sq = {sc: np.zeros(n) for sc in scenarios}
    for ar_err, dc_errs in results:
        ar_sum += ar_err
        ar_sq += ar_err ** 2
        for sc in scenarios:
            dc_sum[sc] += dc_errs[sc]
            dc_sq[sc] += dc_errs[sc] ** 2
    return ComparisonReport(
        frames=np.arange(n),
        ar_mean_error=ar_sum / trials,
        ar_mse=ar_sq / trials,
        anchored_mean_error={sc: dc_sum[sc] / trials for sc in scenarios},
        anchored_mse={sc: dc_sq[sc] / trials for sc in scenarios},
        trials=trials,
    )
