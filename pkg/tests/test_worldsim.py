import numpy as np
import pytest

from rollbound.core import InvalidInput
from rollbound.errormodel import (
    anchored_error_decomposition,
    ar_error_upper_bound,
    leakage_peak,
    solve_damping_spline,
)
from rollbound.schedule import StridePolicy, build_plan
from rollbound.worldsim import (
    KeyframeLatents,
    WorldConfig,
    bias_from_norm,
    compare_pipelines,
    dynamics_matrix,
    generate_keyframes,
    keyframe_error_norms,
    rollout_anchored,
    rollout_pure_ar,
    simulate_ground_truth,
    write_trace_csv,
)


def linear_world(dim=2, bias=0.0, noise=0.0, seed=0, control=None):
    return WorldConfig(dim=dim, lipschitz=1.0, bias=bias_from_norm(dim, bias),
                       noise_std=noise, control=control, seed=seed)


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------

def test_ground_truth_fixed_point():
    cfg = WorldConfig(dim=3, x0=np.array([1.0, -2.0, 0.5]))
    gt = simulate_ground_truth(cfg, 10)
    assert np.allclose(gt.frames, np.tile([1.0, -2.0, 0.5], (10, 1)))


def test_ground_truth_integrator():
    cfg = WorldConfig(dim=2, control=np.array([1.0, 0.0]))
    gt = simulate_ground_truth(cfg, 6)
    assert np.allclose(gt.frames[:, 0], np.arange(6))
    assert np.allclose(gt.frames[:, 1], 0.0)


def test_ground_truth_geometric_decay():
    cfg = WorldConfig(dim=1, lipschitz=0.5, x0=np.array([1.0]))
    gt = simulate_ground_truth(cfg, 8)
    assert np.allclose(gt.frames[:, 0], 0.5 ** np.arange(8))


def test_dynamics_spectral_norm_matches_lipschitz():
    for kind in ("scaled_identity", "rotation"):
        cfg = WorldConfig(dim=5, lipschitz=1.3, dynamics=kind, seed=11)
        A = dynamics_matrix(cfg)
        assert np.linalg.norm(A, 2) == pytest.approx(1.3, abs=1e-6)


def test_controls_from_trajectory_embed_translation_velocity():
    from rollbound.core import Pose, Trajectory
    from rollbound.worldsim import controls_from_trajectory
    poses = tuple(Pose(np.array([1.0, 0, 0, 0]), np.array([2.0 * i, -i, 0.5 * i]), i)
                  for i in range(5))
    u = controls_from_trajectory(Trajectory(poses), dim=4)
    assert u.shape == (4, 4)
    assert np.allclose(u[:, :3], [[2.0, -1.0, 0.5]] * 4)
    assert np.all(u[:, 3] == 0.0)
    with pytest.raises(InvalidInput):
        controls_from_trajectory(Trajectory((poses[0], poses[3])), dim=4)


# ---------------------------------------------------------------------------
# pure autoregressive rollout
# ---------------------------------------------------------------------------

def test_pure_ar_bias_equality_case():
    # identity dynamics, aligned bias: the lower bound N*mu is attained
    cfg = linear_world(bias=0.01)
    trace = rollout_pure_ar(cfg, 321)
    assert trace.error_norms[-1] == pytest.approx(3.2, abs=1e-9)
    assert trace.error_norms[0] == 0.0


def test_pure_ar_zero_defect():
    trace = rollout_pure_ar(linear_world(), 50)
    assert np.all(trace.error_norms == 0.0)


def test_pure_ar_matches_geometric_closed_form():
    cfg = WorldConfig(dim=2, lipschitz=1.05, bias=bias_from_norm(2, 0.01))
    trace = rollout_pure_ar(cfg, 201)
    expect = 0.01 * (1.05 ** 200 - 1.0) / 0.05
    assert trace.error_norms[-1] == pytest.approx(expect, rel=1e-9)
    # in this linear world the Lipschitz bound is attained exactly
    bound = ar_error_upper_bound(1.05, 0.01, 200).value
    assert trace.error_norms[-1] == pytest.approx(bound, rel=1e-9)
    assert trace.error_norms[-1] == pytest.approx(trace.bounds[-1], rel=1e-9)


def test_pure_ar_satisfies_exact_error_recursion():
    cfg = WorldConfig(dim=4, lipschitz=0.9, dynamics="rotation",
                      bias=np.array([0.01, 0.0, -0.02, 0.005]), noise_std=0.3, seed=3)
    n = 60
    trace = rollout_pure_ar(cfg, n)
    A = dynamics_matrix(cfg)
    err = trace.generated.frames - trace.ground_truth.frames
    # reconstruct the injected noise from consecutive errors; it must be
    # i.i.d.-sized, and the recursion residual must vanish
    assert np.allclose(err[0], 0.0)
    for t in range(n - 1):
        resid = err[t + 1] - (A @ err[t] + cfg.bias)
        assert np.linalg.norm(resid) < 10 * cfg.noise_std  # noise-sized
    assert np.allclose(np.linalg.norm(err, axis=1), trace.error_norms, atol=1e-12)


def test_pure_ar_deterministic_error_norms_match_recursion_exactly():
    cfg = WorldConfig(dim=3, lipschitz=1.02, dynamics="rotation",
                      bias=np.array([0.0, 0.01, 0.0]), seed=9)
    n = 80
    trace = rollout_pure_ar(cfg, n)
    A = dynamics_matrix(cfg)
    e = np.zeros(3)
    for t in range(1, n):
        e = A @ e + cfg.bias
        assert np.linalg.norm(e) == pytest.approx(trace.error_norms[t], abs=1e-9)


# ---------------------------------------------------------------------------
# keyframe generation
# ---------------------------------------------------------------------------

def test_keyframes_exact_when_cap_zero():
    cfg = linear_world(bias=0.05)
    kf = generate_keyframes(cfg, [0, 8, 16], "global", error_cap=0.0)
    assert np.all(keyframe_error_norms(cfg, kf) == 0.0)


def test_keyframes_downsampled_accumulation():
    cfg = linear_world(bias=0.01)
    idx = list(range(0, 321, 8))
    kf = generate_keyframes(cfg, idx, "downsampled_ar")
    errs = keyframe_error_norms(cfg, kf)
    assert errs[0] == 0.0
    assert errs[-1] == pytest.approx(0.4, abs=1e-9)
    assert np.allclose(errs, 0.01 * np.arange(len(idx)), atol=1e-9)


def test_keyframes_global_cap_respected_over_seeds():
    cfg = linear_world(dim=3)
    idx = [0, 8, 16, 24]
    worst = 0.0
    for seed in range(1000):
        kf = generate_keyframes(cfg, idx, "global", error_cap=0.1,
                                rng=np.random.default_rng(seed))
        worst = max(worst, float(keyframe_error_norms(cfg, kf).max()))
    assert worst <= 0.1 + 1e-12


def test_keyframes_require_zero_start():
    with pytest.raises(InvalidInput):
        generate_keyframes(linear_world(), [8, 16], "global")


# ---------------------------------------------------------------------------
# anchored interpolation rollout
# ---------------------------------------------------------------------------

def _plan(n=33, stride=8, seg_len=9, overlap=1):
    return build_plan(n, StridePolicy.test(stride), seg_len, overlap)


def test_anchored_linear_truth_reproduced_exactly():
    # linear-in-time ground truth is recovered by anchor interpolation
    cfg = linear_world(control=np.array([0.3, -0.2]), seed=5)
    plan = _plan()
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.0)
    trace = rollout_anchored(cfg, plan, kf)
    assert np.max(trace.error_norms) < 1e-12


def test_anchored_anchoring_invariant():
    cfg = linear_world(bias=0.01, control=np.array([0.1, 0.0]), seed=6)
    plan = _plan()
    kf = generate_keyframes(cfg, plan.keyframes, "downsampled_ar")
    kf_err = keyframe_error_norms(cfg, kf)
    trace = rollout_anchored(cfg, plan, kf, sigma_int=0.4, velocity_error=0.7, seed=123)
    for j, k in enumerate(plan.keyframes):
        assert trace.error_norms[k] == pytest.approx(kf_err[j], abs=1e-12)


def test_anchored_leakage_peaks_match_spline_and_halve():
    cfg = linear_world(control=np.array([0.25, 0.0]), seed=7)
    plan = _plan(n=65, stride=8, seg_len=9, overlap=1)
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.0)
    trace = rollout_anchored(cfg, plan, kf, velocity_error=1.0)
    dev = trace.generated.frames[:, 0] - trace.ground_truth.frames[:, 0]
    intervals = list(zip(plan.keyframes, plan.keyframes[1:]))
    unit = solve_damping_spline(8.0, 1.0)
    dv = 1.0
    for lo, hi in intervals:
        seg = dev[lo:hi + 1]
        expect = unit.value(np.arange(9.0)) * dv
        assert np.allclose(seg, expect, atol=1e-12)
        # discrete peak stays below the continuous one
        assert np.max(np.abs(seg)) <= leakage_peak(8.0, dv)[1] + 1e-12
        dv *= -0.5
    # alternating sign of the excursion across segments
    signs = [np.sign(dev[lo + 3]) for lo, _ in intervals]
    assert signs == [1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]


def test_anchored_error_decomposition_round_trip():
    cfg = linear_world(control=np.array([0.2, -0.1]), seed=8)
    plan = _plan()
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.2,
                            rng=np.random.default_rng(12))
    dv0 = np.array([0.6, -0.3])
    trace = rollout_anchored(cfg, plan, kf, velocity_error=dv0)
    gt = trace.ground_truth.frames
    gen = trace.generated.frames
    lookup = kf.lookup()
    intervals = list(zip(plan.keyframes, plan.keyframes[1:]))
    for j, (lo, hi) in enumerate(intervals):
        T = hi - lo
        e_left = lookup[lo] - gt[lo]
        e_right = lookup[hi] - gt[hi]
        unit = solve_damping_spline(float(T), 1.0)
        dv_j = dv0 * (-0.5) ** j
        for t in range(lo, hi + 1):
            tau = float(t - lo)
            leak = unit.value(tau) * dv_j
            rebuilt = anchored_error_decomposition(e_left, e_right, tau, float(T),
                                                   leak, np.zeros(2))
            assert np.allclose(gen[t] - gt[t], rebuilt, atol=1e-9)


def test_anchored_bound_dominates_deterministic_runs():
    cfg = linear_world(bias=0.02, control=np.array([0.15, 0.05]), seed=9)
    plan = build_plan(321, StridePolicy.test(8), 9, 1)
    kf = generate_keyframes(cfg, plan.keyframes, "downsampled_ar")
    trace = rollout_anchored(cfg, plan, kf, velocity_error=0.5)
    assert np.all(trace.error_norms <= trace.bounds + 1e-9)
    assert trace.breakdown.total == pytest.approx(trace.bounds[0])


def test_anchored_overlap_frames_bit_identical():
    cfg = linear_world(control=np.array([0.3, 0.1]), seed=10)
    plan = _plan(n=33, stride=8, seg_len=6, overlap=1)  # windows cross anchors
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.1,
                            rng=np.random.default_rng(2))
    trace = rollout_anchored(cfg, plan, kf, sigma_int=0.5, velocity_error=0.4,
                         seed=77, collect_segments=True)
    chunks = dict(trace.segment_chunks)
    segs = plan.segments
    for prev, cur in zip(segs, segs[1:]):
        prev_chunk = chunks[prev.start]
        cur_chunk = chunks[cur.start]
        shared = range(cur.start, prev.end + 1)
        for t in shared:
            a = prev_chunk[t - prev.start]
            b = cur_chunk[t - cur.start]
            assert np.array_equal(a, b)  # bitwise


def test_anchored_substitution_off_breaks_overlap_identity():
    cfg = linear_world(control=np.array([0.3, 0.1]), seed=10)
    plan = _plan(n=33, stride=8, seg_len=6, overlap=1)
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.1,
                            rng=np.random.default_rng(2))
    trace = rollout_anchored(cfg, plan, kf, sigma_int=0.5, velocity_error=0.4,
                         seed=77, substitution=False, collect_segments=True)
    chunks = dict(trace.segment_chunks)
    segs = plan.segments
    diffs = 0
    for prev, cur in zip(segs, segs[1:]):
        a = chunks[prev.start][cur.start - prev.start]
        b = chunks[cur.start][0]
        diffs += int(not np.array_equal(a, b))
    assert diffs > 0


def _boundary_second_differences(trace, keyframes):
    x = trace.generated.frames
    out = []
    for k in keyframes[1:-1]:
        dd = x[k + 1] - 2.0 * x[k] + x[k - 1]
        out.append(float(np.linalg.norm(dd)))
    return np.array(out)


def test_momentum_off_does_not_reduce_boundary_discontinuity():
    # momentum off: the incoming velocity error is ridden and snapped back at
    # the first anchor instead of being smoothly damped; the junction that
    # receives it gets strictly rougher, and the total junction roughness
    # never drops (later junctions see no incoming error at all, so they are
    # trivially smooth in the off mode)
    cfg = linear_world(control=np.array([0.2, 0.0]), seed=11)
    plan = _plan(n=33, stride=8, seg_len=9, overlap=1)
    kf = generate_keyframes(cfg, plan.keyframes, "global", error_cap=0.0)
    on = rollout_anchored(cfg, plan, kf, velocity_error=1.0, momentum=True)
    off = rollout_anchored(cfg, plan, kf, velocity_error=1.0, momentum=False)
    dd_on = _boundary_second_differences(on, plan.keyframes)
    dd_off = _boundary_second_differences(off, plan.keyframes)
    assert dd_off[0] > dd_on[0]
    assert dd_off.sum() >= dd_on.sum()


def test_anchored_rejects_missing_anchors():
    cfg = linear_world()
    plan = _plan()
    kf = KeyframeLatents((0, 8), np.zeros((2, 2)))
    with pytest.raises(InvalidInput, match="missing plan anchors"):
        rollout_anchored(cfg, plan, kf)


def test_trace_csv_schema(tmp_path):
    cfg = linear_world(bias=0.01, seed=12)
    plan = _plan()
    kf = generate_keyframes(cfg, plan.keyframes, "downsampled_ar")
    trace = rollout_anchored(cfg, plan, kf)
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ("frame, err_norm, bound_total, anchor, leakage, noise, "
                        "is_keyframe, segment_id")
    assert len(lines) == plan.total_frames + 1
    assert all(len(line.split(",")) == 8 for line in lines[1:])


# ---------------------------------------------------------------------------
# pipeline comparison
# ---------------------------------------------------------------------------

def test_compare_bounded_vs_linear_growth():
    cfg = linear_world(bias=0.01, seed=13)
    plan = build_plan(161, StridePolicy.test(8), 9, 1)
    rep = compare_pipelines(cfg, plan, scenarios=("global",), trials=1,
                            kf_error_cap=0.05)
    ar = rep.ar_mean_error
    dc = rep.anchored_mean_error["global"]
    assert ar[-1] == pytest.approx(1.6, abs=1e-9)  # linear growth 160 * 0.01
    assert np.max(dc) <= 0.05 + 1e-9               # anchored stays bounded


def test_compare_t_fold_suppression():
    cfg = linear_world(bias=0.01, seed=14)
    plan = build_plan(321, StridePolicy.test(8), 9, 1)
    rep = compare_pipelines(cfg, plan, scenarios=("downsampled_ar",), trials=1)
    ratio = rep.final_ratio("downsampled_ar")
    assert 6.4 <= ratio <= 9.6


def test_compare_zero_defect_world():
    cfg = linear_world(seed=15)
    plan = _plan()
    rep = compare_pipelines(cfg, plan, scenarios=("global", "downsampled_ar"), trials=2)
    assert np.all(rep.ar_mean_error == 0.0)
    for sc in ("global", "downsampled_ar"):
        assert np.all(rep.anchored_mean_error[sc] == 0.0)


def test_compare_deterministic_and_thread_invariant():
    cfg = linear_world(bias=0.005, noise=0.1, seed=16)
    plan = _plan(n=49)
    kw = dict(scenarios=("global",), trials=4, sigma_int=0.2, kf_error_cap=0.03)
    a = compare_pipelines(cfg, plan, **kw)
    b = compare_pipelines(cfg, plan, **kw)
    c = compare_pipelines(cfg, plan, threads=3, **kw)
    assert np.array_equal(a.ar_mean_error, b.ar_mean_error)
    assert np.array_equal(a.anchored_mean_error["global"], b.anchored_mean_error["global"])
    assert np.array_equal(a.ar_mean_error, c.ar_mean_error)
    assert np.array_equal(a.anchored_mean_error["global"], c.anchored_mean_error["global"])
