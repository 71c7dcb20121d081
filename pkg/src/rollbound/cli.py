"""Experiment runner: plan construction, bound curves, world simulation,
trajectory metrics, and stride-ablation sweeps, with CSV/SVG artifacts.

Subcommands: plan, bounds, simulate, eval, ablate.
Global flags: --config PATH, --seed N, --out DIR, --svg, --set key=value.
Exit codes: 0 success, 1 internal error, 2 invalid input.
The ROLLBOUND_SIM_THREADS environment variable caps trial parallelism
(0 = auto, default serial).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .core import ErrorModelParams, RolloutPlan, load_trajectory, validate_plan
from .errormodel import ar_upper_curve, unified_bound
from .errors import InvalidInput
from .expconfig import ExperimentConfig, apply_overrides, load_config, save_config
from .metrics import are, align_similarity, smoothness, write_metric_report
from .schedule import (
    StridePolicy,
    build_plan,
    partition_segments,
    sample_keyframe_indices,
    save_plan,
)
from .seeding import derive_rng, derive_seed_sequence
from .svgplot import save_line_chart
from .worldsim import (
    WorldConfig,
    KeyframeLatents,
    bias_from_norm,
    compare_pipelines,
    controls_from_trajectory,
    generate_keyframes,
    rollout_anchored,
    rollout_pure_ar,
    write_trace_csv,
)

BOUND_TOL = 1e-9


def _load_experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    overrides = []
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    return apply_overrides(cfg, overrides) if overrides else cfg


def _out_dir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _world(cfg: ExperimentConfig) -> WorldConfig:
    control = None
    if cfg.trajectory:
        control = controls_from_trajectory(load_trajectory(cfg.trajectory), cfg.dim)
    return WorldConfig(dim=cfg.dim, lipschitz=cfg.lipschitz, dynamics=cfg.dynamics,
                       bias=bias_from_norm(cfg.dim, cfg.bias), noise_std=cfg.noise_std,
                       control=control, seed=cfg.seed)


def _plan(cfg: ExperimentConfig) -> RolloutPlan:
    return build_plan(cfg.total_frames, cfg.stride_policy(), cfg.segment_len,
                      cfg.overlap, cfg.alpha_c, cfg.sigma_c,
                      rng=derive_rng(cfg.seed, "plan"))


def _error_params(cfg: ExperimentConfig, interval: int) -> ErrorModelParams:
    return ErrorModelParams(lipschitz=cfg.lipschitz, step_error=cfg.bias,
                            drift_bias=cfg.bias, step_variance=cfg.noise_std ** 2,
                            keyframe_interval=interval, interp_noise=cfg.sigma_int,
                            velocity_error=cfg.velocity_error,
                            keyframe_error_cap=cfg.kf_error_cap)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    plan = _plan(cfg)
    path = os.path.join(out, "plan.txt")
    save_plan(plan, path)
    save_config(cfg, os.path.join(out, "config.txt"))
    violations = validate_plan(plan)
    print(f"plan: {plan.total_frames} frames, {len(plan.keyframes)} keyframes, "
          f"{len(plan.segments)} segments, overlap {plan.overlap}")
    print(f"keyframes: {', '.join(str(k) for k in plan.keyframes)}")
    for i, seg in enumerate(plan.segments):
        print(f"  segment {i}: [{seg.start}..{seg.end}] history {list(seg.history_indices)} "
              f"anchors {list(seg.keyframe_indices)}")
    print(f"wrote {path}")
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return 1
    return 0


def cmd_bounds(args) -> int:
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    n = cfg.total_frames
    interval = max(cfg.strides)
    params = _error_params(cfg, interval)
    upper, flags = ar_upper_curve(cfg.lipschitz, cfg.bias, n)
    lower = np.arange(n) * cfg.bias
    variance = np.arange(n) * cfg.noise_std ** 2
    bd = unified_bound(params, scenario=cfg.kf_scenario,
                       n_steps=n - 1 if cfg.kf_scenario == "downsampled_ar" else None)
    path = os.path.join(out, "bounds.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame, ar_upper, ar_lower, ar_variance, dcar_bound, anchor, "
                 "leakage, noise, diverged\n")
        for t in range(n):
            fh.write(f"{t}, {float(upper[t])!r}, {float(lower[t])!r}, "
                     f"{float(variance[t])!r}, {bd.total!r}, {bd.anchor_term!r}, "
                     f"{bd.leakage_term!r}, {bd.noise_term!r}, {int(flags[t])}\n")
    print(f"bounds: ar_upper[{n - 1}]={upper[-1]:g} (diverged={bool(flags[-1])}), "
          f"anchored bound={bd.total:g} "
          f"(anchor {bd.anchor_term:g} + leakage {bd.leakage_term:g} + noise {bd.noise_term:g})")
    print(f"wrote {path}")
    if args.svg:
        frames = np.arange(n)
        finite_upper = np.where(flags, np.nan, upper)
        save_line_chart([("step-by-step bound", frames, finite_upper),
                         ("anchored bound", frames, np.full(n, bd.total))],
                        os.path.join(out, "bounds.svg"),
                        title="error bounds", x_label="frame", y_label="error")
        print(f"wrote {os.path.join(out, 'bounds.svg')}")
    return 0


def _trial_trace_pair(cfg: ExperimentConfig, world: WorldConfig, plan: RolloutPlan):
    """Trial-0 traces with the same derived streams compare_pipelines uses."""
    ar = rollout_pure_ar(world, plan.total_frames, rng=derive_rng(cfg.seed, "trial-ar", 0))
    kf = generate_keyframes(world, plan.keyframes, cfg.kf_scenario,
                            error_cap=cfg.kf_error_cap, step_error=cfg.kf_step_error,
                            rng=derive_rng(cfg.seed, f"trial-kf-{cfg.kf_scenario}", 0))
    child = int(derive_seed_sequence(cfg.seed, f"trial-anchored-{cfg.kf_scenario}", 0)
                .generate_state(1)[0])
    anchored = rollout_anchored(world, plan, kf, sigma_int=cfg.sigma_int,
                                velocity_error=cfg.velocity_error, seed=child)
    return ar, anchored


def cmd_simulate(args) -> int:
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    world = _world(cfg)
    plan = _plan(cfg)
    report = compare_pipelines(world, plan, scenarios=(cfg.kf_scenario,),
                               trials=cfg.trials, seed=cfg.seed, sigma_int=cfg.sigma_int,
                               velocity_error=cfg.velocity_error,
                               kf_error_cap=cfg.kf_error_cap,
                               kf_step_error=cfg.kf_step_error)
    ar_trace, anchored_trace = _trial_trace_pair(cfg, world, plan)
    write_trace_csv(ar_trace, os.path.join(out, "ar_trace.csv"))
    write_trace_csv(anchored_trace, os.path.join(out, "anchored_trace.csv"))

    sc = cfg.kf_scenario
    mean_path = os.path.join(out, "mean_curves.csv")
    dc_mean = report.anchored_mean_error[sc]
    with open(mean_path, "w", encoding="utf-8") as fh:
        fh.write("frame, ar_mean_err, anchored_mean_err, ar_mse, anchored_mse, ratio\n")
        for t in range(plan.total_frames):
            ratio = float(report.ar_mean_error[t] / dc_mean[t]) if dc_mean[t] > 0 else float("inf")
            fh.write(f"{t}, {float(report.ar_mean_error[t])!r}, {float(dc_mean[t])!r}, "
                     f"{float(report.ar_mse[t])!r}, {float(report.anchored_mse[sc][t])!r}, "
                     f"{ratio!r}\n")

    deterministic = cfg.noise_std == 0.0 and cfg.sigma_int == 0.0
    lines = [
        f"trials: {cfg.trials}",
        f"scenario: {sc}",
        f"final step-by-step error: {float(report.ar_mean_error[-1])!r}",
        f"final anchored error: {float(dc_mean[-1])!r}",
        f"final error ratio: {report.final_ratio(sc)!r}",
    ]
    if deterministic:
        ar_viol = int(np.sum(ar_trace.error_norms > ar_trace.bounds + BOUND_TOL))
        dc_viol = int(np.sum(anchored_trace.error_norms > anchored_trace.bounds + BOUND_TOL))
        lines.append(f"bound violations (step-by-step): {ar_viol}")
        lines.append(f"bound violations (anchored): {dc_viol}")
    else:
        lines.append("bound violations: n/a (stochastic run)")
    report_path = os.path.join(out, "report.txt")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    for line in lines:
        print(line)
    print(f"wrote {mean_path}")
    if args.svg:
        frames = np.arange(plan.total_frames)
        save_line_chart([("step-by-step", frames, report.ar_mean_error),
                         ("anchored", frames, dc_mean),
                         ("anchored bound", frames, anchored_trace.bounds)],
                        os.path.join(out, "errors.svg"),
                        title="mean rollout error", x_label="frame", y_label="error norm")
        print(f"wrote {os.path.join(out, 'errors.svg')}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_experiment(args)
    est = load_trajectory(args.estimated)
    ref = load_trajectory(args.reference)
    with_scale = args.align == "sim3"
    result = align_similarity(est, ref, with_scale=with_scale)
    ate_val = result.rmse
    are_umeyama = are(est, ref, rotation_alignment="umeyama", with_scale=with_scale)
    are_rotfit = are(est, ref, rotation_alignment="rotfit", with_scale=with_scale)
    are_val = {"umeyama": are_umeyama, "rotfit": are_rotfit}[args.rot_align]
    smooth = smoothness(est)
    print(f"alignment: scale={result.scale!r} rmse={result.rmse!r} "
          f"degenerate={result.degenerate}")
    print(f"rotation:\n{np.array2string(result.rotation, precision=6)}")
    print(f"translation: {np.array2string(result.translation, precision=6)}")
    print(f"ATE: {ate_val!r}")
    print(f"ARE ({args.rot_align}): {are_val!r}")
    if abs(are_umeyama - are_rotfit) > 0.1:
        print(f"note: rotation-alignment conventions disagree by "
              f"{abs(are_umeyama - are_rotfit):.3f} deg "
              f"(umeyama {are_umeyama:.3f}, rotfit {are_rotfit:.3f})")
    print(f"smoothness: {smooth!r}")
    out = _out_dir(cfg)
    path = os.path.join(out, "metrics.csv")
    write_metric_report([("ate", ate_val, len(est)),
                         (f"are_{args.rot_align}", are_val, len(est)),
                         ("smoothness", smooth, len(est))], path)
    print(f"wrote {path}")
    return 0


def _parse_grid(spec: str) -> list[tuple[int, int]]:
    pairs = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise InvalidInput(f"grid cell {item!r} is not gen:interp")
        g, i = int(parts[0]), int(parts[1])
        if g < 1 or i < 1 or i % g != 0:
            raise InvalidInput(f"grid cell {item!r}: interp stride must be a "
                               f"multiple of the generation stride")
        pairs.append((g, i))
    if not pairs:
        raise InvalidInput("empty ablation grid")
    return pairs


def cmd_ablate(args) -> int:
    cfg = _load_experiment(args)
    out = _out_dir(cfg)
    grid = _parse_grid(args.grid)
    world = _world(cfg)
    rows = []
    for g_stride, i_stride in grid:
        gen_idx = sample_keyframe_indices(cfg.total_frames, StridePolicy.test(g_stride))
        kfs = generate_keyframes(world, gen_idx, cfg.kf_scenario,
                                 error_cap=cfg.kf_error_cap, step_error=cfg.kf_step_error,
                                 rng=derive_rng(cfg.seed, f"ablate-kf-{g_stride}-{i_stride}"))
        keep = [j for j, k in enumerate(gen_idx)
                if k % i_stride == 0 or k == cfg.total_frames - 1]
        sub = KeyframeLatents(tuple(gen_idx[j] for j in keep), kfs.values[keep])
        segments = partition_segments(cfg.total_frames, cfg.segment_len, cfg.overlap,
                                      sub.indices)
        plan = RolloutPlan(cfg.total_frames, sub.indices, tuple(segments), cfg.overlap,
                           cfg.alpha_c, cfg.sigma_c)
        child = int(derive_seed_sequence(cfg.seed, f"ablate-{g_stride}-{i_stride}", 0)
                    .generate_state(1)[0])
        trace = rollout_anchored(world, plan, sub, sigma_int=cfg.sigma_int,
                                 velocity_error=cfg.velocity_error, seed=child)
        deterministic = cfg.noise_std == 0.0 and cfg.sigma_int == 0.0
        viol = int(np.sum(trace.error_norms > trace.bounds + BOUND_TOL)) if deterministic else -1
        bd = trace.breakdown
        rows.append((g_stride, i_stride, len(sub.indices), len(segments),
                     trace.final_error(), bd.total, bd.anchor_term, bd.leakage_term,
                     bd.noise_term, viol))
    path = os.path.join(out, "ablation.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("dk_gen, dk_int, n_keyframes, n_segments, final_err, bound_total, "
                 "anchor, leakage, noise, violations\n")
        for row in rows:
            fh.write(", ".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    for row in rows:
        print(f"(dk_gen={row[0]}, dk_int={row[1]}): keyframes={row[2]} segments={row[3]} "
              f"final_err={row[4]:g} bound={row[5]:g} violations={row[9]}")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rollbound",
                                     description="anchored rollout planning, error bounds, "
                                                 "toy-world simulation, and pose metrics")
    parser.add_argument("--config", help="experiment config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--svg", action="store_true", help="also emit SVG charts")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="build and validate a rollout plan")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("bounds", help="emit per-frame bound curves")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("simulate", help="run both pipelines in the toy world")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="trajectory metrics between two pose files")
    p.add_argument("estimated")
    p.add_argument("reference")
    p.add_argument("--align", choices=("sim3", "se3"), default="sim3",
                   help="similarity (with scale) or rigid alignment")
    p.add_argument("--rot-align", choices=("umeyama", "rotfit"), default="umeyama",
                   help="rotation-alignment convention reported for ARE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep (generation, interpolation) stride pairs")
    p.add_argument("--grid", required=True,
                   help="comma list of gen:interp stride pairs, e.g. 4:4,8:8,16:16")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
