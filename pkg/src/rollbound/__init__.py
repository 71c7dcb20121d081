"""Keyframe-anchored long-horizon rollout planning, error-propagation bounds,
a controllable toy world for observing them, and camera-trajectory metrics."""

from .core import (
    ErrorModelParams,
    LatentSeq,
    Pose,
    RolloutPlan,
    Segment,
    Trajectory,
    identity_pose,
    load_trajectory,
    pose_compose,
    pose_inverse,
    save_trajectory,
    validate_plan,
)
from .errormodel import (
    ArBound,
    BoundBreakdown,
    DAMPING_FACTOR,
    SplineSolution,
    anchored_error_decomposition,
    ar_bias_lower_bound,
    ar_error_upper_bound,
    ar_variance,
    bridge_mean,
    bridge_variance,
    cumulative_leakage_bound,
    damping_step,
    discrete_spline_minimizer,
    leakage_peak,
    simulate_bridge_paths,
    solve_damping_spline,
    unified_bound,
)
from .errors import InvalidInput
from .expconfig import ExperimentConfig, load_config, save_config
from .metrics import (
    AlignmentResult,
    align_similarity,
    are,
    ate,
    densify_trajectory,
    interpolate_pose,
    psnr,
    slerp,
    smoothness,
    ssim,
)
from .schedule import (
    StridePolicy,
    build_plan,
    load_plan,
    noisy_condition,
    partition_segments,
    sample_keyframe_indices,
    save_plan,
    select_keyframes,
    substitute_boundary,
)
from .worldsim import (
    ComparisonReport,
    KeyframeLatents,
    RolloutTrace,
    WorldConfig,
    compare_pipelines,
    generate_keyframes,
    rollout_anchored,
    rollout_pure_ar,
    simulate_ground_truth,
)

__version__ = "0.1.0"
