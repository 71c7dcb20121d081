import numpy as np
import pytest
from hypothesis import given, strategies as st

from rollbound.core import (
    ErrorModelParams,
    InvalidInput,
    LatentSeq,
    Pose,
    RolloutPlan,
    Segment,
    Trajectory,
    canonicalize_quaternion,
    identity_pose,
    load_trajectory,
    pose_compose,
    pose_inverse,
    quat_to_matrix,
    rotation_about_z,
    save_trajectory,
    validate_plan,
)


def test_pose_normalizes_and_canonicalizes():
    p = Pose(np.array([-2.0, 0.0, 0.0, 0.0]), np.zeros(3))
    assert np.allclose(p.rotation, [1, 0, 0, 0])
    assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9


def test_compose_identity():
    p = Pose(rotation_about_z(0.7), np.array([1.0, 2.0, 3.0]))
    q = pose_compose(identity_pose(), p)
    assert np.allclose(q.rotation, p.rotation)
    assert np.allclose(q.translation, p.translation)


def test_compose_inverse_is_identity():
    p = Pose(rotation_about_z(1.1), np.array([0.5, -1.0, 2.0]))
    r = pose_compose(p, pose_inverse(p))
    assert np.allclose(r.rotation, [1, 0, 0, 0], atol=1e-9)
    assert np.allclose(r.translation, 0.0, atol=1e-9)


def test_compose_matches_rotation_matrix_oracle():
    # two 90-degree z rotations -> one 180-degree z rotation
    a = Pose(rotation_about_z(np.pi / 2), np.zeros(3))
    out = pose_compose(a, a)
    oracle = quat_to_matrix(a.rotation) @ quat_to_matrix(a.rotation)
    assert np.allclose(quat_to_matrix(out.rotation), oracle, atol=1e-9)
    assert np.allclose(oracle, quat_to_matrix(rotation_about_z(np.pi)), atol=1e-9)


@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_canonicalization_idempotent(vals):
    q = np.array(vals)
    if np.linalg.norm(q) < 1e-6:
        return
    once = canonicalize_quaternion(q)
    assert np.array_equal(canonicalize_quaternion(once), once)
    # leading sign convention
    for c in once:
        if c != 0.0:
            assert c > 0.0
            break


def test_trajectory_requires_increasing_indices():
    p0 = identity_pose(0)
    with pytest.raises(InvalidInput):
        Trajectory((p0, identity_pose(0)))
    with pytest.raises(InvalidInput):
        Trajectory(())


def test_trajectory_file_round_trip(tmp_path):
    poses = tuple(
        Pose(rotation_about_z(0.1 * i), np.array([i, 2.0 * i, -i]), 3 * i)
        for i in range(5)
    )
    traj = Trajectory(poses)
    path = tmp_path / "traj.txt"
    save_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.frame_indices(), traj.frame_indices())
    assert np.allclose(back.translations(), traj.translations())
    for a, b in zip(back.poses, traj.poses):
        assert np.allclose(a.rotation, b.rotation, atol=1e-12)


def test_trajectory_load_names_bad_line(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("0 0 0 0 0 0 0 1\n1 0 0 nope 0 0 0 1\n")
    with pytest.raises(InvalidInput, match="line 2"):
        load_trajectory(path)


def test_latent_seq_validation():
    with pytest.raises(InvalidInput):
        LatentSeq(np.array([[1.0, np.nan]]))
    z = LatentSeq(np.array([1.0, 2.0, 3.0]))
    assert z.dim == 1 and len(z) == 3


def test_error_model_params_validation():
    with pytest.raises(InvalidInput):
        ErrorModelParams(lipschitz=-0.1)
    with pytest.raises(InvalidInput):
        ErrorModelParams(keyframe_interval=0)
    p = ErrorModelParams(keyframe_interval=8, interp_noise=0.2)
    assert p.keyframe_interval == 8


def _well_formed_plan():
    keyframes = (0, 4, 8)
    segments = (
        Segment(0, 4, (), (0, 4, 8)),
        Segment(4, 8, (4,), (0, 4, 8)),
    )
    return RolloutPlan(9, keyframes, segments, overlap=1)


def test_validate_plan_accepts_well_formed():
    assert validate_plan(_well_formed_plan()) == []


def test_validate_plan_flags_coverage_gap():
    plan = RolloutPlan(9, (0, 4, 8),
                       (Segment(0, 3, (), (0, 4)), Segment(5, 8, (5,), (4, 8))),
                       overlap=1)
    violations = validate_plan(plan)
    assert len(violations) == 1
    assert "coverage gap" in violations[0]


def test_validate_plan_flags_foreign_keyframe():
    plan = RolloutPlan(9, (0, 4, 8),
                       (Segment(0, 4, (), (0, 4, 8)), Segment(4, 8, (4,), (0, 5, 8))),
                       overlap=1)
    violations = validate_plan(plan)
    assert len(violations) == 1
    assert "keyframe subset" in violations[0]
