"""Shared domain types: SE(3) poses, trajectories, latent sequences, rollout plans.

Conventions used throughout the package:
  * quaternions are stored as (w, x, y, z) and kept unit-norm,
  * quaternion sign is canonicalized (w >= 0; if w == 0 the first nonzero
    component is >= 0) so pose equality and interpolation are deterministic,
  * frame indexing is 0-based and frame 0 is the given initial frame,
  * all types are immutable values after construction.

Trajectory files are plain text, one pose per line:

    index tx ty tz qx qy qz qw

with '#' starting a comment (TUM-compatible with integer timestamps; note
the file order is x,y,z,w while the in-memory order is w,x,y,z).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput

QUAT_NORM_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# quaternion helpers
# ---------------------------------------------------------------------------

def canonicalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Resolve the double cover: flip sign so w >= 0 (ties broken by the
    first nonzero of x, y, z). Idempotent."""
    q = np.asarray(q, dtype=float)
    for c in q:
        if c > 0.0:
            return q.copy()
        if c < 0.0:
            return -q
    return q.copy()


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = float(np.linalg.norm(q))
    if n == 0.0 or not np.isfinite(n):
        raise InvalidInput("quaternion has zero or non-finite norm")
    return canonicalize_quaternion(q / n)


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion."""
    qv = np.concatenate([[0.0], v])
    return quat_multiply(quat_multiply(q, qv), quat_conjugate(q))[1:]


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w,x,y,z) of a rotation matrix, canonicalized."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return normalize_quaternion(q)


def quat_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle in radians between two unit quaternions.

    Uses the atan2 form (angle = 4*atan2(||a-b||/2, ||a+b||/2) after sign
    alignment), which stays accurate near zero where acos degrades."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if float(np.dot(a, b)) < 0.0:
        b = -b
    return 4.0 * float(np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def rotation_about_z(angle_rad: float) -> np.ndarray:
    """Unit quaternion for a rotation about the z axis."""
    h = 0.5 * angle_rad
    return normalize_quaternion(np.array([np.cos(h), 0.0, 0.0, np.sin(h)]))


# ---------------------------------------------------------------------------
# Pose and Trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """One SE(3) camera pose: unit quaternion rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray
    frame_index: int | None = None

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float)
        if q.shape != (4,):
            raise InvalidInput("rotation must be a length-4 quaternion (w,x,y,z)")
        t = np.asarray(self.translation, dtype=float)
        if t.shape != (3,):
            raise InvalidInput("translation must be a 3-vector")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise InvalidInput("pose components must be finite")
        object.__setattr__(self, "rotation", _frozen(normalize_quaternion(q)))
        object.__setattr__(self, "translation", _frozen(t))
        if self.frame_index is not None:
            fi = int(self.frame_index)
            if fi < 0:
                raise InvalidInput("frame_index must be non-negative")
            object.__setattr__(self, "frame_index", fi)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        M = np.eye(4)
        M[:3, :3] = quat_to_matrix(self.rotation)
        M[:3, 3] = self.translation
        return M


def identity_pose(frame_index: int | None = None) -> Pose:
    return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), frame_index)


def pose_compose(a: Pose, b: Pose) -> Pose:
    """SE(3) composition a∘b; the result quaternion is renormalized and
    sign-canonicalized."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.translation + quat_rotate(a.rotation, b.translation)
    return Pose(q, t)


def pose_inverse(a: Pose) -> Pose:
    qi = quat_conjugate(a.rotation)
    return Pose(qi, -quat_rotate(qi, a.translation))


@dataclass(frozen=True)
class Trajectory:
    """Ordered pose sequence with strictly increasing frame indices."""

    poses: tuple[Pose, ...]

    def __post_init__(self):
        poses = tuple(self.poses)
        if not poses:
            raise InvalidInput("trajectory must contain at least one pose")
        idx = [p.frame_index for p in poses]
        if any(i is None for i in idx):
            raise InvalidInput("trajectory poses require frame indices")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise InvalidInput("trajectory frame indices must be strictly increasing")
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return len(self.poses)

    def frame_indices(self) -> np.ndarray:
        return np.array([p.frame_index for p in self.poses], dtype=int)

    def translations(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses])

    def rotations(self) -> np.ndarray:
        """(n,3,3) stack of rotation matrices."""
        return np.array([quat_to_matrix(p.rotation) for p in self.poses])


def save_trajectory(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# index tx ty tz qx qy qz qw\n")
        for p in traj.poses:
            w, x, y, z = (float(v) for v in p.rotation)
            tx, ty, tz = (float(v) for v in p.translation)
            fh.write(f"{p.frame_index} {tx!r} {ty!r} {tz!r} {x!r} {y!r} {z!r} {w!r}\n")


def load_trajectory(path) -> Trajectory:
    """Parse a trajectory file; malformed lines raise InvalidInput naming the
    1-based line number."""
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 8:
                raise InvalidInput(f"{path}: line {lineno}: expected 8 fields, got {len(parts)}")
            try:
                idx = int(parts[0])
                tx, ty, tz, qx, qy, qz, qw = (float(v) for v in parts[1:])
            except ValueError as exc:
                raise InvalidInput(f"{path}: line {lineno}: {exc}") from None
            try:
                poses.append(Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]), idx))
            except InvalidInput as exc:
                raise InvalidInput(f"{path}: line {lineno}: {exc}") from None
    if not poses:
        raise InvalidInput(f"{path}: no poses found")
    try:
        return Trajectory(tuple(poses))
    except InvalidInput as exc:
        raise InvalidInput(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Latent sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatentSeq:
    """Dense run of fixed-dimension latent vectors starting at start_index."""

    frames: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        fr = np.asarray(self.frames, dtype=float)
        if fr.ndim == 1:
            fr = fr[:, None]
        if fr.ndim != 2 or fr.shape[1] < 1:
            raise InvalidInput("latent frames must form an (n, d) array with d >= 1")
        if not np.all(np.isfinite(fr)):
            raise InvalidInput("latent frames must be finite")
        object.__setattr__(self, "frames", _frozen(fr))
        object.__setattr__(self, "start_index", int(self.start_index))

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------------------
# Rollout plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """One generation window [start, end] (inclusive).

    For every segment after the first, the first `p` frames of the window are
    the overlap shared with the predecessor; history_indices lists exactly
    those indices (equal to the predecessor's last `p` indices). The first
    segment has no history.
    """

    start: int
    end: int
    history_indices: tuple[int, ...] = ()
    keyframe_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if self.start > self.end:
            raise InvalidInput("segment start must not exceed end")
        object.__setattr__(self, "history_indices", tuple(int(i) for i in self.history_indices))
        object.__setattr__(self, "keyframe_indices", tuple(int(i) for i in self.keyframe_indices))

    def span(self) -> range:
        return range(self.start, self.end + 1)


@dataclass(frozen=True)
class RolloutPlan:
    """Full schedule for one run: global keyframes plus overlapping segments."""

    total_frames: int
    keyframes: tuple[int, ...]
    segments: tuple[Segment, ...]
    overlap: int
    alpha_c: float = 1.0
    sigma_c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(int(k) for k in self.keyframes))
        object.__setattr__(self, "segments", tuple(self.segments))


def validate_plan(plan: RolloutPlan) -> list[str]:
    """Check all plan invariants; returns human-readable violation strings
    (empty list when the plan is well-formed). Violations are data, not errors."""
    out: list[str] = []
    n = plan.total_frames
    if n < 1:
        out.append(f"total_frames must be >= 1, got {n}")
        return out
    kf = plan.keyframes
    if not kf:
        out.append("keyframe list is empty")
    else:
        if list(kf) != sorted(set(kf)):
            out.append("keyframes are not sorted and duplicate-free")
        if kf[0] != 0:
            out.append("first keyframe must be frame 0")
        if kf[-1] != n - 1:
            out.append(f"last keyframe must be the final frame {n - 1}, got {kf[-1]}")
        if any(k < 0 or k >= n for k in kf):
            out.append("keyframe index outside [0, total_frames)")
    segs = plan.segments
    if not segs:
        out.append("plan has no segments")
        return out
    if segs[0].start != 0:
        out.append(f"coverage gap: first segment starts at {segs[0].start}, not 0")
    if segs[-1].end != n - 1:
        out.append(f"coverage gap: last segment ends at {segs[-1].end}, not {n - 1}")
    if segs[0].history_indices:
        out.append("first segment must have empty history")
    kfset = set(kf)
    for i, seg in enumerate(segs):
        if seg.end >= n:
            out.append(f"segment {i} extends past the final frame")
        if not set(seg.keyframe_indices) <= kfset:
            out.append(f"keyframe subset violation: segment {i} references keyframes "
                       f"outside the plan's keyframe set")
        if i > 0:
            prev = segs[i - 1]
            if seg.start > prev.end + 1:
                out.append(f"coverage gap between segments {i - 1} and {i}")
            else:
                overlap_count = prev.end - seg.start + 1
                if overlap_count != plan.overlap:
                    out.append(f"segments {i - 1} and {i} overlap in {overlap_count} frames, "
                               f"expected {plan.overlap}")
            expected_hist = tuple(range(seg.start, min(seg.start + plan.overlap, seg.end + 1)))
            if seg.history_indices != expected_hist:
                out.append(f"segment {i} history indices {seg.history_indices} do not match "
                           f"the overlap frames {expected_hist}")
    return out


# ---------------------------------------------------------------------------
# Error-model parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorModelParams:
    """Scalar inputs of the divergence/interpolation error theory.

    lipschitz         -- state sensitivity L of the one-step generator
    step_error        -- per-step local error norm bound (eta)
    drift_bias        -- per-step systematic drift norm (mu)
    step_variance     -- per-step, per-dimension noise variance (sigma^2)
    keyframe_interval -- anchor spacing T in frames
    interp_noise      -- interpolation noise scale (sigma_int)
    velocity_error    -- incoming boundary velocity error norm (delta-v_0)
    keyframe_error_cap-- worst-case keyframe drift for globally generated anchors
    """

    lipschitz: float = 1.0
    step_error: float = 0.0
    drift_bias: float = 0.0
    step_variance: float = 0.0
    keyframe_interval: int = 1
    interp_noise: float = 0.0
    velocity_error: float = 0.0
    keyframe_error_cap: float = 0.0

    def __post_init__(self):
        for name in ("lipschitz", "step_error", "drift_bias", "step_variance",
                     "interp_noise", "velocity_error", "keyframe_error_cap"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0.0:
                raise InvalidInput(f"{name} must be finite and non-negative")
            object.__setattr__(self, name, v)
        T = int(self.keyframe_interval)
        if T < 1:
            raise InvalidInput("keyframe_interval must be an integer >= 1")
        object.__setattr__(self, "keyframe_interval", T)
