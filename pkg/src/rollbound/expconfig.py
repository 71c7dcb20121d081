"""Experiment configuration as a flat key/value text file.

Lines are "key = value"; '#' starts a comment. Unknown keys are rejected with
the offending line number. Values round-trip losslessly (floats are written
with repr). CLI flags override file values.

Keys (defaults in parentheses):
  total_frames (321)    frames including frame 0
  strides (8)           comma list of keyframe strides; one value = test mode
  stride_mode (test)    'test' or 'train' (train draws from the stride list)
  segment_len (9)       generation window length B
  overlap (1)           shared frames p between consecutive windows
  alpha_c (0.7)         anchor guidance coefficient
  sigma_c (0.3)         anchor conditioning noise scale
  dim (1)               latent dimension
  lipschitz (1.0)       spectral norm of the world dynamics
  dynamics (scaled_identity)  or 'rotation'
  bias (0.0)            per-step drift norm of the generator
  noise_std (0.0)       per-step generator noise
  sigma_int (0.0)       interpolation bridge noise scale
  velocity_error (0.0)  incoming boundary velocity error norm
  kf_error_cap (0.0)    anchor error cap for the global scenario
  kf_scenario (global)  'global' or 'downsampled_ar'
  kf_step_error ()      per-jump anchor error for downsampled_ar (default: bias)
  trials (1)            Monte-Carlo trials
  seed (0)              master seed
  out_dir (out)         artifact output directory
  trajectory ()         optional pose file driving the world controls
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from .errors import InvalidInput
from .schedule import StridePolicy


@dataclass(frozen=True)
class ExperimentConfig:
    total_frames: int = 321
    strides: tuple[int, ...] = (8,)
    stride_mode: str = "test"
    segment_len: int = 9
    overlap: int = 1
    alpha_c: float = 0.7
    sigma_c: float = 0.3
    dim: int = 1
    lipschitz: float = 1.0
    dynamics: str = "scaled_identity"
    bias: float = 0.0
    noise_std: float = 0.0
    sigma_int: float = 0.0
    velocity_error: float = 0.0
    kf_error_cap: float = 0.0
    kf_scenario: str = "global"
    kf_step_error: float | None = None
    trials: int = 1
    seed: int = 0
    out_dir: str = "out"
    trajectory: str = ""

    def stride_policy(self) -> StridePolicy:
        if self.stride_mode == "train":
            return StridePolicy.train(self.strides)
        if len(self.strides) != 1:
            raise InvalidInput("test mode needs exactly one stride")
        return StridePolicy.test(self.strides[0])


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    if name == "strides":
        vals = tuple(int(v) for v in raw.split(",") if v.strip())
        if not vals:
            raise ValueError("empty stride list")
        return vals
    if name == "kf_step_error":
        return None if raw in ("", "none") else float(raw)
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidInput(f"{source}: line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise InvalidInput(f"{source}: line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, _key_kind(key), val)
        except ValueError as exc:
            raise InvalidInput(f"{source}: line {lineno}: {exc}") from None
    return ExperimentConfig(**values)


def _key_kind(key: str):
    defaults = ExperimentConfig()
    v = getattr(defaults, key)
    return type(v) if v is not None else float


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def format_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        v = getattr(cfg, f.name)
        if f.name == "strides":
            out = ",".join(str(s) for s in v)
        elif v is None:
            out = ""
        elif isinstance(v, float):
            out = repr(v)
        else:
            out = str(v)
        lines.append(f"{f.name} = {out}")
    return "\n".join(lines) + "\n"


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply 'key=value' override strings (CLI flags beat file values)."""
    known = {f.name for f in fields(ExperimentConfig)}
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise InvalidInput(f"override {pair!r} is not key=value")
        key, val = (part.strip() for part in pair.split("=", 1))
        if key not in known:
            raise InvalidInput(f"unknown config key {key!r}")
        try:
            updates[key] = _parse_value(key, _key_kind(key), val)
        except ValueError as exc:
            raise InvalidInput(f"override {key}: {exc}") from None
    return replace(cfg, **updates)
