"""Training-time data augmentation.

Five augmentations: rigid scene perturbation (keyframe only), whole-sample
color drop, whole-sample semantic-feature drop, workspace filtering with
farthest-point resampling, and demo augmentation (one transition per
intermediate trajectory step toward the next keyframe).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, ConfigError, DataError
from .pointnet import PointCloud, farthest_point_sample
from .policy import DenseAction, KeyframeAction, normalize_angles
from .validation import as_float_array, check_shape

__all__ = ["Box", "AugmentConfig", "Transition", "perturb", "apply_perturbation",
           "color_drop", "feature_drop", "resample", "demo_augment",
           "WORKSPACE", "padded_workspace"]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, inclusive on both bounds."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def contains(self, coords: np.ndarray) -> np.ndarray:
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return ((coords >= lo) & (coords <= hi)).all(axis=1)

    def clip(self, point: np.ndarray) -> np.ndarray:
        return np.clip(point, self.lo, self.hi)


WORKSPACE = Box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0))


def padded_workspace(pad: float) -> Box:
    """Workspace grown by ``pad`` on every side (absorbs perturbation drift)."""
    return Box(lo=tuple(v - pad for v in WORKSPACE.lo),
               hi=tuple(v + pad for v in WORKSPACE.hi))


@dataclass(frozen=True)
class AugmentConfig:
    """Augmentation knobs.

    Defaults are the keyframe-control settings; ``dense_defaults`` flips the
    drop probabilities and point count for dense control. The reference
    full-scale point budgets are 4096 (keyframe) and 1200 (dense); the
    desk-scale defaults below keep training in the minutes range.
    """

    trans_range: float = 0.125
    yaw_range: float = 45.0
    color_drop_p: float = 0.4
    feature_drop_p: float = 0.0
    resample_n: int = 256
    demo_augment: bool = True

    def __post_init__(self):
        if not 0.0 <= self.color_drop_p <= 1.0 or not 0.0 <= self.feature_drop_p <= 1.0:
            raise ConfigError("drop probabilities must lie in [0, 1]")
        if self.resample_n < 1:
            raise ConfigError("resample_n must be >= 1")
        if self.trans_range < 0 or self.yaw_range < 0:
            raise ConfigError("perturbation ranges must be non-negative")

    @classmethod
    def dense_defaults(cls) -> "AugmentConfig":
        return cls(trans_range=0.0, yaw_range=0.0, color_drop_p=0.0,
                   feature_drop_p=0.4, resample_n=128, demo_augment=False)


@dataclass
class Transition:
    """One training sample: an observation cloud and its ground-truth action."""

    cloud: PointCloud
    action: KeyframeAction | DenseAction
    gripper_pos: np.ndarray | None = None  # dense mode: end-effector position


def _yaw_matrix(theta_deg: float) -> np.ndarray:
    th = np.deg2rad(theta_deg)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_perturbation(cloud: PointCloud, action: KeyframeAction,
                       theta_deg: float, translation,
                       center=(0.5, 0.5, 0.5),
                       bin_deg: float = 5.0) -> tuple[PointCloud, KeyframeAction]:
    """Rotate by ``theta_deg`` about the vertical axis through ``center`` and
    translate, applying the identical rigid motion to cloud and action."""
    center = as_float_array(center, "center")
    t = check_shape(as_float_array(translation, "translation"), (3,), "translation")
    rot = _yaw_matrix(theta_deg)
    coords = (cloud.coords - center) @ rot.T + center + t
    new_pos = rot @ (action.pos - center) + center + t

    bins = action.rot.shape[1]
    shift = int(np.round(theta_deg / bin_deg))
    new_rot = action.rot.copy()
    new_rot[2] = np.roll(action.rot[2], shift)
    euler = None
    if action.euler_deg is not None:
        euler = normalize_angles(action.euler_deg + np.array([0.0, 0.0, theta_deg]))
    moved = PointCloud(coords=coords, colors=cloud.colors,
                       semantic=cloud.semantic, proprio=cloud.proprio)
    return moved, KeyframeAction(pos=new_pos, rot=new_rot, open=action.open,
                                 collide=action.collide, euler_deg=euler)


def perturb(cloud: PointCloud, action: KeyframeAction, cfg: AugmentConfig,
            rng: np.random.Generator,
            bin_deg: float = 5.0) -> tuple[PointCloud, KeyframeAction]:
    """Random rigid perturbation of one keyframe sample."""
    theta = float(rng.uniform(-cfg.yaw_range, cfg.yaw_range))
    t = rng.uniform(-cfg.trans_range, cfg.trans_range, size=3)
    return apply_perturbation(cloud, action, theta, t, bin_deg=bin_deg)


def color_drop(cloud: PointCloud, p: float,
               rng: np.random.Generator) -> PointCloud:
    """With probability ``p``, replace every color by zero."""
    if rng.uniform() < p:
        return PointCloud(coords=cloud.coords, colors=np.zeros_like(cloud.colors),
                          semantic=cloud.semantic, proprio=cloud.proprio)
    return cloud


def feature_drop(cloud: PointCloud, p: float,
                 rng: np.random.Generator) -> PointCloud:
    """With probability ``p``, zero the semantic block; colors stay intact."""
    if cloud.semantic is None:
        return cloud
    if rng.uniform() < p:
        return PointCloud(coords=cloud.coords, colors=cloud.colors,
                          semantic=np.zeros_like(cloud.semantic),
                          proprio=cloud.proprio)
    return cloud


def resample(cloud: PointCloud, n: int, workspace: Box,
             rng: np.random.Generator,
             label: str = "") -> tuple[PointCloud, np.ndarray]:
    """Filter to the workspace and return exactly ``n`` points plus the kept
    row indices (for remapping point masks)."""
    kept = np.flatnonzero(workspace.contains(cloud.coords))
    if kept.size == 0:
        where = f" in episode {label}" if label else ""
        raise DataError(f"resample: no points inside the workspace{where}")
    if kept.size > n:
        start = int(rng.integers(kept.size))
        sub = farthest_point_sample(cloud.coords[kept], n, start)
        kept = kept[sub]
    elif kept.size < n:
        pad = rng.integers(0, kept.size, size=n - kept.size)
        kept = np.concatenate([kept, kept[pad]])
    picked = PointCloud(
        coords=cloud.coords[kept], colors=cloud.colors[kept],
        semantic=None if cloud.semantic is None else cloud.semantic[kept],
        proprio=cloud.proprio)
    return picked, kept


def demo_augment(episode) -> list[Transition]:
    """Expand a keyframe episode into one transition per trajectory step.

    Every transition pairs the scene cloud, with that step's proprio vector
    attached, against the episode's next keyframe action.
    """
    if episode.mode != "keyframe":
        raise ArgumentError("demo_augment applies to keyframe episodes only")
    cloud = episode.clouds[0]
    action = episode.actions[0]
    out = []
    for row in episode.proprio_traj:
        obs = PointCloud(coords=cloud.coords, colors=cloud.colors,
                         semantic=cloud.semantic, proprio=row)
        out.append(Transition(cloud=obs, action=action))
    return out
