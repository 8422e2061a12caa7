"""Point-cloud geometry kernels and the encoder-decoder feature network.

The network is a U-shaped stack of set-abstraction (group, shared MLP, max
pool) and feature-propagation (interpolate, concat skip, shared MLP) stages.
Group geometry enters only as offsets relative to each group center, so the
per-point output features are invariant to global translation of the input
coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nets
from . import tensor as T
from .errors import ArgumentError, ConfigError
from .validation import as_float_array, check_finite, check_shape

__all__ = [
    "PointCloud",
    "LevelConfig",
    "EncoderDecoderConfig",
    "PointFeatures",
    "farthest_point_sample",
    "ball_query",
    "interpolation_neighbors",
    "set_abstraction",
    "feature_propagation",
    "encode_decode",
    "encoder_param_shapes",
    "semantic_features",
    "semantic_dim",
    "SEMANTIC_PROVIDERS",
]

INTERP_EPS = 1e-8
_COLOR_EMBED_DIM = 16
_COLOR_EMBED_SEED = 710637


@dataclass
class PointCloud:
    """Scene points with colors, optional semantic features, optional proprio."""

    coords: np.ndarray
    colors: np.ndarray
    semantic: np.ndarray | None = None
    proprio: np.ndarray | None = None

    def __post_init__(self):
        self.coords = check_shape(as_float_array(self.coords, "coords"),
                                  (None, 3), "coords")
        if self.coords.shape[0] < 1:
            raise ArgumentError("coords: need at least one point")
        check_finite(self.coords, "coords")
        colors = check_shape(as_float_array(self.colors, "colors"),
                             (self.n, 3), "colors")
        self.colors = np.clip(colors, 0.0, 1.0)
        if self.semantic is not None:
            self.semantic = check_shape(
                as_float_array(self.semantic, "semantic"), (self.n, None), "semantic")
        if self.proprio is not None:
            self.proprio = check_shape(
                as_float_array(self.proprio, "proprio"), (None,), "proprio")

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def semantic_width(self) -> int:
        return 0 if self.semantic is None else self.semantic.shape[1]


@dataclass(frozen=True)
class LevelConfig:
    """One set-abstraction stage: FPS count, grouping ball, output width."""

    n_points: int
    radius: float
    max_group: int
    width: int


@dataclass(frozen=True)
class EncoderDecoderConfig:
    levels: tuple[LevelConfig, ...] = (
        LevelConfig(64, 0.15, 8, 32),
        LevelConfig(16, 0.35, 8, 64),
    )
    decoder_widths: tuple[int, ...] = (64, 64)
    feature_dim: int = 64
    fusion_level: int = 1
    semantic_width: int = 0
    proprio_dim: int = 0
    proprio_embed: int = 8

    def __post_init__(self):
        counts = [lv.n_points for lv in self.levels]
        if any(a <= b for a, b in zip(counts, counts[1:])):
            raise ConfigError(f"level point counts must be strictly decreasing: {counts}")
        if len(self.decoder_widths) != len(self.levels):
            raise ConfigError("need one decoder width per encoder level")
        if self.decoder_widths[-1] != self.feature_dim:
            raise ConfigError("final decoder width must equal feature_dim")
        if not 0 <= self.fusion_level < len(self.levels):
            raise ConfigError(f"fusion_level {self.fusion_level} out of range")

    def input_width(self) -> int:
        w = 3 + (self.proprio_embed if self.proprio_dim else 0)
        if self.semantic_width and self.fusion_level == 0:
            w += self.semantic_width
        return w

    def encoder_input_widths(self) -> list[int]:
        """Feature width entering each set-abstraction stage (offsets excluded)."""
        widths = [self.input_width()]
        for i, lv in enumerate(self.levels[:-1], start=1):
            w = lv.width
            if self.semantic_width and self.fusion_level == i:
                w += self.semantic_width
            widths.append(w)
        return widths

    def skip_width(self, level: int) -> int:
        """Feature width available as decoder skip at ``level`` (0 = full res)."""
        if level == 0:
            return self.input_width()
        w = self.levels[level - 1].width
        if self.semantic_width and self.fusion_level == level:
            w += self.semantic_width
        return w


@dataclass
class PointFeatures:
    """Per-point network output aligned row-for-row with the input cloud."""

    features: T.Tensor
    coords: np.ndarray


def farthest_point_sample(coords, k: int, start: int = 0) -> np.ndarray:
    """Greedy max-min selection of ``k`` point indices, deterministic given start."""
    coords = as_float_array(coords, "coords")
    n = coords.shape[0]
    if not 1 <= k <= n:
        raise ArgumentError(f"farthest_point_sample: k={k} outside [1, {n}]")
    if not 0 <= start < n:
        raise ArgumentError(f"farthest_point_sample: start={start} outside [0, {n})")
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    d = ((coords - coords[start]) ** 2).sum(axis=1)
    for i in range(1, k):
        idx = int(np.argmax(d))
        chosen[i] = idx
        d = np.minimum(d, ((coords - coords[idx]) ** 2).sum(axis=1))
    return chosen


def ball_query(centers, coords, radius: float, max_k: int) -> np.ndarray:
    """Up to ``max_k`` in-radius neighbor indices per center, ascending.

    Short groups repeat the first found index; empty balls fall back to the
    nearest point, so the result is always a full (M, max_k) array.
    """
    centers = as_float_array(centers, "centers")
    coords = as_float_array(coords, "coords")
    if coords.shape[0] == 0:
        raise ArgumentError("ball_query: empty cloud")
    if radius <= 0 or max_k < 1:
        raise ArgumentError("ball_query: radius must be > 0 and max_k >= 1")
    r2 = radius * radius
    out = np.empty((centers.shape[0], max_k), dtype=np.int64)
    for m in range(centers.shape[0]):
        d2 = ((coords - centers[m]) ** 2).sum(axis=1)
        inside = np.flatnonzero(d2 <= r2)
        if inside.size == 0:
            out[m] = int(np.argmin(d2))
            continue
        picked = inside[:max_k]
        out[m, :picked.size] = picked
        out[m, picked.size:] = picked[0]
    return out


def interpolation_neighbors(fine, coarse) -> tuple[np.ndarray, np.ndarray]:
    """3 nearest coarse neighbors per fine point with inverse-distance weights.

    Weights are 1/(d + eps), normalized to sum to 1 per fine point. A coarse
    set smaller than 3 repeats its nearest entries.
    """
    fine = as_float_array(fine, "fine")
    coarse = as_float_array(coarse, "coarse")
    if coarse.shape[0] == 0:
        raise ArgumentError("interpolation_neighbors: empty coarse set")
    d2 = ((fine[:, None, :] - coarse[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")
    if coarse.shape[0] >= 3:
        idx = order[:, :3]
    else:
        idx = order[:, np.minimum(np.arange(3), coarse.shape[0] - 1)]
    d = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    w = 1.0 / (d + INTERP_EPS)
    w /= w.sum(axis=1, keepdims=True)
    return idx.astype(np.int64), w


def encoder_param_shapes(cfg: EncoderDecoderConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.proprio_dim:
        shapes.update(nets.mlp_param_shapes("proprio", [cfg.proprio_dim, cfg.proprio_embed]))
    in_widths = cfg.encoder_input_widths()
    for i, lv in enumerate(cfg.levels):
        shapes.update(nets.mlp_param_shapes(f"enc{i}", [in_widths[i] + 3, lv.width, lv.width]))
    interp_w = cfg.levels[-1].width
    for i, w in enumerate(cfg.decoder_widths):
        level = len(cfg.levels) - 1 - i
        shapes.update(nets.mlp_param_shapes(
            f"dec{i}", [interp_w + cfg.skip_width(level), w, w]))
        interp_w = w
    return shapes


def _sa_mlp(bound: nets.Binding, name: str, x: T.Tensor) -> T.Tensor:
    x = T.relu(nets.linear(bound, f"{name}.0", x))
    return T.relu(nets.linear(bound, f"{name}.1", x))


def set_abstraction(level: LevelConfig, coords, features: T.Tensor,
                    bound: nets.Binding, name: str, fps_start: int = 0):
    """One downsampling stage on a single cloud.

    Groups carry [neighbor features || relative offsets]; a shared MLP and a
    per-group max pool produce the center features.
    """
    coords = as_float_array(coords, "coords")
    centers = farthest_point_sample(coords, level.n_points, fps_start)
    groups = ball_query(coords[centers], coords, level.radius, level.max_group)
    sub, _ = _set_abstraction_flat(level, coords, features, centers, groups, bound, name)
    return coords[centers], sub


def _set_abstraction_flat(level, coords, features, centers, groups, bound, name):
    k = groups.shape[1]
    flat = groups.reshape(-1)
    rel = coords[flat] - np.repeat(coords[centers], k, axis=0)
    x = T.concat([T.gather_rows(features, flat), T.Tensor(rel)], axis=1)
    x = _sa_mlp(bound, name, x)
    x = T.reshape(x, (centers.shape[0], k, level.width))
    return T.reduce_max(x, axis=1), rel


def feature_propagation(fine_coords, coarse_coords, coarse_features: T.Tensor,
                        skip_features: T.Tensor, bound: nets.Binding,
                        name: str, width: int) -> T.Tensor:
    """One upsampling stage: interpolate coarse features, concat skip, shared MLP."""
    idx, w = interpolation_neighbors(fine_coords, coarse_coords)
    n = idx.shape[0]
    gathered = T.gather_rows(coarse_features, idx.reshape(-1))
    gathered = T.reshape(gathered, (n, 3, coarse_features.shape[1]))
    interp = T.reduce_sum(T.mul(gathered, T.Tensor(w[:, :, None])), axis=1)
    x = T.concat([interp, skip_features], axis=1)
    return _sa_mlp(bound, name, x)


def _initial_features(cloud: PointCloud, cfg: EncoderDecoderConfig,
                      bound: nets.Binding) -> T.Tensor:
    parts: list[T.Tensor] = [T.Tensor(cloud.colors)]
    if cfg.proprio_dim:
        if cloud.proprio is None or cloud.proprio.shape[0] != cfg.proprio_dim:
            raise ConfigError(
                f"config expects a {cfg.proprio_dim}-dim proprio vector")
        z = nets.linear(bound, "proprio.0", T.Tensor(cloud.proprio[None, :]))
        parts.append(T.gather_rows(z, np.zeros(cloud.n, dtype=np.int64)))
    if cfg.semantic_width:
        if cloud.semantic_width != cfg.semantic_width:
            raise ConfigError(
                f"config expects {cfg.semantic_width}-dim semantic features, "
                f"cloud has {cloud.semantic_width}")
        if cfg.fusion_level == 0:
            parts.append(T.Tensor(cloud.semantic))
    return T.concat(parts, axis=1) if len(parts) > 1 else parts[0]


def encode_decode(cloud: PointCloud, cfg: EncoderDecoderConfig,
                  params, tape: T.Tape | None = None,
                  fps_start: int = 0) -> PointFeatures:
    """Full U-shaped pass producing one feature row per input point.

    ``params`` is a name-to-array mapping or an existing tape binding (the
    latter lets several clouds share one set of parameter leaves).
    """
    if isinstance(params, nets.Binding):
        bound = params
    else:
        tape = tape if tape is not None else T.Tape()
        bound = nets.Binding(dict(params), tape)

    feats = _initial_features(cloud, cfg, bound)
    level_coords = [cloud.coords]
    level_feats = [feats]
    orig_idx = np.arange(cloud.n, dtype=np.int64)

    for i, lv in enumerate(cfg.levels):
        coords = level_coords[-1]
        start = fps_start if i == 0 else 0
        if lv.n_points > coords.shape[0]:
            raise ConfigError(
                f"level {i} wants {lv.n_points} centers from {coords.shape[0]} points")
        centers = farthest_point_sample(coords, lv.n_points, start)
        groups = ball_query(coords[centers], coords, lv.radius, lv.max_group)
        sub, _ = _set_abstraction_flat(lv, coords, level_feats[-1], centers,
                                       groups, bound, f"enc{i}")
        orig_idx = orig_idx[centers]
        if cfg.semantic_width and cfg.fusion_level == i + 1 <= len(cfg.levels) - 1:
            sub = T.concat([sub, T.Tensor(cloud.semantic[orig_idx])], axis=1)
        level_coords.append(coords[centers])
        level_feats.append(sub)

    feats = level_feats[-1]
    for i, w in enumerate(cfg.decoder_widths):
        level = len(cfg.levels) - 1 - i
        feats = feature_propagation(level_coords[level], level_coords[level + 1],
                                    feats, level_feats[level], bound, f"dec{i}", w)
    return PointFeatures(features=feats, coords=cloud.coords)


def _color_embed_matrix() -> np.ndarray:
    rng = np.random.default_rng(_COLOR_EMBED_SEED)
    return rng.normal(size=(_COLOR_EMBED_DIM, 3))


SEMANTIC_PROVIDERS = ("none", "color-embed")


def semantic_dim(provider: str) -> int:
    if provider == "none":
        return 0
    if provider == "color-embed":
        return _COLOR_EMBED_DIM
    raise ConfigError(f"unknown semantic provider '{provider}'")


def semantic_features(provider: str, cloud: PointCloud) -> np.ndarray | None:
    """Per-point semantic features from a named provider.

    ``none`` yields no block; ``color-embed`` applies a frozen random linear
    map to RGB, standing in for a learned semantic backbone.
    """
    if provider == "none":
        return None
    if provider == "color-embed":
        return cloud.colors @ _color_embed_matrix().T
    raise ConfigError(f"unknown semantic provider '{provider}'")
