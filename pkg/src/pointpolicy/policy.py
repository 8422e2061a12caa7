"""Point-wise action heads, learned per-point weights, and weighted aggregation.

Every point i carries a relative position prediction: the target position is
modeled as ``p_i + delta(f_i)`` so the aggregated position is translation
equivariant by construction. Categorical heads (rotation bins, gripper open,
collision flag) are aggregated as weighted averages of per-point probability
distributions; weights come from per-component MLPs normalized with a softmax
over the point axis.

Euler angles are intrinsic X-Y-Z, in degrees, normalized to [-180, 180).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import nets
from . import tensor as T
from .errors import ArgumentError, ConfigError
from .pointnet import EncoderDecoderConfig, PointCloud, PointFeatures, \
    encode_decode, encoder_param_shapes, farthest_point_sample, ball_query, \
    _set_abstraction_flat, _initial_features
from .validation import as_float_array, check_rotation_matrix, check_shape

__all__ = [
    "KeyframeAction",
    "DenseAction",
    "PointwisePrediction",
    "KeyframePrediction",
    "DensePrediction",
    "HeadConfig",
    "PolicyModel",
    "ABLATIONS",
    "KEYFRAME_COMPONENTS",
    "DENSE_COMPONENTS",
    "predict_pointwise",
    "aggregate_keyframe",
    "aggregate_dense",
    "to_ee_frame",
    "normalize_angles",
    "discretize_rotation",
    "decode_rotation",
]

KEYFRAME_COMPONENTS = ("pos", "rot", "open", "collide")
DENSE_COMPONENTS = ("dir", "mag", "rot", "open")
ABLATIONS = ("none", "no-decoder", "abs-pos", "uniform-weight", "no-dense-sup")

DEGENERATE_NORM = 1e-9

OPEN_CLOSE, OPEN_OPEN = 0, 1        # gripper open-state classes
COLLIDE_AVOID, COLLIDE_ALLOW = 0, 1  # motion-planner collision classes


def normalize_angles(euler_deg) -> np.ndarray:
    """Wrap angles into [-180, 180)."""
    e = as_float_array(euler_deg, "euler_deg")
    return np.mod(e + 180.0, 360.0) - 180.0


def discretize_rotation(euler_deg, bin_deg: float = 5.0) -> np.ndarray:
    """One-hot rotation blocks, one row of 360/bin_deg bins per axis."""
    bins = _check_bins(bin_deg)
    e = normalize_angles(euler_deg)
    check_shape(e, (3,), "euler_deg")
    idx = np.clip(np.floor((e + 180.0) / bin_deg).astype(np.int64), 0, bins - 1)
    out = np.zeros((3, bins))
    out[np.arange(3), idx] = 1.0
    return out


def decode_rotation(probs, bin_deg: float = 5.0) -> np.ndarray:
    """Per-axis argmax bin center in degrees; ties go to the lower bin."""
    bins = _check_bins(bin_deg)
    p = check_shape(as_float_array(probs, "probs"), (3, bins), "probs")
    idx = p.argmax(axis=1)
    return -180.0 + (idx + 0.5) * bin_deg


def _check_bins(bin_deg: float) -> int:
    bins = 360.0 / bin_deg
    if abs(bins - round(bins)) > 1e-9:
        raise ArgumentError(f"bin width {bin_deg} does not divide 360")
    return int(round(bins))


def _check_onehot(block: np.ndarray, name: str) -> np.ndarray:
    sums = block.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6) or block.min() < -1e-12:
        raise ArgumentError(f"{name}: rows must be one-hot (sum to 1)")
    return block


@dataclass
class KeyframeAction:
    """Sparse target pose: position, binned rotation, open and collide flags."""

    pos: np.ndarray              # (3,) scene units
    rot: np.ndarray              # (3, bins) one-hot per axis
    open: np.ndarray             # (2,) one-hot
    collide: np.ndarray          # (2,) one-hot
    euler_deg: np.ndarray | None = None  # convenience copy of the un-binned angles

    def __post_init__(self):
        self.pos = check_shape(as_float_array(self.pos, "pos"), (3,), "pos")
        self.rot = _check_onehot(as_float_array(self.rot, "rot"), "rot")
        self.open = _check_onehot(check_shape(
            as_float_array(self.open, "open"), (2,), "open"), "open")
        self.collide = _check_onehot(check_shape(
            as_float_array(self.collide, "collide"), (2,), "collide"), "collide")
        if self.euler_deg is not None:
            self.euler_deg = check_shape(
                as_float_array(self.euler_deg, "euler_deg"), (3,), "euler_deg")

    @classmethod
    def build(cls, pos, euler_deg, open_state: int, collide: int,
              bin_deg: float = 5.0) -> "KeyframeAction":
        onehot2 = np.eye(2)
        return cls(pos=pos, rot=discretize_rotation(euler_deg, bin_deg),
                   open=onehot2[open_state], collide=onehot2[collide],
                   euler_deg=normalize_angles(euler_deg))


@dataclass
class DenseAction:
    """One low-level step: delta position, axis-angle delta rotation, open flag."""

    dpos: np.ndarray             # (3,)
    drot: np.ndarray             # (3,) axis-angle
    open: np.ndarray             # (2,) one-hot
    null_motion: bool = False    # true when dpos is intentionally zero

    def __post_init__(self):
        self.dpos = check_shape(as_float_array(self.dpos, "dpos"), (3,), "dpos")
        self.drot = check_shape(as_float_array(self.drot, "drot"), (3,), "drot")
        self.open = _check_onehot(check_shape(
            as_float_array(self.open, "open"), (2,), "open"), "open")


@dataclass(frozen=True)
class HeadConfig:
    """Per-point head stack: shared lift then per-head 3-layer MLPs."""

    lift_width: int = 256
    hidden_width: int = 64
    rot_bin_deg: float = 5.0

    @property
    def rot_bins(self) -> int:
        return _check_bins(self.rot_bin_deg)


@dataclass
class PointwisePrediction:
    """Raw per-point head outputs for a batch of same-size clouds.

    All tensors are flat over the batch: row ``b * n + i`` belongs to point i
    of cloud b. ``rot`` holds 3*bins logits in keyframe mode and a 3-vector
    axis-angle in dense mode.
    """

    mode: str
    batch: int
    n: int
    rot_bins: int
    delta_pos: T.Tensor
    rot: T.Tensor
    open_logits: T.Tensor
    weight_logits: dict[str, T.Tensor]
    collide_logits: T.Tensor | None = None
    magnitude: T.Tensor | None = None

    @property
    def components(self) -> tuple[str, ...]:
        return KEYFRAME_COMPONENTS if self.mode == "keyframe" else DENSE_COMPONENTS


@dataclass
class KeyframePrediction:
    """Aggregated keyframe prediction; tensors are batched (B, ...)."""

    pos: T.Tensor            # (B, 3)
    rot_probs: T.Tensor      # (B, 3, bins)
    open_probs: T.Tensor     # (B, 2)
    collide_probs: T.Tensor  # (B, 2)


@dataclass
class DensePrediction:
    """Aggregated dense prediction; tensors are batched (B, ...)."""

    direction: T.Tensor      # (B, 3) unit or zero rows
    magnitude: T.Tensor      # (B, 1)
    dpos: T.Tensor           # (B, 3) = direction * magnitude
    drot: T.Tensor           # (B, 3)
    open_probs: T.Tensor     # (B, 2)
    degenerate_points: int = 0   # per-point targets with near-zero norm
    degenerate_sums: int = 0     # clouds whose weighted direction sum vanished


def head_param_shapes(mode: str, feature_dim: int,
                      cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    if mode not in ("keyframe", "dense"):
        raise ConfigError(f"unknown mode '{mode}'")
    h, lift = cfg.hidden_width, cfg.lift_width
    shapes = nets.mlp_param_shapes("lift", [feature_dim, lift])

    def head(name, out):
        shapes.update(nets.mlp_param_shapes(f"head.{name}", [lift, h, h, out]))

    head("delta_pos", 3)
    head("open", 2)
    if mode == "keyframe":
        head("rot", 3 * cfg.rot_bins)
        head("collide", 2)
        comps = KEYFRAME_COMPONENTS
    else:
        head("rot", 3)
        head("magnitude", 1)
        comps = DENSE_COMPONENTS
    for c in comps:
        head(f"w_{c}", 1)
    return shapes


def predict_pointwise(features: PointFeatures, mode: str,
                      params, cfg: HeadConfig,
                      tape: T.Tape | None = None) -> PointwisePrediction:
    """Per-point head outputs for a single cloud's features."""
    if isinstance(params, nets.Binding):
        bound = params
    else:
        if tape is None:
            tape = features.features.tape or T.Tape()
        bound = nets.Binding(dict(params), tape)
    return _heads(features.features, mode, cfg, bound, batch=1,
                  n=features.features.shape[0])


def _heads(feats: T.Tensor, mode: str, cfg: HeadConfig, bound: nets.Binding,
           batch: int, n: int) -> PointwisePrediction:
    if mode not in ("keyframe", "dense"):
        raise ConfigError(f"unknown mode '{mode}'")
    x = T.relu(nets.linear(bound, "lift.0", feats))

    def head(name):
        return nets.mlp(bound, f"head.{name}", x, 3)

    comps = KEYFRAME_COMPONENTS if mode == "keyframe" else DENSE_COMPONENTS
    try:
        pred = PointwisePrediction(
            mode=mode, batch=batch, n=n, rot_bins=cfg.rot_bins,
            delta_pos=head("delta_pos"),
            rot=head("rot"),
            open_logits=head("open"),
            collide_logits=head("collide") if mode == "keyframe" else None,
            magnitude=head("magnitude") if mode == "dense" else None,
            weight_logits={c: head(f"w_{c}") for c in comps},
        )
    except ConfigError as exc:
        raise ConfigError(f"head parameters do not match mode '{mode}': {exc}") from exc
    return pred


def _point_weights(pred: PointwisePrediction, component: str,
                   uniform: bool) -> T.Tensor:
    """Softmax-normalized per-point weights, shaped (B, N, 1)."""
    if uniform:
        return T.Tensor(np.full((pred.batch, pred.n, 1), 1.0 / pred.n))
    logits = T.reshape(pred.weight_logits[component], (pred.batch, pred.n, 1))
    return T.softmax(logits, axis=1)


def position_targets(pred: PointwisePrediction, coords: np.ndarray,
                     relative: bool = True) -> T.Tensor:
    """Per-point position targets ``p_i + delta_i`` shaped (B, N, 3)."""
    delta = T.reshape(pred.delta_pos, (pred.batch, pred.n, 3))
    if not relative:
        return delta
    return T.add(T.Tensor(coords.reshape(pred.batch, pred.n, 3)), delta)


def _categorical(pred_logits: T.Tensor, batch: int, n: int, blocks: int,
                 width: int, weights: T.Tensor):
    """Per-point softmax distributions and their weighted average."""
    probs = T.softmax(T.reshape(pred_logits, (batch, n, blocks, width)), axis=3)
    w = T.reshape(weights, (batch, n, 1, 1))
    agg = T.reduce_sum(T.mul(probs, w), axis=1)
    return probs, agg


def aggregate_keyframe(pred: PointwisePrediction, coords,
                       relative: bool = True,
                       uniform: bool = False) -> KeyframePrediction:
    """Weighted-average keyframe prediction from per-point outputs."""
    if pred.mode != "keyframe":
        raise ArgumentError("aggregate_keyframe: prediction is not keyframe-mode")
    coords = as_float_array(coords, "coords")
    targets = position_targets(pred, coords, relative)
    w_pos = _point_weights(pred, "pos", uniform)
    pos = T.reduce_sum(T.mul(targets, w_pos), axis=1)
    _, rot = _categorical(pred.rot, pred.batch, pred.n, 3, pred.rot_bins,
                          _point_weights(pred, "rot", uniform))
    _, open_ = _categorical(pred.open_logits, pred.batch, pred.n, 1, 2,
                            _point_weights(pred, "open", uniform))
    _, collide = _categorical(pred.collide_logits, pred.batch, pred.n, 1, 2,
                              _point_weights(pred, "collide", uniform))
    return KeyframePrediction(pos=pos, rot_probs=rot,
                              open_probs=T.reshape(open_, (pred.batch, 2)),
                              collide_probs=T.reshape(collide, (pred.batch, 2)))


def unit_directions(targets: T.Tensor) -> tuple[T.Tensor, int]:
    """Row-normalize (B, N, 3) targets; near-zero rows become zero vectors."""
    norms = T.row_l2norm(targets)
    valid = (norms.data >= DEGENERATE_NORM).astype(np.float64)
    safe = T.add(T.mul(norms, T.Tensor(valid)), T.Tensor(1.0 - valid))
    dirs = T.mul(T.div(targets, safe), T.Tensor(valid))
    return dirs, int(valid.size - valid.sum())


def aggregate_dense(pred: PointwisePrediction, coords,
                    relative: bool = True,
                    uniform: bool = False) -> DensePrediction:
    """Weighted-average dense prediction: unit direction times magnitude."""
    if pred.mode != "dense":
        raise ArgumentError("aggregate_dense: prediction is not dense-mode")
    coords = as_float_array(coords, "coords")
    targets = position_targets(pred, coords, relative)
    dirs, degenerate = unit_directions(targets)
    vec = T.reduce_sum(T.mul(dirs, _point_weights(pred, "dir", uniform)), axis=1)
    direction, degenerate_sums = unit_directions(T.reshape(vec, (pred.batch, 1, 3)))
    direction = T.reshape(direction, (pred.batch, 3))
    mag_pp = T.reshape(pred.magnitude, (pred.batch, pred.n, 1))
    mag = T.reduce_sum(T.mul(mag_pp, _point_weights(pred, "mag", uniform)), axis=1)
    drot_pp = T.reshape(pred.rot, (pred.batch, pred.n, 3))
    drot = T.reduce_sum(T.mul(drot_pp, _point_weights(pred, "rot", uniform)), axis=1)
    _, open_ = _categorical(pred.open_logits, pred.batch, pred.n, 1, 2,
                            _point_weights(pred, "open", uniform))
    return DensePrediction(direction=direction, magnitude=mag,
                           dpos=T.mul(direction, mag), drot=drot,
                           open_probs=T.reshape(open_, (pred.batch, 2)),
                           degenerate_points=degenerate,
                           degenerate_sums=degenerate_sums)


def to_ee_frame(cloud: PointCloud, rotation, translation) -> PointCloud:
    """Re-express coordinates in the end-effector frame: R^-1 (x - t)."""
    r = check_rotation_matrix(rotation)
    t = check_shape(as_float_array(translation, "translation"), (3,), "translation")
    return PointCloud(coords=(cloud.coords - t) @ r, colors=cloud.colors,
                      semantic=cloud.semantic, proprio=cloud.proprio)


@dataclass
class KeyframeDecision:
    """Decoded single-cloud keyframe inference output (plain numpy)."""

    pos: np.ndarray
    rot_probs: np.ndarray
    open_probs: np.ndarray
    collide_probs: np.ndarray
    euler_deg: np.ndarray


@dataclass
class DenseDecision:
    """Decoded single-cloud dense inference output (plain numpy)."""

    dpos: np.ndarray
    drot: np.ndarray
    open_probs: np.ndarray
    direction: np.ndarray
    magnitude: float


@dataclass(frozen=True)
class PolicyModel:
    """Network wiring for one control mode, including the ablation variants.

    ``no-decoder`` replaces the U-shaped network with the encoder alone: the
    coarsest features are globally max-pooled and single MLP heads predict the
    action directly (absolute position, no per-point outputs, no weights).
    ``abs-pos`` keeps the full network but drops the p_i offset from position
    targets; ``uniform-weight`` freezes all point weights to a constant;
    ``no-dense-sup`` only changes the loss (see the losses module).
    """

    mode: str
    encoder: EncoderDecoderConfig = field(default_factory=EncoderDecoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    ablation: str = "none"

    def __post_init__(self):
        if self.mode not in ("keyframe", "dense"):
            raise ConfigError(f"unknown mode '{self.mode}'")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation '{self.ablation}'")

    @property
    def relative(self) -> bool:
        return self.ablation != "abs-pos"

    @property
    def uniform_weights(self) -> bool:
        return self.ablation == "uniform-weight"

    @property
    def dense_supervision(self) -> bool:
        return self.ablation not in ("no-dense-sup", "no-decoder")

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = encoder_param_shapes(self.encoder)
        if self.ablation == "no-decoder":
            shapes = {k: v for k, v in shapes.items() if not k.startswith("dec")}
            shapes.update(_global_head_shapes(self.mode, self.encoder, self.heads))
        else:
            shapes.update(head_param_shapes(self.mode, self.encoder.feature_dim,
                                            self.heads))
        return shapes

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.param_shapes().items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = nets.init_linear(rng, shape[0], shape[1])[0]
        return params

    def forward(self, clouds: list[PointCloud], params: Mapping[str, np.ndarray],
                tape: T.Tape, fps_starts: list[int] | None = None):
        """Batched forward pass over same-size clouds.

        Returns ``(aggregated, pointwise, coords)`` where ``pointwise`` is
        None under the no-decoder ablation and ``coords`` is the stacked
        (B, N, 3) coordinate array the predictions refer to.
        """
        if not clouds:
            raise ArgumentError("forward: need at least one cloud")
        n = clouds[0].n
        if any(c.n != n for c in clouds):
            raise ArgumentError("forward: clouds in a batch must have equal size")
        starts = fps_starts if fps_starts is not None else [0] * len(clouds)
        bound = nets.Binding(dict(params), tape)
        coords = np.stack([c.coords for c in clouds])
        if self.ablation == "no-decoder":
            agg = self._forward_global(clouds, bound, starts)
            return agg, None, coords

        feats = [encode_decode(c, self.encoder, bound, tape=tape, fps_start=s).features
                 for c, s in zip(clouds, starts)]
        flat = feats[0] if len(feats) == 1 else T.concat(feats, axis=0)
        pred = _heads(flat, self.mode, self.heads, bound,
                      batch=len(clouds), n=n)
        if self.mode == "keyframe":
            agg = aggregate_keyframe(pred, coords, relative=self.relative,
                                     uniform=self.uniform_weights)
        else:
            agg = aggregate_dense(pred, coords, relative=self.relative,
                                  uniform=self.uniform_weights)
        return agg, pred, coords

    def _forward_global(self, clouds, bound, starts):
        cfg = self.encoder
        pooled = []
        for cloud, start in zip(clouds, starts):
            feats = _initial_features(cloud, cfg, bound)
            coords = cloud.coords
            orig_idx = np.arange(cloud.n, dtype=np.int64)
            for i, lv in enumerate(cfg.levels):
                centers = farthest_point_sample(coords, lv.n_points,
                                                start if i == 0 else 0)
                groups = ball_query(coords[centers], coords, lv.radius, lv.max_group)
                feats, _ = _set_abstraction_flat(lv, coords, feats, centers,
                                                 groups, bound, f"enc{i}")
                orig_idx = orig_idx[centers]
                if cfg.semantic_width and cfg.fusion_level == i + 1:
                    feats = T.concat([feats, T.Tensor(cloud.semantic[orig_idx])],
                                     axis=1)
                coords = coords[centers]
            pooled.append(T.reduce_max(T.reshape(
                feats, (1, coords.shape[0], feats.shape[1])), axis=1))
        g = pooled[0] if len(pooled) == 1 else T.concat(pooled, axis=0)
        b = len(clouds)
        bins = self.heads.rot_bins

        def head(name):
            return nets.mlp(bound, f"ghead.{name}", g, 3)

        open_probs = T.softmax(head("open"), axis=1)
        if self.mode == "keyframe":
            rot = T.softmax(T.reshape(head("rot"), (b, 3, bins)), axis=2)
            return KeyframePrediction(pos=head("pos"), rot_probs=rot,
                                      open_probs=open_probs,
                                      collide_probs=T.softmax(head("collide"), axis=1))
        dirs, deg = unit_directions(T.reshape(head("dir"), (b, 1, 3)))
        direction = T.reshape(dirs, (b, 3))
        mag = head("magnitude")
        return DensePrediction(direction=direction, magnitude=mag,
                               dpos=T.mul(direction, mag), drot=head("rot"),
                               open_probs=open_probs, degenerate_sums=deg)

    def predict_keyframe(self, cloud: PointCloud,
                         params: Mapping[str, np.ndarray]) -> KeyframeDecision:
        agg, _, _ = self.forward([cloud], params, T.Tape())
        rot_probs = agg.rot_probs.data[0]
        return KeyframeDecision(
            pos=agg.pos.data[0].copy(), rot_probs=rot_probs.copy(),
            open_probs=agg.open_probs.data[0].copy(),
            collide_probs=agg.collide_probs.data[0].copy(),
            euler_deg=decode_rotation(rot_probs, self.heads.rot_bin_deg))

    def predict_dense(self, cloud: PointCloud,
                      params: Mapping[str, np.ndarray]) -> DenseDecision:
        agg, _, _ = self.forward([cloud], params, T.Tape())
        return DenseDecision(
            dpos=agg.dpos.data[0].copy(), drot=agg.drot.data[0].copy(),
            open_probs=agg.open_probs.data[0].copy(),
            direction=agg.direction.data[0].copy(),
            magnitude=float(agg.magnitude.data[0, 0]))

    def point_weights(self, cloud: PointCloud,
                      params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Softmax point weights per component for one cloud (analysis utility)."""
        if self.ablation == "no-decoder":
            raise ConfigError("no-decoder variant has no point weights")
        tape = T.Tape()
        bound = nets.Binding(dict(params), tape)
        feats = encode_decode(cloud, self.encoder, bound, tape=tape)
        pred = _heads(feats.features, self.mode, self.heads, bound, 1, cloud.n)
        return {c: _point_weights(pred, c, self.uniform_weights).data[0, :, 0].copy()
                for c in pred.components}


def _global_head_shapes(mode: str, enc: EncoderDecoderConfig,
                        cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    w = enc.levels[-1].width
    h = cfg.hidden_width
    shapes = {}

    def head(name, out):
        shapes.update(nets.mlp_param_shapes(f"ghead.{name}", [w, h, h, out]))

    head("open", 2)
    head("rot", 3 * cfg.rot_bins if mode == "keyframe" else 3)
    if mode == "keyframe":
        head("pos", 3)
        head("collide", 2)
    else:
        head("dir", 3)
        head("magnitude", 1)
    return shapes
