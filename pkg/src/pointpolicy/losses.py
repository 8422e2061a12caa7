"""Behavior-cloning objectives for keyframe and dense control.

Every supervised component is trained with dense supervision: the loss of the
aggregated prediction plus the mean of the same loss applied to each point's
own prediction against the shared ground truth. Position uses an L1 norm,
rotation/open/collide in keyframe mode use cross-entropy, and the dense-mode
direction, magnitude, and delta-rotation terms use MSE. Dense control adds a
smoothness penalty that ties all per-point position targets together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ConfigError
from .policy import (DenseAction, DensePrediction, KeyframeAction,
                     KeyframePrediction, PointwisePrediction,
                     position_targets, unit_directions)
from .validation import as_float_array

__all__ = ["LossWeights", "LossBreakdown", "keyframe_loss", "dense_loss",
           "smoothness_reg"]


@dataclass(frozen=True)
class LossWeights:
    """Term weights: alpha_* for keyframe control, beta_* for dense control."""

    alpha_pos: float = 300.0
    alpha_rot: float = 1.0
    alpha_open: float = 1.0
    alpha_collide: float = 1.0
    beta_pos: float = 10.0
    beta_rot: float = 1.0
    beta_open: float = 1.0
    beta_reg: float = 0.3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")


@dataclass
class LossBreakdown:
    """Total loss tensor plus detached per-term values.

    ``terms`` maps a term name to its aggregated and point-wise parts;
    ``term_weights`` holds the multiplier applied to each term, so
    ``sum_t w_t * (agg_t + pts_t)`` reassembles the total.
    """

    total: T.Tensor
    terms: dict[str, dict[str, float]] = field(default_factory=dict)
    term_weights: dict[str, float] = field(default_factory=dict)

    @property
    def total_value(self) -> float:
        return float(self.total.data)

    def reassembled(self) -> float:
        return sum(self.term_weights[t] * (v["aggregated"] + v["points"])
                   for t, v in self.terms.items())


def _weighted_total(parts: dict[str, tuple[T.Tensor, T.Tensor | None]],
                    weights: dict[str, float]) -> LossBreakdown:
    total = None
    terms, applied = {}, {}
    for name, (agg, pts) in parts.items():
        terms[name] = {
            "aggregated": float(agg.data),
            "points": 0.0 if pts is None else float(pts.data),
        }
        applied[name] = weights[name]
        summed = agg if pts is None else T.add(agg, pts)
        piece = T.mul(summed, weights[name])
        total = piece if total is None else T.add(total, piece)
    return LossBreakdown(total=total, terms=terms, term_weights=applied)


def _check_onehot_rows(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.allclose(arr.sum(axis=-1), 1.0, atol=1e-6):
        raise ArgumentError(f"{name}: ground-truth one-hot blocks must sum to 1")
    return arr


def _cross_entropy(probs: T.Tensor, gt: np.ndarray, row_axes) -> T.Tensor:
    """Mean over leading dims of -sum(gt * log p), summed over ``row_axes``."""
    return _nll(T.log(probs), gt, row_axes)


def _nll(log_probs: T.Tensor, gt: np.ndarray, row_axes) -> T.Tensor:
    ce = T.mul(T.Tensor(gt), log_probs)
    for axis in sorted(row_axes, reverse=True):
        ce = T.reduce_sum(ce, axis=axis)
    return T.mul(T.reduce_mean(ce), -1.0)


def _per_point_log_probs(logits: T.Tensor, batch: int, n: int, blocks: int,
                         width: int) -> T.Tensor:
    return T.log_softmax(T.reshape(logits, (batch, n, blocks, width)), axis=3)


def keyframe_loss_batch(agg: KeyframePrediction,
                        pointwise: PointwisePrediction | None,
                        gts: list[KeyframeAction], coords: np.ndarray,
                        w: LossWeights, relative: bool = True,
                        dense_supervision: bool = True) -> LossBreakdown:
    gt_pos = np.stack([g.pos for g in gts])
    gt_rot = _check_onehot_rows(np.stack([g.rot for g in gts]), "rot")
    gt_open = _check_onehot_rows(np.stack([g.open for g in gts]), "open")
    gt_collide = _check_onehot_rows(np.stack([g.collide for g in gts]), "collide")

    pos_agg = T.reduce_mean(T.reduce_sum(
        T.absolute(T.sub(agg.pos, T.Tensor(gt_pos))), axis=1))
    rot_agg = _cross_entropy(agg.rot_probs, gt_rot, row_axes=(1, 2))
    open_agg = _cross_entropy(agg.open_probs, gt_open, row_axes=(1,))
    collide_agg = _cross_entropy(agg.collide_probs, gt_collide, row_axes=(1,))

    pos_pts = rot_pts = open_pts = collide_pts = None
    if pointwise is not None and dense_supervision:
        b, n = pointwise.batch, pointwise.n
        targets = position_targets(pointwise, coords, relative)
        pos_pts = T.reduce_mean(T.reduce_sum(
            T.absolute(T.sub(targets, T.Tensor(gt_pos[:, None, :]))), axis=2))
        rot_pts = _nll(
            _per_point_log_probs(pointwise.rot, b, n, 3, pointwise.rot_bins),
            gt_rot[:, None, :, :], row_axes=(2, 3))
        open_pts = _nll(
            _per_point_log_probs(pointwise.open_logits, b, n, 1, 2),
            gt_open[:, None, None, :], row_axes=(2, 3))
        collide_pts = _nll(
            _per_point_log_probs(pointwise.collide_logits, b, n, 1, 2),
            gt_collide[:, None, None, :], row_axes=(2, 3))

    return _weighted_total(
        {"pos": (pos_agg, pos_pts), "rot": (rot_agg, rot_pts),
         "open": (open_agg, open_pts), "collide": (collide_agg, collide_pts)},
        {"pos": w.alpha_pos, "rot": w.alpha_rot,
         "open": w.alpha_open, "collide": w.alpha_collide})


def keyframe_loss(agg: KeyframePrediction, pointwise: PointwisePrediction | None,
                  gt: KeyframeAction, coords, w: LossWeights,
                  relative: bool = True,
                  dense_supervision: bool = True) -> LossBreakdown:
    """Single-sample keyframe objective (batch size 1)."""
    coords = as_float_array(coords, "coords")
    if coords.ndim == 2:
        coords = coords[None]
    return keyframe_loss_batch(agg, pointwise, [gt], coords, w,
                               relative=relative,
                               dense_supervision=dense_supervision)


def _masked_batch_mean(per_sample: T.Tensor, mask: np.ndarray) -> T.Tensor:
    """Mean of the (B,) tensor over samples where mask is 1."""
    denom = max(1.0, float(mask.sum()))
    return T.mul(T.reduce_sum(T.mul(per_sample, T.Tensor(mask))), 1.0 / denom)


def dense_loss_batch(agg: DensePrediction,
                     pointwise: PointwisePrediction | None,
                     gts: list[DenseAction], coords: np.ndarray,
                     w: LossWeights, relative: bool = True,
                     dense_supervision: bool = True) -> LossBreakdown:
    gt_dpos = np.stack([g.dpos for g in gts])
    gt_drot = np.stack([g.drot for g in gts])
    gt_open = _check_onehot_rows(np.stack([g.open for g in gts]), "open")
    null = np.array([g.null_motion for g in gts], dtype=bool)
    gmag = np.linalg.norm(gt_dpos, axis=1, keepdims=True)
    if np.any((gmag[:, 0] == 0.0) & ~null):
        raise ArgumentError("dense_loss: zero dpos requires the null-motion flag")
    gdir = np.where(null[:, None], 0.0, gt_dpos / np.where(gmag > 0, gmag, 1.0))
    moving = (~null).astype(np.float64)

    dir_agg = _masked_batch_mean(
        T.reduce_mean(T.mul(d := T.sub(agg.direction, T.Tensor(gdir)), d), axis=1),
        moving)
    mag_agg = T.reduce_mean(T.mul(dm := T.sub(agg.magnitude, T.Tensor(gmag)), dm))
    rot_agg = T.reduce_mean(T.mul(dr := T.sub(agg.drot, T.Tensor(gt_drot)), dr))
    open_agg = _cross_entropy(agg.open_probs, gt_open, row_axes=(1,))

    dir_pts = mag_pts = rot_pts = open_pts = reg = None
    if pointwise is not None and dense_supervision:
        b, n = pointwise.batch, pointwise.n
        targets = position_targets(pointwise, coords, relative)
        dirs, _ = unit_directions(targets)
        per_pt = T.reduce_mean(T.mul(
            dd := T.sub(dirs, T.Tensor(gdir[:, None, :])), dd), axis=2)
        dir_pts = _masked_batch_mean(T.reduce_mean(per_pt, axis=1), moving)
        mag_pp = T.reshape(pointwise.magnitude, (b, n, 1))
        mag_pts = T.reduce_mean(T.mul(
            dmp := T.sub(mag_pp, T.Tensor(gmag[:, None, :])), dmp))
        rot_pp = T.reshape(pointwise.rot, (b, n, 3))
        rot_pts = T.reduce_mean(T.mul(
            drp := T.sub(rot_pp, T.Tensor(gt_drot[:, None, :])), drp))
        open_pts = _nll(
            _per_point_log_probs(pointwise.open_logits, b, n, 1, 2),
            gt_open[:, None, None, :], row_axes=(2, 3))
        reg = T.reduce_mean(_smoothness_batch(targets))

    if reg is None:
        reg = T.Tensor(0.0)
    return _weighted_total(
        {"dir": (dir_agg, dir_pts), "mag": (mag_agg, mag_pts),
         "rot": (rot_agg, rot_pts), "open": (open_agg, open_pts),
         "reg": (reg, None)},
        {"dir": w.beta_pos, "mag": w.beta_pos, "rot": w.beta_rot,
         "open": w.beta_open, "reg": w.beta_reg})


def dense_loss(agg: DensePrediction, pointwise: PointwisePrediction | None,
               gt: DenseAction, coords, w: LossWeights, relative: bool = True,
               dense_supervision: bool = True) -> LossBreakdown:
    """Single-sample dense objective (batch size 1)."""
    coords = as_float_array(coords, "coords")
    if coords.ndim == 2:
        coords = coords[None]
    return dense_loss_batch(agg, pointwise, [gt], coords, w,
                            relative=relative,
                            dense_supervision=dense_supervision)


def _smoothness_batch(targets: T.Tensor) -> T.Tensor:
    """Per-sample pairwise consistency penalty on (B, N, 3) position targets.

    The O(N^2) double sum (1/N^2) sum_ij ||x_i - x_j||^2 equals
    (2/N) sum_i ||x_i - mean(x)||^2, which is what is computed here.
    """
    n = targets.shape[1]
    centered = T.sub(targets, T.reduce_mean(targets, axis=1, keepdims=True))
    sq = T.reduce_sum(T.reduce_sum(T.mul(centered, centered), axis=2), axis=1)
    return T.mul(sq, 2.0 / n)


def smoothness_reg(targets) -> T.Tensor:
    """Smoothness penalty for one cloud's (N, 3) position targets."""
    if not isinstance(targets, T.Tensor):
        targets = T.Tensor(targets)
    n = targets.shape[0]
    return T.reshape(_smoothness_batch(T.reshape(targets, (1, n, 3))), ())
