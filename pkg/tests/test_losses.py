import numpy as np
import pytest

from pointpolicy import tensor as T
from pointpolicy.errors import ArgumentError, ConfigError
from pointpolicy.losses import (LossWeights, dense_loss, keyframe_loss,
                                smoothness_reg)
from pointpolicy.policy import (DenseAction, KeyframeAction, aggregate_dense,
                                aggregate_keyframe)

from test_policy import make_pred

BINS = 8
W = LossWeights()


def np_softmax(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def keyframe_oracle(coords, delta, rot, open_logits, collide, weights, gt, w):
    """Straight-line numpy recomputation of the keyframe objective."""
    n = coords.shape[0]
    targets = coords + delta
    out = {}
    for name, logits, gt_block, blocks in [
            ("rot", rot.reshape(n, 3, BINS), gt.rot, 3),
            ("open", open_logits.reshape(n, 1, 2), gt.open.reshape(1, 2), 1),
            ("collide", collide.reshape(n, 1, 2), gt.collide.reshape(1, 2), 1)]:
        probs = np_softmax(logits, axis=2)
        wv = np_softmax(weights[name][:, 0], axis=0)
        agg = (probs * wv[:, None, None]).sum(axis=0)
        agg_ce = -(gt_block * np.log(agg)).sum()
        pts_ce = np.mean([-(gt_block * np.log(probs[i])).sum() for i in range(n)])
        out[name] = (agg_ce, pts_ce)
    wpos = np_softmax(weights["pos"][:, 0], axis=0)
    pos = (targets * wpos[:, None]).sum(axis=0)
    out["pos"] = (np.abs(pos - gt.pos).sum(),
                  np.mean(np.abs(targets - gt.pos).sum(axis=1)))
    total = (w.alpha_pos * sum(out["pos"]) + w.alpha_rot * sum(out["rot"])
             + w.alpha_open * sum(out["open"]) + w.alpha_collide * sum(out["collide"]))
    return total, out


def dense_oracle(coords, delta, drot, open_logits, mag, weights, gt, w):
    """Straight-line numpy recomputation of the dense objective."""
    n = coords.shape[0]
    targets = coords + delta
    norms = np.linalg.norm(targets, axis=1, keepdims=True)
    dirs = np.where(norms >= 1e-9, targets / np.where(norms > 0, norms, 1.0), 0.0)
    gmag = np.linalg.norm(gt.dpos)
    gdir = np.zeros(3) if gt.null_motion else gt.dpos / gmag

    wdir = np_softmax(weights["dir"][:, 0], axis=0)
    vec = (dirs * wdir[:, None]).sum(axis=0)
    vnorm = np.linalg.norm(vec)
    agg_dir = vec / vnorm if vnorm >= 1e-9 else np.zeros(3)
    dir_agg = 0.0 if gt.null_motion else np.mean((agg_dir - gdir) ** 2)
    dir_pts = 0.0 if gt.null_motion else np.mean(
        [np.mean((dirs[i] - gdir) ** 2) for i in range(n)])

    wmag = np_softmax(weights["mag"][:, 0], axis=0)
    agg_mag = (mag[:, 0] * wmag).sum()
    mag_agg = (agg_mag - gmag) ** 2
    mag_pts = np.mean((mag[:, 0] - gmag) ** 2)

    wrot = np_softmax(weights["rot"][:, 0], axis=0)
    agg_rot = (drot * wrot[:, None]).sum(axis=0)
    rot_agg = np.mean((agg_rot - gt.drot) ** 2)
    rot_pts = np.mean([np.mean((drot[i] - gt.drot) ** 2) for i in range(n)])

    probs = np_softmax(open_logits, axis=1)
    wopen = np_softmax(weights["open"][:, 0], axis=0)
    agg_open = (probs * wopen[:, None]).sum(axis=0)
    open_agg = -(gt.open * np.log(agg_open)).sum()
    open_pts = np.mean([-(gt.open * np.log(probs[i])).sum() for i in range(n)])

    reg = np.mean([((targets[i] - targets[j]) ** 2).sum()
                   for i in range(n) for j in range(n)])
    total = (w.beta_pos * (dir_agg + dir_pts + mag_agg + mag_pts)
             + w.beta_rot * (rot_agg + rot_pts)
             + w.beta_open * (open_agg + open_pts) + w.beta_reg * reg)
    return total


def keyframe_gt(rng):
    return KeyframeAction.build(pos=rng.uniform(size=3),
                                euler_deg=rng.uniform(-180, 180, size=3),
                                open_state=int(rng.integers(2)),
                                collide=int(rng.integers(2)), bin_deg=45.0)


class TestKeyframeLoss:
    def test_perfect_agreement_is_zero(self, rng):
        n = 6
        coords = rng.uniform(size=(n, 3))
        gt = keyframe_gt(rng)
        big = 45.0
        rot = np.tile((gt.rot * big).reshape(1, -1), (n, 1))
        pred = make_pred("keyframe", delta=gt.pos - coords,
                         weights={c: np.zeros((n, 1)) for c in
                                  ("pos", "rot", "open", "collide")},
                         rot=rot, open_logits=np.tile(gt.open * big, (n, 1)),
                         collide=np.tile(gt.collide * big, (n, 1)))
        agg = aggregate_keyframe(pred, coords)
        out = keyframe_loss(agg, pred, gt, coords, W)
        assert out.terms["pos"]["aggregated"] == pytest.approx(0.0, abs=1e-12)
        assert out.terms["pos"]["points"] == pytest.approx(0.0, abs=1e-12)
        for term in ("rot", "open", "collide"):
            assert out.terms[term]["aggregated"] <= 1e-8
            assert out.terms[term]["points"] <= 1e-8

    def test_single_point_terms_double(self, rng):
        coords = rng.uniform(size=(1, 3))
        gt = keyframe_gt(rng)
        pred = make_pred("keyframe", delta=rng.normal(size=(1, 3)),
                         weights={c: rng.normal(size=(1, 1)) for c in
                                  ("pos", "rot", "open", "collide")},
                         rot=rng.normal(size=(1, 24)),
                         open_logits=rng.normal(size=(1, 2)),
                         collide=rng.normal(size=(1, 2)))
        agg = aggregate_keyframe(pred, coords)
        out = keyframe_loss(agg, pred, gt, coords, W)
        for term, parts in out.terms.items():
            assert parts["aggregated"] == pytest.approx(parts["points"], rel=1e-10)

    def test_matches_independent_recomputation(self):
        for trial in range(10):
            r = np.random.default_rng(400 + trial)
            n = int(r.integers(2, 9))
            coords = r.uniform(size=(n, 3))
            delta = r.normal(size=(n, 3))
            rot = r.normal(size=(n, 24))
            open_logits = r.normal(size=(n, 2))
            collide = r.normal(size=(n, 2))
            weights = {c: r.normal(size=(n, 1)) for c in
                       ("pos", "rot", "open", "collide")}
            gt = keyframe_gt(r)
            pred = make_pred("keyframe", delta=delta, weights=weights, rot=rot,
                             open_logits=open_logits, collide=collide)
            agg = aggregate_keyframe(pred, coords)
            out = keyframe_loss(agg, pred, gt, coords, W)
            want, _ = keyframe_oracle(coords, delta, rot, open_logits, collide,
                                      weights, gt, W)
            assert out.total_value == pytest.approx(want, abs=1e-10)

    def test_translation_invariance(self, rng):
        n = 7
        coords = rng.uniform(size=(n, 3))
        delta = rng.normal(size=(n, 3))
        weights = {c: rng.normal(size=(n, 1)) for c in
                   ("pos", "rot", "open", "collide")}
        gt = keyframe_gt(rng)
        t = np.array([2.0, -1.0, 0.5])

        def value(c, g):
            pred = make_pred("keyframe", delta=delta, weights=weights,
                             rot=np.zeros((n, 24)))
            agg = aggregate_keyframe(pred, c)
            return keyframe_loss(agg, pred, g, c, W).total_value

        gt2 = KeyframeAction(pos=gt.pos + t, rot=gt.rot, open=gt.open,
                             collide=gt.collide)
        assert value(coords, gt) == pytest.approx(value(coords + t, gt2), abs=1e-9)

    def test_bad_gt_block_rejected(self, rng):
        n = 4
        coords = rng.uniform(size=(n, 3))
        gt = keyframe_gt(rng)
        gt.rot = gt.rot * 0.5  # no longer one-hot
        pred = make_pred("keyframe", delta=np.zeros((n, 3)),
                         weights={c: np.zeros((n, 1)) for c in
                                  ("pos", "rot", "open", "collide")})
        agg = aggregate_keyframe(pred, coords)
        with pytest.raises(ArgumentError):
            keyframe_loss(agg, pred, gt, coords, W)

    def test_total_reassembles_from_parts(self, rng):
        n = 5
        coords = rng.uniform(size=(n, 3))
        gt = keyframe_gt(rng)
        pred = make_pred("keyframe", delta=rng.normal(size=(n, 3)),
                         weights={c: rng.normal(size=(n, 1)) for c in
                                  ("pos", "rot", "open", "collide")},
                         rot=rng.normal(size=(n, 24)))
        agg = aggregate_keyframe(pred, coords)
        out = keyframe_loss(agg, pred, gt, coords, W)
        assert out.total_value == pytest.approx(out.reassembled(), abs=1e-10)


class TestDenseLoss:
    def _weights(self, n, rng=None):
        return {c: (np.zeros((n, 1)) if rng is None else rng.normal(size=(n, 1)))
                for c in ("dir", "mag", "rot", "open")}

    def test_perfect_prediction_zero(self, rng):
        n = 5
        coords = rng.uniform(size=(n, 3)) + 0.2
        gt = DenseAction(dpos=[0.0, 0.0, 0.1], drot=np.zeros(3),
                         open=np.array([0.0, 1.0]))
        target = np.array([0.0, 0.0, 1.0])  # unit direction toward gt
        pred = make_pred("dense", delta=target - coords,
                         weights=self._weights(n),
                         magnitude=np.full((n, 1), 0.1),
                         open_logits=np.tile(gt.open * 45.0, (n, 1)))
        agg = aggregate_dense(pred, coords)
        out = dense_loss(agg, pred, gt, coords, W)
        for term in ("dir", "mag", "rot", "reg"):
            assert out.terms[term]["aggregated"] == pytest.approx(0.0, abs=1e-12)
            assert out.terms[term]["points"] == pytest.approx(0.0, abs=1e-12)
        assert out.terms["open"]["aggregated"] <= 1e-8

    def test_magnitude_mse_example(self, rng):
        n = 6
        coords = rng.uniform(size=(n, 3)) + 0.2
        gt = DenseAction(dpos=[0.0, 0.0, 0.1], drot=np.zeros(3),
                         open=np.array([0.0, 1.0]))
        pred = make_pred("dense", delta=rng.normal(size=(n, 3)),
                         weights=self._weights(n),
                         magnitude=np.full((n, 1), 0.3))
        agg = aggregate_dense(pred, coords)
        out = dense_loss(agg, pred, gt, coords, W)
        assert out.terms["mag"]["aggregated"] == pytest.approx(0.04, abs=1e-12)
        assert out.terms["mag"]["points"] == pytest.approx(0.04, abs=1e-12)

    def test_matches_independent_recomputation(self):
        for trial in range(10):
            r = np.random.default_rng(600 + trial)
            n = int(r.integers(2, 9))
            coords = r.uniform(size=(n, 3)) + 0.1
            delta = r.normal(scale=0.3, size=(n, 3))
            drot = r.normal(scale=0.1, size=(n, 3))
            open_logits = r.normal(size=(n, 2))
            mag = r.uniform(0.01, 0.4, size=(n, 1))
            weights = self._weights(n, r)
            gt = DenseAction(dpos=r.normal(scale=0.1, size=3),
                             drot=r.normal(scale=0.05, size=3),
                             open=np.eye(2)[int(r.integers(2))])
            pred = make_pred("dense", delta=delta, weights=weights,
                             magnitude=mag, rot=drot, open_logits=open_logits)
            agg = aggregate_dense(pred, coords)
            out = dense_loss(agg, pred, gt, coords, W)
            want = dense_oracle(coords, delta, drot, open_logits, mag,
                                weights, gt, W)
            assert out.total_value == pytest.approx(want, abs=1e-10)

    def test_null_motion_skips_direction(self, rng):
        n = 4
        coords = rng.uniform(size=(n, 3)) + 0.2
        gt = DenseAction(dpos=np.zeros(3), drot=np.zeros(3),
                         open=np.array([1.0, 0.0]), null_motion=True)
        pred = make_pred("dense", delta=rng.normal(size=(n, 3)),
                         weights=self._weights(n, rng),
                         magnitude=np.full((n, 1), 0.2))
        agg = aggregate_dense(pred, coords)
        out = dense_loss(agg, pred, gt, coords, W)
        assert out.terms["dir"]["aggregated"] == 0.0
        assert out.terms["dir"]["points"] == 0.0
        assert out.terms["mag"]["aggregated"] == pytest.approx(0.04, abs=1e-12)

    def test_zero_dpos_without_flag_rejected(self, rng):
        n = 3
        coords = rng.uniform(size=(n, 3)) + 0.2
        gt = DenseAction(dpos=np.zeros(3), drot=np.zeros(3),
                         open=np.array([1.0, 0.0]))
        pred = make_pred("dense", delta=np.ones((n, 3)),
                         weights=self._weights(n),
                         magnitude=np.zeros((n, 1)))
        agg = aggregate_dense(pred, coords)
        with pytest.raises(ArgumentError):
            dense_loss(agg, pred, gt, coords, W)


class TestSmoothness:
    def test_identical_targets_zero(self):
        x = np.tile([0.2, 0.3, 0.4], (7, 1))
        assert float(smoothness_reg(x).data) == pytest.approx(0.0, abs=1e-30)

    def test_two_point_example(self):
        d = 0.8
        x = np.array([[0.0, 0, 0], [d, 0, 0]])
        assert float(smoothness_reg(x).data) == pytest.approx(d * d / 2.0, abs=1e-15)

    def test_matches_bruteforce_double_sum(self):
        for trial in range(100):
            r = np.random.default_rng(800 + trial)
            n = int(r.integers(1, 65))
            x = r.normal(size=(n, 3))
            brute = sum(((x[i] - x[j]) ** 2).sum()
                        for i in range(n) for j in range(n)) / (n * n)
            fast = float(smoothness_reg(x).data)
            assert fast == pytest.approx(brute, rel=1e-9, abs=1e-12)
            assert fast >= 0.0

    def test_gradient_reaches_all_targets(self, rng):
        tape = T.Tape()
        x = tape.leaf(rng.normal(size=(5, 3)))
        T.backward(smoothness_reg(x))
        assert (np.abs(x.grad) > 0).any(axis=1).all()

    def test_nonnegative_and_zero_iff_identical(self, rng):
        x = rng.normal(size=(6, 3))
        assert float(smoothness_reg(x).data) > 0
        spread = x - x.mean(axis=0)
        tight = x.mean(axis=0) + spread * 1e-13
        assert float(smoothness_reg(tight).data) <= 1e-12


class TestLossWeights:
    def test_paper_defaults(self):
        w = LossWeights()
        assert (w.alpha_pos, w.alpha_rot, w.alpha_open, w.alpha_collide) == \
            (300.0, 1.0, 1.0, 1.0)
        assert (w.beta_pos, w.beta_rot, w.beta_open, w.beta_reg) == \
            (10.0, 1.0, 1.0, 0.3)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(alpha_pos=-1.0)
