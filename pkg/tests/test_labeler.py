import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swcl.labeler import (
    ABNORMAL,
    NORMAL,
    ClassifierHead,
    LabelerNet,
    S4LConfig,
    batch_hard_triplet,
    compute_cam,
    extract_cams,
    normalize_cam,
    s4l_loss,
    train_labeler,
)
from swcl.nets import TrunkConfig
from swcl.numerics import ShapeError, encode_checkpoint, finite_diff_check
from swcl.synth import SynthConfig, generate_dataset

SMALL = TrunkConfig(channels=(4, 6, 6))


def softplus_oracle(x):
    return math.log1p(math.exp(x))


def triplet_oracle(E, ids, margin):
    """Loop-based batch-hard soft-margin triplet."""
    B = len(E)
    total = 0.0
    for a in range(B):
        d = [math.dist(E[a], E[k]) for k in range(B)]
        dp = max(d[k] for k in range(B) if k != a and ids[k] == ids[a])
        dn = min(d[k] for k in range(B) if ids[k] != ids[a])
        total += softplus_oracle(dp - dn + margin)
    return total / B


def ce_oracle(logits, targets):
    total = 0.0
    for row, t in zip(logits, targets):
        lse = math.log(math.fsum(math.exp(v) for v in row))
        total += lse - row[t]
    return total / len(targets)


class TestTriplet:
    def test_identical_embeddings(self):
        loss, _ = batch_hard_triplet(np.zeros((4, 3)), [0, 0, 1, 1], 0.5)
        assert loss == pytest.approx(0.9741, abs=1e-4)
        assert loss == pytest.approx(math.log1p(math.exp(0.5)), abs=1e-6)

    def test_separated_clusters(self):
        E = np.array([[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 0.0]])
        loss, _ = batch_hard_triplet(E, [0, 0, 1, 1], 0.5)
        assert loss == pytest.approx(7.5e-5, rel=0.01)
        assert loss < 1e-3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        E = rng.normal(size=(8, 3))
        ids = np.repeat(np.arange(4), 2)
        perm = rng.permutation(8)
        a, _ = batch_hard_triplet(E, ids, 0.5)
        b, _ = batch_hard_triplet(E[perm], ids[perm], 0.5)
        assert a == pytest.approx(b, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        E = rng.normal(size=(9, 4))
        ids = [0, 0, 0, 1, 1, 2, 2, 3, 3]
        loss, _ = batch_hard_triplet(E, ids, 0.5)
        # the implementation adds 1e-12 under the square root
        assert loss == pytest.approx(triplet_oracle(E.tolist(), ids, 0.5), abs=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        E = rng.normal(size=(8, 3))
        ids = np.repeat(np.arange(4), 2)
        for form in ("softplus-margin", "hinge"):
            def f(p):
                loss, d = batch_hard_triplet(p["e"], ids, 0.5, form)
                return loss, {"e": d}

            assert finite_diff_check(f, {"e": E}, extended=True) < 1e-5

    def test_hinge_zero_when_separated(self):
        E = np.array([[0.0], [0.0], [10.0], [10.0]])
        assert batch_hard_triplet(E, [0, 0, 1, 1], 0.5, "hinge")[0] == 0.0

    def test_single_id_rejected(self):
        with pytest.raises(ValueError, match="two distinct"):
            batch_hard_triplet(np.zeros((3, 2)), [7, 7, 7])

    def test_lonely_anchor_named(self):
        with pytest.raises(ValueError, match="'b'"):
            batch_hard_triplet(np.zeros((3, 2)), ["a", "a", "b"])


class TestS4L:
    @pytest.fixture
    def batch(self):
        rng = np.random.default_rng(21)
        net = LabelerNet.init(SMALL, rng, embed_dim=4)
        for k in net.params:
            if k.endswith("bias"):
                net.params[k] = rng.normal(0, 0.1, size=net.params[k].shape)
        x = rng.uniform(0, 1, size=(8, 3, 16, 16))
        targets = np.array([0, 0, 1, 1, -1, -1, -1, -1])
        ids = np.repeat(np.arange(4), 2)
        return net, x, targets, ids

    def test_w_zero_is_cross_entropy(self, batch):
        net, x, targets, ids = batch
        loss, _, parts = s4l_loss(net, x, targets, ids, S4LConfig(w=0.0, trunk=SMALL))
        _, _, logits, _ = net.forward(x)
        assert loss == parts["ce"]
        assert loss == pytest.approx(ce_oracle(logits[:4].tolist(), [0, 0, 1, 1]), abs=1e-12)

    def test_componentwise_oracle(self, batch):
        net, x, targets, ids = batch
        loss, _, _ = s4l_loss(net, x, targets, ids, S4LConfig(w=1.0, trunk=SMALL))
        _, _, logits, cache = net.forward(x)
        e = net.embed(cache)
        e = e / np.linalg.norm(e, axis=1, keepdims=True)
        expect = ce_oracle(logits[:4].tolist(), [0, 0, 1, 1]) + triplet_oracle(e.tolist(), ids.tolist(), 0.5)
        assert abs(loss - expect) < 1e-10

    @pytest.mark.parametrize("w", [0.0, 0.5, 1.0])
    def test_gradient(self, batch, w):
        net, x, targets, ids = batch
        cfg = S4LConfig(w=w, trunk=SMALL)

        def f(p):
            loss, grads, _ = s4l_loss(net, x, targets, ids, cfg, p)
            return loss, grads

        assert finite_diff_check(f, net.params, extended=True) < 1e-5

    def test_needs_labeled(self, batch):
        net, x, _, ids = batch
        with pytest.raises(ValueError, match="labeled"):
            s4l_loss(net, x, np.full(8, -1), ids, S4LConfig(trunk=SMALL))

    def test_single_image_rejected(self, batch):
        net, x, targets, _ = batch
        with pytest.raises(ValueError):
            s4l_loss(net, x, targets, np.zeros(8, dtype=int), S4LConfig(trunk=SMALL))

    @pytest.mark.parametrize("kwargs", [{"views_per_image": 1}, {"w": -1.0}, {"triplet_formulation": "x"}])
    def test_config_rejected(self, kwargs):
        with pytest.raises(ValueError):
            S4LConfig(**kwargs)


class TestCam:
    def test_weighted_sum_example(self):
        f = np.array([[[1.0, 2.0], [3.0, 4.0]], [[0.0, 1.0], [1.0, 0.0]]])
        cam = compute_cam(f, np.array([[0.5, -1.0]]), 0)
        np.testing.assert_allclose(cam, [[0.5, 0.0], [0.5, 2.0]], atol=1e-12, rtol=0)

    def test_zero_weights(self):
        f = np.random.default_rng(0).normal(size=(3, 4, 4))
        np.testing.assert_array_equal(compute_cam(f, np.zeros((2, 3)), 1), 0.0)

    def test_single_map_identity(self):
        f = np.random.default_rng(1).normal(size=(1, 5, 5))
        np.testing.assert_array_equal(compute_cam(f, np.ones((1, 1)), 0), f[0])

    def test_bias_ignored(self):
        f = np.random.default_rng(2).normal(size=(3, 4, 4))
        w = np.random.default_rng(3).normal(size=(2, 3))
        a = compute_cam(f, ClassifierHead(w, np.zeros(2)), 1)
        b = compute_cam(f, ClassifierHead(w, np.array([5.0, -5.0])), 1)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(6, 8, 8))
        w = rng.normal(size=(2, 6))
        expect = np.einsum("k,kij->ij", w[1], f)
        np.testing.assert_allclose(compute_cam(f, w, 1), expect, atol=1e-12, rtol=0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear_in_weights(self, seed, alpha, beta):
        rng = np.random.default_rng(seed)
        f = rng.normal(size=(4, 5, 5))
        w1, w2 = rng.normal(size=(2, 2, 4))
        lhs = compute_cam(f, alpha * w1 + beta * w2, 0)
        rhs = alpha * compute_cam(f, w1, 0) + beta * compute_cam(f, w2, 0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            compute_cam(np.zeros((3, 4, 4)), np.zeros((2, 4)), 0)

    def test_argmax_agrees_with_mean_cam(self):
        rng = np.random.default_rng(4)
        net = LabelerNet.init(TrunkConfig(), rng)
        x = rng.uniform(0, 1, size=(20, 3, 64, 64))
        _, _, logits, _ = net.forward(x)
        for f, row in zip(net.feature_maps(x), logits):
            means = [compute_cam(f, net.head, c).mean() for c in (NORMAL, ABNORMAL)]
            np.testing.assert_allclose(means, row, atol=1e-12)
            assert int(np.argmax(means)) == int(np.argmax(row))


class TestNormalizeCam:
    def test_equal_maps(self):
        m = np.random.default_rng(0).normal(size=(4, 4))
        np.testing.assert_array_equal(normalize_cam(m, m), 0.5)

    def test_unit_gap(self):
        out = normalize_cam(np.array([[1.0]]), np.array([[0.0]]))
        assert out[0, 0] == pytest.approx(0.73106, abs=1e-5)

    @pytest.mark.parametrize("seed", range(10))
    def test_sum_to_one_and_shift(self, seed):
        rng = np.random.default_rng(seed)
        a, n = rng.normal(scale=5, size=(2, 8, 8))
        c = rng.normal(scale=100)
        pa = normalize_cam(a, n)
        assert np.abs(pa + normalize_cam(n, a) - 1).max() <= 1e-12
        assert np.abs(normalize_cam(a + c, n + c) - pa).max() <= 1e-12
        assert ((pa > 0) & (pa < 1)).all()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            normalize_cam(np.zeros((2, 2)), np.zeros((3, 3)))


@pytest.fixture(scope="module")
def records():
    return generate_dataset(SynthConfig(n_patients_labeled=200, n_patients_unlabeled=0))


class TestTraining:
    def test_untrained_auc_near_chance(self, records):
        # single untrained nets scatter around 0.5; the mean over inits is the statistic
        aucs = [train_labeler(records, [], S4LConfig(epochs=0, seed=s, holdout_frac=0.5)).holdout_auc
                for s in range(6)]
        assert abs(np.mean(aucs) - 0.5) <= 0.1

    def test_same_seed_same_checkpoint(self):
        recs = generate_dataset(SynthConfig(n_patients_labeled=8, n_patients_unlabeled=4))
        lab = [r for r in recs if r.split == "labeled"]
        unl = [r for r in recs if r.split == "unlabeled"]
        cfg = S4LConfig(epochs=1, batch_labeled=4, batch_unlabeled=4)
        a = train_labeler(lab, unl, cfg)
        b = train_labeler(lab, unl, cfg)
        assert encode_checkpoint(a.net.params) == encode_checkpoint(b.net.params)
        assert a.history == b.history

    def test_holdout_split_by_patient(self, records):
        res = train_labeler(records[:40], [], S4LConfig(epochs=0))
        held = {i.rsplit("-", 1)[0] for i in res.holdout_ids}
        assert len(res.holdout_ids) == 2 * len(held)

    def test_unlabeled_truth_never_read(self):
        recs = generate_dataset(SynthConfig(n_patients_labeled=8, n_patients_unlabeled=4))
        lab = [r for r in recs if r.split == "labeled"]
        unl = [r for r in recs if r.split == "unlabeled"]
        scrambled = [type(r)(**{**r.__dict__, "gt_label": "garbage", "gt_lesion_mask": None}) for r in unl]
        cfg = S4LConfig(epochs=1, batch_labeled=4, batch_unlabeled=4)
        a = train_labeler(lab, unl, cfg)
        b = train_labeler(lab, scrambled, cfg)
        assert encode_checkpoint(a.net.params) == encode_checkpoint(b.net.params)

    def test_cams_per_image(self):
        recs = generate_dataset(SynthConfig(n_patients_labeled=2, n_patients_unlabeled=0))
        net = LabelerNet.init(TrunkConfig(), np.random.default_rng(0))
        cams = extract_cams(net, recs)
        assert sorted(cams) == sorted(r.image_id for r in recs)
        assert all(c.shape == (8, 8) and ((c > 0) & (c < 1)).all() for c in cams.values())

    @pytest.mark.slow
    def test_desk_scale_auc(self):
        recs = generate_dataset(SynthConfig(n_patients_labeled=100, n_patients_unlabeled=400))
        res = train_labeler([r for r in recs if r.split == "labeled"],
                            [r for r in recs if r.split == "unlabeled"], S4LConfig(epochs=30))
        assert res.holdout_auc >= 0.9
