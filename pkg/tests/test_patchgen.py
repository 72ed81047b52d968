import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swcl.patchgen import (
    POSITIONS,
    abnormal_counts,
    align_flip,
    build_dataset,
    cam_crops,
    crop_anchors,
    five_crop,
    read_patches,
    relabel,
    score_patch,
    threshold_label,
    write_patches,
)
from swcl.synth import SynthConfig, generate_dataset, mirror_check


@pytest.fixture(scope="module")
def images():
    return generate_dataset(SynthConfig(n_patients_labeled=4, n_patients_unlabeled=4, seed=5))


@pytest.fixture(scope="module")
def cams(images):
    rng = np.random.default_rng(0)
    return {r.image_id: rng.uniform(0.05, 0.95, size=(8, 8)) for r in images}


class TestFiveCrop:
    def test_anchors_64_32(self):
        assert crop_anchors(64, 32) == {"tl": (0, 0), "tr": (0, 32), "c": (16, 16), "bl": (32, 0), "br": (32, 32)}

    def test_odd_center_floors(self):
        assert crop_anchors(10, 5)["c"] == (2, 2)

    def test_full_size(self):
        img = np.random.default_rng(0).uniform(size=(3, 8, 8))
        for crop in five_crop(img, 8).values():
            np.testing.assert_array_equal(crop, img)

    def test_positions_order(self):
        assert tuple(five_crop(np.zeros((3, 8, 8)), 4)) == POSITIONS

    def test_too_large(self):
        with pytest.raises(ValueError):
            five_crop(np.zeros((3, 8, 8)), 9)

    @pytest.mark.parametrize("S", [32, 48, 64])
    def test_corners_tile_once(self, S):
        cover = np.zeros((S, S), dtype=int)
        for pos, (r, c) in crop_anchors(S, S // 2).items():
            if pos != "c":
                cover[r : r + S // 2, c : c + S // 2] += 1
        assert (cover == 1).all()

    def test_cam_crop_anchors_scale(self):
        cam = np.arange(64.0).reshape(8, 8)
        crops = cam_crops(cam, 64, 32)
        np.testing.assert_array_equal(crops["tl"], cam[:4, :4])
        np.testing.assert_array_equal(crops["c"], cam[2:6, 2:6])
        np.testing.assert_array_equal(crops["br"], cam[4:, 4:])


class TestAlignFlip:
    def test_left_identity(self, images):
        left = images[0]
        cam = np.random.default_rng(0).uniform(size=(8, 8))
        pix, c, m = align_flip(left, cam)
        assert pix is left.pixels and c is cam and m is left.gt_lesion_mask

    def test_involution(self, images):
        right = images[1]
        cam = np.random.default_rng(1).uniform(size=(8, 8))
        pix, c, m = align_flip(right, cam)
        twice = type(right)(**{**right.__dict__, "pixels": pix, "gt_lesion_mask": m})
        pix2, c2, _ = align_flip(twice, c)
        np.testing.assert_array_equal(pix2, right.pixels)
        np.testing.assert_array_equal(c2, cam)

    def test_flipped_right_template_is_left(self, images):
        left, right = images[0], images[1]
        assert mirror_check(left, right)
        np.testing.assert_array_equal(right.template[..., ::-1], left.template)


class TestScore:
    def test_uniform(self):
        assert score_patch(np.full((4, 4), 0.3)) == pytest.approx(0.3, abs=1e-15)

    def test_mean(self):
        assert score_patch(np.array([[0.2, 0.4], [0.6, 0.8]])) == pytest.approx(0.5, abs=1e-15)

    def test_labeled_normal_override(self):
        assert score_patch(np.full((4, 4), 0.9), "normal", "labeled") == 0.0

    @pytest.mark.parametrize("label,split", [("abnormal", "labeled"), ("normal", "unlabeled"), ("abnormal", "unlabeled")])
    def test_no_override_otherwise(self, label, split):
        assert score_patch(np.full((2, 2), 0.7), label, split) == pytest.approx(0.7)

    def test_empty(self):
        with pytest.raises(ValueError):
            score_patch(np.zeros((0, 0)))


class TestThreshold:
    def test_inclusive_boundary(self):
        assert threshold_label(0.4, 0.4) == "abnormal"
        assert threshold_label(np.nextafter(0.4, 0.0), 0.4) == "normal"

    @pytest.mark.parametrize("t", [0.1, 0.5, 1.0])
    def test_zero_is_normal(self, t):
        assert threshold_label(0.0, t) == "normal"

    @pytest.mark.parametrize("score,t", [(-0.1, 0.4), (1.1, 0.4), (0.5, -0.01), (0.5, 1.5), (float("nan"), 0.4)])
    def test_out_of_range(self, score, t):
        with pytest.raises(ValueError):
            threshold_label(score, t)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=200))
    def test_counts_monotone(self, scores):
        counts = abnormal_counts(scores, [i / 10 for i in range(11)])
        assert all(a >= b for a, b in zip(counts, counts[1:]))
        assert counts[0] == len(scores)


class TestBuild:
    def test_cardinality_and_order(self, images, cams):
        m = build_dataset(images, cams, 0.4, 32)
        assert len(m) == 5 * len(images)
        ids = [(r.image_id, r.position) for r in m.records]
        assert ids == [(r.image_id, p) for r in sorted(images, key=lambda r: r.image_id) for p in POSITIONS]

    def test_records_consistent(self, images, cams):
        m = build_dataset(images, cams, 0.4, 32)
        for r in m.records:
            assert r.pixels.shape == (3, 32, 32)
            assert 0.0 <= r.lesion_score <= 1.0
            assert r.is_abnormal == (r.lesion_score >= 0.4)
            if r.lesion_score != 0.0:
                assert abs(r.cam_crop.mean() - r.lesion_score) <= 1e-12

    def test_override_applied(self, images, cams):
        m = build_dataset(images, cams, 0.4, 32)
        src = {r.image_id: r for r in images}
        for r in m.records:
            s = src[r.image_id]
            assert (r.lesion_score == 0.0) == (s.split == "labeled" and s.gt_label == "normal")

    def test_all_labeled_normal_in_first_bin(self, cams):
        normals = generate_dataset(SynthConfig(n_patients_labeled=4, n_patients_unlabeled=0, lesion_rate=0.0, seed=5))
        m = build_dataset(normals, cams, 0.4, 32)
        assert m.histogram[0][2] == len(m) and sum(h[2] for h in m.histogram) == len(m)
        assert m.histogram[0][:2] == (0.0, 0.1)

    def test_missing_cam_lists_ids(self, images, cams):
        partial = {k: v for k, v in cams.items() if k not in (images[0].image_id, images[3].image_id)}
        with pytest.raises(KeyError, match=f"{images[0].image_id}.*{images[3].image_id}"):
            build_dataset(images, partial, 0.4, 32)

    def test_monotone_over_thresholds(self, images, cams):
        m = build_dataset(images, cams, 0.4, 32)
        counts = [sum(r.is_abnormal for r in relabel(m, i / 10).records) for i in range(11)]
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_flip_consistency(self, images, cams):
        # a lesion mask mirrored between the eyes lands at the same position after alignment
        left, right = images[0], images[1]
        assert left.laterality == "left" and right.laterality == "right"
        mask = np.zeros((64, 64))
        mask[5:9, 40:44] = 1.0
        l2 = type(left)(**{**left.__dict__, "gt_lesion_mask": mask})
        r2 = type(right)(**{**right.__dict__, "gt_lesion_mask": mask[:, ::-1].copy()})
        m = build_dataset([l2, r2], {l2.image_id: cams[left.image_id], r2.image_id: cams[right.image_id]}, 0.4, 32)
        hits = {(r.laterality, r.position) for r in m.records if r.gt_patch_abnormal}
        assert hits == {("left", "tr"), ("right", "tr")}

    def test_flipped_templates_crop_identically(self, images):
        left, right = images[0], images[1]
        lc = five_crop(left.template, 32)
        rc = five_crop(right.template[..., ::-1], 32)
        for pos in POSITIONS:
            np.testing.assert_array_equal(lc[pos], rc[pos])

    def test_deterministic(self, images, cams):
        a = build_dataset(images, cams, 0.4, 32)
        b = build_dataset(list(reversed(images)), dict(reversed(list(cams.items()))), 0.4, 32)
        assert [r.meta() for r in a.records] == [r.meta() for r in b.records]
        assert a.source_hash == b.source_hash


class TestPatchIO:
    def test_round_trip(self, images, cams, tmp_path):
        m = build_dataset(images, cams, 0.4, 32)
        write_patches(m, tmp_path)
        back = read_patches(tmp_path)
        assert back.threshold == 0.4 and back.patch_side == 32 and back.source_hash == m.source_hash
        assert [r.meta() for r in back.records] == [r.meta() for r in m.records]
        assert back.histogram == m.histogram
        np.testing.assert_allclose(back.records[7].pixels, m.records[7].pixels, atol=1e-7)
        lines = (tmp_path / "histogram.csv").read_text().splitlines()
        assert lines[0] == "bin_start,bin_end,count" and len(lines) == 11
