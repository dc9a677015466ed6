"""Synthetic benchmark generator: determinism, splits, collisions."""

import numpy as np
import pytest

from attnpyr.data import (
    SyntheticIdentitySpec,
    load_dataset,
    save_dataset,
    synth_generate,
    with_query_occlusion,
)

SMALL = SyntheticIdentitySpec(
    num_train_identities=4,
    num_test_identities=4,
    samples_per_identity=4,
    query_per_identity=2,
    gallery_per_identity=2,
)


class TestDeterminism:
    def test_same_seed_byte_identical(self):
        a = synth_generate(SMALL, 123)
        b = synth_generate(SMALL, 123)
        for split in ("train", "query", "gallery"):
            sa, sb = getattr(a, split), getattr(b, split)
            assert sa.images.tobytes() == sb.images.tobytes()
            assert np.array_equal(sa.ids, sb.ids)
            assert np.array_equal(sa.cams, sb.cams)

    def test_different_seed_differs(self):
        a = synth_generate(SMALL, 1)
        b = synth_generate(SMALL, 2)
        assert a.train.images.tobytes() != b.train.images.tobytes()

    def test_zero_nuisance_makes_identity_samples_identical(self):
        spec = SyntheticIdentitySpec(
            num_train_identities=4,
            num_test_identities=4,
            samples_per_identity=4,
            query_per_identity=2,
            gallery_per_identity=2,
            jitter=0,
            brightness_lo=1.0,
            brightness_hi=1.0,
            flip_prob=0.0,
            occlusion_prob=0.0,
        )
        ds = synth_generate(spec, 0)
        for ident in np.unique(ds.train.ids):
            imgs = ds.train.images[ds.train.ids == ident]
            for i in range(1, len(imgs)):
                assert np.array_equal(imgs[0], imgs[i])


class TestStructure:
    def test_split_sizes_and_disjoint_identities(self):
        ds = synth_generate(SMALL, 7)
        assert len(ds.train.ids) == 16
        assert len(ds.query.ids) == 8
        assert len(ds.gallery.ids) == 8
        train_set = set(ds.train.ids.tolist())
        test_set = set(ds.query.ids.tolist()) | set(ds.gallery.ids.tolist())
        assert train_set.isdisjoint(test_set)
        assert set(ds.query.ids.tolist()) == set(ds.gallery.ids.tolist())

    def test_cameras_binary_and_every_query_has_valid_match(self):
        ds = synth_generate(SMALL, 9)
        for split in ("train", "query", "gallery"):
            assert set(getattr(ds, split).cams.tolist()) <= {0, 1}
        for i, (qid, qcam) in enumerate(zip(ds.query.ids, ds.query.cams)):
            valid = (ds.gallery.ids == qid) & (ds.gallery.cams != qcam)
            assert valid.any(), f"query {i} has no cross-camera match"

    def test_coarse_collision_exhaustive_scan(self):
        ds = synth_generate(SMALL, 11)
        for subset in (
            [i for i in ds.identity_attrs if i < SMALL.num_train_identities],
            [i for i in ds.identity_attrs if i >= SMALL.num_train_identities],
        ):
            for ident in subset:
                coarse = ds.identity_attrs[ident]["coarse_color"]
                partners = [
                    other
                    for other in subset
                    if other != ident
                    and ds.identity_attrs[other]["coarse_color"] == coarse
                ]
                assert partners, f"identity {ident} has no coarse collision"

    def test_identities_distinguishable_by_fine_attribute(self):
        ds = synth_generate(SMALL, 13)
        attrs = ds.identity_attrs
        keys = {(a["coarse_color"], a["logo_pos"], a["logo_color"]) for a in attrs.values()}
        assert len(keys) == len(attrs)

    def test_images_in_unit_range(self):
        ds = synth_generate(SMALL, 15)
        for split in ("train", "query", "gallery"):
            imgs = getattr(ds, split).images
            assert imgs.min() >= 0.0 and imgs.max() <= 1.0
            assert np.all(np.isfinite(imgs))

    def test_infeasible_spec_rejected(self):
        with pytest.raises(ValueError):
            SyntheticIdentitySpec(occlusion_max_frac=1.5)
        with pytest.raises(ValueError):
            SyntheticIdentitySpec(num_train_identities=1)
        with pytest.raises(ValueError):
            SyntheticIdentitySpec(gallery_per_identity=1)


class TestOcclusionPairing:
    def test_query_occlusion_leaves_other_splits_identical(self):
        clean = synth_generate(SMALL, 21)
        occl = synth_generate(with_query_occlusion(SMALL, 1.0), 21)
        assert clean.train.images.tobytes() == occl.train.images.tobytes()
        assert clean.gallery.images.tobytes() == occl.gallery.images.tobytes()
        assert clean.query.images.tobytes() != occl.query.images.tobytes()

    def test_occluded_queries_differ_only_in_rectangles(self):
        clean = synth_generate(SMALL, 22)
        occl = synth_generate(with_query_occlusion(SMALL, 1.0), 22)
        diff = clean.query.images != occl.query.images
        assert diff.any()
        # changed pixels form an axis-aligned rectangle per sample
        for s in range(diff.shape[0]):
            mask = diff[s].any(axis=0)
            rows = np.where(mask.any(axis=1))[0]
            cols = np.where(mask.any(axis=0))[0]
            changed = mask[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
            assert changed.all()


class TestRoundTrip:
    def test_save_load_round_trip(self, tmp_path):
        ds = synth_generate(SMALL, 31)
        save_dataset(ds, tmp_path / "ds")
        back = load_dataset(tmp_path / "ds")
        for split in ("train", "query", "gallery"):
            sa, sb = getattr(ds, split), getattr(back, split)
            assert np.array_equal(sa.images, sb.images)
            assert np.array_equal(sa.ids, sb.ids)
            assert np.array_equal(sa.cams, sb.cams)
        assert back.spec == ds.spec
