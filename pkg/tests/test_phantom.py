"""Phantom generation, volume I/O, augmentation, and splits."""

import json

import numpy as np
import pytest

from fseg.errors import DegenerateSpecError, TooFewItemsError, VolumeFormatError
from fseg.phantom import (
    AugmentConfig,
    PhantomSpec,
    Volume,
    augment,
    clip_and_map,
    generate_phantom,
    load_volume,
    sample_rng,
    save_volume,
    split,
)


class TestGenerate:
    def test_straight_tube_volume_within_cylinder_estimate(self):
        spec = PhantomSpec(
            size=32, n_tubes=1, radius_range=(3.0, 3.0), curvature=0.0,
            noise_sigma=0.0, seed=11,
        )
        _, label = generate_phantom(spec)
        count = int(label.sum())
        analytic = np.pi * 3**2 * 32  # ~905
        assert abs(count - analytic) < 0.1 * analytic, count

    def test_zero_noise_background_exact(self):
        spec = PhantomSpec(size=16, n_tubes=1, radius_range=(1.5, 2.0), noise_sigma=0.0, seed=2)
        vol, label = generate_phantom(spec)
        assert np.all(vol.data[label == 0] == spec.bg_intensity)
        assert np.all(vol.data[label == 1] == spec.fg_intensity)

    def test_deterministic_per_seed(self):
        spec = PhantomSpec(size=16, seed=9)
        v1, l1 = generate_phantom(spec)
        v2, l2 = generate_phantom(spec)
        assert np.array_equal(v1.data, v2.data)
        assert np.array_equal(l1, l2)
        v3, _ = generate_phantom(PhantomSpec(size=16, seed=10))
        assert not np.array_equal(v1.data, v3.data)

    def test_degenerate_specs_rejected(self):
        with pytest.raises(DegenerateSpecError):
            PhantomSpec(size=16, radius_range=(0.5, 2.0))
        with pytest.raises(DegenerateSpecError):
            PhantomSpec(size=16, radius_range=(2.0, 10.0))
        with pytest.raises(DegenerateSpecError):
            PhantomSpec(fg_intensity=10.0, bg_intensity=50.0)

    def test_tubes_are_connected(self):
        """Each phantom's foreground decomposes into at most n_tubes
        6-connected components (tubes may merge, never shatter)."""
        for seed in range(4):
            spec = PhantomSpec(size=24, n_tubes=2, seed=seed)
            _, label = generate_phantom(spec)
            n_comp = _count_components(label)
            assert 1 <= n_comp <= spec.n_tubes, (seed, n_comp)


def _count_components(label: np.ndarray) -> int:
    """Flood-fill 6-connected component count."""
    todo = set(map(tuple, np.argwhere(label == 1)))
    comps = 0
    while todo:
        comps += 1
        stack = [todo.pop()]
        while stack:
            z, y, x = stack.pop()
            for dz, dy, dx in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                nb = (z + dz, y + dy, x + dx)
                if nb in todo:
                    todo.remove(nb)
                    stack.append(nb)
    return comps


class TestVolumeIO:
    def test_round_trip_bit_identical(self, tmp_path):
        vol, label = generate_phantom(PhantomSpec(size=16, seed=3))
        p = str(tmp_path / "v")
        save_volume(p, vol)
        back = load_volume(p)
        assert np.array_equal(back.data, vol.data)
        assert back.kind == "image" and back.spacing == (1.0, 1.0, 1.0)
        lp = str(tmp_path / "l")
        save_volume(lp, Volume(label, kind="label"))
        lback = load_volume(lp)
        assert np.array_equal(lback.data, label)

    def test_truncated_blob_names_byte_counts(self, tmp_path):
        vol, _ = generate_phantom(PhantomSpec(size=16, seed=4))
        p = str(tmp_path / "v")
        save_volume(p, vol)
        raw = open(p + ".raw", "rb").read()
        with open(p + ".raw", "wb") as f:
            f.write(raw[:100])
        with pytest.raises(VolumeFormatError, match="bytes"):
            load_volume(p)

    def test_corrupt_header(self, tmp_path):
        p = str(tmp_path / "v")
        with open(p + ".json", "w") as f:
            f.write("{not json")
        open(p + ".raw", "wb").close()
        with pytest.raises(VolumeFormatError, match="header"):
            load_volume(p)

    def test_unsupported_dtype(self, tmp_path):
        p = str(tmp_path / "v")
        with open(p + ".json", "w") as f:
            json.dump({"dims": [1, 1, 1], "dtype": "i16be", "spacing": [1, 1, 1]}, f)
        np.zeros(1, dtype="<i2").tofile(p + ".raw")
        with pytest.raises(VolumeFormatError, match="dtype"):
            load_volume(p)

    def test_f64_converts_to_f32(self, tmp_path):
        p = str(tmp_path / "v")
        data = np.random.default_rng(5).standard_normal((2, 3, 4))
        with open(p + ".json", "w") as f:
            json.dump({"dims": [2, 3, 4], "dtype": "f64le", "spacing": [1, 1, 1]}, f)
        data.astype("<f8").tofile(p + ".raw")
        back = load_volume(p)
        assert back.data.dtype == np.float32
        assert np.allclose(back.data, data.astype(np.float32))


class TestAugment:
    def test_clip_and_map_reference_points(self):
        cfg = AugmentConfig()
        vals = np.array([[[1000.0, -200.0, 400.0, 1500.0]]])
        out = clip_and_map(vals, cfg)
        assert np.allclose(out[0, 0], [1.0, 0.0, 0.5, 1.0])

    def test_output_in_unit_interval_before_intensity_ops(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(-500, 2000, (8, 8, 8))
        out = clip_and_map(img, AugmentConfig())
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_geometric_ops_preserve_class_counts(self):
        cfg = AugmentConfig(intensity_scale_prob=0.0, intensity_shift_prob=0.0)
        vol, label = generate_phantom(PhantomSpec(size=16, seed=7))
        for i in range(8):
            _, lab = augment(vol.data, label, cfg, sample_rng(7, i))
            assert np.array_equal(np.bincount(lab.ravel()), np.bincount(label.ravel()))

    def test_image_label_share_geometry(self):
        cfg = AugmentConfig(intensity_scale_prob=0.0, intensity_shift_prob=0.0)
        vol, label = generate_phantom(PhantomSpec(size=16, seed=8, noise_sigma=0.0))
        for i in range(8):
            img, lab = augment(vol.data, label, cfg, sample_rng(8, i))
            # foreground voxels stay exactly where the label says they are
            fg_val = clip_and_map(np.array([[[350.0]]]), cfg)[0, 0, 0]
            assert np.all(img[lab == 1] == fg_val)

    def test_intensity_ops_can_leave_unit_interval(self):
        cfg = AugmentConfig(flip_rot_prob=0.0, intensity_scale_prob=0.0,
                            intensity_shift_prob=1.0, shift_range=(0.2, 0.2))
        img = np.full((4, 4, 4), 1000.0)
        out, _ = augment(img, np.zeros((4, 4, 4), np.uint8), cfg, sample_rng(0, 0))
        assert np.allclose(out, 1.2)  # deliberately not re-clipped

    def test_deterministic_per_sample_stream(self):
        cfg = AugmentConfig()
        vol, label = generate_phantom(PhantomSpec(size=16, seed=9))
        a = augment(vol.data, label, cfg, sample_rng(42, 3))
        b = augment(vol.data, label, cfg, sample_rng(42, 3))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_bad_probability_rejected(self):
        with pytest.raises(ValueError):
            AugmentConfig(flip_rot_prob=1.5)


class TestSplit:
    def test_10_items(self):
        s = split(list(range(10)), seed=1)
        assert (len(s["train"]), len(s["val"]), len(s["test"])) == (8, 1, 1)

    def test_100_items(self):
        s = split(list(range(100)), seed=2)
        assert (len(s["train"]), len(s["val"]), len(s["test"])) == (80, 10, 10)

    def test_12_items_largest_remainder(self):
        s = split(list(range(12)), seed=3)
        assert (len(s["train"]), len(s["val"]), len(s["test"])) == (10, 1, 1)

    def test_partition(self):
        ids = [f"v{i}" for i in range(23)]
        s = split(ids, seed=4)
        all_ids = s["train"] + s["val"] + s["test"]
        assert sorted(all_ids) == sorted(ids)
        assert set(s["train"]).isdisjoint(s["val"])
        assert set(s["train"]).isdisjoint(s["test"])
        assert set(s["val"]).isdisjoint(s["test"])

    def test_deterministic(self):
        assert split(list(range(20)), seed=5) == split(list(range(20)), seed=5)
        assert split(list(range(20)), seed=5) != split(list(range(20)), seed=6)

    def test_too_few_items(self):
        with pytest.raises(TooFewItemsError):
            split(list(range(5)))
