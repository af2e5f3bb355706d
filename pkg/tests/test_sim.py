import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tacvit.errors import ConfigError, StorageError
from tacvit.sim import (DEFAULT_PROFILES, ContactLabel, SensorProfile, force_model, generate_dataset,
                        generate_randomized, identity_profile, load_dataset, read_labels, read_pgm, render,
                        render_array, sample_labels, write_pgm)
from tacvit.sim.dataset import LABEL_COLUMNS, DatasetManifest, discover, prepare_images
from tacvit.sim.labels import RANGES, labels_to_array
from tacvit.sim.render import BULGE_PX, DISK_RADIUS, displacement_field, marker_positions, rest_positions

ZERO = ContactLabel(0.0, 0.0, 0.0, 0.0, 0.0)


# -- labels and forces -------------------------------------------------------

def test_sample_labels_ranges_and_determinism():
    labs = sample_labels(500, seed=3)
    assert all(lab.in_range() for lab in labs)
    arr = labels_to_array(labs)
    assert arr[:, 2].min() >= 0.0 and arr[:, 2].max() <= 4.0
    assert np.array_equal(arr, labels_to_array(sample_labels(500, seed=3)))
    assert not np.array_equal(arr, labels_to_array(sample_labels(500, seed=4)))
    with pytest.raises(ValueError):
        sample_labels(0, 1)


def test_sample_labels_cover_pose_ranges_uniformly():
    arr = labels_to_array(sample_labels(3000, seed=0))
    assert len(arr) == 3000
    for k, name in enumerate(("x", "y", "z", "Rx", "Ry")):
        lo, hi = RANGES[name]
        col = arr[:, k]
        # uniform on [lo, hi]: mean mid-point, sd (hi-lo)/sqrt(12)
        assert abs(col.mean() - (lo + hi) / 2) < 0.05 * (hi - lo)
        assert abs(col.std() - (hi - lo) / math.sqrt(12)) < 0.03 * (hi - lo)


def test_force_model_endpoints_and_symmetry():
    assert force_model(1.0, -1.0, 0.0, 5.0, 5.0) == (0.0, 0.0, 0.0)
    fx, fy, fz = force_model(0.0, 0.0, 4.0, 0.0, 0.0)
    assert fz == pytest.approx(10.0) and fx == 0.0 and fy == 0.0
    assert force_model(2.0, -2.0, 4.0, 0.0, 0.0)[:2] == pytest.approx((3.0, -3.0))
    rng = np.random.default_rng(0)
    for x, y, z, rx, ry in rng.uniform([-2, -2, 0, -20, -20], [2, 2, 4, 20, 20], size=(50, 5)):
        a, b = force_model(x, y, z, rx, ry), force_model(-x, y, z, rx, ry)
        assert a[0] == -b[0] and a[2] == b[2]
        # closed form at stiffness 2.5
        assert a[2] == pytest.approx(2.5 * z * (1 + 0.1 * math.cos(math.radians(rx)) * math.cos(math.radians(ry)) - 0.1))


def test_force_model_uses_profile_stiffness():
    soft = SensorProfile("soft", skin_stiffness=1.0)
    assert force_model(0, 0, 2.0, 0, 0, soft)[2] == pytest.approx(2.0)


def test_derived_forces_stay_in_range():
    arr = labels_to_array(sample_labels(2000, seed=9))
    for k, name in zip(range(5, 8), ("Fx", "Fy", "Fz")):
        lo, hi = RANGES[name]
        assert arr[:, k].min() >= lo and arr[:, k].max() <= hi


# -- rendering ---------------------------------------------------------------

def test_zero_label_identity_profile_is_undeformed_grid():
    prof = identity_profile()
    np.testing.assert_array_equal(marker_positions(ZERO, prof), rest_positions(prof))
    pts = rest_positions(prof)
    spacing = np.unique(np.round(np.diff(np.unique(pts[:, 0])), 9))
    assert spacing.tolist() == [prof.marker_spacing]
    a, b = render(ZERO, prof), render(ZERO, prof)
    assert a.shape == (1, 128, 128) and np.array_equal(a.data, b.data)
    # every marker centre is brighter than the membrane background
    img = render_array(ZERO, prof)
    for cx, cy in pts + 63.5:
        assert img[int(round(cy)), int(round(cx))] > prof.background_level + 0.3


def test_mean_displacement_strictly_increases_with_depth():
    rest = rest_positions(identity_profile())
    u = np.hypot(*(rest / DISK_RADIUS).T)
    zs = np.linspace(0.0, 4.0, 21)
    means = []
    for z in zs:
        d = displacement_field(ContactLabel(0, 0, z, 0, 0), rest)
        m = np.hypot(d[:, 0], d[:, 1]).mean()
        # pure bulge: |d| = BULGE * z/4 * |u|
        assert m == pytest.approx(BULGE_PX * z / 4 * u.mean(), rel=1e-12, abs=1e-15)
        means.append(m)
    assert np.all(np.diff(means) > 0)


@pytest.mark.parametrize("name", sorted(DEFAULT_PROFILES))
def test_pixels_in_unit_interval_and_deterministic(name):
    prof = DEFAULT_PROFILES[name]
    for lab in sample_labels(5, seed=1, stiffness=prof):
        img = render_array(lab, prof, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0 and img.shape == (64, 64)
        assert np.array_equal(img, render_array(lab, prof, 64))


def test_different_profiles_differ_in_at_least_one_percent_of_pixels():
    profs = list(DEFAULT_PROFILES.values())
    for i in range(len(profs)):
        for j in range(i + 1, len(profs)):
            a, b = render_array(ZERO, profs[i]), render_array(ZERO, profs[j])
            assert np.mean(np.abs(a - b) > 1 / 255) >= 0.01


def test_default_profiles_differ_in_illumination_and_jitter_seed():
    profs = list(DEFAULT_PROFILES.values())
    for i in range(len(profs)):
        for j in range(i + 1, len(profs)):
            a, b = profs[i], profs[j]
            assert a.jitter_seed != b.jitter_seed
            assert (a.illum_tl, a.illum_tr, a.illum_bl, a.illum_br) != (b.illum_tl, b.illum_tr, b.illum_bl, b.illum_br)


def test_lens_warp_keeps_markers_in_frame_at_zero_contact():
    for prof in DEFAULT_PROFILES.values():
        pts = marker_positions(ZERO, prof) + 63.5
        assert pts.min() >= 0 and pts.max() <= 127


def test_depth_changes_image_on_50_random_pairs():
    rng = np.random.default_rng(11)
    prof = DEFAULT_PROFILES["sensor3"]
    for _ in range(50):
        x, y, z, rx, ry = rng.uniform([-2, -2, 0, -20, -20], [2, 2, 3.5, 20, 20])
        dz = rng.uniform(0.5, 4.0 - z)
        a = render_array(ContactLabel.from_pose(x, y, z, rx, ry), prof)
        b = render_array(ContactLabel.from_pose(x, y, z + dz, rx, ry), prof)
        assert np.abs(a - b).mean() > 0


def test_profile_validation():
    with pytest.raises(ConfigError):
        SensorProfile("bad", illum_tl=0.0).validate()
    with pytest.raises(ConfigError):
        SensorProfile("bad", illum_br=2.5).validate()
    with pytest.raises(ConfigError):
        SensorProfile("bad", lens_warp=0.3).validate()


# -- files -------------------------------------------------------------------

def test_pgm_round_trip_and_header(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    write_pgm(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == 11 + 12
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n4 3\n255\n" + img.tobytes())
    assert np.array_equal(read_pgm(tmp_path / "c.pgm"), img)


@pytest.mark.parametrize("raw", [b"P2\n1 1\n255\n0", b"P5\n2 2\n255\n\0", b"P5\n1 1\n65535\n\0\0", b"P5\n"])
def test_bad_pgm_is_storage_error(tmp_path, raw):
    (tmp_path / "b.pgm").write_bytes(raw)
    with pytest.raises(StorageError):
        read_pgm(tmp_path / "b.pgm")


def test_generate_dataset_layout_and_byte_identical_rerun(tmp_path):
    prof = DEFAULT_PROFILES["sensor2"]
    man = generate_dataset(prof, 12, 5, tmp_path / "a", image_size=48)
    generate_dataset(prof, 12, 5, tmp_path / "b", image_size=48)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted([f"img_{i:06}.pgm" for i in range(12)] + ["labels.csv", "manifest.txt"])
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for name, _ in man.files:
        assert read_pgm(tmp_path / "a" / name).shape == (48, 48)
    header = (tmp_path / "a" / "labels.csv").read_text().splitlines()[0]
    assert tuple(header.split(",")) == LABEL_COLUMNS


def test_labels_csv_round_trip_is_exact(tmp_path):
    man = generate_dataset(DEFAULT_PROFILES["sensor1"], 40, 8, tmp_path, image_size=16)
    back = read_labels(tmp_path / "labels.csv")
    assert np.array_equal(back, labels_to_array([lab for _, lab in man.files]))
    data = load_dataset(tmp_path)
    assert np.array_equal(data.labels, back) and data.images.dtype == np.uint8


def test_manifest_text_round_trip(tmp_path):
    man = generate_dataset(DEFAULT_PROFILES["sensor4"], 3, 1, tmp_path, image_size=16)
    back = DatasetManifest.from_text((tmp_path / "manifest.txt").read_text())
    assert back == man
    with pytest.raises(StorageError):
        DatasetManifest.from_text("sensor_id=x\nfiles:\n")


def test_stored_label_does_not_depend_on_profile(tmp_path):
    a = generate_dataset(DEFAULT_PROFILES["sensor1"], 6, 21, tmp_path / "a", image_size=32)
    b = generate_dataset(DEFAULT_PROFILES["sensor2"], 6, 21, tmp_path / "b", image_size=32)
    assert [lab for _, lab in a.files] == [lab for _, lab in b.files]
    assert not np.array_equal(load_dataset(tmp_path / "a").images, load_dataset(tmp_path / "b").images)


def test_generate_3000_images_and_label_rows(tmp_path):
    generate_dataset(DEFAULT_PROFILES["sensor5"], 3000, 0, tmp_path, image_size=16)
    assert len(list(tmp_path.glob("img_*.pgm"))) == 3000
    assert len(read_labels(tmp_path / "labels.csv")) == 3000


def test_generate_errors(tmp_path):
    with pytest.raises(ConfigError):
        generate_dataset(DEFAULT_PROFILES["sensor1"], 0, 0, tmp_path)
    (tmp_path / "file").write_text("x")
    with pytest.raises(StorageError, match="file"):
        generate_dataset(DEFAULT_PROFILES["sensor1"], 2, 0, tmp_path / "file" / "sub")


def test_load_dataset_detects_tampering(tmp_path):
    generate_dataset(DEFAULT_PROFILES["sensor1"], 4, 0, tmp_path, image_size=16)
    (tmp_path / "img_000002.pgm").unlink()
    with pytest.raises(StorageError, match="img_000002"):
        load_dataset(tmp_path)
    generate_dataset(DEFAULT_PROFILES["sensor1"], 4, 0, tmp_path, image_size=16)
    lines = (tmp_path / "labels.csv").read_text().splitlines()
    (tmp_path / "labels.csv").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(StorageError, match="count"):
        load_dataset(tmp_path)


def test_randomized_corpus_varies_profile_per_image(tmp_path):
    man = generate_randomized(6, 2, tmp_path, image_size=32)
    assert man.profile_mode == "randomized" and man.profile is None
    data = load_dataset(tmp_path)
    fixed = np.stack([np.round(render_array(lab, DEFAULT_PROFILES["sensor1"], 32) * 255) for _, lab in man.files])
    assert not np.array_equal(data.images, fixed.astype(np.uint8))
    assert np.array_equal(generate_randomized(6, 2, tmp_path / "again", 32).files, man.files)


def test_discover_root_or_subdirectories(tmp_path):
    for sid in ("sensor2", "sensor1"):
        generate_dataset(DEFAULT_PROFILES[sid], 2, 0, tmp_path / sid, image_size=16)
    assert [p.name for p in discover(tmp_path)] == ["sensor1", "sensor2"]
    assert discover(tmp_path / "sensor1") == [tmp_path / "sensor1"]
    with pytest.raises(StorageError):
        discover(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(StorageError):
        discover(tmp_path / "empty")


def test_prepare_images_block_mean_and_zoom():
    imgs = np.arange(2 * 8 * 8, dtype=np.uint8).reshape(2, 8, 8)
    out = prepare_images(imgs, 4, pixel_norm="none", dtype=np.float64)
    assert out.shape == (2, 1, 4, 4)
    assert out[0, 0, 0, 0] == pytest.approx(imgs[0, :2, :2].mean() / 255)
    centred = prepare_images(imgs, 4)
    assert centred.dtype == np.float32 and centred.min() >= -1 and centred.max() <= 1
    assert prepare_images(imgs, 6, channels=3).shape == (2, 3, 6, 6)
    assert prepare_images(imgs, 4, resize_mode="crop", pixel_norm="none", dtype=np.float64)[0, 0, 0, 0] == 18 / 255
    with pytest.raises(ConfigError):
        prepare_images(imgs, 4, resize_mode="stretch")


pose = st.tuples(st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 4), st.floats(-20, 20), st.floats(-20, 20))


@settings(max_examples=200, deadline=None)
@given(pose)
def test_forces_in_range_and_odd_in_shear(p):
    x, y, z, rx, ry = p
    fx, fy, fz = force_model(x, y, z, rx, ry)
    assert -3 <= fx <= 3 and -3 <= fy <= 3 and 0 <= fz <= 10
    assert force_model(-x, -y, z, rx, ry) == (-fx, -fy, fz)
    assert ContactLabel.from_pose(*p).in_range()
