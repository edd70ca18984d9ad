import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eatkit.data import (
    AugmentConfig, AugmentPlan, DataError, DecodeError, ImageSource, apply_plan, assign_splits, augment,
    channel_stats, decode_pnm, encode_pnm, hflip, load_image, make_batches, nearest_template, resize_bilinear,
    rotate, sample_plan, save_image, scan_dataset, synth_dataset, zoom,
)
from eatkit.data.index import DatasetIndex


def write(path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    return path


def test_p5_decode_by_hand(tmp_path):
    f = write(tmp_path / "a.pgm", b"P5\n2 2\n255\n" + bytes([0, 255, 0, 255]))
    img = load_image(f)
    assert img.shape == (3, 2, 2)
    for c in range(3):
        assert img[c].ravel().tolist() == [0.0, 1.0, 0.0, 1.0]


def test_p6_white_pixel(tmp_path):
    f = write(tmp_path / "w.ppm", b"P6 1 1 255\n" + bytes([255, 255, 255]))
    assert load_image(f).ravel().tolist() == [1.0, 1.0, 1.0]


def test_header_comments_and_16_bit():
    buf = b"P5\n# a comment\n2 1\n# another\n65535\n" + bytes([0, 0, 255, 255])
    px, maxval = decode_pnm(buf)
    assert maxval == 65535 and px.ravel().tolist() == [0, 65535]


def test_truncated_payload_names_offset(tmp_path):
    f = write(tmp_path / "t.pgm", b"P5\n4 4\n255\n" + bytes(5))
    with pytest.raises(DecodeError, match=r"byte offset 11"):
        load_image(f)


@pytest.mark.parametrize("buf", [b"P3\n1 1\n255\n", b"P5\n1\n", b"P5\nx 1 255\n\x00", b"P5\n1 1 0\n\x00"])
def test_malformed_headers(buf):
    with pytest.raises(DecodeError, match="header"):
        decode_pnm(buf)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.sampled_from([1, 255, 256, 65535]),
       st.randoms(use_true_random=False))
def test_pnm_round_trip(h, w, c, maxval, rnd):
    px = np.array([rnd.randint(0, maxval) for _ in range(h * w * c)]).reshape(h, w, c)
    blob = encode_pnm(px, maxval)
    decoded, mv = decode_pnm(blob)
    assert mv == maxval and np.array_equal(decoded, px)
    assert encode_pnm(decoded, mv) == blob


def test_save_then_load(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, size=(3, 4, 5)) / 255.0
    save_image(tmp_path / "x.ppm", img)
    np.testing.assert_allclose(load_image(tmp_path / "x.ppm"), img, atol=1e-12)


def test_png_optional(tmp_path):
    pil = pytest.importorskip("PIL.Image")
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    pil.fromarray(arr).save(tmp_path / "g.png")
    img = load_image(tmp_path / "g.png")
    assert img.shape == (3, 3, 4) and np.allclose(img[1], arr / 255.0)


def make_tree(root, spec):
    for cls, names in spec.items():
        for n in names:
            write(root / cls / n, b"P5 1 1 255\n" + bytes([len(n)]))


def test_scan_two_classes(tmp_path):
    make_tree(tmp_path, {"b": ["y.ppm"], "a": ["x.ppm"]})
    idx = scan_dataset(tmp_path, (1, 0, 0), seed=0)
    assert idx.class_map() == {"a": 0, "b": 1}
    assert len(idx.samples) == 2 and set(idx.splits) == {"train"}


def test_scan_seed_isolation_and_determinism(tmp_path):
    make_tree(tmp_path, {"a": [f"{i}.pgm" for i in range(4)], "b": [f"{i}.pgm" for i in range(4)]})
    a = scan_dataset(tmp_path, (0.5, 0.25, 0.25), seed=1)
    b = scan_dataset(tmp_path, (0.5, 0.25, 0.25), seed=2)
    assert a.classes == b.classes and a.splits != b.splits
    assert scan_dataset(tmp_path, (0.5, 0.25, 0.25), seed=1).to_json() == a.to_json()


def test_scan_skips_undecodable_and_counts(tmp_path):
    make_tree(tmp_path, {"a": ["ok.pgm"]})
    write(tmp_path / "a" / "bad.pgm", b"P5 9 9 255\n\x00")
    write(tmp_path / "b" / "bad.ppm", b"garbage")
    idx = scan_dataset(tmp_path, (1, 0, 0))
    assert idx.skipped == 2 and idx.classes == ["a"]


def test_scan_errors(tmp_path):
    with pytest.raises(DataError):
        scan_dataset(tmp_path / "missing")
    with pytest.raises(DataError):
        scan_dataset(tmp_path)
    with pytest.raises(DataError, match="ratios"):
        scan_dataset(tmp_path, (0.5, 0.5, 0.5))


def test_index_json_round_trip(tmp_path):
    make_tree(tmp_path, {"a": ["1.pgm", "2.pgm"], "b": ["3.pgm"]})
    idx = scan_dataset(tmp_path, (0.5, 0.5, 0.0), seed=3)
    idx.save(tmp_path / "index.json")
    again = DatasetIndex.load_json(tmp_path / "index.json")
    assert again.to_json() == idx.to_json()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=80), st.floats(0, 1), st.floats(0, 1), st.integers(0, 99))
def test_split_is_partition(labels, a, b, seed):
    lo, hi = sorted((a, b))
    ratios = (lo, hi - lo, 1.0 - hi)
    splits = assign_splits(labels, ratios, seed)
    assert len(splits) == len(labels) and set(splits) <= {"train", "val", "test"}
    assert assign_splits(labels, ratios, seed) == splits


def test_augment_identity_and_flip_involution():
    img = np.random.default_rng(0).uniform(size=(3, 6, 5))
    assert np.array_equal(apply_plan(img, AugmentPlan()), img)
    assert np.array_equal(hflip(hflip(img)), img)
    assert np.array_equal(apply_plan(apply_plan(img, AugmentPlan(flip=True)), AugmentPlan(flip=True)), img)


def test_rotate_90_matches_hand_rotation():
    marker = np.array([[[1.0, 2.0, 3.0], [0.0, 0.0, 4.0], [0.0, 0.0, 5.0]]])
    # counter-clockwise: the right column becomes the top row
    hand = np.array([[[3.0, 4.0, 5.0], [2.0, 0.0, 0.0], [1.0, 0.0, 0.0]]])
    np.testing.assert_allclose(rotate(marker, 90.0), hand, atol=1e-12)


def test_zoom_and_resize_identity():
    img = np.random.default_rng(1).uniform(size=(3, 8, 8))
    np.testing.assert_allclose(zoom(img, 1.0), img, atol=1e-12)
    np.testing.assert_allclose(resize_bilinear(img, (8, 8)), img, atol=1e-12)
    assert resize_bilinear(img, (16, 4)).shape == (3, 16, 4)


def test_plan_probabilities_and_ranges():
    rng = np.random.default_rng(0)
    plans = [sample_plan(rng) for _ in range(4000)]
    assert 0.45 < np.mean([p.flip for p in plans]) < 0.55
    degrees = [p.degrees for p in plans if p.degrees is not None]
    scales = [p.scale for p in plans if p.scale is not None]
    assert 0.45 < len(degrees) / 4000 < 0.55 and max(map(abs, degrees)) <= 15.0
    assert min(scales) >= 0.9 and max(scales) <= 1.1
    never = AugmentConfig(0.0, 0.0, 15.0, 0.0)
    assert sample_plan(rng, never) == AugmentPlan()


def test_augment_keeps_shape():
    rng = np.random.default_rng(2)
    for _ in range(30):
        img = rng.uniform(size=(3, 12, 9))
        assert augment(img, rng).shape == img.shape


def test_synthetic_dataset_balanced_and_seeded():
    idx = synth_dataset(4, 50, 64, seed=0)
    assert len(idx.samples) == 200 and np.bincount([lab for _, lab in idx.samples]).tolist() == [50] * 4
    other = synth_dataset(4, 50, 64, seed=1)
    assert not np.array_equal(idx.images[0], other.images[0])
    assert idx.classes == other.classes
    with pytest.raises(ValueError):
        synth_dataset(1, 5, 32)


def test_template_oracle_on_clean_and_noisy_patterns():
    from eatkit.data.synthetic import canonical_pattern

    rng = np.random.default_rng(0)
    clean = np.stack([canonical_pattern(c, 64, rng.uniform(0, 2 * np.pi)) for c in range(4) for _ in range(5)])
    labels = np.repeat(np.arange(4), 5)
    assert np.array_equal(nearest_template(clean, 64, 4), labels)
    idx = synth_dataset(4, 50, 64, seed=0)
    noisy = np.stack(idx.images)
    truth = np.array([lab for _, lab in idx.samples])
    assert np.mean(nearest_template(noisy, 64, 4) == truth) == 1.0


def small_source(hw=32):
    return ImageSource(synth_dataset(2, 5, hw, seed=0, ratios=(1.0, 0.0, 0.0)), (hw, hw))


def test_batches_sizes_and_order():
    src = small_source()
    stats = channel_stats(src)
    sizes = [len(b) for b in make_batches(src, "train", 4, stats, seed=0, epoch=0)]
    assert sizes == [4, 4, 2]
    idx5 = ImageSource(synth_dataset(5, 1, 32, ratios=(1.0, 0.0, 0.0)), (32, 32))
    assert [len(b) for b in make_batches(idx5, "train", 2, channel_stats(idx5))] == [2, 2, 1]
    a = [b.indices.tolist() for b in make_batches(src, "train", 4, stats, seed=3, epoch=1)]
    b = [b.indices.tolist() for b in make_batches(src, "train", 4, stats, seed=3, epoch=1)]
    c = [b.indices.tolist() for b in make_batches(src, "train", 4, stats, seed=3, epoch=2)]
    assert a == b and a != c


def test_eval_batches_are_not_augmented():
    idx = synth_dataset(2, 10, 32, seed=0, ratios=(0.5, 0.5, 0.0))
    src = ImageSource(idx, (32, 32))
    stats = channel_stats(src)
    e0 = np.concatenate([b.images for b in make_batches(src, "val", 3, stats, seed=0, epoch=0)])
    e1 = np.concatenate([b.images for b in make_batches(src, "val", 3, stats, seed=0, epoch=7)])
    assert np.array_equal(e0, e1)


def test_worker_count_does_not_change_batches(monkeypatch):
    src = small_source()
    stats = channel_stats(src)
    one = [b.images for b in make_batches(src, "train", 3, stats, seed=1, epoch=0, workers=1)]
    monkeypatch.setenv("EATKIT_DATA_WORKERS", "3")
    many = [b.images for b in make_batches(src, "train", 3, stats, seed=1, epoch=0)]
    assert all(np.array_equal(x, y) for x, y in zip(one, many))


def test_bad_worker_env(monkeypatch):
    monkeypatch.setenv("EATKIT_DATA_WORKERS", "zero")
    src = small_source()
    with pytest.raises(DataError):
        list(make_batches(src, "train", 3, channel_stats(src)))


def test_target_size_must_be_divisible_by_32():
    with pytest.raises(DataError):
        ImageSource(synth_dataset(2, 1, 32), (48, 48))


def test_empty_split_rejected():
    src = small_source()
    with pytest.raises(DataError):
        list(make_batches(src, "test", 2, channel_stats(src)))


def test_standardized_train_statistics():
    src = small_source()
    stats = channel_stats(src)
    never = AugmentConfig(0.0, 0.0, 15.0, 0.0)
    imgs = np.concatenate([b.images for b in make_batches(src, "train", 10, stats, augment_config=never,
                                                          shuffle=False)])
    # train split without augmentation: zero mean, unit std per channel
    np.testing.assert_allclose(imgs.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(imgs.std(axis=(0, 2, 3)), 1.0, atol=1e-12)


def test_augment_switch_overrides_split_default():
    src = small_source()
    stats = channel_stats(src)
    plain = np.concatenate([b.images for b in make_batches(src, "train", 4, stats, shuffle=False, augmented=False)])
    again = np.concatenate([b.images for b in make_batches(src, "train", 4, stats, shuffle=False, augmented=False,
                                                           epoch=5)])
    assert np.array_equal(plain, again)
    aug = np.concatenate([b.images for b in make_batches(src, "train", 4, stats, shuffle=False)])
    assert not np.array_equal(plain, aug)
