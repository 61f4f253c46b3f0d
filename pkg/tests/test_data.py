import struct

import numpy as np
import pytest

from sebays.data import (
    SEVERITY, BadMagicError, CorruptionSpec, CountMismatchError, DataFormatError, Dataset,
    TruncatedFileError, augment, corrupt, denormalize, gaussian_blobs, load_csv, load_idx_images,
    normalization_stats, normalize, pad_crop_flip, split_train_val, synthetic_digits, two_moons,
    write_idx,
)
from sebays.numeric import RngStream


def _images(n=6, h=5, w=5, seed=0):
    return RngStream(seed, 0).random((n, 1, h, w))


# -- IDX ------------------------------------------------------------------------------

def test_idx_round_trip(tmp_path):
    imgs = RngStream(0, 0).integers(0, 256, (5, 4, 3)).astype(np.uint8)
    labs = np.array([0, 3, 9, 1, 1], np.uint8)
    write_idx(tmp_path / "i", imgs)
    write_idx(tmp_path / "l", labs)
    ds = load_idx_images(tmp_path / "i", tmp_path / "l")
    assert ds.x.shape == (5, 1, 4, 3)
    assert np.array_equal(np.round(ds.x[:, 0] * 255).astype(np.uint8), imgs)
    assert ds.y.tolist() == labs.tolist()


def test_idx_header_only_file_is_empty_dataset(tmp_path):
    write_idx(tmp_path / "i", np.zeros((0, 28, 28)))
    write_idx(tmp_path / "l", np.zeros(0))
    ds = load_idx_images(tmp_path / "i", tmp_path / "l")
    assert len(ds) == 0 and ds.x.shape == (0, 1, 28, 28)


def test_idx_bad_magic(tmp_path):
    write_idx(tmp_path / "i", np.zeros((2, 2, 2)))
    write_idx(tmp_path / "l", np.zeros(2))
    with pytest.raises(BadMagicError, match="magic"):
        load_idx_images(tmp_path / "l", tmp_path / "i")


def test_idx_truncated(tmp_path):
    write_idx(tmp_path / "i", np.zeros((3, 2, 2)))
    write_idx(tmp_path / "l", np.zeros(3))
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:-1])
    with pytest.raises(TruncatedFileError):
        load_idx_images(tmp_path / "i", tmp_path / "l")
    (tmp_path / "i").write_bytes(raw[:6])
    with pytest.raises(TruncatedFileError, match="header"):
        load_idx_images(tmp_path / "i", tmp_path / "l")
    (tmp_path / "i").write_bytes(raw + b"\0")
    with pytest.raises(DataFormatError, match="trailing"):
        load_idx_images(tmp_path / "i", tmp_path / "l")


def test_idx_count_mismatch(tmp_path):
    write_idx(tmp_path / "i", np.zeros((3, 2, 2)))
    write_idx(tmp_path / "l", np.zeros(4))
    with pytest.raises(CountMismatchError):
        load_idx_images(tmp_path / "i", tmp_path / "l")


def test_idx_magic_constants_are_big_endian(tmp_path):
    write_idx(tmp_path / "i", np.zeros((1, 1, 1)))
    assert struct.unpack(">I", (tmp_path / "i").read_bytes()[:4])[0] == 0x803


# -- CSV ------------------------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,label,b\n0.5,1,2\n-1,0,3.25\n")
    ds = load_csv(p)
    assert ds.x.tolist() == [[0.5, 2.0], [-1.0, 3.25]]
    assert ds.y.tolist() == [1, 0] and ds.n_classes == 2


@pytest.mark.parametrize("text, match", [
    ("", "empty"),
    ("a,b\n1,2\n", "label"),
    ("a,label\n1\n", ":2"),
    ("a,label\n1,x\n", ":2"),
    ("a,label\n1,0\nq,1\n", ":3"),
])
def test_csv_errors_name_the_line(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(DataFormatError, match=match):
        load_csv(p)


# -- generators -----------------------------------------------------------------------

def test_noiseless_moons_lie_on_their_arcs():
    ds = two_moons(101, 0.0, RngStream(0, 0))
    upper, lower = ds.x[ds.y == 0], ds.x[ds.y == 1]
    assert len(upper) == 51 and len(lower) == 50
    assert np.allclose(np.hypot(*upper.T), 1.0, atol=1e-12) and np.all(upper[:, 1] >= 0)
    assert np.allclose(np.hypot(lower[:, 0] - 1, lower[:, 1] - 0.5), 1.0, atol=1e-12)
    assert np.all(lower[:, 1] <= 0.5)


def test_generators_are_seed_deterministic():
    a = two_moons(50, 0.1, RngStream(3, 2))
    b = two_moons(50, 0.1, RngStream(3, 2))
    c = two_moons(50, 0.1, RngStream(4, 2))
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.x, c.x)
    g1 = gaussian_blobs(30, 3, 0.5, RngStream(1, 0))
    g2 = gaussian_blobs(30, 3, 0.5, RngStream(1, 0))
    assert np.array_equal(g1.x, g2.x)


def test_blobs_centres_and_balance():
    ds = gaussian_blobs(3000, 3, 0.1, RngStream(0, 0))
    assert np.bincount(ds.y).tolist() == [1000] * 3
    ang = 2 * np.pi * np.arange(3) / 3
    for c in range(3):
        centre = ds.x[ds.y == c].mean(axis=0)
        assert np.allclose(centre, 5 * np.array([np.cos(ang[c]), np.sin(ang[c])]), atol=0.02)
    with pytest.raises(ValueError):
        gaussian_blobs(2, 3, 0.1, RngStream(0, 0))


def test_synthetic_digits_format():
    x, y = synthetic_digits(20, RngStream(0, 0))
    assert x.shape == (20, 28, 28) and x.dtype == np.uint8
    assert y.dtype == np.uint8 and y.max() <= 9
    x2, _ = synthetic_digits(20, RngStream(0, 0))
    assert np.array_equal(x, x2)


def test_dataset_validates_labels():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), [0, 2], 2)
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1)), [0], 2)


# -- augmentation ---------------------------------------------------------------------

def test_centre_crop_without_flip_is_identity():
    img = _images(1)[0]
    assert np.array_equal(pad_crop_flip(img, (4, 4), False), img)


def test_double_flip_is_identity():
    img = _images(1)[0]
    once = pad_crop_flip(img, (4, 4), True)
    assert np.array_equal(once, img[:, :, ::-1])
    assert np.array_equal(pad_crop_flip(once, (4, 4), True), img)


def test_corner_crop_shifts_in_zeros():
    img = np.ones((1, 3, 3))
    out = pad_crop_flip(img, (0, 0), False, pad=1)
    assert out[0].tolist() == [[0, 0, 0], [0, 1, 1], [0, 1, 1]]


def test_augment_depends_on_epoch_and_id_only():
    batch = _images(4)
    rng = RngStream(7, 3)
    a = augment(batch, rng, epoch=2, example_ids=[10, 11, 12, 13])
    b = augment(batch[::-1], rng, epoch=2, example_ids=[13, 12, 11, 10])
    assert np.array_equal(a, b[::-1])
    with pytest.raises(ValueError):
        augment(batch[:, 0], rng)


# -- normalisation and splits ---------------------------------------------------------

def test_normalize_round_trip_and_stats():
    ds = Dataset(_images(8), np.zeros(8), 1)
    mean, std = normalization_stats(ds)
    n = normalize(ds, mean, std)
    assert abs(n.x.mean()) < 1e-12 and n.x.std() == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(denormalize(n).x, ds.x, atol=1e-15)
    const = Dataset(np.ones((3, 2)), np.zeros(3), 1)
    assert normalization_stats(const)[1].tolist() == [1.0, 1.0]


def test_split_is_stratified_and_sized():
    y = np.repeat(np.arange(10), 5000)
    ds = Dataset(np.arange(50000, dtype=float)[:, None], y, 10)
    tr, va = split_train_val(ds, 0.1, RngStream(0, 2))
    assert (len(tr), len(va)) == (45000, 5000)
    assert np.bincount(va.y).tolist() == [500] * 10
    assert not set(tr.x[:, 0]) & set(va.x[:, 0])
    tr2, _ = split_train_val(ds, 0.1, RngStream(0, 2))
    assert np.array_equal(tr.x, tr2.x)
    with pytest.raises(ValueError):
        split_train_val(ds, 1.0, RngStream(0, 2))


# -- corruptions ----------------------------------------------------------------------

def test_severity_table():
    assert SEVERITY["gaussian-noise"][1:] == (0.05, 0.1, 0.2, 0.35, 0.5)
    assert SEVERITY["blur-3x3-box"][1:] == (1, 2, 3, 4, 5)
    assert SEVERITY["contrast-scale"][1:] == (0.8, 0.6, 0.4, 0.3, 0.2)
    assert SEVERITY["pixel-dropout"][1:] == (0.05, 0.1, 0.2, 0.35, 0.5)
    assert CorruptionSpec("pixel-dropout", 3).name == "pixel-dropout-3"
    for bad in (("fog", 1), ("gaussian-noise", 6)):
        with pytest.raises(ValueError):
            CorruptionSpec(*bad)


@pytest.mark.parametrize("kind", list(SEVERITY))
def test_zero_strength_is_identity(kind):
    ds = Dataset(_images(3), np.zeros(3), 1)
    out = corrupt(ds, CorruptionSpec(kind, 0), RngStream(0, 4))
    assert np.array_equal(out.x, ds.x)


@pytest.mark.parametrize("kind", list(SEVERITY))
def test_corruptions_grow_with_severity(kind):
    ds = Dataset(_images(10, 8, 8), np.zeros(10), 1)
    dist = [np.abs(corrupt(ds, CorruptionSpec(kind, s), RngStream(0, 4)).x - ds.x).mean()
            for s in range(6)]
    assert all(b > a for a, b in zip(dist, dist[1:])), dist
    assert corrupt(ds, CorruptionSpec(kind, 5), RngStream(0, 4)).x.max() <= 1.0


def test_contrast_preserves_image_mean():
    ds = Dataset(_images(4), np.zeros(4), 1)
    out = corrupt(ds, CorruptionSpec("contrast-scale", 2), RngStream(0, 4))
    assert np.allclose(out.x.mean(axis=(1, 2, 3)), ds.x.mean(axis=(1, 2, 3)), atol=1e-15)


def test_blur_needs_images():
    ds = Dataset(np.zeros((3, 2)), np.zeros(3), 1)
    with pytest.raises(ValueError, match="image"):
        corrupt(ds, CorruptionSpec("blur-3x3-box", 1), RngStream(0, 4))
