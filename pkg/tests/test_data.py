import struct

import numpy as np
import pytest

from cocl import data as D
from cocl import eval as V
from cocl.errors import ConfigError, FormatError


def write(path, payload):
    path.write_bytes(payload)
    return str(path)


def idx_images(n=2, rows=28, cols=28, fill=b"\x00"):
    return struct.pack(">IIII", 0x00000803, n, rows, cols) + fill * (n * rows * cols)


def idx_labels(labels):
    return struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)


# ---------------------------------------------------------------------- IDX


def test_idx_hand_fixture(tmp_path):
    # 2 images of 2x3: first all 0, second counts up, last byte 255
    pix = bytes([0] * 6 + [0, 51, 102, 153, 204, 255])
    img = write(tmp_path / "img", struct.pack(">IIII", 0x803, 2, 2, 3) + pix)
    lab = write(tmp_path / "lab", idx_labels([7, 1]))
    d = D.load_idx(img, lab)
    assert d.x.shape == (2, 1, 2, 3)
    np.testing.assert_allclose(d.x[1, 0], [[0.0, 0.2, 0.4], [0.6, 0.8, 1.0]])
    assert d.x[1, 0, 1, 2] == 1.0
    assert d.y.tolist() == [7, 1]


def test_idx_28x28_example(tmp_path):
    img = write(tmp_path / "img", idx_images(2, 28, 28, b"\x80"))
    lab = write(tmp_path / "lab", idx_labels([0, 1]))
    d = D.load_idx(img, lab)
    assert len(d) == 2 and d.image_shape == (1, 28, 28)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(5, 4, 6), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5)
    D.write_idx(raw, labels, str(tmp_path / "i"), str(tmp_path / "l"))
    d = D.load_idx(str(tmp_path / "i"), str(tmp_path / "l"))
    np.testing.assert_array_equal(np.round(d.x[:, 0] * 255).astype(np.uint8), raw)
    np.testing.assert_array_equal(d.y, labels)
    again = D.load_idx(str(tmp_path / "i"), str(tmp_path / "l"))
    assert again.x.tobytes() == d.x.tobytes()


@pytest.mark.parametrize("blob, offset", [
    (struct.pack(">IIII", 0x00000801, 1, 2, 2) + b"\x00" * 4, 0),   # label magic in image file
    (struct.pack(">IIII", 0x08030000, 1, 2, 2) + b"\x00" * 4, 0),   # little-endian magic
    (struct.pack(">II", 0x803, 1), 8),                              # header truncated
    (struct.pack(">IIII", 0x803, 2, 2, 2) + b"\x00" * 7, 23),       # payload one byte short
    (struct.pack(">IIII", 0x803, 1, 2, 2) + b"\x00" * 5, 20),       # trailing byte
])
def test_idx_image_malformed(tmp_path, blob, offset):
    path = write(tmp_path / "bad", blob)
    with pytest.raises(FormatError) as err:
        D.load_idx_images(path)
    assert err.value.offset == offset
    assert str(offset) in str(err.value) and path in str(err.value)


def test_idx_label_malformed_and_count_mismatch(tmp_path):
    with pytest.raises(FormatError) as err:
        D.load_idx_labels(write(tmp_path / "l1", struct.pack(">II", 0x803, 1) + b"\x00"))
    assert err.value.offset == 0
    with pytest.raises(FormatError) as err:
        D.load_idx_labels(write(tmp_path / "l2", struct.pack(">II", 0x801, 3) + b"\x00\x01"))
    assert err.value.offset == 10
    img = write(tmp_path / "img", idx_images(2, 2, 2))
    lab = write(tmp_path / "lab", idx_labels([1, 2, 3]))
    with pytest.raises(FormatError, match="2 images"):
        D.load_idx(img, lab)


def test_missing_file_is_oserror(tmp_path):
    with pytest.raises(OSError):
        D.load_idx_images(str(tmp_path / "nope"))


# ------------------------------------------------------------------ CIFAR-10


def cifar_record(label, value):
    return bytes([label]) + bytes([value]) * 1024 + bytes([0]) * 1024 + bytes([255]) * 1024


def test_cifar_hand_fixture(tmp_path):
    blob = b"".join(cifar_record(k, 51 * (k % 6)) for k in range(10))
    assert len(blob) == 30730
    d = D.load_cifar10_bin(write(tmp_path / "b", blob))
    assert len(d) == 10 and d.image_shape == (3, 32, 32)
    assert d.y.tolist() == list(range(10))
    assert d.x[9, 0, 0, 0] == pytest.approx(51 * 3 / 255)
    np.testing.assert_array_equal(d.x[4, 1], 0.0)
    np.testing.assert_array_equal(d.x[4, 2], 1.0)


def test_cifar_channel_major_layout(tmp_path):
    rec = bytearray(3073)
    rec[0] = 2
    rec[1 + 1024 + 32 * 5 + 7] = 255  # green, row 5, column 7
    d = D.load_cifar10_bin([write(tmp_path / "b", bytes(rec))])
    assert d.x[0, 1, 5, 7] == 1.0 and d.x.sum() == 1.0


def test_cifar_multiple_files(tmp_path):
    a = write(tmp_path / "a", cifar_record(1, 0))
    b = write(tmp_path / "b", cifar_record(2, 0) * 2)
    assert D.load_cifar10_bin([a, b]).y.tolist() == [1, 2, 2]


@pytest.mark.parametrize("blob, offset", [
    (b"\x00" * 3072, 0),
    (b"", 0),
    (cifar_record(0, 0) + b"\x00" * 100, 3073),
    (cifar_record(0, 0) + cifar_record(10, 0), 3073),  # label out of range
])
def test_cifar_malformed(tmp_path, blob, offset):
    path = write(tmp_path / "bad", blob)
    with pytest.raises(FormatError) as err:
        D.load_cifar10_bin(path)
    assert err.value.offset == offset and path in str(err.value)


# ---------------------------------------------------------------- rotation


def test_rotation_identity_and_shape():
    rng = np.random.default_rng(0)
    img = rng.random((1, 9, 9))
    np.testing.assert_array_equal(D.rotate(img, 0.0), img)
    assert D.rotate(img, 1.1).shape == img.shape
    np.testing.assert_allclose(D.rotate(img, np.pi / 2), np.rot90(img, k=-1, axes=(1, 2)), atol=1e-12)


def test_rotation_preserves_disk_area():
    size = 28
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - (size - 1) / 2, xx - (size - 1) / 2)
    disk = np.clip(8.5 - r, 0, 1)[None]
    for angle in np.linspace(0, np.pi, 13)[1:-1]:
        rotated = D.rotate(disk, angle)
        assert abs(rotated.sum() - disk.sum()) / disk.sum() < 0.01


def test_rotated_domains():
    base = D.synth_patterns(3, 4, size=8, noise=0.0, seed=0)
    seq = D.make_rotated_domains(base, T=5, seed=3)
    assert seq.T == 5 and seq.scenario is D.Scenario.DOMAIN_IL
    angles = [t.angle for t in seq]
    assert all(0 <= a < np.pi for a in angles)
    assert angles == [t.angle for t in D.make_rotated_domains(base, T=5, seed=3)]
    np.testing.assert_array_equal(seq.tasks[0].test.x, D.rotate_dataset(base, angles[0]).x)
    zero = D.make_rotated_domains(base, T=1, angles=[0.0])
    np.testing.assert_array_equal(zero.tasks[0].train.x, base.x)
    assert D.make_rotated_domains(base).T == 20
    with pytest.raises(ConfigError):
        D.make_rotated_domains(base, T=0)


# --------------------------------------------------------------- synthetic


def test_synth_noise_free_classes_identical():
    d = D.synth_patterns(4, 5, size=16, noise=0.0, seed=1)
    for c in range(4):
        block = d.x[d.y == c]
        assert np.all(block == block[0])


def test_synth_templates_distinct():
    t = D.synth_templates(10, 16)
    for i in range(10):
        for j in range(i + 1, 10):
            assert np.max(np.abs(t[i] - t[j])) > 0.2


def test_synth_range_shape_and_seed():
    d = D.synth_patterns(3, 6, size=12, noise=0.3, seed=2, channels=3, shift=2, background=0.3, distractor=0.5)
    assert d.x.shape == (18, 3, 12, 12)
    assert d.x.min() >= 0 and d.x.max() <= 1
    again = D.synth_patterns(3, 6, size=12, noise=0.3, seed=2, channels=3, shift=2, background=0.3, distractor=0.5)
    assert d.x.tobytes() == again.x.tobytes()
    with pytest.raises(ConfigError):
        D.synth_patterns(0, 5)
    with pytest.raises(ConfigError):
        D.synth_patterns(2, 5, noise=-0.1)


def test_raw_pixel_probe_beats_chance():
    d = D.synth_patterns(6, 40, size=16, noise=0.3, seed=0, distractor=0.8)
    x = d.x.reshape(len(d), -1)
    cfg = V.ProbeConfig(epochs=30, lr=0.1, decay_epochs=(20,), seed=0)
    clf = V.train_probe_on_embeddings(x, d.y, cfg)
    acc = float(np.mean(clf.predict(x) == d.y))
    assert acc > 2.0 / 6


def test_split_holdout_stratified():
    d = D.synth_patterns(3, 10, size=8, seed=0)
    tr, te = D.split_holdout(d, 0.2, seed=4)
    assert len(tr) == 24 and len(te) == 6
    assert sorted(np.bincount(te.y).tolist()) == [2, 2, 2]


# ------------------------------------------------------------- sequences


def test_class_sequence_examples():
    d10 = D.synth_patterns(10, 2, size=8, seed=0)
    assert D.make_class_sequence(d10, D.SplitPlan(2)).T == 5
    d6 = D.synth_patterns(6, 2, size=8, seed=0)
    seq = D.make_class_sequence(d6, D.SplitPlan(3))
    assert seq.T == 2 and seq.tasks[0].classes == (0, 1, 2) and seq.tasks[1].classes == (3, 4, 5)
    assert set(seq.tasks[1].train.y.tolist()) == {3, 4, 5}
    with pytest.raises(ConfigError):
        D.make_class_sequence(d10, D.SplitPlan(3))


def test_class_sequences_disjoint():
    d = D.synth_patterns(8, 2, size=8, seed=0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        order = tuple(int(c) for c in rng.permutation(8))
        seq = D.make_class_sequence(d, D.SplitPlan(2, order))
        sets = [set(t.classes) for t in seq]
        assert all(not (a & b) for i, a in enumerate(sets) for b in sets[i + 1:])
        assert seq.tasks[0].classes == order[:2]


def test_dataset_invariants():
    with pytest.raises(ConfigError):
        D.Dataset(np.zeros((0, 1, 2, 2)), np.zeros(0))
    with pytest.raises(ConfigError):
        D.Dataset(np.zeros((2, 1, 2, 2)), [0, 5], (0, 1))
    with pytest.raises(ConfigError):
        D.Dataset(np.zeros((2, 2, 2)), [0, 1])
