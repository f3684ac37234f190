"""CIFAR-10 binary format handling and image IO."""

import numpy as np
import pytest

from dsscc.dataset import (BadLabel, DatasetError, load_cifar10, load_image,
                           save_cifar10, save_image, save_pgm, synthetic_cifar)


def test_record_arithmetic(tmp_path):
    images, labels = synthetic_cifar(50, seed=0)
    path = tmp_path / "batch.bin"
    save_cifar10(path, images, labels)
    assert path.stat().st_size == 50 * 3073
    got_images, got_labels = load_cifar10(path)
    assert len(got_images) == 50


def test_round_trip_bitwise(tmp_path):
    images, labels = synthetic_cifar(20, seed=1)
    path = tmp_path / "batch.bin"
    save_cifar10(path, images, labels)
    got_images, got_labels = load_cifar10(path)
    assert np.array_equal(got_images, images)
    assert np.array_equal(got_labels, labels)


def test_plane_layout_is_rgb_planar(tmp_path):
    image = np.zeros((1, 32, 32, 3), dtype=np.uint8)
    image[0, 0, 0] = [10, 20, 30]
    path = tmp_path / "one.bin"
    save_cifar10(path, image, np.array([4]))
    raw = np.fromfile(path, dtype=np.uint8)
    assert raw[0] == 4
    assert raw[1] == 10 and raw[1 + 1024] == 20 and raw[1 + 2048] == 30


def test_malformed_length_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"\x00" * 3072)  # one byte short of a record
    with pytest.raises(DatasetError):
        load_cifar10(path)


def test_bad_label_rejected(tmp_path):
    record = bytearray(3073)
    record[0] = 11
    path = tmp_path / "bad_label.bin"
    path.write_bytes(bytes(record))
    with pytest.raises(BadLabel):
        load_cifar10(path)


def test_directory_loading(tmp_path):
    a, la = synthetic_cifar(10, seed=2)
    b, lb = synthetic_cifar(12, seed=3)
    save_cifar10(tmp_path / "data_batch_1.bin", a, la)
    save_cifar10(tmp_path / "data_batch_2.bin", b, lb)
    images, labels = load_cifar10(tmp_path)
    assert len(images) == 22


def test_synthetic_classes_are_distinct_and_deterministic():
    x1, y1 = synthetic_cifar(64, seed=9)
    x2, y2 = synthetic_cifar(64, seed=9)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    means = [x1[y1 == k].mean(axis=(0, 1, 2)) for k in range(10) if (y1 == k).any()]
    assert np.std([m.mean() for m in means]) > 1.0  # classes differ in palette


def test_image_round_trip(tmp_path):
    img = synthetic_cifar(1, seed=4)[0][0]
    path = tmp_path / "img.png"
    save_image(path, img)
    assert np.array_equal(load_image(path), img)
    ppm = tmp_path / "img.ppm"
    save_image(ppm, img)
    assert np.array_equal(load_image(ppm), img)


def test_pgm_writer(tmp_path):
    grid = np.arange(12.0).reshape(3, 4)
    path = tmp_path / "map.pgm"
    save_pgm(path, grid)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n")
    assert raw[-12:][-1] == 255  # max normalizes to full scale
