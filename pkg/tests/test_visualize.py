import numpy as np
import pytest

from multiflow.core import FouTriplet, identity_triplet
from multiflow.visualize import ImageError, checkerboard, overlay, read_ppm, write_ppm


def _image(rng, h=16, w=24):
    return rng.integers(0, 256, (h, w, 3), dtype=np.uint8)


def test_ppm_roundtrip(tmp_path, rng):
    img = _image(rng)
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_ppm_errors(tmp_path):
    (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ImageError):
        read_ppm(tmp_path / "b.ppm")
    (tmp_path / "c.ppm").write_bytes(b"P6\n2 2\n255\n\0\0\0")
    with pytest.raises(ImageError):
        read_ppm(tmp_path / "c.ppm")
    with pytest.raises(ImageError):
        write_ppm(tmp_path / "d.ppm", np.zeros((2, 2), np.uint8))


def test_identity_overlay_matches_frame(rng):
    img = _image(rng)
    out = overlay(img, img, identity_triplet(24, 16, 0))
    assert np.array_equal(out, img)


def test_uniform_shift(rng):
    ref = _image(rng, 16, 40)
    cur = _image(rng, 16, 40)
    flow = np.zeros((16, 40, 2))
    flow[..., 0] = 10
    res = FouTriplet(flow, np.zeros((16, 40)), np.zeros((16, 40)), 0, 1)
    out = overlay(ref, cur, res, cell=8)
    mask = checkerboard(40, 16, 8)
    ys, xs = np.nonzero(mask[:, :30])
    assert np.array_equal(out[ys, xs + 10], ref[ys, xs])
    # the first 10 columns receive nothing and are darkened
    assert np.array_equal(out[:, :10], np.round(cur[:, :10] * 0.4).astype(np.uint8))


def test_fully_occluded_darkens(rng):
    img = _image(rng)
    res = FouTriplet(np.zeros((16, 24, 2)), np.ones((16, 24)), np.zeros((16, 24)), 0, 1)
    out = overlay(img, img, res)
    assert np.array_equal(out, np.round(img * 0.4).astype(np.uint8))


def test_size_mismatch(rng):
    with pytest.raises(ImageError):
        overlay(_image(rng, 8, 8), _image(rng), identity_triplet(24, 16, 0))
