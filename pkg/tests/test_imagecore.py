import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddhalftone.imagecore import (
    BinaryImage,
    GrayImage,
    PnmHeaderError,
    PnmMaxvalError,
    PnmTruncatedError,
    constant_patch,
    load_pbm,
    load_pgm,
    ramp,
    save_pbm,
    save_pgm,
)


def test_load_pgm_ascii(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P2 2 2 255 0 64 128 255")
    img = load_pgm(path)
    assert img.width == 2 and img.height == 2
    assert img.data.tolist() == [0, 64, 128, 255]


def test_load_pgm_comments_and_p5(tmp_path):
    path = tmp_path / "b.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n255\n" + bytes([7, 250]))
    img = load_pgm(path)
    assert img.pixels.tolist() == [[7, 250]]


def test_load_pgm_rejects_wide_maxval(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5 2 2 65535\n" + bytes(8))
    with pytest.raises(PnmMaxvalError):
        load_pgm(path)


def test_load_pgm_rejects_bad_magic(tmp_path):
    path = tmp_path / "d.pgm"
    path.write_bytes(b"P7 2 2 255 junk")
    with pytest.raises(PnmHeaderError):
        load_pgm(path)


def test_load_pgm_rejects_truncated(tmp_path):
    path = tmp_path / "e.pgm"
    path.write_bytes(b"P5 4 4 255\n" + bytes(5))
    with pytest.raises(PnmTruncatedError):
        load_pgm(path)


def test_pgm_roundtrip_seeded(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(100):
        img = GrayImage(rng.integers(0, 256, size=(16, 16), dtype=np.uint8))
        path = tmp_path / f"r{i}.pgm"
        save_pgm(img, path)
        back = load_pgm(path)
        assert np.array_equal(back.pixels, img.pixels)


def test_pbm_polarity_all_white(tmp_path):
    img = BinaryImage(np.full((4, 4), 255, dtype=np.uint8))
    path = tmp_path / "w.pbm"
    save_pbm(img, path)
    payload = path.read_bytes().split(b"\n", 2)[2]
    assert payload == bytes(4)  # all-zero bits


def test_pbm_polarity_all_black(tmp_path):
    img = BinaryImage(np.zeros((4, 4), dtype=np.uint8))
    path = tmp_path / "k.pbm"
    save_pbm(img, path)
    payload = path.read_bytes().split(b"\n", 2)[2]
    # 4 leading ink bits per row, rest of each byte is padding
    assert payload == bytes([0b11110000] * 4)


def test_pbm_roundtrip_random(tmp_path):
    rng = np.random.default_rng(1)
    img = BinaryImage((rng.random((32, 32)) < 0.5).astype(np.uint8) * 255)
    path = tmp_path / "r.pbm"
    save_pbm(img, path)
    back = load_pbm(path)
    assert np.array_equal(back.pixels, img.pixels)


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 40),
    st.integers(1, 40),
    st.integers(0, 2**32 - 1),
)
def test_pbm_roundtrip_property(tmp_path_factory, width, height, seed):
    rng = np.random.default_rng(seed)
    img = BinaryImage((rng.random((height, width)) < 0.5).astype(np.uint8) * 255)
    path = tmp_path_factory.mktemp("pbm") / "p.pbm"
    save_pbm(img, path)
    assert np.array_equal(load_pbm(path).pixels, img.pixels)


def test_constant_patch_values():
    img = constant_patch(64, 512, 512)
    assert img.width == img.height == 512
    assert (img.pixels == 64).all()
    assert constant_patch(0, 1, 1).pixels.tolist() == [[0]]
    assert (constant_patch(255, 4, 4).pixels == 255).all()


def test_constant_patch_mean_exact():
    for g in (0, 1, 37, 254, 255):
        assert constant_patch(g, 9, 5).pixels.mean() == g


def test_constant_patch_validation():
    with pytest.raises(ValueError):
        constant_patch(256, 4, 4)
    with pytest.raises(ValueError):
        constant_patch(10, 0, 4)


def test_ramp_horizontal_extremes():
    img = ramp(768, 128, "horizontal")
    assert (img.pixels[:, 0] == 0).all()
    assert (img.pixels[:, -1] == 255).all()
    assert (img.pixels == img.pixels[0]).all()  # rows identical


def test_ramp_unit_steps():
    img = ramp(256, 1, "horizontal")
    assert img.pixels[0].tolist() == list(range(256))


def test_ramp_pairs():
    img = ramp(512, 2, "horizontal")
    row = img.pixels[0]
    assert np.array_equal(row[0::2], row[1::2])
    assert row.tolist() == [j * 256 // 512 for j in range(512)]


def test_ramp_monotone_and_vertical():
    h = ramp(300, 3, "horizontal")
    assert (np.diff(h.pixels[0].astype(int)) >= 0).all()
    v = ramp(3, 300, "vertical")
    assert (np.diff(v.pixels[:, 0].astype(int)) >= 0).all()
    assert np.array_equal(v.pixels.T, ramp(300, 3, "horizontal").pixels)


def test_ramp_validation():
    with pytest.raises(ValueError):
        ramp(0, 4)
    with pytest.raises(ValueError):
        ramp(128, 4, "horizontal")
    with pytest.raises(ValueError):
        ramp(300, 4, "diagonal")


def test_binary_image_validation():
    with pytest.raises(ValueError):
        BinaryImage(np.array([[0, 128]], dtype=np.uint8))
    img = BinaryImage(np.array([[0, 255]], dtype=np.uint8))
    assert img.ink_fraction() == 0.5
    assert np.array_equal(img.to_gray().pixels, img.pixels)
