import numpy as np
import pytest

from neuralmat import pfm


def test_pfm_color_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.random((17, 23, 3)).astype(np.float32) * 10
    p = tmp_path / "img.pfm"
    pfm.write_pfm(str(p), img)
    back = pfm.read_pfm(str(p))
    assert np.array_equal(back, img)
    p2 = tmp_path / "img2.pfm"
    pfm.write_pfm(str(p2), back)
    assert p.read_bytes() == p2.read_bytes()


def test_pfm_gray_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    img = rng.random((9, 5)).astype(np.float32)
    p = tmp_path / "g.pfm"
    pfm.write_pfm(str(p), img)
    back = pfm.read_pfm(str(p))
    assert back.shape == (9, 5)
    assert np.array_equal(back, img)


def test_pfm_header_contract(tmp_path):
    p = tmp_path / "h.pfm"
    pfm.write_pfm(str(p), np.zeros((2, 3, 3), dtype=np.float32))
    raw = p.read_bytes()
    assert raw.startswith(b"PF\n3 2\n-1.0\n")
    assert len(raw) == len(b"PF\n3 2\n-1.0\n") + 2 * 3 * 3 * 4


def test_pfm_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError):
        pfm.read_pfm(str(p))


def test_pfm_rejects_bad_shape():
    with pytest.raises(ValueError):
        pfm.write_pfm("/tmp/never.pfm", np.zeros((2, 2, 4)))
