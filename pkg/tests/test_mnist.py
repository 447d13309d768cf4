"""IDX parsing, bilinear downsampling and standardization."""

import gzip

import numpy as np
import pytest

from tripledescent.orchestrator.mnist import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    DatasetConsistencyError,
    IDXFormatError,
    ZeroVarianceError,
    downsample,
    ingest_mnist,
    read_idx,
    write_idx,
)
from tripledescent.orchestrator.tasks import mnist_spectrum_job


def bilinear_reference(img, side):
    """Pixel-by-pixel bilinear resize with half-pixel centres, edge-clamped."""
    h, w = img.shape
    out = np.zeros((side, side))
    for i in range(side):
        for j in range(side):
            y = min(max((i + 0.5) * h / side - 0.5, 0.0), h - 1)
            x = min(max((j + 0.5) * w / side - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


def fixture(tmp_path, n=6, side=28, seed=0, gz=False):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, side, side), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, images)
    write_idx(lp, labels)
    if gz:
        for p in (ip, lp):
            p.write_bytes(gzip.compress(p.read_bytes()))
    return images, labels, ip, lp


class TestIDX:
    @pytest.mark.parametrize("gz", [False, True])
    def test_roundtrip(self, tmp_path, gz):
        images, labels, ip, lp = fixture(tmp_path, gz=gz)
        np.testing.assert_array_equal(read_idx(ip, IMAGE_MAGIC), images)
        np.testing.assert_array_equal(read_idx(lp, LABEL_MAGIC), labels)

    def test_header_bytes(self, tmp_path):
        _, _, ip, _ = fixture(tmp_path, n=2)
        raw = ip.read_bytes()
        assert raw[:4] == b"\x00\x00\x08\x03"
        assert int.from_bytes(raw[4:8], "big") == 2
        assert len(raw) == 16 + 2 * 28 * 28

    def test_bad_magic(self, tmp_path):
        _, _, ip, lp = fixture(tmp_path)
        with pytest.raises(IDXFormatError, match="magic"):
            read_idx(lp, IMAGE_MAGIC)
        ip.write_bytes(b"\x00\x00")
        with pytest.raises(IDXFormatError):
            read_idx(ip, IMAGE_MAGIC)

    def test_truncated(self, tmp_path):
        _, _, ip, _ = fixture(tmp_path)
        ip.write_bytes(ip.read_bytes()[:-10])
        with pytest.raises(IDXFormatError, match="truncated"):
            read_idx(ip, IMAGE_MAGIC)
        ip.write_bytes(ip.read_bytes()[:10])
        with pytest.raises(IDXFormatError, match="truncated"):
            read_idx(ip, IMAGE_MAGIC)


class TestDownsample:
    def test_checkerboard_28_to_14(self):
        img = (np.indices((28, 28)).sum(axis=0) % 2) * 255.0
        got = downsample(img[None], 14)[0]
        np.testing.assert_allclose(got, bilinear_reference(img, 14), atol=1e-12)
        # each output samples the centre of a 2x2 block
        np.testing.assert_allclose(got, 127.5, atol=1e-12)

    @pytest.mark.parametrize("side", [7, 10, 14, 28])
    def test_matches_reference(self, side):
        img = np.random.default_rng(side).uniform(0, 255, (28, 28))
        np.testing.assert_allclose(downsample(img[None], side)[0], bilinear_reference(img, side),
                                   atol=1e-10)

    def test_identity_and_constant(self):
        img = np.random.default_rng(0).uniform(size=(5, 5))
        np.testing.assert_allclose(downsample(img[None], 5)[0], img, atol=1e-15)
        np.testing.assert_allclose(downsample(np.full((1, 9, 9), 3.0), 4), 3.0, atol=1e-15)

    def test_bad_side(self):
        with pytest.raises(ValueError):
            downsample(np.zeros((1, 4, 4)), 0)


class TestIngest:
    def test_standardized(self, tmp_path):
        _, labels, ip, lp = fixture(tmp_path, n=8)
        data = ingest_mnist(ip, lp, 10)
        assert data.X.shape == (8, 100) and data.D == 100
        assert float(data.X.mean()) == pytest.approx(0.0, abs=1e-12)
        assert float(data.X.std()) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_array_equal(data.labels, labels)

    def test_count_mismatch(self, tmp_path):
        _, _, ip, lp = fixture(tmp_path, n=5)
        write_idx(lp, np.zeros(4, dtype=np.uint8))
        with pytest.raises(DatasetConsistencyError):
            ingest_mnist(ip, lp)

    def test_constant_images(self, tmp_path):
        ip, lp = tmp_path / "i", tmp_path / "l"
        write_idx(ip, np.full((3, 28, 28), 7, dtype=np.uint8))
        write_idx(lp, np.zeros(3, dtype=np.uint8))
        with pytest.raises(ZeroVarianceError):
            ingest_mnist(ip, lp)

    def test_spectrum_job(self, tmp_path):
        _, _, ip, lp = fixture(tmp_path, n=60)
        data = ingest_mnist(ip, lp, 4)
        info = mnist_spectrum_job(data, p_over_d=4.0, n_over_d=[1.0, 2.0], seeds=1,
                                  out=str(tmp_path / "m.csv"))
        assert [i["N"] for i in info] == [16, 32]
        # at N = D every nonzero eigenvalue is in the top-D block: no split
        assert np.isnan(info[0]["component_gap_relative"])
        assert np.isfinite(info[1]["component_gap_relative"])
