import io
import logging

import numpy as np
import pytest
from PIL import Image
from scipy.fft import dctn, idctn

from softdecode.imageio import read_gray, write_gray
from softdecode.jpeg import (
    BASE_LUMINANCE_TABLE, PairEntry, block_dct8, block_idct8, build_quant_table, degrade, make_pair_corpus,
    quality_scale, read_manifest, round_half_away, write_manifest,
)
from softdecode.metrics import psnr


def libjpeg_round_trip(img, qf):
    buf = io.BytesIO()
    Image.fromarray(img.astype(np.uint8)).save(buf, "JPEG", quality=qf, subsampling=0)
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im, dtype=np.float64), np.array(im.quantization[0]).reshape(8, 8)


class TestQuantTable:
    def test_qf50_is_base(self):
        np.testing.assert_array_equal(build_quant_table(50).table, BASE_LUMINANCE_TABLE)

    def test_qf10_dc(self):
        assert quality_scale(10) == 500
        assert build_quant_table(10).table[0, 0] == 80

    def test_qf100_all_ones(self):
        assert np.all(build_quant_table(100).table == 1)

    @pytest.mark.parametrize("qf", [1, 5, 10, 25, 49, 50, 51, 75, 95, 100])
    def test_matches_libjpeg(self, qf, natural_image):
        _, table = libjpeg_round_trip(natural_image, qf)
        np.testing.assert_array_equal(build_quant_table(qf).table, table)

    def test_monotone_in_qf(self):
        tables = [build_quant_table(q).table for q in range(1, 101)]
        assert all(np.all(a >= b) for a, b in zip(tables, tables[1:]))

    def test_entries_in_range(self):
        for q in range(1, 101):
            t = build_quant_table(q).table
            assert t.min() >= 1 and t.max() <= 255

    @pytest.mark.parametrize("qf", [0, 101, -5, 10.5, True, "10"])
    def test_invalid_qf(self, qf):
        with pytest.raises(ValueError, match=r"\[1, 100\]"):
            build_quant_table(qf)


class TestDct:
    def test_flat_block(self):
        c = block_dct8(np.full((8, 8), 3.0))
        assert c[0, 0] == pytest.approx(24.0)
        c[0, 0] = 0
        assert np.max(np.abs(c)) < 1e-12

    def test_matches_scipy(self, rng):
        b = rng.standard_normal((5, 8, 8))
        np.testing.assert_allclose(block_dct8(b), dctn(b, axes=(-2, -1), norm="ortho"), atol=1e-12)
        np.testing.assert_allclose(block_idct8(b), idctn(b, axes=(-2, -1), norm="ortho"), atol=1e-12)

    def test_round_trip(self, rng):
        b = rng.standard_normal((8, 8)) * 100
        assert np.max(np.abs(block_idct8(block_dct8(b)) - b)) < 1e-10

    def test_basis_function(self):
        u, v = 2, 5
        i = np.arange(8)
        cu = np.sqrt(0.5 if u == 0 else 1.0) * np.cos((2 * i + 1) * u * np.pi / 16) / 2
        cv = np.sqrt(0.5 if v == 0 else 1.0) * np.cos((2 * i + 1) * v * np.pi / 16) / 2
        c = block_dct8(np.outer(cu, cv))
        expected = np.zeros((8, 8))
        expected[u, v] = 1.0
        np.testing.assert_allclose(c, expected, atol=1e-12)

    def test_parseval(self, rng):
        b = rng.standard_normal((8, 8))
        assert abs(np.sum(block_dct8(b) ** 2) - np.sum(b ** 2)) < 1e-10

    def test_wrong_shape(self):
        with pytest.raises(ValueError):
            block_dct8(np.zeros((4, 4)))


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away(np.array([-2.5, -1.5, -0.5, 0.5, 1.5, 2.4])), [-3, -2, -1, 1, 2, 2])


class TestDegrade:
    def test_qf100_near_lossless(self, natural_image):
        assert psnr(natural_image, degrade(natural_image, 100)) > 50

    def test_constant_image(self):
        np.testing.assert_array_equal(degrade(np.full((16, 16), 128.0), 10), np.full((16, 16), 128.0))
        # DC of a flat 72 block is 8 * (72 - 128) = -448 = -5.6 * 80, rounding costs at most half a step
        out = degrade(np.full((8, 8), 72.0), 10)
        assert np.all(out == out[0, 0]) and abs(out[0, 0] - 72) <= 80 / 16

    def test_output_is_8bit(self, rng):
        out = degrade(rng.integers(0, 256, (24, 16)).astype(float), 5)
        assert out.min() >= 0 and out.max() <= 255
        np.testing.assert_array_equal(out, np.round(out))

    @pytest.mark.parametrize("qf", [10, 20, 30, 40, 75])
    def test_close_to_libjpeg(self, qf, natural_image):
        ref, _ = libjpeg_round_trip(natural_image, qf)
        assert abs(psnr(natural_image, degrade(natural_image, qf)) - psnr(natural_image, ref)) < 0.1

    def test_odd_size_padded_and_cropped(self, natural_image):
        img = natural_image[:37, :21]
        out = degrade(img, 30)
        assert out.shape == img.shape
        padded = np.pad(img, ((0, 3), (0, 3)), mode="reflect")
        np.testing.assert_array_equal(out, degrade(padded, 30)[:37, :21])

    def test_monotone_in_qf(self, natural_image):
        scores = [psnr(natural_image, degrade(natural_image, q)) for q in (10, 20, 30, 40)]
        assert scores == sorted(scores) and len(set(scores)) == 4

    def test_second_pass_loses_less(self, natural_image):
        y = degrade(natural_image, 20)
        assert psnr(y, degrade(y, 20)) > psnr(natural_image, y)

    def test_deterministic(self, natural_image):
        np.testing.assert_array_equal(degrade(natural_image, 10), degrade(natural_image, 10))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            degrade(np.zeros((0, 8)), 10)


class TestCorpus:
    @pytest.fixture
    def clean_dir(self, tmp_path, rng):
        d = tmp_path / "clean"
        for name in "abcd":
            write_gray(d / f"{name}.png", rng.integers(0, 256, (16, 24)))
        return d

    def test_single_qf(self, tmp_path, clean_dir):
        for p in list(clean_dir.iterdir())[1:]:
            p.unlink()
        entries = read_manifest(make_pair_corpus(clean_dir, 10, tmp_path / "out"))
        assert len(entries) == 1 and entries[0].qf == 10
        np.testing.assert_array_equal(read_gray(entries[0].degraded), degrade(read_gray(entries[0].clean), 10))

    def test_round_robin(self, tmp_path, clean_dir):
        entries = read_manifest(make_pair_corpus(clean_dir, [10, 20, 30, 40], tmp_path / "out"))
        assert [e.qf for e in entries] == [10, 20, 30, 40]
        assert [e.clean.name for e in entries] == ["a.png", "b.png", "c.png", "d.png"]

    def test_unreadable_skipped(self, tmp_path, clean_dir, caplog):
        (clean_dir / "broken.png").write_bytes(b"not an image")
        with caplog.at_level(logging.WARNING):
            entries = read_manifest(make_pair_corpus(clean_dir, 10, tmp_path / "out"))
        assert len(entries) == 4
        assert "broken.png" in caplog.text

    def test_empty_rejected(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(ValueError):
            make_pair_corpus(tmp_path / "empty", 10, tmp_path / "out")

    def test_manifest_round_trip(self, tmp_path):
        entries = [PairEntry(tmp_path / "x" / "a.png", tmp_path / "y" / "a_qf10.png", 10)]
        write_manifest(tmp_path / "m.tsv", entries)
        assert (tmp_path / "m.tsv").read_text() == "x/a.png\ty/a_qf10.png\t10\n"
        back = read_manifest(tmp_path / "m.tsv")
        assert back[0].clean.resolve() == entries[0].clean.resolve() and back[0].qf == 10

    def test_bad_manifest_line(self, tmp_path):
        (tmp_path / "m.tsv").write_text("only\ttwo\n")
        with pytest.raises(ValueError, match="m.tsv:1"):
            read_manifest(tmp_path / "m.tsv")


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (10, 12)).astype(float)
    write_gray(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(read_gray(tmp_path / "x.pgm"), img)
