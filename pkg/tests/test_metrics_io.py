import math

import numpy as np
import pytest
from PIL import Image

from regionblend.errors import ImageIOError, ShapeError
from regionblend.imageio import from_bytes, load_image, load_mask, save_image, save_mask
from regionblend.metrics import MetricReport, compare_images, mae, psnr, ssim


def _ssim_loop(a, b, win=8, k1=0.01, k2=0.03):
    """Scalar SSIM: every window, every channel, plain Python sums."""
    c1, c2 = k1 ** 2, k2 ** 2
    h, w, ch = a.shape
    n = win * win
    total, count = 0.0, 0
    for c in range(ch):
        for y in range(h - win + 1):
            for x in range(w - win + 1):
                pa = [float(a[y + i, x + j, c]) for i in range(win) for j in range(win)]
                pb = [float(b[y + i, x + j, c]) for i in range(win) for j in range(win)]
                ma, mb = sum(pa) / n, sum(pb) / n
                va = sum((p - ma) ** 2 for p in pa) / n
                vb = sum((p - mb) ** 2 for p in pb) / n
                cov = sum((p - ma) * (q - mb) for p, q in zip(pa, pb)) / n
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / (
                    (ma * ma + mb * mb + c1) * (va + vb + c2))
                count += 1
    return total / count


def test_identical_images():
    a = np.random.default_rng(0).random((16, 16, 3))
    assert mae(a, a) == 0 and ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert psnr(a, a) == math.inf


def test_constant_offset_mae():
    a = np.random.default_rng(1).uniform(0.1, 0.8, (12, 12, 3))
    assert mae(a, a + 0.1) == pytest.approx(0.1, abs=1e-12)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_ssim_matches_loop_oracle():
    rng = np.random.Generator(np.random.PCG64(42))
    a = rng.random((14, 13, 3))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    assert abs(ssim(a, b) - _ssim_loop(a, b)) < 1e-6


def test_ssim_bounds_and_shape_errors():
    rng = np.random.default_rng(3)
    a, b = rng.random((10, 10)), rng.random((10, 10))
    assert -1 <= ssim(a, b) <= 1
    assert ssim(a, 1 - a) < 0
    with pytest.raises(ShapeError):
        ssim(a, b[:9])
    with pytest.raises(ShapeError):
        ssim(a[:5, :5], b[:5, :5])


def test_compare_images_uses_unit_scale():
    a = np.full((8, 8, 3), -1.0)
    b = np.full((8, 8, 3), 1.0)
    r = compare_images(a, b)
    assert r.mae == 1.0 and r.psnr == 0.0


def test_metric_report_aggregate():
    agg = MetricReport.aggregate([MetricReport(0.1, 0.9, 30.0), MetricReport(0.3, 0.7, 20.0)])
    assert agg == MetricReport(pytest.approx(0.2), pytest.approx(0.8), pytest.approx(25.0))
    with pytest.raises(ValueError):
        MetricReport.aggregate([])


def test_ppm_known_bytes(tmp_path):
    data = bytes(range(0, 27 * 9, 9))  # 27 samples: 0, 9, ..., 234
    path = tmp_path / "t.ppm"
    path.write_bytes(b"P6\n3 3\n255\n" + data)
    img = load_image(path)
    expected = np.array([[[(9 * (3 * (3 * y + x) + c)) / 127.5 - 1 for c in range(3)]
                          for x in range(3)] for y in range(3)])
    assert img.shape == (3, 3, 3)
    np.testing.assert_array_equal(img, expected)
    assert img[0, 0, 0] == -1.0 and img[2, 2, 2] == pytest.approx(234 / 127.5 - 1)


@pytest.mark.parametrize("ext", [".png", ".ppm"])
def test_save_load_round_trip(tmp_path, ext):
    img = np.random.default_rng(5).uniform(-1, 1, (9, 11, 3))
    path = tmp_path / f"x{ext}"
    save_image(img, path)
    assert np.max(np.abs(load_image(path) - img)) <= 1 / 255 + 1e-12


def test_grid_values_round_trip_exactly(tmp_path):
    img = from_bytes(np.random.default_rng(6).integers(0, 256, (5, 5, 3)))
    save_image(img, tmp_path / "g.png")
    assert np.array_equal(load_image(tmp_path / "g.png"), img)


def test_all_black_png(tmp_path):
    Image.new("RGB", (4, 3)).save(tmp_path / "k.png")
    img = load_image(tmp_path / "k.png")
    assert img.shape == (3, 4, 3) and np.all(img == -1.0)


def test_mask_threshold(tmp_path):
    Image.fromarray(np.array([[0, 127, 128, 255]], np.uint8), "L").save(tmp_path / "m.png")
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png"), [[False, False, True, True]])
    save_mask(np.array([[True, False]]), tmp_path / "n.png")
    np.testing.assert_array_equal(load_mask(tmp_path / "n.png"), [[True, False]])


def test_io_errors(tmp_path):
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "junk.png")
    Image.fromarray(np.zeros((2, 2), np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ImageIOError):
        load_image(tmp_path / "deep.png")
    with pytest.raises(ImageIOError):
        save_image(np.zeros((2, 2, 3)), tmp_path / "x.jpg")
    with pytest.raises(ImageIOError):
        save_image(np.zeros((2, 2)), tmp_path / "x.png")
