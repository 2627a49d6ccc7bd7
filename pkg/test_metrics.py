"""
Tests for PSNR / SSIM / MSE and evaluation reports
"""
import csv
import json
import math

import numpy as np
import pytest

from errors import ImageTooSmall, ShapeMismatch, UnmatchedFiles
from imagecore import ImageBuffer, save_image
from metrics import EvalReport, evaluate_pairs, luma, mse, psnr, ssim, write_report


def random_image(seed, height=20, width=24) -> ImageBuffer:
    return ImageBuffer(np.random.default_rng(seed).random((height, width, 3)))


def ssim_oracle(a: ImageBuffer, b: ImageBuffer, window=11, sigma=1.5, k1=0.01, k2=0.03) -> float:
    """Windowed SSIM by explicit sums over every window fully inside the image"""
    x, y = luma(a), luma(b)
    radius = window // 2
    offsets = np.arange(-radius, radius + 1)
    g = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2

    scores = []
    for i in range(radius, x.shape[0] - radius):
        for j in range(radius, x.shape[1] - radius):
            px = x[i - radius:i + radius + 1, j - radius:j + radius + 1]
            py = y[i - radius:i + radius + 1, j - radius:j + radius + 1]
            mx, my = (kernel * px).sum(), (kernel * py).sum()
            vx = (kernel * px * px).sum() - mx * mx
            vy = (kernel * py * py).sum() - my * my
            cov = (kernel * px * py).sum() - mx * my
            scores.append(((2 * mx * my + c1) * (2 * cov + c2)) /
                          ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(scores))


def test_psnr_of_constant_offset():
    a = ImageBuffer.filled(8, 8, 0.0)
    b = ImageBuffer.filled(8, 8, 0.1)
    assert mse(a, b) == pytest.approx(0.01, rel=1e-6)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-5)


def test_psnr_identical_images():
    a = random_image(0)
    assert psnr(a, a) == 99.0
    assert psnr(a, a, cap=None) == math.inf


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        psnr(random_image(0), random_image(0, 20, 25))


def test_ssim_matches_windowed_oracle():
    a = random_image(1)
    b = ImageBuffer.from_array(a.data * 0.7 + random_image(2).data * 0.3)
    assert ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-6)
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, b) < 1.0


def test_ssim_needs_a_full_window():
    with pytest.raises(ImageTooSmall):
        ssim(random_image(0, 8, 8), random_image(1, 8, 8))


def test_evaluate_pairs_averages_per_image_scores(tmp_path):
    pred, gt = tmp_path / 'pred', tmp_path / 'gt'
    for name, seed in (('a.png', 0), ('b.png', 1)):
        save_image(random_image(seed), gt / name)
        save_image(random_image(seed + 10), pred / name)

    report = evaluate_pairs(pred, gt)
    assert report.count == 2
    assert [row['name'] for row in report.per_image] == ['a.png', 'b.png']
    summary = report.summary()
    assert summary['psnr'] == pytest.approx(np.mean([r['psnr'] for r in report.per_image]))
    assert summary['ssim'] == pytest.approx(np.mean([r['ssim'] for r in report.per_image]))

    same = evaluate_pairs(gt, gt)
    assert same.summary()['psnr'] == 99.0 and same.summary()['mse'] == 0.0


def test_evaluate_pairs_unmatched(tmp_path):
    pred, gt = tmp_path / 'pred', tmp_path / 'gt'
    save_image(random_image(0), gt / 'a.png')
    save_image(random_image(0), pred / 'b.png')
    with pytest.raises(UnmatchedFiles):
        evaluate_pairs(pred, gt)


def test_write_report(tmp_path):
    report = EvalReport([
        {'name': 'a.png', 'psnr': 30.0, 'ssim': 0.9, 'mse': 0.001},
        {'name': 'b.png', 'psnr': 20.0, 'ssim': 0.7, 'mse': 0.01},
    ])
    paths = write_report(report, tmp_path / 'report')

    data = json.loads(paths['json'].read_text())
    assert data['summary'] == {'count': 2, 'psnr': 25.0, 'ssim': pytest.approx(0.8), 'mse': pytest.approx(0.0055)}
    with open(paths['csv'], newline='') as f:
        rows = list(csv.DictReader(f))
    assert [row['name'] for row in rows] == ['a.png', 'b.png']
    assert paths['pdf'].read_bytes().startswith(b'%PDF')


def test_empty_report_summary():
    summary = EvalReport().summary()
    assert summary['count'] == 0 and math.isnan(summary['psnr'])
