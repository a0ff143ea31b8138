import math

import numpy as np
import pytest
from skimage.metrics import structural_similarity
from skimage.morphology import thin as sk_thin

from docenhance.data.io import Record, SampleManifest, save_png
from docenhance.metrics import (PSNR_CAP, EvalReport, ImageMetrics, binarize, evaluate, f_measure, image_metrics,
                                pseudo_f_measure, psnr, ssim, text_mask, thin)


def test_psnr_pixel_count_oracle():
    x = np.zeros((8, 8))
    y = x.copy()
    y[:2, :2] = 0.5  # 4 pixels with squared error 0.25
    assert psnr(x, y) == pytest.approx(10 * math.log10(1 / (4 * 0.25 / 64)))
    assert psnr(x, x) == PSNR_CAP
    with pytest.raises(ValueError):
        psnr(x, np.zeros((8, 7)))


def test_f_measure_count_oracle():
    gt = np.zeros((8, 8), bool)
    gt[2:6, 2:6] = True  # 16 text pixels
    pred = np.zeros((8, 8), bool)
    pred[2:6, 2:4] = True  # 8 true positives
    pred[0, :4] = True  # 4 false positives
    p, r = 8 / 12, 8 / 16
    assert f_measure(pred, gt) == pytest.approx(100 * 2 * p * r / (p + r))
    assert f_measure(gt, gt) == pytest.approx(100.0)
    assert f_measure(np.zeros_like(gt), gt) == 0.0


def test_pseudo_f_measure_uses_skeleton_recall():
    gt = np.zeros((8, 8), bool)
    gt[1:7, 2:5] = True
    pred = gt.copy()
    pred[1:3] = False
    skel = sk_thin(gt)
    tp = np.sum(pred & gt)
    p, r = tp / pred.sum(), np.sum(pred & skel) / skel.sum()
    assert pseudo_f_measure(pred, gt) == pytest.approx(100 * 2 * p * r / (p + r))
    assert pseudo_f_measure(gt, gt) == pytest.approx(100.0)


def test_thinning_matches_reference(rng):
    for _ in range(100):
        m = rng.random((int(rng.integers(4, 20)), int(rng.integers(4, 20)))) < rng.uniform(0.3, 0.8)
        assert np.array_equal(thin(m), sk_thin(m))


def test_ssim_matches_reference(rng):
    for _ in range(10):
        x = rng.random((20, 24))
        y = np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, 1)
        ref = structural_similarity(x, y, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0)
        assert ssim(x, y) == pytest.approx(ref, abs=1e-6)
    assert ssim(x, x) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_binarize_threshold_convention():
    b = binarize(np.array([-0.5, 0.0, 0.3]))
    assert b.tolist() == [-1.0, 1.0, 1.0]
    assert text_mask(np.array([-0.1, 0.1])).tolist() == [True, False]


def test_report_text_round_trip():
    rep = EvalReport("binarize", psnr=20.0, ssim=0.5, f_measure=90.0, pseudo_f_measure=91.0, cer=3.0,
                     per_image=[ImageMetrics("a.png", 20.0, 0.5, 90.0, 91.0)])
    text = rep.to_text()
    assert text.startswith("[aggregate] mode=binarize images=1 psnr=20.000000")
    back = EvalReport.from_text(text)
    assert back == rep


def test_image_metrics_binarize_mode():
    clean = np.ones((12, 12))
    clean[3:9, 3:9] = -1
    noisy = clean * 0.6
    m = image_metrics("x", noisy, clean, "binarize")
    assert m.psnr == PSNR_CAP and m.f_measure == pytest.approx(100.0)
    d = image_metrics("x", noisy, clean, "deblur")
    assert d.f_measure is None and d.psnr < PSNR_CAP


def test_evaluate_perfect_outputs(tmp_path):
    img = np.ones((16, 16))
    img[4:10, 4:12] = -1
    save_png(tmp_path / "c.png", img)
    save_png(tmp_path / "d.png", img * 0.5)
    man = SampleManifest([Record("d.png", "c.png")], tmp_path)
    rep = evaluate(man, [img], "deblur")
    assert rep.psnr == PSNR_CAP and rep.ssim == pytest.approx(1.0) and rep.cer is None
    with pytest.raises(ValueError):
        evaluate(man, [], "deblur")
    with pytest.raises(ValueError):
        evaluate(man, [img], "segment")
