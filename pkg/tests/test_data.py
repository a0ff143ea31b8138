import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from docenhance.data import (DegradeSpec, Record, SampleManifest, augment, degrade, extract_patches,
                             gaussian_blur_kernel, load_manifest, load_png, motion_blur_kernel, render_text_image,
                             save_png, stitch_patches, to_uint8, to_unit)
from docenhance.data.corpus import sample_lines
from docenhance.data.degrade import convolve_reflect
from docenhance.data.font import GLYPH_H, GLYPH_W, GLYPHS, glyph
from docenhance.data.toy import make_toy_pairs
from docenhance.ocr.text import DEFAULT_SYMBOLS, WordBox


# -- rendering ---------------------------------------------------------------


def test_font_covers_alphabet_with_distinct_glyphs():
    printable = [c for c in DEFAULT_SYMBOLS if c != " "]
    shapes = {glyph(c).tobytes() for c in printable}
    assert len(shapes) == len(printable)
    assert glyph("a").shape == (GLYPH_H, GLYPH_W)
    assert not glyph(" ").any()
    assert set(GLYPHS) >= set(printable)


def test_rendered_boxes_are_tight_and_cover_all_ink():
    img, boxes = render_text_image(["hello world", "ab 12"], (24, 80))
    assert [b.text for b in boxes] == ["hello", "world", "ab", "12"]
    ink = img < 0
    covered = np.zeros_like(ink)
    for b in boxes:
        x, y, w, h = b.bbox
        sub = ink[y:y + h, x:x + w]
        # tight: every border row/column of the box touches ink
        assert sub[0].any() and sub[-1].any() and sub[:, 0].any() and sub[:, -1].any()
        covered[y:y + h, x:x + w] = True
    assert not (ink & ~covered).any()
    assert set(np.unique(img)) == {-1.0, 1.0}


def test_render_overflow_raises():
    with pytest.raises(ValueError):
        render_text_image(["much too long for this"], (9, 30))


def test_corpus_lines_fit(rng):
    for line in sample_lines(rng, 5, 10):
        assert len(line) <= 10


# -- degradation -------------------------------------------------------------


def test_blur_kernels_normalized():
    for k in (gaussian_blur_kernel(1.5), gaussian_blur_kernel(0.8, 5), motion_blur_kernel(7, 30)):
        assert k.sum() == pytest.approx(1.0)
        assert k.shape[0] % 2 == 1
    assert gaussian_blur_kernel(0.0).shape == (1, 1)
    assert gaussian_blur_kernel(1.0).shape == (7, 7)
    # horizontal motion kernel is a centred row
    k = motion_blur_kernel(5, 0)
    assert np.count_nonzero(k.sum(axis=1)) == 1


def test_convolution_matches_naive_reflect(rng):
    img = rng.standard_normal((7, 9))
    k = rng.random((3, 3))
    p = np.pad(img, 1, mode="reflect")
    naive = np.array([[np.sum(p[i:i + 3, j:j + 3] * k[::-1, ::-1]) for j in range(9)] for i in range(7)])
    np.testing.assert_allclose(convolve_reflect(img, k), naive, atol=1e-12)


@pytest.mark.parametrize("kind", ["gaussian_blur", "motion_blur", "binarization_noise"])
def test_degrade_is_deterministic_and_in_range(kind):
    img, _ = render_text_image(["abc"], (12, 24))
    a = degrade(img, DegradeSpec(kind=kind, seed=4))
    b = degrade(img, DegradeSpec(kind=kind, seed=4))
    assert np.array_equal(a, b) and a.shape == img.shape
    assert a.min() >= -1 and a.max() <= 1
    assert not np.array_equal(a, img)


def test_noise_depends_on_seed():
    img, _ = render_text_image(["abc"], (12, 24))
    spec = DegradeSpec(kind="binarization_noise")
    assert not np.array_equal(degrade(img, spec), degrade(img, DegradeSpec(kind="binarization_noise", seed=1)))


def test_zero_sigma_is_identity():
    img, _ = render_text_image(["x"], (9, 7))
    assert np.array_equal(degrade(img, DegradeSpec(sigma=0.0)), img)


@pytest.mark.parametrize("kw", [{"kind": "rain"}, {"sigma": -1}, {"kernel_size": 4}, {"length": 0.5},
                                {"stain": 2.0}, {"noise": 0.9}])
def test_degrade_spec_validation(kw):
    with pytest.raises(ValueError):
        DegradeSpec(**kw)


# -- patches -----------------------------------------------------------------


def test_inward_shifted_grid_for_300_pixels():
    patches = extract_patches(np.zeros((300, 300)), 256)
    assert sorted(p.origin for p in patches) == [(0, 0), (0, 44), (44, 0), (44, 44)]


@settings(max_examples=60, deadline=None)
@given(st.integers(8, 40), st.integers(8, 40), st.sampled_from([8, 16]), st.integers(0, 7))
def test_extract_then_stitch_is_identity(h, w, size, overlap):
    img = np.random.default_rng(h * 100 + w).standard_normal((h, w))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        patches = extract_patches(img, size, overlap)
    assert all(p.data.shape == (size, size) for p in patches)
    np.testing.assert_allclose(stitch_patches(patches, (h, w)), img, atol=1e-12)


def test_small_image_padded_with_warning():
    with pytest.warns(UserWarning):
        (p,) = extract_patches(np.ones((5, 6)), 8)
    assert p.data.shape == (8, 8)


def test_stitch_detects_gaps():
    with pytest.raises(ValueError):
        stitch_patches([(np.zeros((4, 4)), (0, 0))], (8, 8))
    with pytest.raises(ValueError):
        extract_patches(np.zeros((8, 8)), 4, 4)


def test_augment_applies_identical_transform(rng):
    x = np.arange(64.0).reshape(8, 8)
    for _ in range(20):
        a, b = augment((x, x + 1000), rng, 6)
        assert a.shape == (6, 6)
        np.testing.assert_array_equal(b - a, 1000)
        # crops of the original: values are a permutation of some 6x6 window
        assert len(np.unique(a)) == 36
    with pytest.raises(ValueError):
        augment((x, x[:4]), rng)


# -- io -----------------------------------------------------------------------


def test_pixel_conversions_round_trip():
    px = np.arange(256, dtype=np.uint8)
    assert np.array_equal(to_uint8(to_unit(px)), px)
    assert to_unit(np.array([0, 255])).tolist() == [-1.0, 1.0]


def test_png_round_trip(tmp_path):
    img = to_unit(np.random.default_rng(0).integers(0, 256, (5, 7)))
    save_png(tmp_path / "a.png", img)
    np.testing.assert_allclose(load_png(tmp_path / "a.png"), img)
    assert not list(tmp_path.glob(".*"))  # no temp files left


def test_manifest_round_trip_and_validation(tmp_path):
    img = np.ones((10, 10))
    save_png(tmp_path / "c.png", img)
    save_png(tmp_path / "d.png", img)
    man = SampleManifest([Record("d.png", "c.png", [WordBox("ab", (1, 1, 3, 3))]), Record("d.png", "c.png")],
                         tmp_path)
    man.save(tmp_path / "m.jsonl")
    back = load_manifest(tmp_path / "m.jsonl")
    assert back.records == man.records

    bad = tmp_path / "bad.jsonl"
    bad.write_text(json.dumps({"degraded": "d.png", "clean": "c.png", "extra": 1}) + "\n")
    with pytest.raises(ValueError, match="unknown"):
        load_manifest(bad)
    missing = tmp_path / "missing.jsonl"
    missing.write_text(json.dumps({"degraded": "nope.png", "clean": "c.png"}) + "\n")
    with pytest.raises(FileNotFoundError):
        load_manifest(missing)
    outside = tmp_path / "outside.jsonl"
    outside.write_text(json.dumps({"degraded": "d.png", "clean": "c.png",
                                   "words": [{"text": "a", "bbox": [8, 8, 5, 5]}]}) + "\n")
    with pytest.raises(ValueError):
        load_manifest(outside)


def test_toy_pairs_deterministic():
    a = make_toy_pairs(3, seed=5)
    b = make_toy_pairs(3, seed=5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert a[0].shape == (3, 32, 32)
    assert all(len(w) >= 1 for w in a[2])
