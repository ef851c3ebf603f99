"""Raster I/O, annotation parsing, degradation, patching and augmentation."""

import numpy as np
import pytest

from poresr import imagedata
from poresr.imagedata import (
    FingerprintImage,
    Manifest,
    ManifestRecord,
    PoreIntensityMap,
    PorePointSet,
    TrainingSample,
    apply_gamma,
    augment,
    degrade_to_lr,
    extract_patches,
    load_image,
    load_manifest,
    load_pore_annotations,
    render_pore_map,
    save_image,
    save_manifest,
    save_pore_annotations,
)


def checker(h, w):
    r, c = np.indices((h, w))
    return ((r + c) % 2).astype(np.float64)


# ---------------------------------------------------------------------------
# dataclass validation


def test_image_rejects_out_of_range():
    with pytest.raises(ValueError):
        FingerprintImage(np.full((16, 16), 1.5), ppi=500)
    with pytest.raises(ValueError):
        FingerprintImage(np.full((16, 16), -0.1), ppi=500)


def test_image_rejects_tiny_and_bad_ppi():
    with pytest.raises(ValueError):
        FingerprintImage(np.zeros((4, 16)), ppi=500)
    with pytest.raises(ValueError):
        FingerprintImage(np.zeros((16, 16)), ppi=0)
    with pytest.raises(ValueError):
        FingerprintImage(np.zeros((3, 16, 16)), ppi=500)


def test_pore_set_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        PorePointSet(np.array([[5.0, 40.0]]), image_height=32, image_width=40)
    with pytest.raises(ValueError):
        PorePointSet(np.array([[-0.5, 5.0]]), image_height=32, image_width=40)


def test_pore_set_merges_near_duplicates():
    # Two annotations within 1 px collapse to their average.
    ps = PorePointSet(np.array([[5.0, 5.0], [5.4, 5.4], [20.0, 20.0]]), 32, 32)
    assert len(ps) == 2
    got = ps.points[np.lexsort((ps.points[:, 1], ps.points[:, 0]))]
    assert np.allclose(got[0], [5.2, 5.2])
    assert np.allclose(got[1], [20.0, 20.0])


def test_pore_set_empty_ok():
    ps = PorePointSet(np.empty((0, 2)), 16, 16)
    assert len(ps) == 0


def test_pore_map_rejects_out_of_range():
    with pytest.raises(ValueError):
        PoreIntensityMap(np.full((8, 8), 1.2))


def test_training_sample_enforces_scale_and_degradation():
    hr = FingerprintImage(checker(16, 16), ppi=1000)
    lr = degrade_to_lr(hr)
    pm = PoreIntensityMap(np.zeros((16, 16)))
    TrainingSample(lr, hr, pm)  # consistent triple passes

    with pytest.raises(ValueError):
        TrainingSample(lr, hr, PoreIntensityMap(np.zeros((8, 8))))
    wrong_lr = FingerprintImage(np.zeros((8, 8)), ppi=500)
    with pytest.raises(ValueError):
        TrainingSample(wrong_lr, hr, pm)


# ---------------------------------------------------------------------------
# raster I/O


def test_pgm_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    img = FingerprintImage(rng.random((24, 17)), ppi=1200, subject_id="s1", session_id=1)
    p = tmp_path / "x.pgm"
    save_image(img, p, bits=8)
    back = load_image(p, ppi=1200)
    assert back.pixels.shape == (24, 17)
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255 + 1e-12


def test_pgm_16bit_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    img = FingerprintImage(rng.random((12, 12)), ppi=1000)
    p = tmp_path / "x.pgm"
    save_image(img, p, bits=16)
    back = load_image(p, ppi=1000)
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 65535 + 1e-12


def test_pgm_output_bytes_deterministic(tmp_path):
    img = FingerprintImage(checker(16, 16), ppi=500)
    p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
    save_image(img, p1)
    save_image(img, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_pgm_ascii_with_comments(tmp_path):
    p = tmp_path / "a.pgm"
    p.write_text("P2\n# a comment\n4 2\n255\n0 64 128 255\n255 128 64 0\n")
    with pytest.raises(ValueError):
        load_image(p, ppi=500)  # 2x4 is below the 8x8 minimum

    body = " ".join(str((i * 7) % 256) for i in range(64))
    p.write_text(f"P2\n# c\n8 8\n255\n{body}\n")
    img = load_image(p, ppi=500)
    assert img.pixels.shape == (8, 8)
    assert abs(img.pixels[0, 1] - 7 / 255) < 1e-12


def test_pgm_rejects_garbage(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P6\n8 8\n255\n" + bytes(192))
    with pytest.raises(ValueError):
        load_image(p, ppi=500)
    p.write_bytes(b"P5\n8 8\n255\n" + bytes(10))  # truncated payload
    with pytest.raises(ValueError):
        load_image(p, ppi=500)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    img = FingerprintImage(rng.random((20, 20)), ppi=1000)
    p = tmp_path / "x.png"
    save_image(img, p, bits=8)
    back = load_image(p, ppi=1000)
    assert np.abs(back.pixels - img.pixels).max() <= 0.5 / 255 + 1e-12


def test_load_missing_and_unknown_format(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.pgm", ppi=500)
    p = tmp_path / "x.tiff"
    p.write_bytes(b"II*\x00")
    with pytest.raises(ValueError):
        load_image(p, ppi=500)


# ---------------------------------------------------------------------------
# annotations


def test_annotation_roundtrip(tmp_path):
    img = FingerprintImage(np.zeros((32, 32)), ppi=1000)
    p = tmp_path / "pores.txt"
    p.write_text("# header comment\n3.5 4.25\n\n10 20\n")
    ps = load_pore_annotations(p, img)
    assert len(ps) == 2

    out = tmp_path / "out.txt"
    save_pore_annotations(ps, out)
    again = load_pore_annotations(out, img)
    assert np.allclose(
        np.sort(again.points, axis=0), np.sort(ps.points, axis=0), atol=1e-3
    )


def test_annotation_errors_cite_line_numbers(tmp_path):
    img = FingerprintImage(np.zeros((32, 32)), ppi=1000)
    p = tmp_path / "pores.txt"
    p.write_text("1 2\nfoo bar\n")
    with pytest.raises(ValueError, match=":2:"):
        load_pore_annotations(p, img)
    p.write_text("1 2\n3 4 5\n")
    with pytest.raises(ValueError, match=":2:"):
        load_pore_annotations(p, img)
    p.write_text("1 2\n40 2\n")
    with pytest.raises(ValueError, match=":2:"):
        load_pore_annotations(p, img)


# ---------------------------------------------------------------------------
# degradation


def test_degrade_checkerboard_is_half():
    # Every 2x2 block of a checkerboard holds two 0s and two 1s.
    hr = FingerprintImage(checker(16, 16), ppi=1000)
    lr = degrade_to_lr(hr)
    assert lr.pixels.shape == (8, 8)
    assert np.allclose(lr.pixels, 0.5)
    assert lr.ppi == 500


def test_degrade_block_mean_matches_bruteforce():
    rng = np.random.default_rng(11)
    hr = FingerprintImage(rng.random((16, 20)), ppi=1000)
    lr = degrade_to_lr(hr)
    for r in range(8):
        for c in range(10):
            block = hr.pixels[2 * r : 2 * r + 2, 2 * c : 2 * c + 2]
            assert abs(lr.pixels[r, c] - block.mean()) < 1e-12


def test_degrade_rejects_indivisible():
    hr = FingerprintImage(np.zeros((15, 16)), ppi=1000)
    with pytest.raises(ValueError):
        degrade_to_lr(hr)


# ---------------------------------------------------------------------------
# pore-map rendering


def test_render_single_pore_matches_gaussian():
    ps = PorePointSet(np.array([[16.0, 16.0]]), 33, 33)
    sigma = 2.0
    pm = render_pore_map(ps, sigma)
    assert pm.values[16, 16] == pytest.approx(1.0)
    assert pm.values[16, 18] == pytest.approx(np.exp(-4 / (2 * sigma**2)))
    # outside the cutoff disc nothing is written
    assert pm.values[16, 16 + int(4 * sigma) + 1] == 0.0


def test_render_two_pores_matches_bruteforce_sum():
    pts = np.array([[10.0, 10.0], [12.5, 11.0]])
    ps = PorePointSet(pts, 24, 24)
    sigma = 1.6
    pm = render_pore_map(ps, sigma)

    rr, cc = np.indices((24, 24)).astype(np.float64)
    expect = np.zeros((24, 24))
    for r0, c0 in pts:
        d2 = (rr - r0) ** 2 + (cc - c0) ** 2
        g = np.exp(-d2 / (2 * sigma**2))
        g[d2 > (4 * sigma) ** 2] = 0.0
        expect += g
    expect = np.clip(expect, 0, 1)
    assert np.abs(pm.values - expect).max() < 1e-12


def test_render_scales_sigma_with_ppi():
    assert imagedata.pore_sigma_for_ppi(1200) == pytest.approx(2.0)
    assert imagedata.pore_sigma_for_ppi(600) == pytest.approx(1.0)


def test_render_flip_commutes():
    # Mirroring the points then rendering equals rendering then mirroring,
    # up to the grid evaluation tolerance.
    rng = np.random.default_rng(13)
    pts = rng.uniform(4, 28, size=(6, 2))
    h = w = 32
    ps = PorePointSet(pts, h, w)
    direct = render_pore_map(ps, 1.5).values[:, ::-1]
    mirrored = PorePointSet(np.column_stack([pts[:, 0], (w - 1) - pts[:, 1]]), h, w)
    assert np.abs(render_pore_map(mirrored, 1.5).values - direct).max() < 1e-6


# ---------------------------------------------------------------------------
# patch extraction


def test_patch_count_and_order():
    # (100-40)//10+1 = 7 positions per axis, 49 patches, row-major.
    img = FingerprintImage(np.linspace(0, 1, 100 * 100).reshape(100, 100), ppi=1000)
    ps = PorePointSet(np.empty((0, 2)), 100, 100)
    patches = extract_patches(img, ps, 40, 40, (10, 10))
    assert len(patches) == 49
    assert np.array_equal(patches[0][0].pixels, img.pixels[:40, :40])
    assert np.array_equal(patches[1][0].pixels, img.pixels[:40, 10:50])
    assert np.array_equal(patches[7][0].pixels, img.pixels[10:50, :40])


def test_patch_local_pore_coords():
    img = FingerprintImage(np.zeros((100, 100)), ppi=1000)
    ps = PorePointSet(np.array([[45.0, 12.0]]), 100, 100)
    patches = extract_patches(img, ps, 40, 40, (10, 10))
    # pore at (45, 12) lands in the patch at offset (10, 0) at local (35, 12)
    _, local = patches[7]
    assert len(local) == 1
    assert np.allclose(local.points[0], [35.0, 12.0])
    # and is absent from the first patch (row range 0..39 contains 45? no)
    assert len(patches[0][1]) == 0


def test_patch_rejects_oversized():
    img = FingerprintImage(np.zeros((32, 32)), ppi=1000)
    ps = PorePointSet(np.empty((0, 2)), 32, 32)
    with pytest.raises(ValueError):
        extract_patches(img, ps, 64, 64, (8, 8))


# ---------------------------------------------------------------------------
# augmentation


def make_sample(seed=21, h=32, w=32):
    rng = np.random.default_rng(seed)
    hr = FingerprintImage(rng.random((h, w)), ppi=1000)
    pm = PoreIntensityMap(np.clip(rng.random((h, w)), 0, 1))
    return TrainingSample(degrade_to_lr(hr), hr, pm)


def test_gamma_two_squares_intensities():
    assert apply_gamma(np.array([0.5]), 2.0)[0] == pytest.approx(0.25)
    assert apply_gamma(np.array([0.25]), 0.5)[0] == pytest.approx(0.5)


def test_augment_preserves_invariant_every_op():
    s = make_sample()
    for op in imagedata.AUGMENT_OPS:
        out = augment(s, [op], rng_seed=3)  # TrainingSample validates on build
        assert out.hr_patch.pixels.shape == s.hr_patch.pixels.shape


def test_augment_flip_moves_map_with_image():
    s = make_sample()
    out = augment(s, ["hflip"], rng_seed=0)
    assert np.array_equal(out.hr_patch.pixels, s.hr_patch.pixels[:, ::-1])
    assert np.array_equal(out.hr_pore_map.values, s.hr_pore_map.values[:, ::-1])


def test_augment_gamma_leaves_map_alone():
    s = make_sample()
    out = augment(s, ["gamma"], rng_seed=5)
    assert np.array_equal(out.hr_pore_map.values, s.hr_pore_map.values)
    assert not np.array_equal(out.hr_patch.pixels, s.hr_patch.pixels)


def test_augment_deterministic_under_seed():
    s = make_sample()
    a = augment(s, ["gamma", "scale"], rng_seed=42)
    b = augment(s, ["gamma", "scale"], rng_seed=42)
    assert np.array_equal(a.hr_patch.pixels, b.hr_patch.pixels)
    c = augment(s, ["gamma", "scale"], rng_seed=43)
    assert not np.array_equal(a.hr_patch.pixels, c.hr_patch.pixels)


def test_augment_rejects_unknown_op():
    with pytest.raises(ValueError):
        augment(make_sample(), ["rotate90"], rng_seed=0)


# ---------------------------------------------------------------------------
# manifest


def test_manifest_roundtrip(tmp_path):
    recs = [
        ManifestRecord(image="imgs/a.pgm", annotations="ann/a.txt",
                       subject_id="s001", session_id=1, impression=0, ppi=1000,
                       offset=(1.5, -2.0)),
        ManifestRecord(image="imgs/b.pgm", annotations="ann/b.txt",
                       subject_id="s001", session_id=2, impression=1, ppi=1000),
    ]
    p = tmp_path / "manifest.json"
    save_manifest(recs, p)
    m = load_manifest(p)
    assert len(m.records) == 2
    assert m.records[0].offset == (1.5, -2.0)
    assert m.records[1].offset == (0.0, 0.0)
    assert m.image_path(m.records[0]) == tmp_path / "imgs/a.pgm"


def test_manifest_rejects_unknown_format(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"format": "other", "records": []}')
    with pytest.raises(ValueError):
        load_manifest(p)
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "missing.json")
