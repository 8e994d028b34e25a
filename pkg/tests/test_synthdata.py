import os

import numpy as np
import pytest

from ampseg.exceptions import FormatError
from ampseg.metrics import binary_iou
from ampseg.pnm import (decode_pgm, decode_ppm, encode_pgm, encode_ppm, read_pgm, read_ppm,
                        write_pgm, write_ppm)
from ampseg.protocol import image_to_tensor
from ampseg.proxy import nmap
from ampseg.segmenter import predict
from ampseg.synthdata import (BACKGROUNDS, MIN_FOREGROUND, NUM_CLASSES, GenSpec, VideoSpec,
                              archetype, gen_dataset, gen_video, home_background, render_item)


def test_default_benchmark_size(dataset):
    assert len(dataset) == 600
    files = os.listdir(dataset.root)
    assert len([f for f in files if f.endswith(".ppm")]) == 600
    assert len([f for f in files if f.endswith(".pgm")]) == 600
    assert "manifest.tsv" in files
    per_class = [sum(1 for it in dataset.items if it.image_path.startswith(f"img_{c}_"))
                 for c in range(1, NUM_CLASSES + 1)]
    assert per_class == [30] * NUM_CLASSES


def test_every_item_shows_its_class(dataset):
    for i, item in enumerate(dataset.items):
        c = int(item.image_path.split("_")[1])
        labels = dataset.labels(i)
        assert (labels == c).sum() >= MIN_FOREGROUND
        assert set(np.unique(labels)) <= set(range(NUM_CLASSES + 1))
        assert labels.shape == read_ppm(os.path.join(dataset.root, item.image_path)).shape[:2]
        assert c in item.class_ids


def test_same_seed_same_bytes(tmp_path):
    spec = GenSpec(seed=4, items_per_class=2, image_size=32)
    gen_dataset(spec, tmp_path / "a")
    gen_dataset(spec, tmp_path / "b")
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_items_independent_of_generation_order():
    spec = GenSpec(seed=1, image_size=32)
    a = render_item(5, 3, spec)
    render_item(2, 0, spec)
    b = render_item(5, 3, spec)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_archetypes_are_distinct():
    sigs = {(a.shape, a.texture, a.color) for a in map(archetype, range(1, NUM_CLASSES + 1))}
    assert len(sigs) == NUM_CLASSES
    with pytest.raises(ValueError):
        archetype(0)


def test_home_backgrounds_cover_all_families():
    assert {home_background(c) for c in range(1, NUM_CLASSES + 1)} == set(range(len(BACKGROUNDS)))


@pytest.mark.parametrize("kwargs", [dict(image_size=60), dict(image_size=8),
                                    dict(items_per_class=0), dict(max_distractors=3)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        GenSpec(**kwargs)


# -- video -------------------------------------------------------------------

def test_static_video_frames_identical():
    frames, labels = gen_video(VideoSpec(frames=5, drift=0.0, motion=(0, 0)), 3)
    for f, m in zip(frames[1:], labels[1:]):
        np.testing.assert_array_equal(f, frames[0])
        np.testing.assert_array_equal(m, labels[0])


def test_single_frame_matches_dataset_item():
    spec = VideoSpec(frames=1)
    frames, labels = gen_video(spec, 6)
    image, lbl = render_item(6, 0, spec.gen_spec())
    np.testing.assert_array_equal(frames[0], image)
    np.testing.assert_array_equal(labels[0], lbl)


def _centroid(mask):
    ys, xs = np.nonzero(mask)
    return np.array([ys.mean(), xs.mean()])


def _touches_border(m):
    return m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any()


@pytest.mark.parametrize("motion", [(0, 1), (1, 0), (1, -1)])
def test_mask_moves_by_motion_vector(motion):
    checked = 0
    for c in range(1, 7):
        _, labels = gen_video(VideoSpec(frames=20, motion=motion), c)
        masks = [m == c for m in labels]
        for a, b in zip(masks, masks[1:]):
            if _touches_border(a) or _touches_border(b):
                continue  # the object wraps at the border
            np.testing.assert_allclose(_centroid(b) - _centroid(a), motion, atol=1e-9)
            checked += 1
    assert checked >= 20


def test_colour_drifts_toward_complement():
    frames, labels = gen_video(VideoSpec(frames=30, drift=0.02, motion=(0, 0)), 1)
    mask = labels[0] == 1
    target = 255 * (1 - np.asarray(archetype(1).color))
    dist = [np.abs(f[mask].mean(axis=0) - target).sum() for f in frames]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_video_deterministic():
    a, _ = gen_video(VideoSpec(seed=9, frames=3), 4)
    b, _ = gen_video(VideoSpec(seed=9, frames=3), 4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_video_spec_validation():
    with pytest.raises(ValueError):
        VideoSpec(drift=-0.1)
    with pytest.raises(ValueError):
        VideoSpec(frames=0)


# -- portable any-maps ---------------------------------------------------------

def test_ppm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    write_ppm(tmp_path / "x.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "x.ppm"), img)
    assert encode_ppm(decode_ppm(encode_ppm(img))) == encode_ppm(img)


def test_pgm_round_trip(tmp_path):
    lbl = np.random.default_rng(1).integers(0, 256, (4, 3), dtype=np.uint8)
    write_pgm(tmp_path / "x.pgm", lbl)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), lbl)


def test_ppm_two_by_two_header():
    data = b"P6 2 2 255\n" + bytes(range(12))
    img = decode_ppm(data)
    assert img.shape == (2, 2, 3)
    np.testing.assert_array_equal(img[1, 1], [9, 10, 11])


def test_header_comments_allowed():
    assert decode_pgm(b"P5\n# made by hand\n1 2\n255\n\x07\x08").tolist() == [[7], [8]]


@pytest.mark.parametrize("data", [
    b"P6 2 2 65535\n" + bytes(24),   # 16-bit maxval unsupported
    b"P6 2 2 255\n" + bytes(11),     # truncated payload
    b"P6 2 2 255\n" + bytes(13),     # trailing bytes
    b"P3 2 2 255\n" + bytes(12),     # ascii variant
    b"P6 2 x 255\n" + bytes(12),
    b"P6 2 2",
])
def test_malformed_ppm(data):
    with pytest.raises(FormatError):
        decode_ppm(data)


def test_format_error_reports_offset():
    with pytest.raises(FormatError, match="offset"):
        decode_ppm(b"P6 2 2 255\n" + bytes(11))


def test_encode_rejects_non_uint8():
    with pytest.raises(ValueError):
        encode_pgm(np.zeros((2, 2), dtype=np.int32))


# -- separability under random features ---------------------------------------------

def test_one_shot_fg_bg_bank_separates_classes(dataset, backbone):
    from ampseg.scenarios import video_initial_bank

    rng = np.random.default_rng(0)
    scores = []
    for c in range(1, NUM_CLASSES + 1):
        pool = [i for i in dataset.items_with(c) if dataset.dominant_class(i) == c]
        for _ in range(3):
            a, b = rng.choice(pool, 2, replace=False)
            bank = video_initial_bank(backbone, dataset.image(a), dataset.labels(a), c)
            pred, _ = predict(bank, dataset.pyramid(backbone, b))
            scores.append(binary_iou(pred == c, dataset.labels(b) == c))
    assert np.mean(scores) > 0.3


def test_class_proxies_are_not_degenerate(dataset, backbone):
    proxies = []
    for c in range(1, NUM_CLASSES + 1):
        pool = [i for i in dataset.items_with(c) if dataset.dominant_class(i) == c][:5]
        masks = [(dataset.labels(i) == c).astype(float) for i in pool]
        proxies.append(nmap([dataset.pyramid(backbone, i) for i in pool], masks, c).vectors[2])
    cos = np.array(proxies) @ np.array(proxies).T
    np.fill_diagonal(cos, 0.0)
    assert cos.max() < 0.999


def test_image_tensor_is_centred():
    t = image_to_tensor(np.array([[[0, 255, 128]]], dtype=np.uint8))
    np.testing.assert_allclose(t[:, 0, 0], [-0.5, 0.5, 128 / 255 - 0.5])
