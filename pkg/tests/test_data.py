import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitoklab.data import (
    Corpus,
    PPMError,
    batch_for_step,
    batches,
    load_images,
    load_videos,
    ppm_bytes,
    read_ppm,
    synth_images,
    synth_video,
    write_ppm,
)


@pytest.mark.parametrize("kind", ["textures", "shapes", "gradients"])
def test_images_deterministic_and_in_range(kind):
    a = synth_images(kind, 8, 16, 12, seed=3)
    b = synth_images(kind, 8, 16, 12, seed=3)
    assert a.tobytes() == b.tobytes()
    assert a.shape == (8, 16, 12, 3) and a.dtype == np.float32
    assert a.min() >= -1 and a.max() <= 1
    assert not np.array_equal(a, synth_images(kind, 8, 16, 12, seed=4))


def test_prefix_stability():
    # item i depends only on (seed, i)
    np.testing.assert_array_equal(synth_images("textures", 3, 8, 8, 0), synth_images("textures", 5, 8, 8, 0)[:3])


def mean_abs_gradient(x):
    return np.abs(np.diff(x, axis=1)).mean() + np.abs(np.diff(x, axis=2)).mean()


def test_textures_have_more_high_frequency_than_gradients():
    assert mean_abs_gradient(synth_images("textures", 32, 16, 16, 0)) > mean_abs_gradient(
        synth_images("gradients", 32, 16, 16, 0))


def test_static_video_repeats_frame():
    v = synth_video(3, 5, 16, 16, seed=0, motion="static")
    assert all(np.array_equal(v[:, t], v[:, 0]) for t in range(5))


def test_zero_drift_equals_static():
    a = synth_video(2, 4, 16, 16, seed=1, motion="static")
    b = synth_video(2, 4, 16, 16, seed=1, motion="drift", velocity=(0.0, 0.0))
    np.testing.assert_array_equal(a, b)


def test_drift_moves():
    v = synth_video(4, 4, 16, 16, seed=2, motion="drift")
    assert np.mean((v[:, 1:] - v[:, :-1]) ** 2) > 0
    assert v.min() >= -1 and v.max() <= 1


def test_video_rejects_bad_args():
    with pytest.raises(ValueError):
        synth_video(1, 0, 8, 8, 0)
    with pytest.raises(ValueError):
        synth_video(1, 2, 8, 8, 0, motion="zoom")


def test_white_ppm_is_one(tmp_path):
    (tmp_path / "w.ppm").write_bytes(b"P6\n2 2\n255\n" + b"\xff" * 12)
    np.testing.assert_array_equal(read_ppm(tmp_path / "w.ppm"), np.ones((2, 2, 3)))


def test_ppm_header_with_comment(tmp_path):
    (tmp_path / "c.ppm").write_bytes(b"P6 # made by hand\n1 1 255\n\x00\x80\xff")
    np.testing.assert_allclose(read_ppm(tmp_path / "c.ppm")[0, 0], [-1, 128 / 255 * 2 - 1, 1], atol=1e-6)


@pytest.mark.parametrize("blob", [b"P3\n1 1\n255\n000", b"P6\n2 2\n255\n" + b"\x00" * 5, b"P6\nx 2\n255\n",
                                  b"P6\n1 1\n65535\n" + b"\x00" * 6])
def test_malformed_ppm(tmp_path, blob):
    (tmp_path / "bad.ppm").write_bytes(blob)
    with pytest.raises(PPMError):
        read_ppm(tmp_path / "bad.ppm")


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_ppm_byte_roundtrip(h, w, seed):
    raw = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    blob = ppm_bytes(raw)
    from vitoklab.data import _read_ppm_bytes

    assert ppm_bytes(_read_ppm_bytes(blob)) == blob


def test_all_byte_values_roundtrip(tmp_path):
    raw = np.arange(256 * 3, dtype=np.uint16).reshape(16, 16, 3).astype(np.uint8)
    (tmp_path / "a.ppm").write_bytes(ppm_bytes(raw))
    write_ppm(tmp_path / "b.ppm", read_ppm(tmp_path / "a.ppm"))
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


def test_load_dirs(tmp_path):
    imgs = synth_images("shapes", 3, 8, 8, 0)
    for i, im in enumerate(imgs):
        write_ppm(tmp_path / f"img_{i}.ppm", im)
    assert load_images(tmp_path).shape == (3, 8, 8, 3)
    vids = tmp_path / "v"
    for k in range(2):
        (vids / f"clip_{k}").mkdir(parents=True)
        for t in range(3):
            write_ppm(vids / f"clip_{k}" / f"frame_{t}.ppm", imgs[t])
    assert load_videos(vids).shape == (2, 3, 8, 8, 3)
    assert Corpus(kind="file-dir", path=str(vids)).load().shape == (2, 3, 8, 8, 3)
    with pytest.raises(FileNotFoundError):
        load_images(tmp_path / "v" / "clip_0" / "nothing")


def test_empty_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_images(tmp_path)


def test_batches_full_size_is_permutation():
    data = np.arange(10)[:, None].astype(float)
    (only,) = list(batches(data, 10, seed=0))
    assert sorted(only[:, 0]) == list(range(10))


def test_batches_drop_partial_and_seeded():
    data = np.arange(10)[:, None].astype(float)
    a = list(batches(data, 3, seed=5))
    b = list(batches(data, 3, seed=5))
    assert len(a) == 3 and all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        list(batches(data, 0, seed=0))


def test_batch_for_step_walks_epochs():
    data = np.arange(8)[:, None].astype(float)
    epoch0 = list(batches(data, 4, seed=1, epoch=0))
    epoch1 = list(batches(data, 4, seed=1, epoch=1))
    steps = [batch_for_step(data, 4, 1, s) for s in range(4)]
    for got, want in zip(steps, epoch0 + epoch1):
        np.testing.assert_array_equal(got, want)


def test_corpus_kinds():
    assert Corpus(n=4).load().shape == (4, 1, 16, 16, 3)
    assert Corpus(kind="synthetic-video", T=2, n=3).load().shape == (3, 2, 16, 16, 3)
    with pytest.raises(ValueError):
        Corpus(kind="imagenet")
    with pytest.raises(ValueError):
        Corpus(kind="synthetic-textures", T=2).load()
