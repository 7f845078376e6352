import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import frechet_diagonal, ssim_bruteforce
from vitoklab.metrics import FeatureStats, feature_stats, frechet_distance, frechet_proxy, psnr, ssim


def stats(mean, cov, n=10):
    return FeatureStats(np.atleast_1d(np.asarray(mean, float)), np.atleast_2d(np.asarray(cov, float)), n)


# ----------------------------------------------------------------------- PSNR


def test_psnr_examples():
    x = np.zeros((4, 4))
    assert psnr(x, x) == 100.0
    assert psnr(x + 0.1, x) == pytest.approx(20.0)
    assert psnr(x + 1.0, x) == pytest.approx(0.0)
    assert psnr(x + 2.0, x, max_val=2.0) == pytest.approx(0.0)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros(3), np.zeros(4))


def test_psnr_decreases_with_noise():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (32, 32, 3))
    vals = [psnr(x + s * rng.standard_normal(x.shape), x) for s in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


# ----------------------------------------------------------------------- SSIM


def test_ssim_self_is_one():
    x = np.random.default_rng(0).uniform(0, 1, (16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0)


def test_ssim_inverted_binary_is_negative_and_matches_oracle():
    x = (np.random.default_rng(1).uniform(size=(12, 12)) > 0.5).astype(float)
    val = ssim(x, 1 - x)
    assert val < 0
    assert val == pytest.approx(ssim_bruteforce(x, 1 - x), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), h=st.integers(8, 12), w=st.integers(8, 12))
def test_ssim_matches_bruteforce(seed, h, w):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(size=(h, w)), rng.uniform(size=(h, w))
    assert ssim(a, b) == pytest.approx(ssim_bruteforce(a, b), abs=1e-12)


def test_ssim_symmetric_and_channel_average():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=(10, 10, 3)), rng.uniform(size=(10, 10, 3))
    assert ssim(a, b) == ssim(b, a)
    per = np.mean([ssim_bruteforce(a[..., k], b[..., k]) for k in range(3)])
    assert ssim(a, b) == pytest.approx(per, abs=1e-12)


def test_ssim_luminance_vs_structure_ordering():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 0.8, (16, 16))
    shuffled = rng.permutation(x.ravel()).reshape(x.shape)
    shifted = ssim(x, x + 0.1)
    assert ssim(x, shuffled) < shifted < 1.0


def test_ssim_rejects_small_images():
    with pytest.raises(ValueError):
        ssim(np.zeros((7, 9)), np.zeros((7, 9)))


# -------------------------------------------------------------------- Fréchet


def test_frechet_identical_is_zero():
    s = stats([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
    assert frechet_distance(s, s) == pytest.approx(0.0, abs=1e-10)


def test_frechet_one_dimensional():
    assert frechet_distance(stats(0.0, 1.0), stats(1.0, 1.0)) == pytest.approx(1.0, abs=1e-12)


def test_frechet_diagonal_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        ma, mb = rng.normal(size=4), rng.normal(size=4)
        va, vb = rng.uniform(0.1, 3, 4), rng.uniform(0.1, 3, 4)
        got = frechet_distance(stats(ma, np.diag(va)), stats(mb, np.diag(vb)))
        assert got == pytest.approx(frechet_diagonal(ma, va, mb, vb), abs=1e-6)


def random_psd(rng, d):
    a = rng.normal(size=(d, d + 2))
    return a @ a.T / (d + 2)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 6))
def test_frechet_symmetric_nonnegative(seed, d):
    rng = np.random.default_rng(seed)
    a = stats(rng.normal(size=d), random_psd(rng, d))
    b = stats(rng.normal(size=d), random_psd(rng, d))
    ab, ba = frechet_distance(a, b), frechet_distance(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, rel=1e-6, abs=1e-8)


def test_frechet_errors():
    with pytest.raises(ValueError):
        frechet_distance(stats([0.0], [[1.0]]), stats([0.0, 0.0], np.eye(2)))
    with pytest.raises(ValueError):
        frechet_distance(stats([np.nan], [[1.0]]), stats([0.0], [[1.0]]))
    with pytest.raises(ValueError):
        FeatureStats(np.zeros(1), np.eye(1), 1)
    with pytest.raises(ValueError):
        FeatureStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 5)


def test_feature_stats_properties():
    rng = np.random.default_rng(4)
    imgs = rng.uniform(-1, 1, (6, 8, 8, 3))
    dup = np.repeat(imgs[:1], 4, axis=0)
    assert np.abs(feature_stats(dup).cov).max() == 0.0
    s1, s2 = feature_stats(imgs), feature_stats(imgs[::-1])
    np.testing.assert_allclose(s1.mean, s2.mean, atol=1e-12)
    np.testing.assert_allclose(s1.cov, s2.cov, atol=1e-12)
    assert s1.mean.shape == (64,)
    assert frechet_distance(s1, s1) == pytest.approx(0.0, abs=1e-8)
    assert frechet_proxy(imgs, imgs) == pytest.approx(0.0, abs=1e-8)
    with pytest.raises(ValueError):
        feature_stats(imgs[:1])
