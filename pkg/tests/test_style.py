import numpy as np
import pytest

from stylerepair.errors import BackendUnavailableError, ValidationError
from stylerepair.style import FeatureStats, MomentMatching, get_backend, haar_asset, transfer


def test_self_transfer_is_identity(images):
    for x in images:
        np.testing.assert_allclose(transfer(x, x), x, atol=1e-5)


def test_constant_style_gives_constant_output(images):
    style = np.empty((8, 8, 3))
    style[...] = [0.1, 0.5, 0.9]
    out = transfer(images[0], style)
    np.testing.assert_allclose(out, np.broadcast_to([0.1, 0.5, 0.9], out.shape), atol=1e-6)


def test_worked_single_channel_example():
    content = np.array([0.2, 0.4, 0.6, 0.8]).reshape(2, 2, 1)
    style = np.array([0.2, 0.4, 0.2, 0.4]).reshape(2, 2, 1)  # mean .3, population std .1
    out = transfer(content, style)
    np.testing.assert_allclose(out.ravel(), [0.1658, 0.2553, 0.3447, 0.4342], atol=1e-4)


def test_statistics_match_style_without_clamping():
    rng = np.random.default_rng(0)
    content = rng.uniform(size=(16, 16, 3))
    style = 0.5 + 0.05 * rng.normal(size=(20, 12, 3))  # different size, narrow range
    out = transfer(content, style).astype(np.float64)
    np.testing.assert_allclose(out.mean((0, 1)), style.mean((0, 1)), atol=1e-4)
    np.testing.assert_allclose(out.std((0, 1)), style.std((0, 1)), atol=1e-4)


def test_zero_variance_content_maps_to_style_mean():
    content = np.full((4, 4, 3), 0.7)
    style = np.random.default_rng(1).uniform(size=(4, 4, 3))
    np.testing.assert_allclose(transfer(content, style), np.broadcast_to(style.mean((0, 1)), (4, 4, 3)),
                               atol=1e-6)


def test_covariance_mode_matches_colour_covariance():
    rng = np.random.default_rng(2)
    content = rng.uniform(0.3, 0.7, size=(24, 24, 3))
    mix = np.array([[1.0, 0.5, 0.0], [0.0, 1.0, 0.3], [0.2, 0.0, 1.0]])
    style = 0.5 + 0.04 * rng.normal(size=(24, 24, 3)) @ mix
    out = MomentMatching(covariance=True, eps=0.0)(content, style).astype(np.float64)
    cov = lambda a: np.cov(a.reshape(-1, 3), rowvar=False, bias=True)  # noqa: E731
    np.testing.assert_allclose(cov(out), cov(style), atol=1e-5)
    np.testing.assert_allclose(out.mean((0, 1)), style.mean((0, 1)), atol=1e-5)


def test_channel_mismatch_rejected():
    with pytest.raises(ValidationError):
        transfer(np.zeros((4, 4, 3)), np.zeros((4, 4, 1)))


def test_output_clamped(images):
    style = np.random.default_rng(3).normal(0.5, 2.0, size=(8, 8, 3)).clip(0, 1)
    out = transfer(images[0], style)
    assert out.min() >= 0 and out.max() <= 1


def test_feature_backend_missing_asset(tmp_path):
    with pytest.raises(BackendUnavailableError):
        FeatureStats(tmp_path / "nope.npz")
    with pytest.raises(BackendUnavailableError):
        get_backend("feature", None)


def test_feature_backend_reconstruction_and_range(tmp_path, images):
    backend = FeatureStats(haar_asset(tmp_path / "haar.npz"))
    for x in images[:4]:
        assert np.abs(backend(x, x) - x).mean() < 0.05
    out = backend(images[0], images[1])
    assert out.shape == images[0].shape
    assert out.min() >= 0 and out.max() <= 1
