"""Smoke tests for the Python bindings: shapes, determinism, known values."""

import math

import numpy as np
import pytest

import maskspec


def test_logmel_shape_and_determinism():
    rng = np.random.default_rng(7)
    samples = (0.3 * rng.standard_normal(16000 * 8)).astype(np.float32)
    mel_a = maskspec.logmel(samples)
    mel_b = maskspec.logmel(samples)
    assert mel_a.shape == (128, 800)
    assert np.array_equal(mel_a, mel_b)


def test_logmel_pads_short_input():
    samples = np.zeros(1000, dtype=np.float32)
    mel = maskspec.logmel(samples)
    assert mel.shape == (128, 800)


def test_grid_shapes():
    mel = np.arange(128 * 800, dtype=np.float32).reshape(128, 800) / 1e5
    patches = maskspec.patch_vectors(mel)
    frames = maskspec.frame_vectors(mel)
    assert patches.shape == (50 * 8, 256)
    assert frames.shape == (50 * 8, 256)


def test_segment_mask_properties():
    masked = maskspec.sample_segment_mask(50, seed=3)
    assert masked == sorted(set(masked))
    assert len(masked) >= 1
    assert all(0 <= i < 50 for i in masked)
    assert masked == maskspec.sample_segment_mask(50, seed=3)


def test_patch_mask_is_exact_ratio():
    masked = maskspec.sample_patch_mask(400, ratio=0.6, seed=1)
    assert len(masked) == 240
    assert len(set(masked)) == 240


def test_mask_marginals_recursion_and_fixed_point():
    q = maskspec.segment_mask_marginals(50, 0.6, 0.2)
    assert q[0] == pytest.approx(0.6)
    assert q[1] == pytest.approx(0.6 + 0.4 * 0.6 * 0.2)
    fp = maskspec.segment_mask_fixed_point(0.6, 0.2)
    assert fp == pytest.approx(0.6 / (1 - 0.4 * 0.2))
    assert q[-1] == pytest.approx(fp, abs=1e-6)


def test_kmeans_separates_obvious_clusters():
    rng = np.random.default_rng(0)
    a = rng.normal(0.0, 0.05, size=(40, 3))
    b = rng.normal(5.0, 0.05, size=(40, 3))
    pts = np.vstack([a, b]).astype(np.float32)
    centroids = maskspec.fit_kmeans(pts, 2, seed=11)
    assert centroids.shape == (2, 3)
    labels = {maskspec.assign(row, centroids) for row in a.astype(np.float32)}
    assert len(labels) == 1
    assert maskspec.assign(b[0].astype(np.float32), centroids) not in labels


def test_lr_schedule_endpoints():
    assert maskspec.lr_at(0, 1000) == 1e-6
    assert maskspec.lr_at(100, 1000) == 1e-4
    assert maskspec.lr_at(1000, 1000) == 1e-6


def test_cross_entropy_uniform_logits():
    logits = np.zeros(100)
    assert maskspec.cross_entropy(logits, 42) == pytest.approx(math.log(100))


def test_total_loss_identity():
    assert maskspec.total_loss(2.0, 4.0, 0.75) == pytest.approx(0.75 * 4.0 + 0.25 * 2.0)
    assert maskspec.total_loss(2.0, 4.0, 0.0) == 2.0
    assert maskspec.total_loss(2.0, 4.0, 1.0) == 4.0


def test_parameter_count_matches_published_scale():
    encoder = maskspec.encoder_parameter_count(768, 12, 12, 4)
    assert abs(encoder - 89_000_000) / 89_000_000 < 0.05


def test_gradients_match_finite_differences():
    assert maskspec.gradcheck_max_rel_err(seed=5) < 1e-4
