"""Random cosine feature maps: sampling, embedding, kernel fidelity."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrls.features import (
    FeatureMap,
    derive_map_seed,
    embed,
    embed_many,
    kernel_estimate,
    map_from_json,
    map_to_json,
    sample_feature_map,
)


def test_same_seed_is_bit_identical():
    a = sample_feature_map(7, 256, 1.0, 42)
    b = sample_feature_map(7, 256, 1.0, 42)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.phases, b.phases)


def test_different_seeds_differ():
    a = sample_feature_map(7, 64, 1.0, 1)
    b = sample_feature_map(7, 64, 1.0, 2)
    assert not np.array_equal(a.frequencies, b.frequencies)


def test_sweep_scale_shapes():
    fmap = sample_feature_map(7, 2**14, 1.0, 3)
    assert fmap.frequencies.shape == (7, 16384)
    assert fmap.phases.shape == (16384,)
    assert np.all((fmap.phases >= 0.0) & (fmap.phases < 2.0 * np.pi))


def test_frequency_sample_mean_clt_bound():
    d, n = 2, 10**5
    sigma = 0.5
    fmap = sample_feature_map(d, n, sigma, 9)
    bound = 4.0 / (sigma * math.sqrt(n))
    assert np.max(np.abs(fmap.frequencies.mean(axis=1))) <= bound
    # And the draw scale itself: sd close to 1/sigma.
    assert fmap.frequencies.std() == pytest.approx(1.0 / sigma, rel=0.02)


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        sample_feature_map(0, 4, 1.0, 1)
    with pytest.raises(ValueError):
        sample_feature_map(4, 0, 1.0, 1)
    with pytest.raises(ValueError):
        sample_feature_map(4, 4, 0.0, 1)
    with pytest.raises(ValueError):
        sample_feature_map(4, 4, math.inf, 1)


def test_embed_zero_map_all_equal():
    d, n = 3, 8
    fmap = FeatureMap(
        frequencies=np.zeros((d, n)),
        phases=np.zeros(n),
        input_dim=d,
        feature_dim=n,
        bandwidth=1.0,
        seed=0,
    )
    z = embed(fmap, np.ones(d))
    assert z == pytest.approx(np.full(n, math.sqrt(2.0 / n)))


def test_embed_quarter_phase_is_zero():
    d, n = 3, 8
    fmap = FeatureMap(
        frequencies=np.zeros((d, n)),
        phases=np.full(n, math.pi / 2.0),
        input_dim=d,
        feature_dim=n,
        bandwidth=1.0,
        seed=0,
    )
    assert embed(fmap, np.ones(d)) == pytest.approx(np.zeros(n), abs=1e-15)


def test_embed_dimension_mismatch():
    fmap = sample_feature_map(3, 8, 1.0, 1)
    with pytest.raises(ValueError):
        embed(fmap, np.zeros(4))
    with pytest.raises(ValueError):
        embed_many(fmap, np.zeros((2, 4)))


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_embed_bounded(seed):
    rng = np.random.default_rng(seed)
    fmap = sample_feature_map(5, 32, float(rng.uniform(0.2, 8.0)), seed)
    x = rng.standard_normal(5) * 10.0
    z = embed(fmap, x)
    lim = math.sqrt(2.0 / 32)
    assert np.all(np.abs(z) <= lim + 1e-15)
    assert float(z @ z) <= 2.0 + 1e-12


def test_embed_many_matches_rowwise():
    fmap = sample_feature_map(4, 50, 1.3, 5)
    xs = np.random.default_rng(6).standard_normal((12, 4))
    batch = embed_many(fmap, xs)
    rows = np.asarray([embed(fmap, x) for x in xs])
    assert batch == pytest.approx(rows, abs=1e-15)


@pytest.mark.parametrize("bandwidth", [0.5, 1.0, 8.0])
def test_kernel_monte_carlo_fidelity(bandwidth):
    rng = np.random.default_rng(int(bandwidth * 10))
    fmap = sample_feature_map(7, 2**16, bandwidth, 77)
    for _ in range(12):
        x, x2 = rng.standard_normal(7), rng.standard_normal(7)
        target = math.exp(
            -float(np.sum((x - x2) ** 2)) / (2.0 * bandwidth**2)
        )
        assert kernel_estimate(fmap, x, x2) == pytest.approx(target, abs=0.02)


def test_kernel_self_estimate_near_one():
    fmap = sample_feature_map(7, 2**14, 1.0, 8)
    x = np.random.default_rng(3).standard_normal(7)
    k = kernel_estimate(fmap, x, x)
    assert 0.0 <= k <= 2.0
    assert k == pytest.approx(1.0, abs=0.05)


def test_kernel_antipodal_phase_invariance():
    fmap = sample_feature_map(4, 512, 1.0, 13)
    flipped = FeatureMap(
        frequencies=fmap.frequencies,
        phases=(fmap.phases + math.pi) % (2.0 * math.pi),
        input_dim=fmap.input_dim,
        feature_dim=fmap.feature_dim,
        bandwidth=fmap.bandwidth,
        seed=fmap.seed,
    )
    rng = np.random.default_rng(14)
    x, x2 = rng.standard_normal(4), rng.standard_normal(4)
    assert embed(flipped, x) == pytest.approx(-embed(fmap, x), abs=1e-12)
    assert kernel_estimate(flipped, x, x2) == pytest.approx(
        kernel_estimate(fmap, x, x2), abs=1e-12
    )


def test_json_round_trip_regenerates_arrays():
    fmap = sample_feature_map(7, 128, 2.5, 99)
    clone = map_from_json(map_to_json(fmap))
    assert clone.seed == fmap.seed
    assert clone.bandwidth == fmap.bandwidth
    assert np.array_equal(clone.frequencies, fmap.frequencies)
    assert np.array_equal(clone.phases, fmap.phases)
    assert "frequencies" not in map_to_json(fmap)


def test_derive_map_seed_stable_and_distinct():
    s = derive_map_seed(1, 64)
    assert s == derive_map_seed(1, 64)
    assert s != derive_map_seed(1, 128)
    assert s != derive_map_seed(2, 64)
    assert 0 <= s < 2**64
