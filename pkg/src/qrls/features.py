"""Random Fourier feature maps for the Gaussian kernel.

A map draws frequencies A (input_dim x feature_dim) with entries
Normal(0, bandwidth**-2) and phases b Uniform[0, 2*pi), and embeds an
input x as

    z = sqrt(2 / feature_dim) * cos(A.T @ x + b),

so that z(x) . z(x') approximates exp(-||x - x'||^2 / (2 * bandwidth**2)).
The bandwidth is a length-scale, not a variance: larger bandwidth means
a flatter kernel.  Cosine-only features with random phases are used (not
the paired cos/sin variant).

Sampling uses the counter-based Philox generator so that a (seed,
dimensions, bandwidth) tuple reproduces bit-identical maps across
platforms and processes; serialization therefore stores only those
scalars and regenerates the arrays on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FeatureMap",
    "sample_feature_map",
    "embed",
    "embed_many",
    "kernel_estimate",
    "map_to_json",
    "map_from_json",
    "derive_map_seed",
]


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Immutable randomized cosine basis; share freely across threads."""

    frequencies: np.ndarray  # input_dim x feature_dim
    phases: np.ndarray  # feature_dim
    input_dim: int
    feature_dim: int
    bandwidth: float
    seed: int


def sample_feature_map(
    input_dim: int, feature_dim: int, bandwidth: float, seed: int
) -> FeatureMap:
    """Draw a feature map; deterministic per seed."""
    if input_dim < 1 or feature_dim < 1:
        raise ValueError(f"dimensions must be positive, got {input_dim}x{feature_dim}")
    if not (bandwidth > 0.0 and math.isfinite(bandwidth)):
        raise ValueError(f"bandwidth must be positive and finite, got {bandwidth}")
    rng = np.random.Generator(np.random.Philox(seed))
    freqs = rng.normal(0.0, 1.0 / bandwidth, size=(input_dim, feature_dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=feature_dim)
    freqs.setflags(write=False)
    phases.setflags(write=False)
    return FeatureMap(
        frequencies=freqs,
        phases=phases,
        input_dim=input_dim,
        feature_dim=feature_dim,
        bandwidth=float(bandwidth),
        seed=int(seed),
    )


def embed(fmap: FeatureMap, x: np.ndarray) -> np.ndarray:
    """Embed one input; every entry lies in [-sqrt(2/D), sqrt(2/D)]."""
    x = np.asarray(x, dtype=float)
    if x.shape != (fmap.input_dim,):
        raise ValueError(f"expected input of shape ({fmap.input_dim},), got {x.shape}")
    z = x @ fmap.frequencies
    z += fmap.phases
    np.cos(z, out=z)
    z *= math.sqrt(2.0 / fmap.feature_dim)
    return z


def embed_many(fmap: FeatureMap, xs: np.ndarray) -> np.ndarray:
    """Embed a batch of rows at once (same result as row-wise embed)."""
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 2 or xs.shape[1] != fmap.input_dim:
        raise ValueError(f"expected (n, {fmap.input_dim}) inputs, got {xs.shape}")
    z = xs @ fmap.frequencies
    z += fmap.phases
    np.cos(z, out=z)
    z *= math.sqrt(2.0 / fmap.feature_dim)
    return z


def kernel_estimate(fmap: FeatureMap, x: np.ndarray, x2: np.ndarray) -> float:
    """Monte-Carlo Gaussian kernel value z(x) . z(x2), in [-2, 2]."""
    return float(embed(fmap, x) @ embed(fmap, x2))


def map_to_json(fmap: FeatureMap) -> str:
    """Serialize the generating scalars; arrays are never stored."""
    return json.dumps(
        {
            "input_dim": fmap.input_dim,
            "feature_dim": fmap.feature_dim,
            "bandwidth": fmap.bandwidth,
            "seed": fmap.seed,
        }
    )


def map_from_json(doc: str) -> FeatureMap:
    """Rebuild a map from its JSON document by re-sampling from the seed."""
    obj = json.loads(doc)
    return sample_feature_map(
        int(obj["input_dim"]),
        int(obj["feature_dim"]),
        float(obj["bandwidth"]),
        int(obj["seed"]),
    )


def derive_map_seed(base_seed: int, feature_dim: int) -> int:
    """Stable per-dimension sub-seed so sweep lanes are order-independent."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(feature_dim),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
