"""Heavy-tailed samplers, reproducible random streams and tail-moment diagnostics.

Every random draw in the package comes from :func:`stream`, which derives an
independent Philox (counter-based, 64-bit) generator from a master seed and a
tuple of integer keys, e.g. ``(STREAM_BATCH, worker, family)``.  Identical keys
give bit-identical sequences regardless of the order streams are created in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NOISE_KINDS = ("cauchy", "pareto", "gaussian", "none")

# first stream key of each consumer
STREAM_DATA = 1
STREAM_BATCH = 2
STREAM_NOISE = 3
STREAM_INIT = 4
STREAM_SHUFFLE = 5

_TWO53 = float(2**53)


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    scale: float = 1.0
    pareto_shape: float = 1.5
    seed_stream: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"noise kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if self.scale < 0:
            raise ValueError(f"noise scale must be nonnegative, got {self.scale}")
        if self.kind == "pareto" and not 1.0 < self.pareto_shape < 3.0:
            raise ValueError(f"pareto_shape must lie in (1, 3), got {self.pareto_shape}")


def open_uniform(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1), on a 2**-53 grid."""
    return (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) / _TWO53


def sample(spec: NoiseSpec, rng: np.random.Generator, size=None):
    if spec.kind == "none" or spec.scale == 0.0:
        return 0.0 if size is None else np.zeros(size)
    if spec.kind == "gaussian":
        return spec.scale * rng.standard_normal(size)
    u = open_uniform(rng, size)
    if spec.kind == "cauchy":
        return spec.scale * np.tan(np.pi * (u - 0.5))
    # symmetrized Pareto: magnitude scale*(U^{-1/a} - 1), sign from a second draw
    sign = np.where(open_uniform(rng, size) < 0.5, -1.0, 1.0)
    return sign * spec.scale * (u ** (-1.0 / spec.pareto_shape) - 1.0)


def empirical_moment(samples, s: float) -> float:
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("empirical_moment needs at least one sample")
    if not 1.0 < s <= 2.0:
        raise ValueError(f"moment order s must lie in (1, 2], got {s}")
    return float(np.mean(np.abs(x) ** s))


def inject(gradient, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. per-coordinate noise.  Cauchy noise is symmetric but has no mean."""
    g = np.asarray(gradient, dtype=float)
    if spec.kind == "none" or spec.scale == 0.0:
        return g.copy()
    return g + sample(spec, rng, g.shape)
