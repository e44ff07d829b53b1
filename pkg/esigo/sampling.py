"""
Point sets and random streams.

Flow evaluations use one fixed scrambled Sobol point set per run, mapped to
standard normal coordinates through the inverse normal CDF. Discrete runs draw
from a counter-based Philox stream keyed on (iteration, attempt), so every
iteration and every retry of a rejected step has its own reproducible substream.
"""

import logging
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

logger = logging.getLogger(__name__)

_UNIT_EPS = 2.0 ** -53


def uniform_to_normal(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF map of uniforms, clipped away from 0 and 1"""
    return ndtri(np.clip(u, _UNIT_EPS, 1.0 - _UNIT_EPS))


def sobol_normal_points(n: int, dim: int, seed: int = 0, scramble: bool = True) -> np.ndarray:
    """n low-discrepancy standard normal points in dimension dim"""
    if n < 1 or dim < 1:
        raise ValueError(f"need positive n and dim, got n={n}, dim={dim}")
    engine = qmc.Sobol(d=dim, scramble=scramble, seed=np.random.default_rng(seed))
    if n & (n - 1) == 0:
        u = engine.random_base2(int(np.log2(n)))
    else:
        u = engine.random(n)
    return uniform_to_normal(u)


class GaussianStream:
    """
    Reproducible standard normal draws indexed by (index, attempt).

    Draw (k, a) comes from Philox with key seed + a * 2**64, jumped k + 1
    times. A retry of step k therefore draws fresh samples without moving
    the draws of any other step. Without an explicit index, draws take
    consecutive indices from an internal counter.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValueError(f"seed must fit in 64 bits, got {seed}")
        self.seed = int(seed)
        self.counter = 0

    def _generator(self, index: int, attempt: int = 0) -> np.random.Generator:
        key = self.seed + (int(attempt) << 64)
        return np.random.Generator(np.random.Philox(key=key).jumped(int(index) + 1))

    def draw(self, shape, index: Optional[int] = None, attempt: int = 0) -> np.ndarray:
        if index is None:
            index = self.counter
            self.counter += 1
        generator = self._generator(index, attempt)
        # 53-bit integers shifted by one half land strictly inside (0, 1)
        bits = generator.integers(0, 2**53, size=shape, dtype=np.int64)
        u = (bits.astype(float) + 0.5) * _UNIT_EPS
        return ndtri(u)
