"""Deterministic, splittable random streams.

Every stochastic subsystem (field generation, detection noise, prior noise,
exploration, minibatch sampling, ...) draws from its own stream so that runs
replay bit-exactly no matter how the subsystems interleave. Streams are
counter-based (Philox) and keyed by (seed, stream_id, *sub_ids); two distinct
keys never share state.
"""

from __future__ import annotations

import math

import numpy as np

# Fixed top-level stream ids, one per stochastic subsystem. Keeping them in
# one table avoids accidental reuse across modules.
STREAM_FIELD = 1
STREAM_DETECTION = 2
STREAM_PRIOR = 3
STREAM_START = 4
STREAM_EXPLORE = 5
STREAM_MINIBATCH = 6
STREAM_INIT = 7
STREAM_VALIDATION = 8
STREAM_EVAL = 9
STREAM_POLICY = 10


class RngStream:
    """One named substream of a master seed.

    `counter` counts API-level draws (scalars drawn, or elements of array
    draws); log headers record it so any prefix can be replayed by recreating
    the stream and drawing the same number of values.
    """

    def __init__(self, seed: int, stream_id: int, sub_ids: tuple[int, ...] = ()):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.sub_ids = tuple(int(s) for s in sub_ids)
        self.counter = 0
        key = (self.stream_id,) + self.sub_ids
        seq = np.random.SeedSequence(self.seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={(self.stream_id,) + self.sub_ids}, counter={self.counter})"

    @property
    def key(self) -> tuple[int, ...]:
        return (self.stream_id,) + self.sub_ids

    def derive(self, *sub_ids: int) -> "RngStream":
        """Child stream with an extended key, independent of this one.

        Deriving does not consume draws from the parent.
        """
        return RngStream(self.seed, self.stream_id, self.sub_ids + tuple(int(s) for s in sub_ids))

    def _count(self, size) -> None:
        if size is None:
            self.counter += 1
        else:
            self.counter += int(np.prod(size))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        """Uniform draw(s) in [low, high)."""
        self._count(size)
        return self._gen.uniform(low, high, size)

    def normal(self, mean: float = 0.0, std: float = 0.0, size=None):
        """Normal draw(s); std=0 returns the mean exactly.

        An underlying standard-normal variate is consumed either way so the
        draw counter advances identically for degenerate configurations.
        """
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        self._count(size)
        z = self._gen.standard_normal(size)
        return mean + std * z

    def integers(self, low: int, high: int, size=None):
        """Uniform integer draw(s) in [low, high)."""
        self._count(size)
        return self._gen.integers(low, high, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        """k distinct indices drawn uniformly from range(n)."""
        if k > n:
            raise ValueError(f"cannot draw {k} distinct values from {n}")
        self.counter += k
        return self._gen.choice(n, size=k, replace=False)

    def mvn2(self, mean, cov, size: int | None = None):
        """Bivariate normal draw(s) via an analytic 2x2 Cholesky factor.

        cov must be symmetric positive semidefinite; a zero-variance axis
        zeroes its Cholesky column so degenerate covariances are exact
        (cov=0 returns the mean bit-for-bit). Two standard-normal variates
        are consumed per sample regardless of degeneracy.
        """
        mean = np.asarray(mean, dtype=float)
        el = _cholesky2(np.asarray(cov, dtype=float))
        n = 1 if size is None else int(size)
        self.counter += 2 * n
        z = self._gen.standard_normal((n, 2))
        out = mean + z @ el.T
        return out[0] if size is None else out


def _cholesky2(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == cov for a 2x2 PSD matrix."""
    if cov.shape != (2, 2):
        raise ValueError(f"covariance must be 2x2, got {cov.shape}")
    a, b, c = cov[0, 0], cov[0, 1], cov[1, 1]
    scale = max(1.0, abs(a), abs(c))
    tol = 1e-9 * scale
    if abs(cov[1, 0] - b) > tol:
        raise ValueError("covariance must be symmetric")
    if a < -tol or c < -tol or a * c - b * b < -tol * scale:
        raise ValueError("covariance must be positive semidefinite")
    a = max(a, 0.0)
    if a == 0.0:
        if abs(b) > tol:
            raise ValueError("covariance must be positive semidefinite")
        return np.array([[0.0, 0.0], [0.0, math.sqrt(max(c, 0.0))]])
    l11 = math.sqrt(a)
    l21 = b / l11
    l22 = math.sqrt(max(c - l21 * l21, 0.0))
    return np.array([[l11, 0.0], [l21, l22]])
