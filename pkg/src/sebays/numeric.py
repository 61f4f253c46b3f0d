"""Deterministic numerical substrate shared by every other module.

Random numbers come from counter-based Philox generators keyed on
``(seed, stream_id)``.  Sub-streams are derived from extra integer ids
(epoch, step, event index, ...) so that the draws of one consumer never
depend on how much another consumer has already drawn.
"""

from __future__ import annotations

import copy
from typing import Callable

import numpy as np

# Stream ids, one per purpose.
WEIGHTS = 0
GATES = 1
DATA = 2
AUGMENT = 3
PERTURB = 4
EVAL = 5
INIT = 6

_MASK64 = (1 << 64) - 1


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id, *path)``."""

    def __init__(self, seed: int, stream_id: int, path: tuple[int, ...] = ()):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.path = tuple(int(p) for p in path)
        if self.path:
            words = np.random.SeedSequence(
                [self.seed, self.stream_id, len(self.path), *self.path]
            ).generate_state(2, np.uint64)
            key = (int(words[1]) << 64) | int(words[0])
        else:
            key = (self.stream_id << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, *ids: int) -> "RngStream":
        """Independent child stream; does not advance this one."""
        return RngStream(self.seed, self.stream_id, self.path + tuple(ids))

    def clone(self) -> "RngStream":
        return copy.deepcopy(self)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=None) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def uniform_open(self, shape) -> np.ndarray:
        """Uniform draws on the open interval (0, 1)."""
        # random() yields multiples of 2**-53 in [0, 1); shift by half a step.
        return self._gen.random(shape) + 2.0**-54

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def sample_standard_normal(rng: RngStream, n: int) -> np.ndarray:
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return rng.normal(n)


def log_sum_exp(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = np.max(v)
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a 2-D array."""
    m = np.max(logits, axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    m = np.max(logits, axis=1, keepdims=True)
    e = np.exp(logits - m)
    return e / np.sum(e, axis=1, keepdims=True)


def finite_diff_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    Raises ``FloatingPointError`` naming the coordinate if ``f`` returns a
    non-finite value at either probe point.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(x.shape)
