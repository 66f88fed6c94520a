"""Sobol point streams in the unit cube."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import qmc

MAX_DIM = 21201  # size of the Joe-Kuo direction-number table shipped with scipy


class SobolStream:
    """Stateful Sobol sequence.

    With ``seed=None`` this is the canonical unscrambled sequence, whose
    first point (index 0) is the origin and second is ``(0.5, ..., 0.5)``.
    A seed switches on Owen scrambling; the stream stays deterministic for a
    fixed ``(dim, skip, seed)``.
    """

    def __init__(self, dim: int, skip: int = 0, seed: int | None = None):
        if not 1 <= dim <= MAX_DIM:
            raise ValueError(f"Sobol dimension {dim} not supported (1..{MAX_DIM})")
        self.dim = dim
        self.seed = seed
        self._engine = qmc.Sobol(dim, scramble=seed is not None, seed=seed)
        if skip:
            self._engine.fast_forward(skip)
        self.index = skip

    def next(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.empty((0, self.dim))
        with warnings.catch_warnings():
            # balance warnings for non power-of-two draws are irrelevant here
            warnings.simplefilter("ignore", UserWarning)
            pts = self._engine.random(n)
        self.index += n
        return pts


def sobol_next(stream: SobolStream, n: int) -> np.ndarray:
    return stream.next(n)
