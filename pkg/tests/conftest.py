"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mtsu import SpectralLibrary


def make_library(rng, bands=24, counts=(2, 3), spread=0.1):
    """Small random library with uniform means and Gaussian spread."""
    sigs = []
    for c in counts:
        mean = rng.uniform(0.15, 0.85, size=bands)
        sigs.append(np.clip(mean + spread * rng.standard_normal((c, bands)), 0.0, 1.0))
    return SpectralLibrary(tuple(sigs))


def block_library(rng, bands, counts, spread, base=0.5):
    """Library whose within-material differences live on disjoint band blocks.

    Outside its own block every signature equals ``base``, so difference
    vectors of distinct materials have exactly zero inner product.
    """
    mats = len(counts)
    block = bands // mats
    assert block >= 1
    sigs = []
    for p, c in enumerate(counts):
        rows = np.full((c, bands), base)
        lo, hi = p * block, (p + 1) * block
        rows[:, lo:hi] = base + spread * rng.uniform(-1.0, 1.0, size=(c, hi - lo))
        sigs.append(np.clip(rows, 0.0, 1.0))
    return SpectralLibrary(tuple(sigs))


def random_simplex(rng, size, floor=0.0, alpha=1.0):
    """Dirichlet draw, optionally rejected until every entry clears a floor."""
    while True:
        a = rng.dirichlet(np.full(size, alpha))
        if a.min() >= floor:
            return a


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
