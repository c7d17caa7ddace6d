"""Exhaustive model search: minimality, tie-breaking, calibration, counts."""

import math

import numpy as np
import pytest

import mtsu
from mtsu import ModelIndex, RunLedger, calibrate_threshold, mesma_pixel, mesma_sequence
from mtsu.core import model_index_array
from mtsu.mesma import _scan_blocks

from conftest import make_library, random_simplex


def test_single_model_library_equals_one_fcls(rng):
    lib = make_library(rng, bands=20, counts=(1, 1, 1))
    y = rng.uniform(size=20)
    ledger = RunLedger()
    res = mesma_pixel(lib, y, ledger)
    direct = mtsu.fcls(mtsu.realize_model(lib, ModelIndex((1, 1, 1))), y)
    assert res.model == ModelIndex((1, 1, 1))
    assert np.max(np.abs(res.abundance - direct.abundance)) < 1e-12
    assert abs(res.residual_norm - direct.residual_norm) < 1e-12
    assert ledger.fcls_calls == 1


def test_noiseless_model_recovery_by_enumeration(rng):
    # well separated signatures: the generating model must win with zero residual
    lib = make_library(rng, bands=40, counts=(2, 2), spread=0.25)
    idx = model_index_array(lib)
    for row in idx:
        model = ModelIndex(tuple(int(j) for j in row))
        a = random_simplex(rng, 2, floor=0.2)
        y = mtsu.realize_model(lib, model) @ a
        res = mesma_pixel(lib, y)
        assert res.model == model
        assert res.residual_norm <= 1e-8


def test_tie_breaks_to_lowest_lexicographic_index(rng):
    # duplicating a signature creates exactly tied models; the first wins
    base = make_library(rng, bands=16, counts=(1, 2))
    dup = np.vstack([base.signatures[0], base.signatures[0]])
    lib = mtsu.SpectralLibrary((dup, base.signatures[1]))
    y = rng.uniform(size=16)
    res = mesma_pixel(lib, y)
    assert res.model.indices[0] == 1


def test_residual_matches_reported_model(rng):
    lib = make_library(rng, bands=18, counts=(2, 2))
    y = rng.uniform(size=18)
    res = mesma_pixel(lib, y)
    recomputed = np.linalg.norm(y - mtsu.realize_model(lib, res.model) @ res.abundance)
    assert abs(res.residual_norm - recomputed) <= 1e-9


def test_global_minimality_over_all_models(rng):
    lib = make_library(rng, bands=22, counts=(2, 3))
    y = rng.uniform(size=22)
    best = mesma_pixel(lib, y)
    for row in model_index_array(lib):
        model = ModelIndex(tuple(int(j) for j in row))
        single = mtsu.fcls(mtsu.realize_model(lib, model), y)
        assert best.residual_norm <= single.residual_norm + 1e-9


def test_block_fallback_matches_cached_path(rng):
    lib = make_library(rng, bands=14, counts=(2, 2))
    y = rng.uniform(size=14)
    fast = mesma_pixel(lib, y)
    model, abundance, residual = _scan_blocks(lib, y)
    assert model == fast.model
    assert np.max(np.abs(abundance - fast.abundance)) < 1e-10
    assert abs(residual - fast.residual_norm) < 1e-10


def test_scaling_invariance_of_argmin(rng):
    # exact halving keeps every float computation on the same branch
    lib = make_library(rng, bands=20, counts=(2, 2))
    y = rng.uniform(size=20)
    scaled_lib = mtsu.SpectralLibrary(tuple(0.5 * s for s in lib.signatures))
    base = mesma_pixel(lib, y)
    scaled = mesma_pixel(scaled_lib, 0.5 * y)
    assert scaled.model == base.model
    assert scaled.residual_norm == pytest.approx(0.5 * base.residual_norm, rel=1e-12)


def test_sequence_wraps_pixel_and_counts(rng):
    lib = make_library(rng, bands=12, counts=(2, 2))
    data = rng.uniform(size=(1, 1, 12))
    field, ledger = mesma_sequence(lib, mtsu.HyperspectralSequence(data))
    single = mesma_pixel(lib, data[0, 0])
    assert np.max(np.abs(field.abundances[0, 0] - single.abundance)) < 1e-12
    assert tuple(field.models[0, 0]) == single.model.indices
    assert ledger.fcls_calls == lib.model_count()


def test_sequence_fcls_call_identity(rng):
    lib = make_library(rng, bands=10, counts=(2, 2))
    data = rng.uniform(size=(2, 10, 10))
    _, ledger = mesma_sequence(lib, mtsu.HyperspectralSequence(data))
    assert ledger.fcls_calls == 2 * 10 * 4 == 80
    assert ledger.wall_time > 0.0


def test_high_snr_model_identification_rate():
    # moderate library variance at 40 dB: nearly every model call is exact
    cfg = mtsu.SynthConfig(L=200, N=150, T=2, P=3, C_p=3, sigma_lib2=0.12,
                           snr_db=40.0, kappa=0.0, seed=61)
    lib, seq, truth = mtsu.generate_dataset(cfg)
    field, _ = mesma_sequence(lib, seq)
    assert mtsu.ppv_m(truth.models, field.models) >= 0.95


def test_calibration_zero_for_pure_library_pixels(rng):
    lib = make_library(rng, bands=25, counts=(2, 2), spread=0.2)
    pixels = np.stack([lib.signatures[0][0], lib.signatures[1][1]])
    assert calibrate_threshold(lib, pixels, 17.0) <= 1e-7


def test_calibration_single_pixel_definition(rng):
    lib = make_library(rng, bands=15, counts=(2, 2))
    y = rng.uniform(size=15)
    r = mesma_pixel(lib, y).residual_norm
    assert calibrate_threshold(lib, y[None, :], 3.0) == pytest.approx(3.0 * r, rel=1e-12)


def test_calibration_tracks_noise_floor():
    # Monte-Carlo: mean optimal residual of a noisy frame sits near sqrt(L) * sigma
    cfg = mtsu.SynthConfig(L=60, N=40, T=1, P=3, C_p=2, sigma_lib2=0.1,
                           snr_db=30.0, kappa=0.0, seed=11)
    lib, seq, truth = mtsu.generate_dataset(cfg)
    noise = seq.data - truth.clean
    sigma = float(noise.std())
    threshold = calibrate_threshold(lib, seq.data[0], 10.0)
    estimate = 10.0 * math.sqrt(cfg.L) * sigma
    assert abs(threshold - estimate) / estimate < 0.2


def test_calibration_rejects_empty_set(rng):
    lib = make_library(rng, bands=10, counts=(1, 1))
    with pytest.raises(mtsu.ValidationError):
        calibrate_threshold(lib, np.empty((0, 10)), 1.0)


def test_pixel_shape_errors(rng):
    lib = make_library(rng, bands=10, counts=(1, 1))
    with pytest.raises(mtsu.ShapeError):
        mesma_pixel(lib, np.ones(9))
    with pytest.raises(mtsu.ValidationError):
        mesma_pixel(lib, np.full(10, np.nan))
