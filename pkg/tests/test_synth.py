"""Synthetic protocol: determinism, change accounting, SNR, variance."""

import math

import numpy as np
import pytest

import mtsu
from mtsu import SynthConfig, generate_library, library_variance


def test_zero_variance_duplicates_means():
    lib = generate_library(30, 2, 3, 0.0, seed=1)
    for sigs in lib.signatures:
        assert np.array_equal(sigs[0], sigs[1])
        assert np.array_equal(sigs[0], sigs[2])


def test_library_determinism():
    a = generate_library(50, 3, 4, 0.1, seed=42)
    b = generate_library(50, 3, 4, 0.1, seed=42)
    assert a.matches(b)
    c = generate_library(50, 3, 4, 0.1, seed=43)
    assert not a.matches(c)


def test_clamped_variance_near_target():
    # clamping to [0, 1] shrinks the realized spread, but not past 40%
    estimates = [library_variance(generate_library(200, 3, 4, 0.12, seed=s))
                 for s in range(8)]
    mean_est = float(np.mean(estimates))
    assert abs(mean_est - 0.12) / 0.12 < 0.4


def test_variance_two_signature_identity(rng):
    m = rng.uniform(0.2, 0.8, size=40)
    m2 = np.clip(m + 0.05 * rng.standard_normal(40), 0, 1)
    lib = mtsu.SpectralLibrary((np.stack([m, m2]),))
    expected = float(np.sum((m - m2) ** 2) / 2.0) / 40.0
    assert library_variance(lib) == pytest.approx(expected, rel=1e-12)


def test_variance_zero_for_identical_signatures():
    lib = mtsu.SpectralLibrary((np.full((3, 10), 0.4),))
    assert library_variance(lib) == pytest.approx(0.0, abs=1e-30)


def test_variance_undefined_for_singletons():
    lib = mtsu.SpectralLibrary((np.full((1, 10), 0.4), np.full((1, 10), 0.6)))
    with pytest.raises(mtsu.ValidationError):
        library_variance(lib)


def test_variance_estimator_consistency_without_clamping(rng):
    # means pinned at 0.5 and a small spread keep clamping negligible
    target = 0.002
    estimates = []
    for seed in range(20):
        local = np.random.default_rng(seed)
        sigs = []
        for _ in range(3):
            mean = local.uniform(0.35, 0.65, size=150)
            sigs.append(np.clip(mean + math.sqrt(target) * local.standard_normal((4, 150)), 0, 1))
        estimates.append(library_variance(mtsu.SpectralLibrary(tuple(sigs))))
    assert abs(float(np.mean(estimates)) - target) / target < 0.15


def test_constant_scene_when_nothing_changes():
    cfg = SynthConfig(L=25, N=12, T=5, P=2, C_p=2, kappa=0.0, delta_std=0.0,
                      snr_db=40.0, seed=7)
    lib, seq, truth = mtsu.generate_dataset(cfg)
    for t in range(1, cfg.T):
        assert np.array_equal(truth.abundances.abundances[t], truth.abundances.abundances[0])
    assert truth.change_truth.flags.sum() == 0


def test_noise_free_sequence_is_exact():
    cfg = SynthConfig(L=25, N=6, T=3, P=2, C_p=2, kappa=0.3, snr_db=math.inf, seed=8)
    lib, seq, truth = mtsu.generate_dataset(cfg)
    assert np.array_equal(seq.data, truth.clean)
    assert math.isinf(mtsu.realized_snr_db(seq.data, truth.clean))


def test_changed_pixel_count_exact_without_replacement():
    cfg_base = dict(L=20, N=1000, T=4, P=2, C_p=2, kappa=0.05, snr_db=30.0)
    for seed in range(10):
        _, _, truth = mtsu.generate_dataset(SynthConfig(seed=seed, **cfg_base))
        per_step = truth.change_truth.flags[1:].sum(axis=1)
        assert (per_step == 50).all()


def test_kappa_ceiling_guard():
    # 0.3 * 10 hovers just above 3 in floats; the count must stay 3
    cfg = SynthConfig(L=20, N=10, T=2, P=2, C_p=2, kappa=0.3, snr_db=30.0, seed=0)
    _, _, truth = mtsu.generate_dataset(cfg)
    assert truth.change_truth.flags[1].sum() == 3


def test_realized_snr_exact():
    for snr in (20.0, 35.0, 50.0):
        cfg = SynthConfig(L=40, N=30, T=3, P=3, C_p=2, kappa=0.1, snr_db=snr, seed=3)
        _, seq, truth = mtsu.generate_dataset(cfg)
        assert mtsu.realized_snr_db(seq.data, truth.clean) == pytest.approx(snr, abs=1e-9)


def test_sequence_determinism_bitwise():
    cfg = SynthConfig(L=30, N=20, T=4, P=3, C_p=3, kappa=0.2, delta_std=0.01,
                      snr_db=25.0, seed=123)
    lib1, seq1, truth1 = mtsu.generate_dataset(cfg)
    lib2, seq2, truth2 = mtsu.generate_dataset(cfg)
    assert lib1.matches(lib2)
    assert np.array_equal(seq1.data, seq2.data)
    assert np.array_equal(truth1.abundances.abundances, truth2.abundances.abundances)
    assert np.array_equal(truth1.models, truth2.models)
    assert np.array_equal(truth1.change_truth.flags, truth2.change_truth.flags)


def test_abundances_stay_on_simplex_with_jitter():
    cfg = SynthConfig(L=20, N=40, T=6, P=4, C_p=2, kappa=0.1, delta_std=0.2,
                      snr_db=30.0, seed=17)
    _, _, truth = mtsu.generate_dataset(cfg)
    a = truth.abundances.abundances
    assert a.min() >= 0.0
    assert np.max(np.abs(a.sum(axis=2) - 1.0)) < 1e-12


def test_jitter_moves_unchanged_pixels():
    cfg = SynthConfig(L=20, N=30, T=3, P=3, C_p=2, kappa=0.0, delta_std=0.05,
                      snr_db=40.0, seed=19)
    _, _, truth = mtsu.generate_dataset(cfg)
    step = truth.abundances.abundances[1] - truth.abundances.abundances[0]
    moved = np.linalg.norm(step, axis=1)
    assert (moved > 0).all()
    assert float(np.sqrt(np.mean(step ** 2))) < 0.25  # jitter stays small


def test_semireal_split_disjoint_and_sized():
    rng = np.random.default_rng(5)
    pools = [np.clip(rng.uniform(0.2, 0.8, (6, 30))
                     + 0.05 * rng.standard_normal((6, 30)), 0, 1) for _ in range(3)]
    cfg = SynthConfig(L=30, N=10, T=2, P=3, C_p=3, kappa=0.0, snr_db=30.0, seed=2)
    lib_a, lib_b, seq, truth = mtsu.generate_semireal(pools, (3, 3), cfg)
    assert lib_a.counts == (3, 3, 3) and lib_b.counts == (3, 3, 3)
    for pa, pb in zip(lib_a.signatures, lib_b.signatures):
        for row_a in pa:
            assert not any(np.array_equal(row_a, row_b) for row_b in pb)


def test_semireal_split_determinism():
    rng = np.random.default_rng(6)
    pools = [rng.uniform(0.1, 0.9, (6, 20)) for _ in range(2)]
    cfg = SynthConfig(L=20, N=4, T=2, P=2, C_p=3, kappa=0.0, snr_db=30.0, seed=77)
    a1, b1, s1, _ = mtsu.generate_semireal(pools, (3, 3), cfg)
    a2, b2, s2, _ = mtsu.generate_semireal(pools, (3, 3), cfg)
    assert a1.matches(a2) and b1.matches(b2)
    assert np.array_equal(s1.data, s2.data)


def test_semireal_pool_too_small():
    rng = np.random.default_rng(7)
    pools = [rng.uniform(0.1, 0.9, (4, 20)) for _ in range(2)]
    cfg = SynthConfig(L=20, N=4, T=2, P=2, C_p=3, kappa=0.0, snr_db=30.0, seed=1)
    with pytest.raises(mtsu.ValidationError):
        mtsu.generate_semireal(pools, (3, 3), cfg)


def test_semireal_matched_unmixing_sanity():
    # unmixing with the rendering library itself, noiseless: exact model hits
    rng = np.random.default_rng(8)
    pools = [np.clip(rng.uniform(0.2, 0.8, 24) + 0.15 * rng.standard_normal((4, 24)), 0, 1)
             for _ in range(2)]
    cfg = SynthConfig(L=24, N=15, T=2, P=2, C_p=2, kappa=0.2, snr_db=math.inf, seed=3)
    lib_a, _, seq, truth = mtsu.generate_semireal(pools, (2, 2), cfg)
    field, _ = mtsu.mesma_sequence(lib_a, seq)
    assert mtsu.ppv_m(truth.models, field.models) == 1.0


def test_config_validation():
    with pytest.raises(mtsu.ValidationError):
        SynthConfig(L=10, N=1, T=1, P=1, C_p=1)  # seed is mandatory
    with pytest.raises(mtsu.ValidationError):
        SynthConfig(L=10, N=1, T=1, P=1, C_p=1, kappa=1.5, seed=0)
    with pytest.raises(mtsu.ValidationError):
        SynthConfig(L=10, N=1, T=1, P=1, C_p=1, snr_db=math.nan, seed=0)
    with pytest.raises(mtsu.ShapeError):
        SynthConfig(L=10, N=1, T=1, P=2, C_p=(2, 2, 2), seed=0).material_counts()
