"""Synthetic multitemporal data generation.

Reproducible end to end: every randomized step draws from numpy's PCG64
generator seeded from the configuration, and convenience entry points
split the seed with ``SeedSequence.spawn`` so library and sequence streams
stay independent. Identical (config, seed) pairs produce bit-identical
outputs.

The generative model per pixel and frame is a convex combination of one
signature per material (the realization drawn uniformly from the library
each frame) plus white Gaussian noise scaled to an exact per-sequence
signal-to-noise ratio. Between frames, a fixed fraction of pixels gets a
fresh abundance draw (abrupt changes) while the rest is either kept
constant or jittered slightly (slow drift).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    AbundanceField,
    ChangeMap,
    HyperspectralSequence,
    ShapeError,
    SpectralLibrary,
    ValidationError,
)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic protocol.

    L, N, T, P       bands, pixels, frames, materials
    C_p              signatures per material (int, or one int per material)
    sigma_lib2       library variance target for signature generation
    snr_db           per-sequence signal-to-noise ratio; ``math.inf``
                     disables noise
    kappa            fraction of pixels abruptly changed between frames
    dirichlet_alpha  concentration of the abundance prior (scalar or per
                     material)
    delta_std        standard deviation of the slow per-step abundance
                     jitter; 0 keeps unchanged pixels constant
    seed             mandatory RNG seed
    """

    L: int
    N: int
    T: int
    P: int
    C_p: int | tuple[int, ...]
    sigma_lib2: float = 0.12
    snr_db: float = 40.0
    kappa: float = 0.0
    dirichlet_alpha: float | tuple[float, ...] = 1.0
    delta_std: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if min(self.L, self.N, self.T, self.P) < 1:
            raise ValidationError("L, N, T and P must all be at least 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValidationError("kappa must lie in [0, 1]")
        if math.isnan(self.snr_db):
            raise ValidationError("snr_db must be a number (inf disables noise)")
        if self.sigma_lib2 < 0:
            raise ValidationError("sigma_lib2 must be nonnegative")
        if self.delta_std < 0:
            raise ValidationError("delta_std must be nonnegative")
        if self.seed is None:
            raise ValidationError("seed is mandatory")
        counts = self.material_counts()
        if any(c < 1 for c in counts):
            raise ValidationError("every material needs at least one signature")

    def material_counts(self) -> tuple[int, ...]:
        if isinstance(self.C_p, (int, np.integer)):
            return (int(self.C_p),) * self.P
        counts = tuple(int(c) for c in self.C_p)
        if len(counts) != self.P:
            raise ShapeError("C_p must have one entry per material")
        return counts

    def alpha_vector(self) -> np.ndarray:
        alpha = self.dirichlet_alpha
        if np.isscalar(alpha):
            vec = np.full(self.P, float(alpha))
        else:
            vec = np.asarray(alpha, dtype=np.float64)
            if vec.shape != (self.P,):
                raise ShapeError("dirichlet_alpha must be scalar or length P")
        if vec.min() <= 0:
            raise ValidationError("dirichlet_alpha entries must be positive")
        return vec


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """True abundances, model draws, change indicators and clean signal."""

    abundances: AbundanceField
    change_truth: ChangeMap
    clean: np.ndarray  # (T, N, L) noiseless mixture

    @property
    def models(self) -> np.ndarray:
        return self.abundances.models


def generate_library(L: int, P: int, C_p, sigma2: float, seed) -> SpectralLibrary:
    """Random library: uniform material means, isotropic Gaussian spread.

    Each material mean is drawn uniformly on [0, 1] per band; the C_p
    signatures are the mean plus Gaussian noise of variance ``sigma2``,
    clamped back into [0, 1]. ``sigma2 = 0`` duplicates the mean exactly.
    """
    if sigma2 < 0:
        raise ValidationError("sigma2 must be nonnegative")
    counts = (int(C_p),) * P if np.isscalar(C_p) else tuple(int(c) for c in C_p)
    if len(counts) != P:
        raise ShapeError("C_p must have one entry per material")
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(sigma2)
    sigs = []
    for p in range(P):
        mean = rng.uniform(size=L)
        draw = mean[None, :] + sigma * rng.standard_normal((counts[p], L))
        sigs.append(np.clip(draw, 0.0, 1.0))
    return SpectralLibrary(tuple(sigs))


def library_variance(lib: SpectralLibrary) -> float:
    """Mean per-band signature variance across materials.

    Sums the trace of each material's sample covariance (materials with a
    single signature contribute nothing) and divides by L * P.
    """
    if all(c < 2 for c in lib.counts):
        raise ValidationError("library variance undefined: every material has one signature")
    total = 0.0
    for sigs in lib.signatures:
        if sigs.shape[0] >= 2:
            total += float(np.var(sigs, axis=0, ddof=1).sum())
    return total / (lib.bands * lib.materials)


def generate_sequence(
    lib: SpectralLibrary,
    cfg: SynthConfig,
    rng: np.random.Generator | None = None,
) -> tuple[HyperspectralSequence, GroundTruth]:
    """Render a sequence from a library under the synthetic protocol.

    Frame-1 abundances are Dirichlet draws. At each step exactly
    ``ceil(kappa * N)`` pixels (chosen without replacement) get fresh
    draws and are marked in the change truth; the remaining pixels are
    jittered with ``delta_std`` (kept constant when it is zero). The model
    realization is drawn uniformly per pixel and frame, and the noise is
    scaled so the realized sequence SNR matches ``snr_db`` exactly.

    When ``rng`` is omitted a fresh PCG64 generator is seeded from
    ``cfg.seed``.
    """
    if lib.bands != cfg.L:
        raise ShapeError(f"library has {lib.bands} bands, config says {cfg.L}")
    if lib.materials != cfg.P:
        raise ShapeError(f"library has {lib.materials} materials, config says {cfg.P}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    alpha = cfg.alpha_vector()
    T, N, P, L = cfg.T, cfg.N, cfg.P, cfg.L

    abunds = np.empty((T, N, P))
    change = np.zeros((T, N), dtype=np.uint8)
    abunds[0] = rng.dirichlet(alpha, size=N)
    # guard against float fuzz in kappa * N landing just above an integer
    n_changed = int(math.ceil(cfg.kappa * N - 1e-9))
    for t in range(1, T):
        current = abunds[t - 1].copy()
        changed = rng.choice(N, size=n_changed, replace=False) if n_changed else np.empty(0, dtype=np.int64)
        keep = np.ones(N, dtype=bool)
        keep[changed] = False
        if cfg.delta_std > 0 and keep.any():
            current[keep] = _dirichlet_jitter(current[keep], cfg.delta_std, rng)
        if n_changed:
            current[changed] = rng.dirichlet(alpha, size=n_changed)
            change[t, changed] = 1
        abunds[t] = current

    models = np.empty((T, N, P), dtype=np.int64)
    for p, c in enumerate(lib.counts):
        models[:, :, p] = rng.integers(1, c + 1, size=(T, N))

    clean = np.zeros((T, N, L))
    for p in range(P):
        clean += abunds[:, :, p, None] * lib.signatures[p][models[:, :, p] - 1]

    if math.isinf(cfg.snr_db):
        data = clean.copy()
    else:
        noise = rng.standard_normal((T, N, L))
        signal_power = float(np.sum(clean * clean))
        noise_power = float(np.sum(noise * noise))
        scale = math.sqrt(signal_power / (noise_power * 10.0 ** (cfg.snr_db / 10.0)))
        data = clean + scale * noise

    truth = GroundTruth(AbundanceField(abunds, models), ChangeMap(change), clean)
    return HyperspectralSequence(data), truth


def _dirichlet_jitter(current: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Resample rows around themselves with a target mean-square deviation.

    Each row m becomes a Dirichlet draw with mean m whose concentration is
    chosen so the coordinate variances average std**2. Zero coordinates get
    a tiny floor so the gamma sampler stays defined; rows whose total mass
    collapses (extreme std) degrade to a vertex draw weighted by m, the
    distribution's limiting behavior.
    """
    mean_var = np.mean(current * (1.0 - current), axis=1)
    conc = np.maximum(mean_var / (std * std) - 1.0, 1e-6)
    alpha = np.maximum(conc[:, None] * current, 1e-12)
    draws = rng.gamma(shape=alpha)
    totals = draws.sum(axis=1)
    dead = totals <= 0.0
    if dead.any():
        u = rng.uniform(size=int(dead.sum()))
        cdf = np.cumsum(current[dead], axis=1)
        cdf /= cdf[:, -1:]
        picks = (u[:, None] > cdf).sum(axis=1)
        draws[dead] = 0.0
        draws[dead, picks] = 1.0
        totals = draws.sum(axis=1)
    return draws / totals[:, None]


def generate_semireal(
    pools,
    split_sizes,
    cfg: SynthConfig,
) -> tuple[SpectralLibrary, SpectralLibrary, HyperspectralSequence, GroundTruth]:
    """Disjoint library split with deliberately mismatched unmixing.

    ``pools`` holds one (n_p, L) signature pool per material. Each pool is
    randomly split into two disjoint parts of the requested sizes; the
    sequence is rendered from the first library, and the second is the one
    meant for unmixing, emulating a library that does not contain the
    scene's exact signatures. ``split_sizes`` is one (a, b) pair applied to
    all materials or one pair per material.
    """
    pools = [np.asarray(p, dtype=np.float64) for p in pools]
    if len(pools) != cfg.P:
        raise ShapeError(f"need {cfg.P} pools, got {len(pools)}")
    if len(split_sizes) == 2 and np.isscalar(split_sizes[0]):
        sizes = [(int(split_sizes[0]), int(split_sizes[1]))] * cfg.P
    else:
        sizes = [(int(a), int(b)) for a, b in split_sizes]
        if len(sizes) != cfg.P:
            raise ShapeError("split_sizes must be one pair or one pair per material")
    ss = np.random.SeedSequence(cfg.seed)
    split_rng, seq_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    side_a, side_b = [], []
    for p, (pool, (a, b)) in enumerate(zip(pools, sizes)):
        if pool.ndim != 2 or pool.shape[1] != cfg.L:
            raise ShapeError(f"pool {p} must have shape (n, {cfg.L})")
        if pool.shape[0] < a + b:
            raise ValidationError(f"pool {p} too small for a disjoint {a}/{b} split")
        perm = split_rng.permutation(pool.shape[0])
        side_a.append(pool[np.sort(perm[:a])])
        side_b.append(pool[np.sort(perm[a:a + b])])
    lib_a = SpectralLibrary(tuple(side_a))
    lib_b = SpectralLibrary(tuple(side_b))
    seq, truth = generate_sequence(lib_a, cfg, rng=seq_rng)
    return lib_a, lib_b, seq, truth


def generate_dataset(cfg: SynthConfig) -> tuple[SpectralLibrary, HyperspectralSequence, GroundTruth]:
    """Library plus rendered sequence from one seed, streams kept separate."""
    ss = np.random.SeedSequence(cfg.seed)
    lib_seed, seq_seed = ss.spawn(2)
    lib = generate_library(cfg.L, cfg.P, cfg.material_counts(), cfg.sigma_lib2, lib_seed)
    seq, truth = generate_sequence(lib, cfg, rng=np.random.default_rng(seq_seed))
    return lib, seq, truth


def realized_snr_db(data: np.ndarray, clean: np.ndarray) -> float:
    """SNR actually present in a rendered sequence, from the stored clean signal."""
    noise = np.asarray(data) - np.asarray(clean)
    noise_power = float(np.sum(noise * noise))
    if noise_power == 0.0:
        return math.inf
    return 10.0 * math.log10(float(np.sum(clean * clean)) / noise_power)
