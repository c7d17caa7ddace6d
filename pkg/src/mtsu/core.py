"""Shared domain types for multitemporal library-based spectral unmixing.

Conventions used across the package:

- A spectral library holds, for each of P materials, an ordered set of
  candidate signatures (rows of length L, reflectance values in [0, 1]).
- An endmember model picks exactly one signature per material; it is
  addressed by a 1-based index tuple ``(j_1, ..., j_P)``.
- Models are enumerated in lexicographic order with the last index
  varying fastest, which fixes all tie-breaking downstream.
- All arrays are float64 internally and frozen (read-only) after
  construction, so the types are safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UnmixingError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(UnmixingError, ValueError):
    """Invalid parameters or malformed input values."""


class ShapeError(UnmixingError, ValueError):
    """Dimensions of otherwise valid inputs do not agree."""


class ConvergenceError(UnmixingError, RuntimeError):
    """An iterative solver exceeded its iteration budget."""


def _readonly_f64(arr, name: str, *, lo: float | None = None, hi: float | None = None) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} contains non-finite values")
    if lo is not None and out.size and out.min() < lo:
        raise ValidationError(f"{name} has entries below {lo}")
    if hi is not None and out.size and out.max() > hi:
        raise ValidationError(f"{name} has entries above {hi}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SpectralLibrary:
    """Per-material signature sets; ``signatures[p]`` has shape (C_p, L).

    Requires at least one signature per material, reflectance in [0, 1],
    a common band count L across materials, and L > P (the selection
    guarantees rest on a singular-value argument that needs tall models).
    """

    signatures: tuple[np.ndarray, ...]
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.signatures:
            raise ValidationError("library needs at least one material")
        sigs = []
        bands = None
        for p, raw in enumerate(self.signatures):
            arr = _readonly_f64(raw, f"signatures[{p}]", lo=0.0, hi=1.0)
            if arr.ndim != 2 or arr.shape[0] < 1:
                raise ValidationError(f"signatures[{p}] must be a (C_p, L) array with C_p >= 1")
            if bands is None:
                bands = arr.shape[1]
            elif arr.shape[1] != bands:
                raise ShapeError("materials disagree on the number of bands")
            sigs.append(arr)
        if bands <= len(sigs):
            raise ValidationError(f"need more bands than materials (L={bands}, P={len(sigs)})")
        object.__setattr__(self, "signatures", tuple(sigs))
        if self.names is not None:
            names = tuple(str(n) for n in self.names)
            if len(names) != len(sigs):
                raise ShapeError("names must have one entry per material")
            object.__setattr__(self, "names", names)

    @property
    def bands(self) -> int:
        return self.signatures[0].shape[1]

    @property
    def materials(self) -> int:
        return len(self.signatures)

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(s.shape[0] for s in self.signatures)

    def model_count(self) -> int:
        return math.prod(self.counts)

    def material_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return self.names
        return tuple(f"material_{p + 1}" for p in range(self.materials))

    def matches(self, other: "SpectralLibrary") -> bool:
        """True when both libraries hold identical signature values."""
        return self.counts == other.counts and self.bands == other.bands and all(
            np.array_equal(a, b) for a, b in zip(self.signatures, other.signatures)
        )

    def has_distinct_signatures(self) -> bool:
        """True when no material contains two identical signatures."""
        for sigs in self.signatures:
            if len(np.unique(sigs, axis=0)) != sigs.shape[0]:
                return False
        return True


@dataclass(frozen=True, order=True)
class ModelIndex:
    """1-based signature choice per material, ``1 <= j_p <= C_p``."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(j) for j in self.indices)
        if not idx or any(j < 1 for j in idx):
            raise ValidationError("model indices must be positive integers")
        object.__setattr__(self, "indices", idx)

    def validate_for(self, lib: SpectralLibrary) -> None:
        counts = lib.counts
        if len(self.indices) != len(counts):
            raise ShapeError(f"model index has {len(self.indices)} entries for {len(counts)} materials")
        for p, (j, c) in enumerate(zip(self.indices, counts)):
            if j > c:
                raise ValidationError(f"index {j} out of range for material {p} with {c} signatures")


def realize_model(lib: SpectralLibrary, idx: ModelIndex) -> np.ndarray:
    """Materialize one endmember matrix; column p is ``signatures[p][j_p]``."""
    idx.validate_for(lib)
    cols = [lib.signatures[p][j - 1] for p, j in enumerate(idx.indices)]
    return np.column_stack(cols)


def model_index_array(lib: SpectralLibrary) -> np.ndarray:
    """All 1-based index tuples, shape (model_count, P).

    Lexicographic order with the last material's index varying fastest;
    row k of this array is the k-th model everywhere in the package.
    """
    axes = [np.arange(1, c + 1, dtype=np.int64) for c in lib.counts]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


# Full model stacks above this element count fall back to block iteration.
MAX_STACK_ELEMS = 30_000_000


def model_matrices(lib: SpectralLibrary) -> np.ndarray:
    """Stack of all realized models, shape (model_count, L, P); cached on lib."""
    cached = getattr(lib, "_model_stack", None)
    if cached is not None:
        return cached
    k = lib.model_count()
    if k * lib.bands * lib.materials > MAX_STACK_ELEMS:
        raise ValidationError("model set too large to materialize; iterate in blocks instead")
    idx = model_index_array(lib)
    stack = np.empty((k, lib.bands, lib.materials))
    for p in range(lib.materials):
        stack[:, :, p] = lib.signatures[p][idx[:, p] - 1]
    stack.setflags(write=False)
    object.__setattr__(lib, "_model_stack", stack)
    object.__setattr__(lib, "_model_index_array", idx)
    return stack


def iter_model_blocks(lib: SpectralLibrary, max_elems: int = MAX_STACK_ELEMS):
    """Yield (offset, index_block, matrix_block) covering all models in order.

    Index blocks are derived from flat positions, so the full index table is
    never materialized; safe for model sets of any size.
    """
    k = lib.model_count()
    counts = lib.counts
    block = max(1, int(max_elems // max(1, lib.bands * lib.materials)))
    for start in range(0, k, block):
        flat = np.arange(start, min(start + block, k))
        sel = np.stack(np.unravel_index(flat, counts), axis=1).astype(np.int64) + 1
        stack = np.empty((sel.shape[0], lib.bands, lib.materials))
        for p in range(lib.materials):
            stack[:, :, p] = lib.signatures[p][sel[:, p] - 1]
        yield start, sel, stack


def realize_model_field(lib: SpectralLibrary, models: np.ndarray) -> np.ndarray:
    """Realize a (T, N, P) index field into endmember matrices (T, N, L, P)."""
    models = np.asarray(models)
    if models.ndim != 3 or models.shape[-1] != lib.materials:
        raise ShapeError("model field must have shape (T, N, P)")
    t, n, _ = models.shape
    out = np.empty((t, n, lib.bands, lib.materials))
    for p in range(lib.materials):
        j = models[:, :, p]
        if j.min() < 1 or j.max() > lib.counts[p]:
            raise ValidationError(f"model field holds out-of-range indices for material {p}")
        out[:, :, :, p] = lib.signatures[p][j - 1]
    return out


@dataclass(frozen=True, eq=False)
class HyperspectralSequence:
    """T spatially aligned frames of N pixels with L bands each."""

    data: np.ndarray  # (T, N, L)

    def __post_init__(self):
        arr = _readonly_f64(self.data, "sequence data")
        if arr.ndim != 3:
            raise ShapeError("sequence data must have shape (T, N, L)")
        object.__setattr__(self, "data", arr)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def pixels(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class AbundanceField:
    """Per-frame, per-pixel simplex vectors, optionally with selected models.

    ``abundances`` has shape (T, N, P); each vector is nonnegative and sums
    to one within 1e-9. ``models`` (when present) holds the 1-based selected
    index tuples as an int array of the same leading shape.
    """

    abundances: np.ndarray
    models: np.ndarray | None = None

    def __post_init__(self):
        arr = _readonly_f64(self.abundances, "abundances")
        if arr.ndim != 3:
            raise ShapeError("abundances must have shape (T, N, P)")
        if arr.size and arr.min() < 0.0:
            raise ValidationError("abundances must be nonnegative")
        sums = arr.sum(axis=2)
        if arr.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValidationError("abundance vectors must sum to 1 within 1e-9")
        object.__setattr__(self, "abundances", arr)
        if self.models is not None:
            models = np.array(self.models, dtype=np.int64)
            if models.shape != arr.shape:
                raise ShapeError("models must match abundances in shape")
            if models.size and models.min() < 1:
                raise ValidationError("model indices are 1-based")
            models.setflags(write=False)
            object.__setattr__(self, "models", models)

    @property
    def frames(self) -> int:
        return self.abundances.shape[0]

    @property
    def pixels(self) -> int:
        return self.abundances.shape[1]

    @property
    def materials(self) -> int:
        return self.abundances.shape[2]


@dataclass(frozen=True, eq=False)
class ChangeMap:
    """Binary per-frame, per-pixel abrupt-change flags; frame 1 is all zero."""

    flags: np.ndarray  # (T, N) in {0, 1}

    def __post_init__(self):
        flags = np.array(self.flags)
        if flags.ndim != 2:
            raise ShapeError("change flags must have shape (T, N)")
        flags = flags.astype(np.uint8)
        if flags.size and not np.isin(flags, (0, 1)).all():
            raise ValidationError("change flags must be 0 or 1")
        if flags.size and flags[0].any():
            raise ValidationError("the first frame cannot carry change flags")
        flags.setflags(write=False)
        object.__setattr__(self, "flags", flags)

    @property
    def frames(self) -> int:
        return self.flags.shape[0]

    @property
    def pixels(self) -> int:
        return self.flags.shape[1]


@dataclass
class RunLedger:
    """Operation counts accumulated during a run; counts only ever grow.

    Not thread-safe by itself: give each worker its own ledger and fold the
    results together with :meth:`merge` after the parallel region.
    """

    fcls_calls: int = 0
    residual_evals: int = 0
    wall_time: float = 0.0
    reprocessed_pixels: int = 0

    def add_fcls(self, n: int = 1) -> None:
        if n < 0:
            raise ValidationError("ledger counts cannot decrease")
        self.fcls_calls += int(n)

    def add_residual_evals(self, n: int) -> None:
        if n < 0:
            raise ValidationError("ledger counts cannot decrease")
        self.residual_evals += int(n)

    def add_wall_time(self, seconds: float) -> None:
        if seconds < 0:
            raise ValidationError("ledger counts cannot decrease")
        self.wall_time += float(seconds)

    def add_reprocessed(self, n: int = 1) -> None:
        if n < 0:
            raise ValidationError("ledger counts cannot decrease")
        self.reprocessed_pixels += int(n)

    def merge(self, other: "RunLedger") -> "RunLedger":
        self.fcls_calls += other.fcls_calls
        self.residual_evals += other.residual_evals
        self.wall_time += other.wall_time
        self.reprocessed_pixels += other.reprocessed_pixels
        return self

    def as_dict(self) -> dict:
        return {
            "fcls_calls": self.fcls_calls,
            "residual_evals": self.residual_evals,
            "wall_time": self.wall_time,
            "reprocessed_pixels": self.reprocessed_pixels,
        }


@dataclass(frozen=True)
class SeparationBounds:
    """Numerical bounds entering the recovery and detection guarantees.

    noise_bound       upper bound on the noise norm per pixel
    drift_bound       upper bound on ``max_M ||M d||`` for slow drifts d
    min_gap_sq        smallest squared within-material signature gap
    max_gap           largest within-material signature gap
    change_bound      lower bound on ``min_M ||M s||`` for abrupt changes s
    cross_coherence   largest cross-material difference coherence
    detect_factor     required error amplification for flagged changes, >= 1
    """

    noise_bound: float | None = None
    drift_bound: float | None = None
    min_gap_sq: float | None = None
    max_gap: float | None = None
    change_bound: float | None = None
    cross_coherence: float | None = None
    detect_factor: float | None = None

    def __post_init__(self):
        for name in ("noise_bound", "drift_bound", "min_gap_sq", "max_gap",
                     "change_bound", "cross_coherence"):
            val = getattr(self, name)
            if val is not None and (math.isnan(val) or val < 0):
                raise ValidationError(f"{name} must be a nonnegative number")
        if self.detect_factor is not None and not self.detect_factor >= 1.0:
            raise ValidationError("detect_factor must be >= 1")
        if self.min_gap_sq is not None and self.max_gap is not None:
            # library consistency: min gap^2 cannot exceed max gap^2
            if self.min_gap_sq > self.max_gap ** 2 * (1.0 + 1e-12) + 1e-12:
                raise ValidationError("min_gap_sq exceeds max_gap**2")
