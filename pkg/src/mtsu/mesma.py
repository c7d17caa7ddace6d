"""Exhaustive per-pixel endmember-model search and threshold calibration.

For every candidate model assembled from the library, a simplex-constrained
least squares fit is run and the model with the smallest reconstruction
residual wins; ties go to the lowest lexicographic index tuple. Every such
fit counts as one FCLS solve in the ledger, which is the quantity the
complexity identities are stated in.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    MAX_STACK_ELEMS,
    AbundanceField,
    ConvergenceError,
    HyperspectralSequence,
    ModelIndex,
    RunLedger,
    ShapeError,
    SpectralLibrary,
    ValidationError,
    iter_model_blocks,
    model_index_array,
    model_matrices,
)
from .solver import _finish_fcls, _nnls_gram


@dataclass(frozen=True, eq=False)
class MesmaResult:
    """Winning model for one pixel with its abundance and residual."""

    model: ModelIndex
    abundance: np.ndarray
    residual_norm: float


def _solve_cache(lib: SpectralLibrary):
    """Per-library augmented normal equations for every model, cached on lib.

    Returns None when the full model stack would be too large; callers then
    fall back to block iteration.
    """
    cached = getattr(lib, "_solve_cache", None)
    if cached is not None:
        return cached
    if lib.model_count() * lib.bands * lib.materials > MAX_STACK_ELEMS:
        return None
    stack = model_matrices(lib)
    idx = model_index_array(lib)
    weights = 1e3 * np.abs(stack).mean(axis=(1, 2))
    weights[weights == 0.0] = 1e3
    w2 = weights ** 2
    grams = np.einsum("klp,klq->kpq", stack, stack) + w2[:, None, None]
    # matmul-friendly layouts: (L, K*P) for right-hand sides, (K*L, P) for
    # batched reconstructions
    k, bands, mats = stack.shape
    stack_lt = np.ascontiguousarray(stack.transpose(1, 0, 2).reshape(bands, k * mats))
    cache = {"stack": stack, "idx": idx, "w2": w2, "grams": grams,
             "stack_lt": stack_lt, "stack_flat": stack.reshape(k * bands, mats)}
    object.__setattr__(lib, "_solve_cache", cache)
    return cache


def _fcls_prepared(stack_k: np.ndarray, gram_k: np.ndarray, w2_k: float, y: np.ndarray):
    rhs = stack_k.T @ y + w2_k
    x, iters = _nnls_gram(gram_k, rhs)
    return _finish_fcls(stack_k, y, x, iters)


def mesma_pixel(lib: SpectralLibrary, y, ledger: RunLedger | None = None) -> MesmaResult:
    """Unmix one pixel by scanning every model in the library.

    Runs one constrained fit per model in lexicographic order and keeps the
    smallest residual (first winner on ties). Adds ``model_count()`` FCLS
    calls to the ledger. Solver failures are re-raised with the offending
    model index attached.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (lib.bands,):
        raise ShapeError(f"pixel must have {lib.bands} bands")
    if not np.all(np.isfinite(y)):
        raise ValidationError("pixel contains non-finite values")
    cache = _solve_cache(lib)
    if cache is not None:
        best_k, abundance, residual = _scan_cached(cache, y)
        model = ModelIndex(tuple(int(j) for j in cache["idx"][best_k]))
    else:
        model, abundance, residual = _scan_blocks(lib, y)
    if ledger is not None:
        ledger.add_fcls(lib.model_count())
    return MesmaResult(model, abundance, residual)


def _scan_cached(cache, y: np.ndarray):
    stack = cache["stack"]
    grams = cache["grams"]
    w2 = cache["w2"]
    k, _, mats = stack.shape
    rhs_all = (y @ cache["stack_lt"]).reshape(k, mats) + w2[:, None]
    abunds = np.empty((k, mats))
    # batched unconstrained solve handles the strictly interior models in
    # one shot (bitwise identical to the per-model shortcut in the solver)
    try:
        z = np.linalg.solve(grams, rhs_all[:, :, None])[:, :, 0]
        interior = np.isfinite(z).all(axis=1) & (z.min(axis=1) > 0.0)
    except np.linalg.LinAlgError:
        z = np.empty_like(rhs_all)
        interior = np.zeros(k, dtype=bool)
    abunds[interior] = z[interior] / z[interior].sum(axis=1, keepdims=True)
    for i in np.flatnonzero(~interior):
        try:
            x, _ = _nnls_gram(grams[i], rhs_all[i])
        except ConvergenceError as exc:
            raise ConvergenceError(f"{exc} at model {tuple(cache['idx'][i])}") from exc
        total = x.sum()
        abunds[i] = x / total if total > 0.0 else 1.0 / mats
    recon = np.matmul(stack, abunds[:, :, None])[:, :, 0]
    residuals = np.linalg.norm(y[None, :] - recon, axis=1)
    best = int(np.argmin(residuals))
    abundance = abunds[best].copy()
    abundance.setflags(write=False)
    return best, abundance, float(residuals[best])


def _scan_blocks(lib: SpectralLibrary, y: np.ndarray):
    best = None
    for offset, idx_block, stack in iter_model_blocks(lib):
        w = 1e3 * np.abs(stack).mean(axis=(1, 2))
        w[w == 0.0] = 1e3
        w2 = w ** 2
        for i in range(stack.shape[0]):
            gram = stack[i].T @ stack[i] + w2[i]
            try:
                sol = _fcls_prepared(stack[i], gram, w2[i], y)
            except ConvergenceError as exc:
                raise ConvergenceError(f"{exc} at model {tuple(idx_block[i])}") from exc
            if best is None or sol.residual_norm < best[2]:
                best = (offset + i, tuple(int(j) for j in idx_block[i]), sol.residual_norm, sol.abundance)
    return ModelIndex(best[1]), best[3], best[2]


def mesma_sequence(
    lib: SpectralLibrary,
    seq: HyperspectralSequence,
    ledger: RunLedger | None = None,
) -> tuple[AbundanceField, RunLedger]:
    """Independent per-pixel model search over a whole image sequence.

    Every (frame, pixel) is unmixed on its own, so the ledger ends up with
    exactly ``T * N * model_count()`` FCLS calls.
    """
    if seq.bands != lib.bands:
        raise ShapeError("sequence and library disagree on the number of bands")
    if ledger is None:
        ledger = RunLedger()
    t0 = time.perf_counter()
    frames, pixels = seq.frames, seq.pixels
    abunds = np.empty((frames, pixels, lib.materials))
    models = np.empty((frames, pixels, lib.materials), dtype=np.int64)
    for t in range(frames):
        for n in range(pixels):
            res = mesma_pixel(lib, seq.data[t, n], ledger)
            abunds[t, n] = res.abundance
            models[t, n] = res.model.indices
    ledger.add_wall_time(time.perf_counter() - t0)
    return AbundanceField(abunds, models), ledger


def calibrate_threshold(
    lib: SpectralLibrary,
    calibration_pixels,
    k_proportion: float,
    ledger: RunLedger | None = None,
) -> float:
    """Change-detection threshold from the average optimal residual.

    Runs the full model search on each calibration pixel and returns the
    proportion ``k_proportion`` times the mean of the optimal residuals.
    The calibration pixels should resemble the sequence to be unmixed; by
    convention callers pass the pixels of the first frame.
    """
    pixels = np.asarray(calibration_pixels, dtype=np.float64)
    if pixels.ndim == 1:
        pixels = pixels[None, :]
    if pixels.ndim != 2 or pixels.shape[0] < 1:
        raise ValidationError("calibration set must hold at least one pixel")
    if not (k_proportion >= 0):
        raise ValidationError("k_proportion must be nonnegative")
    if math.isinf(k_proportion):
        return math.inf
    total = 0.0
    for n in range(pixels.shape[0]):
        total += mesma_pixel(lib, pixels[n], ledger).residual_norm
    return k_proportion * total / pixels.shape[0]
