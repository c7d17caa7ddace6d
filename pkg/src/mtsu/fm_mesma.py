"""Online multitemporal unmixing with abrupt-change detection.

The sequence is processed frame by frame. For each pixel the endmember
model for the next frame is selected by scanning the library against the
previous abundance estimate, which costs one matrix-vector product per
candidate instead of a constrained solve. If the resulting reconstruction
error stays below a calibrated threshold, a single FCLS refines the
abundance; otherwise the pixel is flagged as an abrupt change and
reprocessed with the exhaustive search.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .core import (
    MAX_STACK_ELEMS,
    AbundanceField,
    ChangeMap,
    HyperspectralSequence,
    ModelIndex,
    RunLedger,
    ShapeError,
    SpectralLibrary,
    ValidationError,
    iter_model_blocks,
    model_index_array,
    model_matrices,
    realize_model,
)
from .mesma import _fcls_prepared, _solve_cache, calibrate_threshold, mesma_pixel
from .solver import _nnls_gram, fcls


@dataclass(frozen=True)
class FmMesmaConfig:
    """Tuning knobs for the online algorithm.

    ``k_proportion`` scales the average optimal residual into the change
    threshold; ``math.inf`` disables reprocessing entirely and 0 forces it
    for every pixel. ``calibration_pixels`` overrides the default
    calibration set (the pixels of the first frame); for large scenes
    ``calibration_subsample`` instead averages over that many evenly spaced
    frame-1 pixels. The fallback for flagged pixels is always the
    exhaustive search.
    """

    k_proportion: float = 10.0
    calibration_pixels: np.ndarray | None = None
    calibration_subsample: int | None = None

    def __post_init__(self):
        k = self.k_proportion
        if math.isnan(k) or k < 0:
            raise ValidationError("k_proportion must be nonnegative (inf allowed)")
        if self.calibration_subsample is not None and self.calibration_subsample < 1:
            raise ValidationError("calibration_subsample must be at least 1")


@dataclass(frozen=True, eq=False)
class FmMesmaOutput:
    """Everything produced by one online run.

    ``changes.flags[t][n]`` is 1 exactly when pixel (t, n) was reprocessed
    by the fallback search. ``threshold`` is the calibrated residual bound.
    """

    abundances: AbundanceField
    changes: ChangeMap
    ledger: RunLedger
    threshold: float

    @property
    def models(self) -> np.ndarray:
        return self.abundances.models


def select_model(
    lib: SpectralLibrary,
    y_next,
    a_prev,
    ledger: RunLedger | None = None,
) -> tuple[ModelIndex, float]:
    """Pick the model minimizing ``||y_next - M a_prev||`` by enumeration.

    No constrained solve is involved; each candidate costs one
    matrix-vector product, and the ledger's residual evaluation counter
    grows by ``model_count()``. Ties go to the lowest lexicographic index.
    """
    y_next = np.asarray(y_next, dtype=np.float64)
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if y_next.shape != (lib.bands,):
        raise ShapeError(f"pixel must have {lib.bands} bands")
    if a_prev.shape != (lib.materials,):
        raise ShapeError(f"abundance must have {lib.materials} entries")
    if not (np.all(np.isfinite(y_next)) and np.all(np.isfinite(a_prev))):
        raise ValidationError("select_model inputs must be finite")
    if a_prev.min() < -1e-9 or abs(a_prev.sum() - 1.0) > 1e-6:
        raise ValidationError("previous abundance must lie on the simplex")

    count = lib.model_count()
    if count * lib.bands * lib.materials <= MAX_STACK_ELEMS:
        stack = model_matrices(lib)
        recon = np.einsum("klp,p->kl", stack, a_prev)
        residuals = np.linalg.norm(y_next[None, :] - recon, axis=1)
        best = int(np.argmin(residuals))
        best_re = float(residuals[best])
        idx = model_index_array(lib)[best]
    else:
        best_re = math.inf
        idx = None
        for _, idx_block, stack in iter_model_blocks(lib):
            recon = np.einsum("klp,p->kl", stack, a_prev)
            residuals = np.linalg.norm(y_next[None, :] - recon, axis=1)
            k = int(np.argmin(residuals))
            if residuals[k] < best_re:
                best_re = float(residuals[k])
                idx = idx_block[k]
    if ledger is not None:
        ledger.add_residual_evals(count)
    return ModelIndex(tuple(int(j) for j in idx)), best_re


def unmix_sequence(
    lib: SpectralLibrary,
    seq: HyperspectralSequence,
    cfg: FmMesmaConfig | None = None,
    ledger: RunLedger | None = None,
) -> FmMesmaOutput:
    """Run the full online algorithm over a sequence.

    Frame 1 is unmixed with the exhaustive search, and by default its
    optimal residuals are reused to calibrate the change threshold (no
    extra solves). For every later frame each pixel gets one model
    selection; within-threshold pixels get a single FCLS with the selected
    model, the rest fall back to the exhaustive search and are flagged.
    The accepted abundance, whichever path produced it, seeds the next
    frame's selection.
    """
    if cfg is None:
        cfg = FmMesmaConfig()
    if seq.bands != lib.bands:
        raise ShapeError("sequence and library disagree on the number of bands")
    if ledger is None:
        ledger = RunLedger()
    t0 = time.perf_counter()
    frames, pixels = seq.frames, seq.pixels
    abunds = np.empty((frames, pixels, lib.materials))
    models = np.empty((frames, pixels, lib.materials), dtype=np.int64)
    flags = np.zeros((frames, pixels), dtype=np.uint8)

    frame1_residuals = np.empty(pixels)
    for n in range(pixels):
        res = mesma_pixel(lib, seq.data[0, n], ledger)
        abunds[0, n] = res.abundance
        models[0, n] = res.model.indices
        frame1_residuals[n] = res.residual_norm

    if cfg.calibration_pixels is None:
        # frame-1 residuals are reused, so calibration adds no solves
        if cfg.calibration_subsample is not None and cfg.calibration_subsample < pixels:
            pick = np.unique(np.round(
                np.linspace(0, pixels - 1, cfg.calibration_subsample)).astype(int))
            mean_residual = float(frame1_residuals[pick].mean())
        else:
            mean_residual = float(frame1_residuals.mean())
        threshold = cfg.k_proportion * mean_residual
        if math.isnan(threshold):  # inf proportion with zero mean residual
            threshold = math.inf if math.isinf(cfg.k_proportion) else 0.0
    else:
        threshold = calibrate_threshold(lib, cfg.calibration_pixels, cfg.k_proportion, ledger)

    cache = _solve_cache(lib)
    for t in range(frames - 1):
        if cache is not None:
            _advance_frame_batched(lib, cache, seq.data[t + 1], abunds, models, flags,
                                   t, threshold, ledger)
        else:
            _advance_frame_pixelwise(lib, cache, seq.data[t + 1], abunds, models, flags,
                                     t, threshold, ledger)
    ledger.add_wall_time(time.perf_counter() - t0)
    return FmMesmaOutput(
        AbundanceField(abunds, models), ChangeMap(flags), ledger, float(threshold)
    )


def _advance_frame_pixelwise(lib, cache, frame, abunds, models, flags, t, threshold, ledger):
    """Reference per-pixel frame step; used when no model stack fits in memory."""
    for n in range(frame.shape[0]):
        idx, re = select_model(lib, frame[n], abunds[t, n], ledger)
        if re <= threshold:
            sol = _fcls_for_model(lib, cache, idx, frame[n])
            ledger.add_fcls(1)
            abunds[t + 1, n] = sol.abundance
            models[t + 1, n] = idx.indices
        else:
            res = mesma_pixel(lib, frame[n], ledger)
            abunds[t + 1, n] = res.abundance
            models[t + 1, n] = res.model.indices
            flags[t + 1, n] = 1
            ledger.add_reprocessed(1)


# Chunk bound for the (pixels, models, bands) selection workspace; sized to
# keep the reconstruction block cache-resident.
_SELECT_CHUNK_ELEMS = 262_144


def _advance_frame_batched(lib, cache, frame, abunds, models, flags, t, threshold, ledger):
    """Frame step with the selection and refinement batched across pixels."""
    stack = cache["stack"]
    stack_flat = cache["stack_flat"]
    n_pixels = frame.shape[0]
    k = stack.shape[0]
    best = np.empty(n_pixels, dtype=np.int64)
    re = np.empty(n_pixels)
    chunk = max(1, int(_SELECT_CHUNK_ELEMS // max(1, k * lib.bands)))
    for s in range(0, n_pixels, chunk):
        a_blk = abunds[t, s:s + chunk]
        recon = (a_blk @ stack_flat.T).reshape(a_blk.shape[0], k, lib.bands)
        diff = recon - frame[s:s + chunk, None, :]
        res = np.sqrt(np.einsum("nkl,nkl->nk", diff, diff))
        pick = res.argmin(axis=1)
        best[s:s + chunk] = pick
        re[s:s + chunk] = res[np.arange(pick.shape[0]), pick]
    ledger.add_residual_evals(n_pixels * k)

    changed = re > threshold
    keep = np.flatnonzero(~changed)
    if keep.size:
        sel = best[keep]
        abunds[t + 1, keep] = _refine_batch(cache, frame[keep], sel)
        models[t + 1, keep] = cache["idx"][sel]
        ledger.add_fcls(keep.size)
    for n in np.flatnonzero(changed):
        res = mesma_pixel(lib, frame[n], ledger)
        abunds[t + 1, n] = res.abundance
        models[t + 1, n] = res.model.indices
        flags[t + 1, n] = 1
        ledger.add_reprocessed(1)


def _refine_batch(cache, pixels: np.ndarray, sel: np.ndarray) -> np.ndarray:
    """One constrained solve per pixel with its selected model, batched."""
    stack_sel = cache["stack"][sel]
    grams_sel = cache["grams"][sel]
    rhs = np.matmul(stack_sel.transpose(0, 2, 1), pixels[:, :, None])[:, :, 0] \
        + cache["w2"][sel][:, None]
    mats = rhs.shape[1]
    out = np.empty_like(rhs)
    try:
        z = np.linalg.solve(grams_sel, rhs[:, :, None])[:, :, 0]
        interior = np.isfinite(z).all(axis=1) & (z.min(axis=1) > 0.0)
    except np.linalg.LinAlgError:
        z = np.empty_like(rhs)
        interior = np.zeros(rhs.shape[0], dtype=bool)
    out[interior] = z[interior] / z[interior].sum(axis=1, keepdims=True)
    for i in np.flatnonzero(~interior):
        x, _ = _nnls_gram(grams_sel[i], rhs[i])
        total = x.sum()
        out[i] = x / total if total > 0.0 else 1.0 / mats
    return out


def _fcls_for_model(lib: SpectralLibrary, cache, idx: ModelIndex, y: np.ndarray):
    if cache is not None:
        flat = _flat_position(lib.counts, idx.indices)
        return _fcls_prepared(cache["stack"][flat], cache["grams"][flat], cache["w2"][flat], y)
    return fcls(realize_model(lib, idx), y)


def _flat_position(counts: tuple[int, ...], indices: tuple[int, ...]) -> int:
    pos = 0
    for c, j in zip(counts, indices):
        pos = pos * c + (j - 1)
    return pos
