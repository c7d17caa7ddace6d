"""Evaluation metrics and numerical premise checkers.

Metric conventions follow the package's evaluation protocol exactly:
the sequence RMSE sums per-frame root terms each normalized by the total
frame count times the per-frame element count, the angle error averages
over every (frame, pixel, material) column pair, and detection rates are
per-frame ratios averaged over the frames that define them.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import (
    AbundanceField,
    ChangeMap,
    HyperspectralSequence,
    SeparationBounds,
    ShapeError,
    SpectralLibrary,
    ValidationError,
    realize_model_field,
)

# Coherence scanning is quartic in library sizes; larger materials are
# deterministically subsampled to this many signatures.
COHERENCE_MAX_SIGNATURES = 16


@dataclass(frozen=True)
class MetricsReport:
    """Bundle of evaluation metrics; fields stay None when inapplicable."""

    rmse_a: float | None = None
    rmse_m: float | None = None
    rmse_y: float | None = None
    sam_m: float | None = None
    ppv_m: float | None = None
    pd: float | None = None
    pfa: float | None = None

    def __post_init__(self):
        for name in ("ppv_m", "pd", "pfa"):
            val = getattr(self, name)
            if val is not None and not math.isnan(val) and not 0.0 <= val <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {
            "rmse_a": self.rmse_a,
            "rmse_m": self.rmse_m,
            "rmse_y": self.rmse_y,
            "sam_m": self.sam_m,
            "ppv_m": self.ppv_m,
            "pd": self.pd,
            "pfa": self.pfa,
        }


def rmse(x, x_ref) -> float:
    """Sequence RMSE: sum over frames of per-frame normalized root terms.

    Each frame contributes ``sqrt(||X_t - X*_t||_F^2 / (T * n))`` where n
    is the element count of one frame; the terms are then summed over t.
    """
    x = np.asarray(x, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x.shape != x_ref.shape:
        raise ShapeError("rmse inputs must share a shape")
    if x.ndim < 1 or x.shape[0] < 1:
        raise ShapeError("rmse needs a leading frame axis")
    frames = x.shape[0]
    per_frame = x.size // frames
    total = 0.0
    for t in range(frames):
        diff = x[t] - x_ref[t]
        total += math.sqrt(float(np.sum(diff * diff)) / (frames * per_frame))
    return total


def sam(true_ems, est_ems) -> float:
    """Mean angle (radians) between true and estimated endmember columns.

    Inputs have shape (T, N, L, P). Column pairs where either side has
    zero norm are skipped and the mean renormalized; a warning reports how
    many terms were dropped.
    """
    true_ems = np.asarray(true_ems, dtype=np.float64)
    est_ems = np.asarray(est_ems, dtype=np.float64)
    if true_ems.shape != est_ems.shape:
        raise ShapeError("sam inputs must share a shape")
    if true_ems.ndim != 4:
        raise ShapeError("sam inputs must have shape (T, N, L, P)")
    dots = np.einsum("tnlp,tnlp->tnp", true_ems, est_ems)
    norm_t = np.linalg.norm(true_ems, axis=2)
    norm_e = np.linalg.norm(est_ems, axis=2)
    valid = (norm_t > 0) & (norm_e > 0)
    skipped = int(valid.size - valid.sum())
    if skipped:
        warnings.warn(f"sam skipped {skipped} zero-norm column pairs", stacklevel=2)
    if valid.sum() == 0:
        return math.nan
    cosine = np.clip(dots[valid] / (norm_t[valid] * norm_e[valid]), -1.0, 1.0)
    return float(np.mean(np.arccos(cosine)))


def ppv_m(true_models, est_models) -> float:
    """Fraction of pixels whose selected model matches the truth exactly.

    Index tuples are compared for equality, which coincides with matrix
    equality whenever the library holds distinct signatures.
    """
    true_models = np.asarray(true_models)
    est_models = np.asarray(est_models)
    if true_models.shape != est_models.shape:
        raise ShapeError("ppv_m inputs must share a shape")
    if true_models.ndim != 3:
        raise ShapeError("model fields must have shape (T, N, P)")
    match = np.all(true_models == est_models, axis=2)
    return float(match.mean())


def pd_pfa(change_truth, detected) -> tuple[float, float]:
    """Detection and false-alarm probabilities over frames 2..T.

    Each frame contributes its own detection ratio (true positives over
    actual changes) and false-alarm ratio (spurious flags over unchanged
    pixels); the ratios are averaged over the frames where they are
    defined. With no defined frame the corresponding value is NaN and a
    warning is raised.
    """
    truth = change_truth.flags if isinstance(change_truth, ChangeMap) else np.asarray(change_truth)
    det = detected.flags if isinstance(detected, ChangeMap) else np.asarray(detected)
    if truth.shape != det.shape:
        raise ShapeError("change maps must share a shape")
    if truth.ndim != 2:
        raise ShapeError("change maps must have shape (T, N)")
    truth = truth.astype(bool)
    det = det.astype(bool)
    frames, pixels = truth.shape
    pd_terms = []
    pfa_terms = []
    for t in range(1, frames):
        positives = int(truth[t].sum())
        negatives = pixels - positives
        if positives > 0:
            pd_terms.append(float((truth[t] & det[t]).sum()) / positives)
        if negatives > 0:
            pfa_terms.append(float((det[t] & ~truth[t]).sum()) / negatives)
    if not pd_terms:
        warnings.warn("pd undefined: no frame contains true changes", stacklevel=2)
        pd = math.nan
    else:
        pd = float(np.mean(pd_terms))
    if not pfa_terms:
        warnings.warn("pfa undefined: no frame contains unchanged pixels", stacklevel=2)
        pfa = math.nan
    else:
        pfa = float(np.mean(pfa_terms))
    return pd, pfa


def _within_material_diffs(lib: SpectralLibrary, max_signatures: int | None = None):
    """Per-material stacks of pairwise signature differences (i < j)."""
    diffs = []
    for sigs in lib.signatures:
        c = sigs.shape[0]
        if max_signatures is not None and c > max_signatures:
            pick = np.unique(np.round(np.linspace(0, c - 1, max_signatures)).astype(int))
            sigs = sigs[pick]
            c = sigs.shape[0]
        if c < 2:
            diffs.append(None)
            continue
        pairs = list(combinations(range(c), 2))
        diffs.append(np.stack([sigs[j] - sigs[i] for i, j in pairs]))
    return diffs


def signature_gaps(lib: SpectralLibrary) -> tuple[float, float]:
    """(min squared gap, max gap) over distinct within-material pairs.

    Materials with a single signature contribute no pair; with no pairs at
    all the minimum is undefined and the maximum is 0.
    """
    min_sq = math.inf
    max_gap = 0.0
    for diffs in _within_material_diffs(lib):
        if diffs is None:
            continue
        norms = np.linalg.norm(diffs, axis=1)
        min_sq = min(min_sq, float(norms.min()) ** 2)
        max_gap = max(max_gap, float(norms.max()))
    return min_sq, max_gap


def cross_coherence(lib: SpectralLibrary, max_signatures: int = COHERENCE_MAX_SIGNATURES) -> float:
    """Largest |<d_p, d_q>| over difference vectors of distinct materials.

    Zero when fewer than two materials have signature pairs. Materials
    with more than ``max_signatures`` signatures are subsampled at evenly
    spaced positions to keep the quartic scan bounded.
    """
    diffs = [d for d in _within_material_diffs(lib, max_signatures) if d is not None]
    mu = 0.0
    for a in range(len(diffs)):
        for b in range(a + 1, len(diffs)):
            mu = max(mu, float(np.abs(diffs[a] @ diffs[b].T).max()))
    return mu


def recovery_guarantee_check(
    lib: SpectralLibrary, noise_bound: float, drift_bound: float
) -> tuple[bool, SeparationBounds]:
    """Can model selection against the previous abundance be trusted?

    Computes the library's minimum within-material squared gap and its
    cross-material difference coherence, then tests whether
    ``2 sqrt(P) (noise_bound + drift_bound)`` stays below
    ``sqrt(min_gap_sq - (P - 1) mu)``. False whenever the gap term is not
    positive. Raises when no material has a signature pair, since the gap
    is then undefined.
    """
    if noise_bound < 0 or drift_bound < 0:
        raise ValidationError("bounds must be nonnegative")
    min_gap_sq, max_gap = signature_gaps(lib)
    if math.isinf(min_gap_sq):
        raise ValidationError("no within-material signature pairs: separation undefined")
    mu = cross_coherence(lib)
    bounds = SeparationBounds(
        noise_bound=noise_bound,
        drift_bound=drift_bound,
        min_gap_sq=min_gap_sq,
        max_gap=max_gap,
        cross_coherence=mu,
    )
    margin = min_gap_sq - (lib.materials - 1) * mu
    if margin <= 0:
        return False, bounds
    holds = 2.0 * math.sqrt(lib.materials) * (noise_bound + drift_bound) < math.sqrt(margin)
    return holds, bounds


def detection_guarantee_check(
    lib: SpectralLibrary,
    noise_bound: float,
    drift_bound: float,
    change_bound: float,
    factor: float,
) -> tuple[bool, SeparationBounds]:
    """Will an abrupt change inflate the selection residual by ``factor``?

    Uses the library's maximum within-material gap (zero for collapsed,
    single-signature libraries) and tests whether
    ``sqrt(P) max_gap + drift_bound + noise_bound`` stays below
    ``change_bound / (factor + 1)``.
    """
    if noise_bound < 0 or drift_bound < 0 or change_bound < 0:
        raise ValidationError("bounds must be nonnegative")
    if not factor >= 1.0:
        raise ValidationError("factor must be >= 1")
    min_gap_sq, max_gap = signature_gaps(lib)
    bounds = SeparationBounds(
        noise_bound=noise_bound,
        drift_bound=drift_bound,
        min_gap_sq=None if math.isinf(min_gap_sq) else min_gap_sq,
        max_gap=max_gap,
        change_bound=change_bound,
        detect_factor=factor,
    )
    left = math.sqrt(lib.materials) * max_gap + drift_bound + noise_bound
    holds = left < change_bound / (factor + 1.0)
    return holds, bounds


def evaluate(
    estimated: AbundanceField,
    truth: AbundanceField,
    observed: HyperspectralSequence | None = None,
    est_library: SpectralLibrary | None = None,
    true_library: SpectralLibrary | None = None,
    detected_changes: ChangeMap | None = None,
    true_changes: ChangeMap | None = None,
    fixed_endmembers: np.ndarray | None = None,
) -> MetricsReport:
    """Assemble the full report for one estimate against ground truth.

    Model-based metrics need the libraries to realize index fields; the
    exact-match rate is only reported when estimate and truth refer to the
    same library. ``fixed_endmembers`` supplies the reconstruction matrix
    for estimators that carry no per-pixel models.
    """
    if estimated.abundances.shape != truth.abundances.shape:
        raise ShapeError("estimate and truth abundance shapes differ")
    report = {"rmse_a": rmse(estimated.abundances, truth.abundances)}

    true_lib = true_library if true_library is not None else est_library
    est_ems = None
    if estimated.models is not None and est_library is not None:
        est_ems = realize_model_field(est_library, estimated.models)
    true_ems = None
    if truth.models is not None and true_lib is not None:
        true_ems = realize_model_field(true_lib, truth.models)

    if est_ems is not None and true_ems is not None:
        report["rmse_m"] = rmse(
            est_ems.reshape(est_ems.shape[0], -1), true_ems.reshape(true_ems.shape[0], -1)
        )
        report["sam_m"] = sam(true_ems, est_ems)
        same_library = est_library is true_lib or est_library.matches(true_lib)
        if same_library:
            report["ppv_m"] = ppv_m(truth.models, estimated.models)

    if observed is not None:
        recon = None
        if est_ems is not None:
            recon = np.einsum("tnlp,tnp->tnl", est_ems, estimated.abundances)
        elif fixed_endmembers is not None:
            m = np.asarray(fixed_endmembers, dtype=np.float64)
            recon = np.einsum("lp,tnp->tnl", m, estimated.abundances)
        if recon is not None:
            report["rmse_y"] = rmse(recon, observed.data)

    if detected_changes is not None and true_changes is not None:
        pd, pfa = pd_pfa(true_changes, detected_changes)
        report["pd"] = pd
        report["pfa"] = pfa
    return MetricsReport(**report)
