"""Multitemporal spectral unmixing with per-pixel endmember selection."""

from .core import (
    AbundanceField,
    ChangeMap,
    ConvergenceError,
    HyperspectralSequence,
    ModelIndex,
    RunLedger,
    SeparationBounds,
    ShapeError,
    SpectralLibrary,
    UnmixingError,
    ValidationError,
    model_index_array,
    model_matrices,
    realize_model,
    realize_model_field,
)
from .fm_mesma import FmMesmaConfig, FmMesmaOutput, select_model, unmix_sequence
from .mesma import MesmaResult, calibrate_threshold, mesma_pixel, mesma_sequence
from .metrics import (
    MetricsReport,
    cross_coherence,
    detection_guarantee_check,
    evaluate,
    pd_pfa,
    ppv_m,
    recovery_guarantee_check,
    rmse,
    sam,
    signature_gaps,
)
from .solver import FclsSolution, fcls, fcls_grid_oracle, grid_gap_bound, nnls
from .synth import (
    GroundTruth,
    SynthConfig,
    generate_dataset,
    generate_library,
    generate_semireal,
    generate_sequence,
    library_variance,
    realized_snr_db,
)

__version__ = "0.1.0"

__all__ = [
    "AbundanceField",
    "ChangeMap",
    "ConvergenceError",
    "FclsSolution",
    "FmMesmaConfig",
    "FmMesmaOutput",
    "GroundTruth",
    "HyperspectralSequence",
    "MesmaResult",
    "MetricsReport",
    "ModelIndex",
    "RunLedger",
    "SeparationBounds",
    "ShapeError",
    "SpectralLibrary",
    "SynthConfig",
    "UnmixingError",
    "ValidationError",
    "calibrate_threshold",
    "cross_coherence",
    "detection_guarantee_check",
    "evaluate",
    "fcls",
    "fcls_grid_oracle",
    "generate_dataset",
    "generate_library",
    "generate_semireal",
    "generate_sequence",
    "grid_gap_bound",
    "library_variance",
    "mesma_pixel",
    "mesma_sequence",
    "metrics",
    "model_index_array",
    "model_matrices",
    "nnls",
    "pd_pfa",
    "ppv_m",
    "realize_model",
    "realize_model_field",
    "realized_snr_db",
    "recovery_guarantee_check",
    "rmse",
    "sam",
    "select_model",
    "signature_gaps",
    "unmix_sequence",
]
