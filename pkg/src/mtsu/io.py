"""Persistent formats: raw cubes, library tables and run outputs.

Cubes are a JSON manifest plus one raw little-endian float32 payload per
frame (pixel-major). Libraries and abundance fields are JSON manifests
plus delimited text tables written with 17 significant digits, so float64
values survive a round trip exactly. Graymap rendering is a one-way
convenience, never an input format.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .core import (
    AbundanceField,
    ChangeMap,
    HyperspectralSequence,
    RunLedger,
    ShapeError,
    SpectralLibrary,
    ValidationError,
)
from .metrics import MetricsReport

CUBE_MAGIC = "MTSU1"
_FLOAT_FMT = "%.17g"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def save_cube(out_dir, data, name: str = "cube") -> Path:
    """Write a cube; returns the manifest path. Payload is float32."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 3:
        raise ShapeError("cube data must have shape (T, N, L)")
    frames = []
    for t in range(arr.shape[0]):
        frame_name = f"{name}_t{t + 1:03d}.raw"
        (out_dir / frame_name).write_bytes(arr[t].tobytes(order="C"))
        frames.append(frame_name)
    manifest = out_dir / f"{name}.json"
    _write_json(manifest, {
        "magic": CUBE_MAGIC,
        "T": arr.shape[0],
        "N": arr.shape[1],
        "L": arr.shape[2],
        "dtype": "f32le",
        "frames": frames,
    })
    return manifest


def load_cube(manifest_path) -> HyperspectralSequence:
    manifest_path = Path(manifest_path)
    meta = _read_json(manifest_path)
    if meta.get("magic") != CUBE_MAGIC:
        raise ValidationError(f"bad cube magic: {meta.get('magic')!r}")
    if meta.get("dtype") != "f32le":
        raise ValidationError(f"unsupported cube dtype: {meta.get('dtype')!r}")
    t, n, l = int(meta["T"]), int(meta["N"]), int(meta["L"])
    frames = meta["frames"]
    if len(frames) != t:
        raise ShapeError("cube manifest lists the wrong number of frames")
    data = np.empty((t, n, l), dtype=np.float64)
    for i, frame_name in enumerate(frames):
        raw = (manifest_path.parent / frame_name).read_bytes()
        if len(raw) != n * l * 4:
            raise ShapeError(f"frame payload {frame_name} has {len(raw)} bytes, want {n * l * 4}")
        data[i] = np.frombuffer(raw, dtype="<f4").reshape(n, l)
    return HyperspectralSequence(data)


def save_library(out_dir, lib: SpectralLibrary, name: str = "library") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = []
    for p, sigs in enumerate(lib.signatures):
        table_name = f"{name}_material_{p + 1:02d}.csv"
        np.savetxt(out_dir / table_name, sigs, fmt=_FLOAT_FMT, delimiter=",")
        tables.append(table_name)
    manifest = out_dir / f"{name}.json"
    _write_json(manifest, {
        "P": lib.materials,
        "L": lib.bands,
        "names": list(lib.material_names()),
        "C_p": list(lib.counts),
        "materials": tables,
    })
    return manifest


def load_library(manifest_path) -> SpectralLibrary:
    manifest_path = Path(manifest_path)
    meta = _read_json(manifest_path)
    counts = [int(c) for c in meta["C_p"]]
    bands = int(meta["L"])
    sigs = []
    for p, table_name in enumerate(meta["materials"]):
        table = np.loadtxt(manifest_path.parent / table_name, delimiter=",", ndmin=2)
        if table.shape != (counts[p], bands):
            raise ShapeError(f"table {table_name} has shape {table.shape}, want ({counts[p]}, {bands})")
        sigs.append(table)
    lib = SpectralLibrary(tuple(sigs), names=tuple(meta["names"]))
    if not lib.has_distinct_signatures():
        import warnings

        warnings.warn("library holds duplicate signatures within a material; "
                      "model match rates become ambiguous", stacklevel=2)
    return lib


def save_abundances(out_dir, field: AbundanceField, name: str = "abundances") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, model_frames = [], []
    for t in range(field.frames):
        frame_name = f"{name}_t{t + 1:03d}.csv"
        np.savetxt(out_dir / frame_name, field.abundances[t], fmt=_FLOAT_FMT, delimiter=",")
        frames.append(frame_name)
        if field.models is not None:
            model_name = f"{name}_models_t{t + 1:03d}.csv"
            np.savetxt(out_dir / model_name, field.models[t], fmt="%d", delimiter=",")
            model_frames.append(model_name)
    manifest = out_dir / f"{name}.json"
    _write_json(manifest, {
        "T": field.frames,
        "N": field.pixels,
        "P": field.materials,
        "frames": frames,
        "models": model_frames or None,
    })
    return manifest


def load_abundances(manifest_path) -> AbundanceField:
    manifest_path = Path(manifest_path)
    meta = _read_json(manifest_path)
    t, n, p = int(meta["T"]), int(meta["N"]), int(meta["P"])
    abunds = np.empty((t, n, p))
    for i, frame_name in enumerate(meta["frames"]):
        table = np.loadtxt(manifest_path.parent / frame_name, delimiter=",", ndmin=2)
        if table.shape != (n, p):
            raise ShapeError(f"abundance table {frame_name} has shape {table.shape}, want ({n}, {p})")
        abunds[i] = table
    models = None
    if meta.get("models"):
        models = np.empty((t, n, p), dtype=np.int64)
        for i, model_name in enumerate(meta["models"]):
            models[i] = np.loadtxt(manifest_path.parent / model_name, delimiter=",", ndmin=2, dtype=np.int64)
    return AbundanceField(abunds, models)


def save_change_map(path, changes: ChangeMap) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, changes.flags, fmt="%d", delimiter=",")
    return path


def load_change_map(path) -> ChangeMap:
    flags = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.int64)
    return ChangeMap(flags)


def save_ledger(path, ledger: RunLedger) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(path, ledger.as_dict())
    return path


def load_ledger(path) -> RunLedger:
    meta = _read_json(path)
    return RunLedger(
        fcls_calls=int(meta["fcls_calls"]),
        residual_evals=int(meta["residual_evals"]),
        wall_time=float(meta["wall_time"]),
        reprocessed_pixels=int(meta["reprocessed_pixels"]),
    )


def save_metrics(out_dir, report: MetricsReport, name: str = "metrics") -> tuple[Path, Path]:
    """Write the report as JSON and as a two-column delimited table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {}
    for key, val in report.as_dict().items():
        if val is not None and math.isnan(val):
            payload[key] = "nan"
        else:
            payload[key] = val
    json_path = out_dir / f"{name}.json"
    _write_json(json_path, payload)
    csv_path = out_dir / f"{name}.csv"
    lines = ["metric,value"]
    for key, val in report.as_dict().items():
        if val is None:
            lines.append(f"{key},")
        else:
            lines.append(f"{key},{_FLOAT_FMT % val}")
    csv_path.write_text("\n".join(lines) + "\n")
    return json_path, csv_path


def load_metrics(path) -> MetricsReport:
    meta = _read_json(path)
    kwargs = {}
    for key, val in meta.items():
        if val == "nan":
            kwargs[key] = math.nan
        else:
            kwargs[key] = val
    return MetricsReport(**kwargs)


def parse_geometry(spec: str | None, pixels: int) -> tuple[int, int]:
    """Parse a WxH flag; defaults to a 1-row strip covering all pixels."""
    if spec is None:
        return pixels, 1
    try:
        w_txt, h_txt = spec.lower().split("x")
        width, height = int(w_txt), int(h_txt)
    except ValueError as exc:
        raise ValidationError(f"bad geometry {spec!r}; expected WxH") from exc
    if width < 1 or height < 1:
        raise ValidationError("geometry sides must be positive")
    if width * height != pixels:
        raise ShapeError(f"geometry {width}x{height} does not cover {pixels} pixels")
    return width, height


def save_graymaps(out_dir, field: AbundanceField, geometry: tuple[int, int] | None = None,
                  prefix: str = "abund") -> list[Path]:
    """Render abundance planes as 8-bit binary portable graymaps.

    One image per (frame, material); gray value is ``round(255 * a)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    width, height = geometry if geometry is not None else (field.pixels, 1)
    if width * height != field.pixels:
        raise ShapeError(f"geometry {width}x{height} does not cover {field.pixels} pixels")
    paths = []
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    for t in range(field.frames):
        for p in range(field.materials):
            plane = field.abundances[t, :, p].reshape(height, width)
            gray = np.clip(np.rint(255.0 * plane), 0, 255).astype(np.uint8)
            path = out_dir / f"{prefix}_t{t + 1:03d}_p{p + 1:02d}.pgm"
            path.write_bytes(header + gray.tobytes(order="C"))
            paths.append(path)
    return paths


def save_endmembers(path, matrix) -> Path:
    """Fixed endmember matrix table: one signature per row (P rows, L columns)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("endmember matrix must be 2-D")
    np.savetxt(path, arr.T, fmt=_FLOAT_FMT, delimiter=",")
    return path


def load_endmembers(path, bands: int | None = None) -> np.ndarray:
    """Read a fixed endmember table back into an (L, P) matrix."""
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    matrix = table.T
    if bands is not None and matrix.shape[0] != bands:
        raise ShapeError(f"endmember matrix has {matrix.shape[0]} bands, want {bands}")
    return matrix
