"""Command line interface.

Subcommands: ``generate`` (synthetic datasets), ``unmix`` (run an
algorithm over a cube), ``metrics`` (score an estimate against truth) and
``bench`` (sweep a configuration matrix with operation counting).

Exit codes are a stable contract: 0 success, 1 validation problem,
2 shape mismatch, 3 solver convergence failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from .core import (
    AbundanceField,
    ConvergenceError,
    RunLedger,
    ShapeError,
    ValidationError,
)
from .fm_mesma import FmMesmaConfig, unmix_sequence
from .mesma import mesma_sequence
from .metrics import evaluate
from .solver import fcls
from .synth import SynthConfig, generate_dataset, realized_snr_db
from . import io as mio

ALGORITHMS = ("fcls", "mesma", "fm-mesma")

_CONFIG_KEYS = {"L", "N", "T", "P", "C_p", "sigma_lib2", "snr_db", "kappa",
                "dirichlet_alpha", "delta_std", "seed"}


class _Parser(argparse.ArgumentParser):
    # usage problems are validation failures under the exit-code contract
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_synth_config(path: Path, overrides: dict) -> SynthConfig:
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"L", "N", "T", "P", "C_p", "seed"} - set(raw)
    if missing:
        raise ValidationError(f"config is missing required keys: {sorted(missing)}")
    if isinstance(raw.get("C_p"), list):
        raw["C_p"] = tuple(raw["C_p"])
    if isinstance(raw.get("dirichlet_alpha"), list):
        raw["dirichlet_alpha"] = tuple(raw["dirichlet_alpha"])
    if isinstance(raw.get("snr_db"), str):
        raw["snr_db"] = float(raw["snr_db"])
    return SynthConfig(**raw)


def _cmd_generate(args) -> int:
    overrides = {"seed": args.seed, "snr_db": args.snr_db, "kappa": args.kappa}
    cfg = _load_synth_config(args.config, overrides)
    lib, seq, truth = generate_dataset(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mio.save_cube(out, seq.data)
    mio.save_library(out, lib)
    mio.save_abundances(out, truth.abundances, name="truth_abundances")
    mio.save_change_map(out / "truth_changes.csv", truth.change_truth)
    snr = realized_snr_db(seq.data, truth.clean)
    meta = {"config": json.loads(Path(args.config).read_text()),
            "seed": cfg.seed, "realized_snr_db": "inf" if math.isinf(snr) else snr}
    (out / "generate_meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"seed: {cfg.seed}")
    print(f"realized snr [dB]: {snr}")
    print(f"wrote dataset to {out}")
    return 0


def _run_fcls_fixed(seq, matrix, ledger: RunLedger):
    t0 = time.perf_counter()
    frames, pixels = seq.frames, seq.pixels
    abunds = np.empty((frames, pixels, matrix.shape[1]))
    for t in range(frames):
        for n in range(pixels):
            abunds[t, n] = fcls(matrix, seq.data[t, n]).abundance
            ledger.add_fcls(1)
    ledger.add_wall_time(time.perf_counter() - t0)
    return AbundanceField(abunds)


def _cmd_unmix(args) -> int:
    seq = mio.load_cube(args.cube)
    lib = mio.load_library(args.library)
    if seq.bands != lib.bands:
        raise ShapeError("cube and library disagree on the number of bands")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ledger = RunLedger()
    changes = None
    threshold = None
    endmembers = None
    if args.algorithm == "mesma":
        field, ledger = mesma_sequence(lib, seq, ledger)
    elif args.algorithm == "fm-mesma":
        cfg = FmMesmaConfig(k_proportion=args.k_proportion)
        result = unmix_sequence(lib, seq, cfg, ledger)
        field, changes, threshold = result.abundances, result.changes, result.threshold
    else:
        if args.endmembers is None:
            raise ValidationError("--endmembers is required for the fcls algorithm")
        endmembers = mio.load_endmembers(args.endmembers, bands=seq.bands)
        field = _run_fcls_fixed(seq, endmembers, ledger)

    mio.save_abundances(out, field)
    if changes is not None:
        mio.save_change_map(out / "changes.csv", changes)
    mio.save_ledger(out / "ledger.json", ledger)
    mio.save_library(out, lib)
    if endmembers is not None:
        mio.save_endmembers(out / "endmembers.csv", endmembers)
    geometry = mio.parse_geometry(args.geometry, seq.pixels)
    mio.save_graymaps(out, field, geometry)
    (out / "unmix_meta.json").write_text(json.dumps({
        "algorithm": args.algorithm,
        "k_proportion": args.k_proportion if args.algorithm == "fm-mesma" else None,
        "threshold": threshold,
        "geometry": f"{geometry[0]}x{geometry[1]}",
    }, indent=2) + "\n")
    if not args.no_figures:
        from . import plots

        plots.abundance_figure(field, geometry, out / "abundances.png")
        if changes is not None:
            plots.change_figure(changes, geometry, out / "changes.png")
    print(f"algorithm: {args.algorithm}")
    print(f"fcls calls: {ledger.fcls_calls}")
    print(f"residual evals: {ledger.residual_evals}")
    print(f"wall time [s]: {ledger.wall_time:.3f}")
    if changes is not None:
        print(f"flagged pixels: {int(changes.flags.sum())} (threshold {threshold:.6g})")
    print(f"wrote outputs to {out}")
    return 0


def _cmd_metrics(args) -> int:
    est_dir = Path(args.estimate_dir)
    truth_dir = Path(args.truth_dir)
    estimated = mio.load_abundances(est_dir / "abundances.json")
    truth = mio.load_abundances(truth_dir / "truth_abundances.json")
    est_lib = None
    if (est_dir / "library.json").exists():
        est_lib = mio.load_library(est_dir / "library.json")
    true_lib = None
    if (truth_dir / "library.json").exists():
        true_lib = mio.load_library(truth_dir / "library.json")
    observed = None
    if (truth_dir / "cube.json").exists():
        observed = mio.load_cube(truth_dir / "cube.json")
    detected = None
    if (est_dir / "changes.csv").exists():
        detected = mio.load_change_map(est_dir / "changes.csv")
    true_changes = None
    if (truth_dir / "truth_changes.csv").exists():
        true_changes = mio.load_change_map(truth_dir / "truth_changes.csv")
    fixed = None
    if (est_dir / "endmembers.csv").exists():
        fixed = mio.load_endmembers(est_dir / "endmembers.csv")
    report = evaluate(
        estimated,
        truth,
        observed=observed,
        est_library=est_lib,
        true_library=true_lib,
        detected_changes=detected,
        true_changes=true_changes,
        fixed_endmembers=fixed,
    )
    out = Path(args.out_dir) if args.out_dir else est_dir
    json_path, csv_path = mio.save_metrics(out, report)
    if not args.no_figures:
        from . import plots

        plots.metrics_figure(report, out / "metrics.png")
    for key, val in report.as_dict().items():
        print(f"{key}: {'' if val is None else val}")
    print(f"wrote {json_path} and {csv_path}")
    return 0


def _predicted_fcls(algorithm: str, n: int, t: int, models: int, kappa: float) -> int:
    if algorithm == "mesma":
        return t * n * models
    if algorithm == "fm-mesma":
        flagged = math.ceil(kappa * n) * (t - 1)
        return n * models + (t - 1) * n + flagged * (models - 1)
    return t * n


def _cmd_bench(args) -> int:
    spec = json.loads(Path(args.config).read_text())
    p_values = spec.get("P", [2, 3])
    c_values = spec.get("C_p", [2, 3])
    algorithms = spec.get("algorithms", ["mesma", "fm-mesma"])
    for algo in algorithms:
        if algo not in ("mesma", "fm-mesma"):
            raise ValidationError(f"bench supports mesma and fm-mesma, not {algo!r}")
    n = int(spec.get("N", 100))
    t = int(spec.get("T", 4))
    base = {
        "L": int(spec.get("L", 80)),
        "N": n,
        "T": t,
        "snr_db": float(spec.get("snr_db", 40.0)),
        "kappa": float(spec.get("kappa", 0.01)),
        "sigma_lib2": float(spec.get("sigma_lib2", 0.12)),
        "seed": int(spec.get("seed", 0)),
    }
    k_prop = float(spec.get("k_proportion", 10.0))
    time_budget = float(spec.get("time_budget_s", math.inf))
    max_fcls = int(spec.get("max_fcls", 10_000_000))

    rows = []
    over_time: set[tuple[str, int]] = set()
    for p in p_values:
        for c in c_values:
            cfg = SynthConfig(P=int(p), C_p=int(c), **base)
            lib, seq, _ = generate_dataset(cfg)
            models = lib.model_count()
            for algo in algorithms:
                row = {"P": int(p), "C_p": int(c), "algorithm": algo, "N": n, "T": t,
                       "model_count": models, "fcls_calls": None, "residual_evals": None,
                       "reprocessed": None, "wall_time_s": math.inf, "status": "ok"}
                predicted = _predicted_fcls(algo, n, t, models, base["kappa"])
                if predicted > max_fcls:
                    row["status"] = "skipped-count-budget"
                elif (algo, int(p)) in over_time:
                    row["status"] = "skipped-time-budget"
                else:
                    ledger = RunLedger()
                    if algo == "mesma":
                        mesma_sequence(lib, seq, ledger)
                    else:
                        unmix_sequence(lib, seq, FmMesmaConfig(k_proportion=k_prop), ledger)
                    row["fcls_calls"] = ledger.fcls_calls
                    row["residual_evals"] = ledger.residual_evals
                    row["reprocessed"] = ledger.reprocessed_pixels
                    if ledger.wall_time > time_budget:
                        row["status"] = "over-time-budget"
                        over_time.add((algo, int(p)))
                    else:
                        row["wall_time_s"] = ledger.wall_time
                rows.append(row)
                wall = "inf" if math.isinf(row["wall_time_s"]) else f"{row['wall_time_s']:.3f}"
                print(f"P={p} C_p={c} {algo}: wall={wall}s fcls={row['fcls_calls']} "
                      f"status={row['status']}")

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = ["P", "C_p", "algorithm", "N", "T", "model_count", "fcls_calls",
              "residual_evals", "reprocessed", "wall_time_s", "status"]
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for key in header:
            val = row[key]
            if val is None:
                cells.append("")
            elif key == "wall_time_s":
                cells.append("inf" if math.isinf(val) else f"{val:.6f}")
            else:
                cells.append(str(val))
        lines.append(",".join(cells))
    (out / "bench.csv").write_text("\n".join(lines) + "\n")
    if not args.no_figures:
        from . import plots

        plots.bench_figure(rows, out / "bench.png")
    print(f"wrote {out / 'bench.csv'}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="mtsu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", parents=[], help="render a synthetic dataset")
    gen.add_argument("--config", required=True, help="JSON file with SynthConfig keys")
    gen.add_argument("--out-dir", required=True)
    gen.add_argument("--seed", type=int, default=None, help="override the config seed")
    gen.add_argument("--snr-db", type=float, default=None, help="override the config SNR")
    gen.add_argument("--kappa", type=float, default=None, help="override the change ratio")
    gen.set_defaults(func=_cmd_generate)

    unmix = sub.add_parser("unmix", help="unmix a cube with a library")
    unmix.add_argument("--cube", required=True, help="cube manifest path")
    unmix.add_argument("--library", required=True, help="library manifest path")
    unmix.add_argument("--algorithm", required=True, choices=ALGORITHMS)
    unmix.add_argument("--k-proportion", type=float, default=10.0)
    unmix.add_argument("--endmembers", default=None,
                       help="fixed endmember table (required for fcls)")
    unmix.add_argument("--out-dir", required=True)
    unmix.add_argument("--geometry", default=None, help="WxH layout for rendered maps")
    unmix.add_argument("--no-figures", action="store_true")
    unmix.set_defaults(func=_cmd_unmix)

    met = sub.add_parser("metrics", help="score an estimate against ground truth")
    met.add_argument("--estimate-dir", required=True)
    met.add_argument("--truth-dir", required=True)
    met.add_argument("--out-dir", default=None)
    met.add_argument("--no-figures", action="store_true")
    met.set_defaults(func=_cmd_metrics)

    bench = sub.add_parser("bench", help="sweep a (P, C_p, algorithm) matrix")
    bench.add_argument("--config", required=True, help="JSON benchmark matrix")
    bench.add_argument("--out-dir", required=True)
    bench.add_argument("--no-figures", action="store_true")
    bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ShapeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
