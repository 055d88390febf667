"""Command-line entry point.

Settings resolve as: command-line flags > config file > built-in defaults. The
config file is YAML (or JSON) with keys named like the long flags, e.g.
``chunk-rows: 65536``; pass it with ``--config`` or point ``SEISFACIES_CONFIG``
at it.

Exit codes: 0 success, 1 unexpected error, 2 usage error, and one code per
error family (see :mod:`seisfacies.errors`).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from . import bench as benchmod
from ._parallel import resolve_workers
from .errors import ConfigError, DataIOError, FaciesError, exit_code_for
from .export import read_label_volume, export_slice_image
from .kmeans import KMeansConfig, load_model
from .pipeline import classify, export_outputs, ingest, train
from .segy import SynthSpec, read_segy, synth_volume, write_segy
from .store import DEFAULT_CHUNK_ROWS, open_store

CONFIG_ENV = "SEISFACIES_CONFIG"

DEFAULTS = {
    "window": 11,
    "chunk_rows": DEFAULT_CHUNK_ROWS,
    "k": 8,
    "k_min": 5,
    "k_max": 12,
    "tol": 1e-4,
    "max_iters": 300,
    "seed": 0,
    "init": "kmeanspp",
    "workers": 0,
    "bench_workers": "1,0",
    "reps": 3,
    "geometry": [16, 16, 64],
    "layers": 6,
    "peak_hz": 30.0,
    "noise": 0.05,
    "dt": 0.004,
    "dip": 0.0,
    "format": 5,
}


@dataclass
class PipelineConfig:
    input: Optional[str] = None
    store: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None
    window: int = 11
    chunk_rows: int = DEFAULT_CHUNK_ROWS
    kmeans: KMeansConfig = field(default_factory=lambda: KMeansConfig(k=8))
    workers: int = 0
    k_min: int = 5
    k_max: int = 12

    def __post_init__(self):
        if self.k_min > self.k_max:
            raise ConfigError(f"k-min ({self.k_min}) exceeds k-max ({self.k_max})")
        if self.workers < 0:
            raise ConfigError(f"workers must be >= 0, got {self.workers}")
        if self.chunk_rows < 1:
            raise ConfigError(f"chunk-rows must be >= 1, got {self.chunk_rows}")


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    unknown = sorted(set(data) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        settings.update(load_config_file(path))
    for key, value in vars(args).items():
        if value is not None and key in DEFAULTS:
            settings[key] = value
    return settings


def pipeline_config(args, settings) -> PipelineConfig:
    try:
        km = KMeansConfig(
            k=int(settings["k"]),
            max_iters=int(settings["max_iters"]),
            tol=float(settings["tol"]),
            seed=int(settings["seed"]),
            init_method=str(settings["init"]),
        )
    except FaciesError as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(
        input=getattr(args, "input", None),
        store=getattr(args, "store", None),
        model=getattr(args, "model", None),
        out=getattr(args, "out", None),
        window=int(settings["window"]),
        chunk_rows=int(settings["chunk_rows"]),
        kmeans=km,
        workers=int(settings["workers"]) if not isinstance(settings["workers"], str) else 0,
        k_min=int(settings["k_min"]),
        k_max=int(settings["k_max"]),
    )


def synth_spec(settings) -> SynthSpec:
    spec = SynthSpec(
        geometry=tuple(int(n) for n in settings["geometry"]),
        n_layers=int(settings["layers"]),
        wavelet_peak_hz=float(settings["peak_hz"]),
        noise_std=float(settings["noise"]),
        seed=int(settings["seed"]),
        dt_s=float(settings["dt"]),
        dip=float(settings["dip"]),
    )
    spec.validate()
    return spec


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _require(value, flag):
    if not value:
        raise ConfigError(f"{flag} is required")
    return value


# --- commands -------------------------------------------------------------


def cmd_synth(args, settings) -> int:
    out = _require(args.out, "--out")
    spec = synth_spec(settings)
    write_segy(synth_volume(spec), out, int(settings["format"]))
    _emit({"command": "synth", "out": out, "geometry": list(spec.geometry), "format": int(settings["format"])})
    return 0


def cmd_ingest(args, settings) -> int:
    cfg = pipeline_config(args, settings)
    store = _require(cfg.store, "--store")
    t0 = time.perf_counter()
    if args.synth:
        volume = synth_volume(synth_spec(settings))
        source = "synth"
    else:
        source = _require(cfg.input, "--input (or --synth)")
        volume = read_segy(source)
    manifest = ingest(volume, store, cfg.window, cfg.chunk_rows, cfg.workers)
    _emit({
        "command": "ingest",
        "source": source,
        "store": store,
        "geometry": list(volume.geometry),
        "rows": manifest.n_rows,
        "cols": manifest.n_cols,
        "chunks": manifest.chunk_count,
        "bytes": sum(c.n_bytes for c in manifest.chunks),
        "seconds": round(time.perf_counter() - t0, 6),
    })
    return 0


def cmd_train(args, settings) -> int:
    cfg = pipeline_config(args, settings)
    store = open_store(_require(cfg.store, "--store"))
    model = train(store, cfg.kmeans, _require(cfg.model, "--model"), cfg.workers)
    _emit({
        "command": "train",
        "model": cfg.model,
        "k": model.n_clusters,
        "iterations": model.iterations_run,
        "converged": model.converged,
        "distance_evals": model.distance_evals,
        "empty_repairs": model.empty_repairs,
        "objective_history": model.objective_history,
    })
    return 0


def cmd_predict(args, settings) -> int:
    cfg = pipeline_config(args, settings)
    store = open_store(_require(cfg.store, "--store"))
    model = load_model(_require(cfg.model, "--model"))
    volume = classify(store, model, cfg.workers)
    written = export_outputs(volume, _require(cfg.out, "--out"), args.inline or (), args.crossline or ())
    _emit({
        "command": "predict",
        "geometry": list(volume.geometry),
        "k": volume.k,
        "written": [str(p) for p in written],
    })
    return 0


def cmd_slice(args, settings) -> int:
    volume = read_label_volume(_require(args.input, "--input"))
    out = _require(args.out, "--out")
    export_slice_image(volume, args.axis, args.index, path=out)
    _emit({"command": "slice", "axis": args.axis, "index": args.index, "out": out})
    return 0


def parse_worker_list(text) -> list[int]:
    if isinstance(text, int):
        return [text]
    values = []
    for part in str(text).split(","):
        part = part.strip()
        if part in ("max", "all"):
            values.append(0)
        else:
            try:
                values.append(int(part))
            except ValueError:
                raise ConfigError(f"bad worker count {part!r}") from None
    if not values or any(v < 0 for v in values):
        raise ConfigError(f"bad worker list {text!r}")
    return values


def cmd_bench(args, settings) -> int:
    cfg = pipeline_config(args, settings)
    store_path = _require(cfg.store, "--store")
    store = open_store(store_path)
    workers = sorted({resolve_workers(w) for w in parse_worker_list(args.workers or settings["bench_workers"])})
    if 1 not in workers:
        workers.insert(0, 1)
    dataset = args.dataset or Path(store_path).name
    records = benchmod.run_bench(
        store, dataset, range(cfg.k_min, cfg.k_max + 1), workers,
        reps=int(settings["reps"]), base=cfg.kmeans,
    )
    table = benchmod.speedup_table(records)
    benchmod.check_scaling(records, resolve_workers(0))
    print(benchmod.format_table(
        ["dataset", "k", "workers", "wall_time_s", "iterations", "distance_evals"],
        [(r.dataset, r.k, r.worker_count, r.wall_time_s, r.iterations, r.distance_evals) for r in records],
    ))
    print()
    print(benchmod.format_table(
        ["dataset", "workers", "speedup_geomean", "n_k"],
        [(r.dataset, r.worker_count, r.speedup, r.n_k) for r in table],
    ))
    if cfg.out:
        out = Path(cfg.out)
        try:
            out.write_text(benchmod.records_csv(records))
            out.with_name(out.stem + "_speedup.csv").write_text(benchmod.speedups_csv(table))
        except OSError as exc:
            raise DataIOError(f"cannot write bench output {out}: {exc.strerror or exc}") from exc
    return 0


# --- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seisfacies", description="Out-of-core seismic facies classification")
    parser.add_argument("--config", help=f"YAML/JSON config file (default: ${CONFIG_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        for flag in flags:
            if flag == "workers":
                p.add_argument("--workers", type=int, help="worker threads, 0 = all cores")
            elif flag == "seed":
                p.add_argument("--seed", type=int)
            elif flag == "synth":
                p.add_argument("--geometry", type=int, nargs=3, metavar=("IL", "XL", "NS"))
                p.add_argument("--layers", type=int)
                p.add_argument("--peak-hz", type=float)
                p.add_argument("--noise", type=float)
                p.add_argument("--dt", type=float)
                p.add_argument("--dip", type=float, help="interface shift in samples per inline")
            elif flag == "kmeans":
                p.add_argument("--tol", type=float)
                p.add_argument("--max-iters", type=int)
                p.add_argument("--init", choices=("kmeanspp", "random"))

    p = sub.add_parser("synth", help="write a layered synthetic SEG-Y file")
    p.add_argument("--out")
    p.add_argument("--format", type=int, choices=(1, 5))
    common(p, "seed", "synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="SEG-Y (or synthetic) -> attributes -> z-scored chunked store")
    p.add_argument("--input", help="SEG-Y file")
    p.add_argument("--synth", action="store_true", help="generate the volume instead of reading --input")
    p.add_argument("--store")
    p.add_argument("--window", type=int, help="reflection intensity window (odd samples)")
    p.add_argument("--chunk-rows", type=int)
    common(p, "workers", "seed", "synth")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit K-means on a store")
    p.add_argument("--store")
    p.add_argument("--model")
    p.add_argument("--k", type=int)
    common(p, "workers", "seed", "kmeans")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label a store and write the label volume and slices")
    p.add_argument("--store")
    p.add_argument("--model")
    p.add_argument("--out", help="label volume path")
    p.add_argument("--inline", type=int, action="append", help="inline slice index to render (repeatable)")
    p.add_argument("--crossline", type=int, action="append", help="crossline slice index to render (repeatable)")
    common(p, "workers")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("slice", help="render one section of a label volume as P6")
    p.add_argument("--input", help="label volume path")
    p.add_argument("--axis", choices=("inline", "crossline"), default="inline")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("bench", help="time training over a k sweep and worker counts")
    p.add_argument("--store")
    p.add_argument("--dataset", help="dataset id (default: store directory name)")
    p.add_argument("--k-min", type=int)
    p.add_argument("--k-max", type=int)
    p.add_argument("--workers", help="comma-separated worker counts, 'max' = all cores (default 1,max)")
    p.add_argument("--reps", type=int)
    p.add_argument("--out", help="CSV path for bench records")
    common(p, "seed", "kmeans")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve(args)
        return args.func(args, settings)
    except FaciesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
