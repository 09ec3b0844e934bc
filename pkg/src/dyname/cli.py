"""Command-line entry point.

Subcommands: run, compare, ablate, bench, acf, synth. Configuration comes
from an optional TOML file with command-line flags taking precedence; every
run writes a step CSV, a summary JSON, and SVG figures into --out.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import report
from .baselines import AblationSpec, run_ablation
from .data import load_csv
from .engine import METHODS, EngineConfig, run_online
from .errors import ConfigError, DynameError
from .periods import acf
from .synth import generate_scenario, write_stream_csv

_CONFIG_FLAGS = {
    "horizon": "horizon",
    "lookback": "lookback",
    "experts": "n_experts",
    "samples": "n_max",
    "buffer": "buffer_len",
    "beta": "beta",
    "seed": "seed",
    "learning_rate": "learning_rate",
    "feature_dim": "feature_dim",
    "pretrain_epochs": "pretrain_epochs",
}


def build_config(args: argparse.Namespace) -> EngineConfig:
    """TOML file values first, then CLI flags on top."""
    values: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path, "rb") as fh:
            doc = tomllib.load(fh)
        engine_table = doc.get("engine", doc)
        valid = {f.name for f in fields(EngineConfig)}
        unknown = set(engine_table) - valid
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(engine_table)
    for flag, field_name in _CONFIG_FLAGS.items():
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[field_name] = flag_value
    cfg = EngineConfig(**values)
    cfg.validate()
    return cfg


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file (flags override)")
    parser.add_argument("--horizon", type=int)
    parser.add_argument("--lookback", type=int)
    parser.add_argument("--experts", type=int, help="number of specialized experts k")
    parser.add_argument("--samples", type=int, help="max fitting samples per expert")
    parser.add_argument("--buffer", type=int, help="history buffer length M")
    parser.add_argument("--beta", type=float, help="minimum backbone reliance")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--learning-rate", dest="learning_rate", type=float)
    parser.add_argument("--feature-dim", dest="feature_dim", type=int)
    parser.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)


def _worker_count() -> int:
    raw = os.environ.get("DYNAME_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"DYNAME_THREADS must be an integer, got {raw!r}") from None


def _execute_run(store_path: str, cfg: EngineConfig, method: str, ablation: AblationSpec | None):
    store = load_csv(store_path)
    if ablation is not None:
        return run_ablation(store, cfg, ablation)
    return run_online(store, cfg, method=method)


def _emit_run_outputs(result, manifest: report.RunManifest, out_dir: Path, *, plots: bool) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    n_slots = manifest.config.n_experts + 1
    steps_path = report.write_step_csv(result.records, out_dir / "steps.csv", n_slots)
    summary_path = report.write_summary_json(result.summary, manifest, out_dir / "summary.json")
    if plots:
        report.emit_plots(steps_path, out_dir, stem=manifest.method.replace("[", "_").rstrip("]"))
    return {"steps": str(steps_path), "summary": str(summary_path)}


def cmd_run(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    store = load_csv(args.data)
    result = run_online(store, cfg, method=args.method)
    manifest = report.RunManifest(
        dataset=Path(args.data).name, method=args.method, config=cfg, out_dir=args.out
    )
    paths = _emit_run_outputs(result, manifest, Path(args.out), plots=not args.no_plots)
    print(json.dumps({"mse": result.summary["mse"], **paths}))
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    horizons = [int(h) for h in args.horizons.split(",")]
    for method in methods:
        if method not in METHODS:
            raise ConfigError(f"unknown method {method!r}")
    jobs = [(method, h) for method in methods for h in horizons]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    workers = _worker_count()
    results = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                (method, h): pool.submit(
                    _execute_run, args.data, replace(cfg, horizon=h), method, None
                )
                for method, h in jobs
            }
            for key, future in futures.items():
                results[key] = future.result()
    else:
        for method, h in jobs:
            results[(method, h)] = _execute_run(args.data, replace(cfg, horizon=h), method, None)

    rows = ["method,horizon,mse,n_steps"]
    for method, h in jobs:
        summary = results[(method, h)].summary
        rows.append(f"{method},{h},{summary['mse']:.10g},{summary['n_steps']}")
        run_manifest = report.RunManifest(
            dataset=Path(args.data).name, method=method, config=replace(cfg, horizon=h)
        )
        report.write_summary_json(
            results[(method, h)].summary, run_manifest, out_dir / f"summary_{method}_h{h}.json"
        )
    table = out_dir / "compare.csv"
    table.write_text("\n".join(rows) + "\n")
    print(table)
    return 0


_ABLATION_GRIDS = {
    "gate": [AblationSpec(gate_variant=v) for v in ("dynamic", "simple_average", "learnable", "detached")],
    "danger": [AblationSpec(use_danger=True), AblationSpec(use_danger=False)],
    "period": [AblationSpec(period_mode="dynamic_fft"), AblationSpec(period_mode="fixed")],
}


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = build_config(args)
    if args.axis not in _ABLATION_GRIDS:
        raise ConfigError(f"unknown ablation axis {args.axis!r}; use gate, danger, or period")
    specs = _ABLATION_GRIDS[args.axis]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    workers = _worker_count()
    results = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute_run, args.data, cfg, "dyname", spec) for spec in specs]
            results = [f.result() for f in futures]
    else:
        results = [_execute_run(args.data, cfg, "dyname", spec) for spec in specs]

    rows = ["variant,mse,n_steps"]
    for spec, result in zip(specs, results):
        rows.append(f"{spec.label()},{result.summary['mse']:.10g},{result.summary['n_steps']}")
        manifest = report.RunManifest(
            dataset=Path(args.data).name,
            method="dyname",
            config=cfg,
            ablation=result.summary.get("ablation"),
        )
        report.write_summary_json(result.summary, manifest, out_dir / f"summary_{spec.label()}.json")
    table = out_dir / f"ablate_{args.axis}.csv"
    table.write_text("\n".join(rows) + "\n")
    print(table)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    result = report.bench_solvers(
        n_samples=args.n, feature_dim=args.d, trials=args.trials, seed=args.seed or 0
    )
    print(json.dumps(result.as_dict(), indent=2))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(json.dumps(result.as_dict(), indent=2) + "\n")
    return 0


def cmd_acf(args: argparse.Namespace) -> int:
    store = load_csv(args.data)
    lags = list(range(1, args.max_lag + 1))
    values = acf(store.values[:, args.channel], lags)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report.write_acf_csv(lags, values, out_dir / "acf.csv")
    report.plot_acf(lags, values, out_dir / "acf.svg")
    print(csv_path)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    values, events = generate_scenario(args.scenario, total_len=args.length, seed=args.seed or 0)
    path = write_stream_csv(values, args.out_file, events)
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyname", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="single online run")
    p_run.add_argument("--data", required=True)
    p_run.add_argument("--method", default="dyname", choices=METHODS)
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--no-plots", action="store_true")
    _add_config_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="method x horizon grid")
    p_cmp.add_argument("--data", required=True)
    p_cmp.add_argument("--methods", default="dyname,gd")
    p_cmp.add_argument("--horizons", default="24")
    p_cmp.add_argument("--out", default="out")
    _add_config_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_abl = sub.add_parser("ablate", help="ablation grid on one axis")
    p_abl.add_argument("--data", required=True)
    p_abl.add_argument("--axis", default="gate", choices=sorted(_ABLATION_GRIDS))
    p_abl.add_argument("--out", default="out")
    _add_config_flags(p_abl)
    p_abl.set_defaults(func=cmd_ablate)

    p_bench = sub.add_parser("bench", help="primal vs dual solve timing")
    p_bench.add_argument("--n", type=int, default=8)
    p_bench.add_argument("--d", type=int, default=512)
    p_bench.add_argument("--trials", type=int, default=100)
    p_bench.add_argument("--seed", type=int)
    p_bench.add_argument("--out")
    p_bench.set_defaults(func=cmd_bench)

    p_acf = sub.add_parser("acf", help="autocorrelation export")
    p_acf.add_argument("--data", required=True)
    p_acf.add_argument("--channel", type=int, default=0)
    p_acf.add_argument("--max-lag", type=int, default=336)
    p_acf.add_argument("--out", default="out")
    p_acf.set_defaults(func=cmd_acf)

    p_synth = sub.add_parser("synth", help="generate a labeled drift stream")
    p_synth.add_argument("--scenario", required=True)
    p_synth.add_argument("--length", type=int)
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--out-file", default="stream.csv")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DynameError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
