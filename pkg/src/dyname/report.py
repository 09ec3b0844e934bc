"""Run manifests, delimited outputs, figures, and the solver timing bench.

Figures are rendered with matplotlib straight to SVG next to the step CSV,
so a report directory is self-contained: steps.csv + summary.json + *.svg.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .engine import EngineConfig, StepRecord
from .errors import MissingColumn
from .ridge import RidgeProblem, solve_dual, solve_primal

SUMMARY_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class RunManifest:
    """Identity of one run; the hash covers every run-affecting field."""

    dataset: str
    method: str
    config: EngineConfig
    ablation: dict | None = None
    out_dir: str = "."

    def config_hash(self) -> str:
        payload = {
            "dataset": self.dataset,
            "method": self.method,
            "config": asdict(self.config),
            "ablation": self.ablation,
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


STEP_COLUMNS = ("t", "mse", "adapt_mse", "mu", "d", "gamma")


def write_step_csv(records: list[StepRecord], path: str | Path, n_slots: int) -> Path:
    """One row per step: t, realized and adaptation MSE, safety trace, and
    channel-mean final weights omega_0..omega_k (0 for dropped slots)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(STEP_COLUMNS) + [f"omega_{i}" for i in range(n_slots)])
        for r in records:
            omega_mean = r.omega.mean(axis=0)
            padded = np.zeros(n_slots)
            padded[: omega_mean.size] = omega_mean
            writer.writerow(
                [
                    r.t,
                    _fmt(r.realized_mse),
                    _fmt(r.adapt_mse),
                    _fmt(r.mu),
                    _fmt(r.d),
                    _fmt(r.gamma),
                ]
                + [_fmt(v) for v in padded]
            )
    return path


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{float(v):.10g}"


def write_summary_json(summary: dict, manifest: RunManifest, path: str | Path) -> Path:
    """Summary JSON with the manifest hash; deterministic fields first,
    volatile timing kept under its own key."""
    path = Path(path)
    payload = dict(summary)
    payload["schema_version"] = SUMMARY_SCHEMA_VERSION
    payload["dataset"] = manifest.dataset
    payload["config_hash"] = manifest.config_hash()
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path


def deterministic_summary_bytes(path: str | Path) -> bytes:
    """Summary contents with the volatile timing block stripped; two runs of
    the same manifest must agree byte-for-byte on this."""
    payload = json.loads(Path(path).read_text())
    payload.pop("timing", None)
    return json.dumps(payload, sort_keys=True, indent=2).encode()


def read_step_csv(path: str | Path, columns: list[str]) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingColumn(f"{path} is empty") from None
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for col in columns:
        if col not in header:
            raise MissingColumn(f"column {col!r} missing from {path}")
        idx = header.index(col)
        vals = [row[idx] for row in rows]
        out[col] = np.array([float(v) if v != "" else np.nan for v in vals])
    return out


def emit_plots(
    step_csvs: dict[str, str | Path] | str | Path,
    out_dir: str | Path,
    *,
    stem: str = "run",
) -> list[Path]:
    """Render the standard report figures as SVG files.

    ``step_csvs`` maps a label to a step CSV; multiple entries overlay (the
    with/without danger comparison). Produces an MSE trace, a danger-signal
    trace, and a slot-0 weight trace.
    """
    if isinstance(step_csvs, (str, Path)):
        step_csvs = {"run": step_csvs}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    series = {
        label: read_step_csv(path, ["t", "mse", "d", "gamma", "omega_0"])
        for label, path in step_csvs.items()
    }
    specs = (
        ("mse", "per-step MSE", f"{stem}_mse.svg"),
        ("d", "danger signal", f"{stem}_danger.svg"),
        ("omega_0", "generalized-expert weight", f"{stem}_omega0.svg"),
    )
    written: list[Path] = []
    for column, title, filename in specs:
        fig, ax = plt.subplots(figsize=(8, 3))
        for label, cols in series.items():
            ax.plot(cols["t"], cols[column], label=label, linewidth=0.9, gid=f"series-{label}")
        ax.set_xlabel("t")
        ax.set_ylabel(column)
        ax.set_title(title)
        if len(series) > 1:
            ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        target = out_dir / filename
        fig.savefig(target, format="svg")
        plt.close(fig)
        written.append(target)
    return written


def write_acf_csv(lags: list[int], values: list[float], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag", "value"])
        for lag, val in zip(lags, values):
            writer.writerow([lag, f"{val:.10g}"])
    return path


def plot_acf(lags: list[int], values: list[float], path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.bar(lags, values, width=0.8, gid="acf-bars")
    ax.set_xlabel("lag")
    ax.set_ylabel("autocorrelation")
    ax.axhline(0.0, color="black", linewidth=0.6)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


@dataclass(frozen=True)
class BenchResult:
    n_samples: int
    feature_dim: int
    trials: int
    primal_median_s: float
    dual_median_s: float

    @property
    def speedup(self) -> float:
        return self.primal_median_s / self.dual_median_s

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "feature_dim": self.feature_dim,
            "trials": self.trials,
            "primal_median_s": self.primal_median_s,
            "dual_median_s": self.dual_median_s,
            "speedup": self.speedup,
        }


def bench_solvers(
    n_samples: int = 8,
    feature_dim: int = 512,
    *,
    horizon: int = 24,
    trials: int = 100,
    warmup: int = 5,
    lam: float = 1e-4,
    seed: int = 0,
) -> BenchResult:
    """Median wall-clock of the primal vs dual solve on matched problems.

    Warmup solves are discarded; each trial draws a fresh problem so cache
    effects average out.
    """
    rng = np.random.default_rng(seed)
    problems = [
        RidgeProblem(
            Z=rng.normal(size=(n_samples, feature_dim)),
            Y=rng.normal(size=(n_samples, horizon)),
            lam=lam,
            z_query=rng.normal(size=feature_dim),
        )
        for _ in range(warmup + trials)
    ]
    timings = {"primal": [], "dual": []}
    for solver_name, solver in (("primal", solve_primal), ("dual", solve_dual)):
        for i, problem in enumerate(problems):
            start = time.perf_counter()
            solver(problem)
            elapsed = time.perf_counter() - start
            if i >= warmup:
                timings[solver_name].append(elapsed)
    return BenchResult(
        n_samples=n_samples,
        feature_dim=feature_dim,
        trials=trials,
        primal_median_s=float(np.median(timings["primal"])),
        dual_median_s=float(np.median(timings["dual"])),
    )
