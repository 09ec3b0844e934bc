"""Reference predictors and ablation wiring.

Weekly-LR is the seasonal reference: a per-channel ridge fit on a handful
of weekly-strided window pairs, evaluated on the current lookback. The
recency variant fits on the most recent non-overlapping pairs instead and
exists to contrast recency-first adaptation against period-aligned history
on recurring-drift streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SeriesStore
from .engine import EngineConfig, RunPlan, RunResult, run_online
from .errors import ConfigError, InsufficientHistory
from .ridge import DEFAULT_LAMBDA, RidgeProblem, solve_dual

GATE_CHOICES = ("dynamic", "simple_average", "learnable", "detached")
PERIOD_CHOICES = ("dynamic_fft", "fixed")


@dataclass(frozen=True)
class AblationSpec:
    """One point on the ablation grid: gating variant, danger switch, and
    period-selection mode."""

    gate_variant: str = "dynamic"
    use_danger: bool = True
    keep_beta: bool = True
    period_mode: str = "dynamic_fft"
    fixed_periods: tuple[int, ...] = (168, 24)

    def validate(self) -> None:
        if self.gate_variant not in GATE_CHOICES:
            raise ConfigError(f"gate_variant must be one of {GATE_CHOICES}")
        if self.period_mode not in PERIOD_CHOICES:
            raise ConfigError(f"period_mode must be one of {PERIOD_CHOICES}")
        if self.period_mode == "fixed" and not self.fixed_periods:
            raise ConfigError("fixed period mode needs at least one period")

    def to_plan(self) -> RunPlan:
        self.validate()
        return RunPlan(
            gate_variant=self.gate_variant,
            use_danger=self.use_danger,
            keep_beta=self.keep_beta,
            period_mode=self.period_mode,
            fixed_periods=tuple(self.fixed_periods),
        )

    def label(self) -> str:
        danger = "with_danger" if self.use_danger else "no_danger"
        period = "fft" if self.period_mode == "dynamic_fft" else "fixed"
        return f"{self.gate_variant}+{danger}+{period}"


def _strided_ridge(
    store: SeriesStore,
    t: int,
    anchors: list[int],
    horizon: int,
    lookback: int,
    lam: float,
) -> np.ndarray:
    """Per-channel ridge on raw lookback features over the given anchors."""
    xs = np.stack([store.rows(a - lookback + 1, a + 1) for a in anchors])  # [n x L x C]
    ys = np.stack([store.rows(a + 1, a + horizon + 1) for a in anchors])   # [n x H x C]
    x_query = store.rows(t - lookback + 1, t + 1)                          # [L x C]
    n_channels = x_query.shape[1]
    pred = np.empty((horizon, n_channels))
    for c in range(n_channels):
        problem = RidgeProblem(
            Z=xs[:, :, c], Y=ys[:, :, c], lam=lam, z_query=x_query[:, c]
        )
        pred[:, c] = solve_dual(problem)
    return pred


def weekly_lr_predict(
    store: SeriesStore,
    t: int,
    *,
    period: int = 168,
    n_samples: int = 4,
    horizon: int = 24,
    lookback: int = 96,
    lam: float = DEFAULT_LAMBDA,
) -> np.ndarray:
    """Forecast from a ridge fit on ``n_samples`` period-strided pairs.

    Anchors sit at t - period, t - 2*period, ...; raw lookbacks are the
    features. Raises :class:`InsufficientHistory` if the deepest anchor's
    lookback would start before the series does.
    """
    if period < horizon:
        raise ConfigError("period must be >= horizon to avoid target leakage")
    deepest = t - n_samples * period
    if deepest - lookback + 1 < 0:
        raise InsufficientHistory(
            f"weekly fit needs {n_samples} strides of {period} before t={t}"
        )
    anchors = [t - j * period for j in range(1, n_samples + 1)]
    return _strided_ridge(store, t, anchors, horizon, lookback, lam)


def recency_lr_predict(
    store: SeriesStore,
    t: int,
    *,
    n_samples: int = 4,
    horizon: int = 24,
    lookback: int = 96,
    lam: float = DEFAULT_LAMBDA,
) -> np.ndarray:
    """Recency-first comparator: ridge on the most recent non-overlapping
    window pairs (anchors t-H, t-H-(L+H), ...)."""
    stride = lookback + horizon
    anchors = [t - horizon - j * stride for j in range(n_samples)]
    if anchors[-1] - lookback + 1 < 0:
        raise InsufficientHistory(
            f"recency fit needs {n_samples} windows of {stride} before t={t}"
        )
    return _strided_ridge(store, t, anchors, horizon, lookback, lam)


def run_ablation(
    store: SeriesStore,
    cfg: EngineConfig,
    spec: AblationSpec,
    **kwargs,
) -> RunResult:
    """Online run with one ablation variant wired in."""
    result = run_online(store, cfg, method="dyname", plan=spec.to_plan(), **kwargs)
    result.summary["ablation"] = {
        "gate_variant": spec.gate_variant,
        "use_danger": spec.use_danger,
        "keep_beta": spec.keep_beta,
        "period_mode": spec.period_mode,
        "fixed_periods": list(spec.fixed_periods),
    }
    result.summary["method"] = f"dyname[{spec.label()}]"
    return result
