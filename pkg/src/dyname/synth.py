"""Seeded synthetic streams with labeled drift events.

Streams are sums of periodic components (sines or tiled random waveforms,
the latter deliberately non-linear in the lookback) whose amplitudes and
level can switch on a repeating block schedule (recurring drift), plus an
optional one-off shock (emergent drift). Every generated file carries a
sidecar JSON naming the drift events.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SeriesStore, split_indices
from .errors import ConfigError


@dataclass(frozen=True)
class Component:
    """One periodic building block.

    ``regime_amplitudes`` overrides the amplitude per regime index when the
    spec has a block schedule. Waveforms: "sine"; "tiled" repeats a fixed
    random vector of length ``period`` (linearly unpredictable, spectrally
    flat across its harmonics); "anchored" is a sine plus a rough tiled
    admixture, so the fundamental FFT bin dominates while the shape stays
    hard for few-sample linear fits.
    """

    period: int
    amplitude: float = 1.0
    waveform: str = "sine"  # "sine", "tiled", or "anchored"
    regime_amplitudes: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Shock:
    """Emergent drift: from ``at`` onward add a level jump and optionally
    replace every tiled waveform with a fresh, never-seen draw."""

    at: int
    level: float = 5.0
    retile: bool = True


@dataclass(frozen=True)
class SynthSpec:
    total_len: int = 4000
    n_channels: int = 1
    components: tuple[Component, ...] = (Component(period=24),)
    regime_len: int = 0  # 0 disables the block schedule
    n_regimes: int = 2
    regime_levels: tuple[float, ...] = ()
    noise_sigma: float = 0.0
    shock: Shock | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.total_len < 10:
            raise ConfigError("total_len too small")
        if self.n_channels < 1:
            raise ConfigError("n_channels must be >= 1")
        if not self.components:
            raise ConfigError("at least one component required")
        for comp in self.components:
            if comp.period < 2:
                raise ConfigError("component periods must be >= 2")
            if comp.waveform not in ("sine", "tiled", "anchored"):
                raise ConfigError(f"unknown waveform {comp.waveform!r}")
        if self.regime_len < 0:
            raise ConfigError("regime_len must be >= 0")
        if self.shock is not None and not 0 <= self.shock.at < self.total_len:
            raise ConfigError("shock time outside the stream")


def _tile(rng: np.random.Generator, period: int, length: int, phase: int) -> np.ndarray:
    wave = rng.normal(size=period)
    wave -= wave.mean()
    wave /= max(wave.std(), 1e-12)
    reps = int(np.ceil((length + phase) / period)) + 1
    return np.tile(wave, reps)[phase : phase + length]


_ANCHOR_ROUGHNESS = 0.8


def _anchored(rng: np.random.Generator, period: int, length: int, phase: int) -> np.ndarray:
    t = np.arange(length)
    fundamental = np.sin(2.0 * np.pi * (t + phase) / period)
    return fundamental + _ANCHOR_ROUGHNESS * _tile(rng, period, length, phase)


def _clean_signal(spec: SynthSpec, regime: np.ndarray, tile_seed: int) -> np.ndarray:
    """Noise-free [T x C] signal; tiled waveforms draw from ``tile_seed``."""
    T, C = spec.total_len, spec.n_channels
    t_axis = np.arange(T)
    tile_rng = np.random.default_rng(tile_seed)
    values = np.zeros((T, C))
    for c in range(C):
        chan = np.zeros(T)
        for comp in spec.components:
            phase = (c * comp.period) // max(C, 1)
            if comp.waveform == "sine":
                wave = np.sin(2.0 * np.pi * (t_axis + phase) / comp.period)
            elif comp.waveform == "anchored":
                wave = _anchored(tile_rng, comp.period, T, phase)
            else:
                wave = _tile(tile_rng, comp.period, T, phase)
            if comp.regime_amplitudes is not None:
                amp = np.asarray(comp.regime_amplitudes, dtype=float)[regime]
            else:
                amp = comp.amplitude
            chan += amp * wave
        if spec.regime_levels:
            levels = np.asarray(spec.regime_levels, dtype=float)
            chan += levels[regime % len(levels)]
        values[:, c] = chan
    return values


def generate(spec: SynthSpec) -> tuple[np.ndarray, list[dict]]:
    """Deterministic [T x C] stream and its drift-event labels."""
    spec.validate()
    T, C = spec.total_len, spec.n_channels
    if spec.regime_len > 0:
        regime = (np.arange(T) // spec.regime_len) % spec.n_regimes
    else:
        regime = np.zeros(T, dtype=int)

    values = _clean_signal(spec, regime, tile_seed=spec.seed)
    if spec.shock is not None:
        cut = spec.shock.at
        if spec.shock.retile:
            # An unseen waveform takes over at the cut: splice in a signal
            # whose tiled components come from a fresh draw.
            alt = _clean_signal(spec, regime, tile_seed=spec.seed + 104729)
            values[cut:] = alt[cut:]
        values[cut:] += spec.shock.level

    if spec.noise_sigma > 0.0:
        noise_rng = np.random.default_rng(spec.seed + 15485863)
        values = values + noise_rng.normal(scale=spec.noise_sigma, size=(T, C))

    events: list[dict] = []
    if spec.regime_len > 0:
        for boundary in range(spec.regime_len, T, spec.regime_len):
            events.append(
                {
                    "type": "regime_change",
                    "t": int(boundary),
                    "regime": int(regime[boundary]),
                }
            )
    if spec.shock is not None:
        events.append(
            {
                "type": "emergent_shock",
                "t": int(spec.shock.at),
                "level": spec.shock.level,
                "retile": spec.shock.retile,
            }
        )
    return values, events


def make_weekly_recurring(
    total_len: int = 6000,
    *,
    n_channels: int = 1,
    week: int = 168,
    weekday_span: int = 120,
    weekend_gain: float = 2.5,
    weekend_level: float = 2.0,
    noise_sigma: float = 0.05,
    seed: int = 0,
) -> tuple[np.ndarray, list[dict]]:
    """Weekly stream whose weekday and weekend sub-patterns differ sharply.

    The transition into and out of the weekend recurs every week: data one
    week back matches the current phase exactly, while the immediately
    preceding windows sit in the other sub-regime. Transition times are
    labeled ``recurring_transition`` in the events.
    """
    day = 24
    if week % day != 0 or weekday_span % day != 0 or weekday_span >= week:
        raise ConfigError("weekday_span and week must be day multiples with span < week")
    rng = np.random.default_rng(seed)
    values = np.zeros((total_len, n_channels))
    t_axis = np.arange(total_len)
    phase_in_week = t_axis % week
    is_weekend = phase_in_week >= weekday_span
    for c in range(n_channels):
        weekday_tile = _tile(rng, day, total_len, phase=(c * 7) % day)
        weekend_tile = _tile(rng, day, total_len, phase=(c * 11) % day)
        chan = np.where(
            is_weekend,
            weekend_gain * weekend_tile + weekend_level,
            weekday_tile,
        )
        values[:, c] = chan
    if noise_sigma > 0.0:
        values += rng.normal(scale=noise_sigma, size=values.shape)

    events = []
    for start in range(0, total_len, week):
        for t, direction in ((start + weekday_span, "into_weekend"), (start + week, "into_weekday")):
            if t < total_len:
                events.append({"type": "recurring_transition", "t": int(t), "direction": direction})
    return values, events


def as_store(values: np.ndarray, channel_names: list[str] | None = None) -> SeriesStore:
    """Wrap a generated array in a :class:`SeriesStore` with standard splits."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    names = channel_names or [f"ch{i}" for i in range(values.shape[1])]
    pretrain_end, val_end = split_indices(values.shape[0])
    return SeriesStore(values, names, pretrain_end, val_end)


def write_stream_csv(
    values: np.ndarray,
    path: str | Path,
    events: list[dict] | None = None,
) -> Path:
    """Write the stream as a headered CSV plus an events sidecar JSON."""
    path = Path(path)
    values = np.asarray(values)
    if values.ndim == 1:
        values = values[:, None]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"ch{i}" for i in range(values.shape[1])])
        for row in values:
            writer.writerow([f"{v:.10g}" for v in row])
    sidecar = path.with_suffix(path.suffix + ".events.json")
    sidecar.write_text(json.dumps({"events": events or []}, indent=2))
    return path


# Scenario presets used by the command line and the acceptance suite.

def preset_spec(scenario: str, *, total_len: int | None = None, seed: int = 0) -> SynthSpec:
    if scenario == "periodic":
        return SynthSpec(
            total_len=total_len or 3000,
            components=(Component(period=24, amplitude=1.0, waveform="sine"),),
            noise_sigma=0.0,
            seed=seed,
        )
    if scenario == "two_period":
        # Alternating dominant periods (48 and 112 both divide the standard
        # 336 buffer, neither divides the weekly stride) plus a persistent
        # mid-length decoy so the usable expert slot flips across regimes:
        # the long-period slot holds the decoy in one regime and the true
        # pattern in the other, which an input-blind gate cannot track.
        return SynthSpec(
            total_len=total_len or 10752,
            components=(
                Component(period=48, waveform="anchored", regime_amplitudes=(3.0, 0.0)),
                Component(period=112, waveform="anchored", regime_amplitudes=(0.0, 3.0)),
                Component(period=84, waveform="sine", amplitude=1.6),
            ),
            regime_len=1344,
            n_regimes=2,
            noise_sigma=0.8,
            seed=seed,
        )
    if scenario == "alternating_period":
        return SynthSpec(
            total_len=total_len or 6720,
            components=(
                Component(period=48, waveform="anchored", regime_amplitudes=(3.0, 0.0)),
                Component(period=112, waveform="anchored", regime_amplitudes=(0.0, 3.0)),
            ),
            regime_len=672,
            n_regimes=2,
            noise_sigma=0.8,
            seed=seed,
        )
    if scenario == "emergent_shock":
        length = total_len or 4000
        return SynthSpec(
            total_len=length,
            components=(Component(period=24, waveform="tiled", amplitude=1.0),),
            noise_sigma=0.05,
            shock=Shock(at=int(length * 0.6), level=6.0, retile=True),
            seed=seed,
        )
    raise ConfigError(
        "unknown scenario; expected one of periodic, two_period, "
        "alternating_period, emergent_shock, weekly_recurring"
    )


def generate_scenario(
    scenario: str, *, total_len: int | None = None, seed: int = 0
) -> tuple[np.ndarray, list[dict]]:
    if scenario == "weekly_recurring":
        return make_weekly_recurring(total_len or 6000, seed=seed)
    return generate(preset_spec(scenario, total_len=total_len, seed=seed))
