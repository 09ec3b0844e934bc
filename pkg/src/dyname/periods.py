"""Dominant-period detection and period-strided batch construction.

Period candidates come from the channel-averaged FFT amplitude spectrum of
the rolling history buffer: the k largest non-DC amplitudes over indices
1..floor(M/2) are kept and converted to integer period lengths floor(M/i).
Fitting batches stride backwards from the query time in whole multiples of
the period, never touching a target that is not fully observed yet.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import HistoryBuffer, SeriesStore
from .errors import DegenerateSpectrum, NoValidSamples, OutOfRange, ZeroVariance

# Relative floor below which the whole spectrum counts as degenerate.
_SPECTRUM_ATOL = 1e-10


@dataclass(frozen=True)
class PeriodSet:
    """Top-k frequency indices and the deduplicated periods they imply.

    ``periods`` is sorted descending so that slot roles stay stable
    (longest-period expert first). Duplicate periods after floor division
    are merged, so len(periods) <= len(frequencies) == k.
    """

    frequencies: list[int]
    periods: list[int]


@dataclass(frozen=True)
class ExpertBatch:
    """One period's strided fitting pairs.

    X is [n x L x C], Y is [n x H x C]; row j is the window pair anchored at
    t - (j+1)*period. Every Y row is fully observed at assembly time.
    """

    period: int
    X: np.ndarray
    Y: np.ndarray
    anchors: list[int]

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]


def amplitude_spectrum(buffer: HistoryBuffer) -> np.ndarray:
    """Channel-mean FFT amplitude at indices 1..floor(M/2).

    Returned array a has a[i-1] = mean_c |FFT(h_c)[i]|, DC excluded.
    """
    m = buffer.length
    spectrum = np.fft.rfft(buffer.values, axis=0)
    amps = np.abs(spectrum).mean(axis=1)
    return amps[1 : m // 2 + 1]


def select_top_frequencies(amps: np.ndarray, k: int) -> list[int]:
    """Indices (1-based) of the k largest amplitudes; ties prefer the
    smaller index, i.e. the longer period."""
    # Stable sort on negated amplitude keeps ascending index order within ties.
    order = np.argsort(-amps, kind="stable")[: min(k, amps.size)]
    return [int(i) + 1 for i in order]


def top_k_periods(buffer: HistoryBuffer, k: int) -> PeriodSet:
    """Select the k dominant frequencies and convert them to period lengths."""
    m = buffer.length
    if m < 4:
        raise OutOfRange(f"history buffer too short for spectral analysis (M={m})")
    if k < 1:
        raise ValueError("k must be >= 1")
    amps = amplitude_spectrum(buffer)
    scale = max(1.0, float(np.abs(buffer.values).max()))
    if amps.max(initial=0.0) <= _SPECTRUM_ATOL * scale * m:
        raise DegenerateSpectrum("all non-DC amplitudes vanish; buffer is constant")
    frequencies = select_top_frequencies(amps, k)
    periods = sorted({m // f for f in frequencies}, reverse=True)
    return PeriodSet(frequencies=frequencies, periods=periods)


def build_expert_batch(
    store: SeriesStore,
    t: int,
    period: int,
    lookback: int,
    horizon: int,
    n_max: int,
) -> ExpertBatch:
    """Stack leak-free window pairs anchored at t-period, t-2*period, ...

    A stride is usable only if its lookback fits in the series and its
    target ends at or before t. Anchors run consecutively from j=1, so a
    period shorter than the horizon has no valid first stride and raises
    :class:`NoValidSamples`.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if period < horizon:
        raise NoValidSamples(
            f"period {period} < horizon {horizon}: the j=1 target would leak"
        )
    anchors: list[int] = []
    for j in range(1, n_max + 1):
        anchor = t - j * period
        if anchor - lookback + 1 < 0:
            break
        anchors.append(anchor)
    if not anchors:
        raise NoValidSamples(f"period {period} exceeds available history at t={t}")
    xs = [store.rows(a - lookback + 1, a + 1) for a in anchors]
    ys = [store.rows(a + 1, a + horizon + 1) for a in anchors]
    return ExpertBatch(period=period, X=np.stack(xs), Y=np.stack(ys), anchors=anchors)


def acf(series: np.ndarray, lags: list[int]) -> list[float]:
    """Pearson autocorrelation of a 1-D series at the given lags."""
    x = np.asarray(series, dtype=np.float64).ravel()
    max_lag = max(lags)
    if x.size <= max_lag + 2:
        raise OutOfRange(f"series of length {x.size} too short for lag {max_lag}")
    out: list[float] = []
    for lag in lags:
        if lag < 1:
            raise ValueError("lags must be positive")
        a = x[:-lag]
        b = x[lag:]
        sa = a.std()
        sb = b.std()
        if sa <= 0.0 or sb <= 0.0:
            raise ZeroVariance(f"zero-variance segment at lag {lag}")
        r = float(((a - a.mean()) * (b - b.mean())).mean() / (sa * sb))
        out.append(min(1.0, max(-1.0, r)))
    return out
