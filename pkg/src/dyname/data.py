"""Series container, CSV ingestion, normalization, and windowing.

The :class:`SeriesStore` is the single source of observations. Every read
goes through :meth:`SeriesStore.rows`, which enforces the stream clock when
one is set: during an online replay no component may see values past the
current time step. The 20/5/75 pretrain/validation/online split is fixed at
load time with floor rounding.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CausalityError,
    ConstantChannel,
    EmptySeries,
    MalformedRow,
    OutOfRange,
)

PRETRAIN_FRACTION = 0.20
VAL_FRACTION = 0.25


def split_indices(n_rows: int) -> tuple[int, int]:
    """Floor-rounded (pretrain_end, val_end) boundaries for a series of n_rows."""
    return int(n_rows * PRETRAIN_FRACTION), int(n_rows * VAL_FRACTION)


@dataclass
class SeriesStore:
    """Full multichannel series plus split boundaries.

    ``values`` is a [T x C] float array, immutable by convention after load.
    ``clock`` is the stream visibility horizon: when set, any read past it
    raises :class:`CausalityError`. ``audit_trail`` optionally records every
    row access as ``(clock, start, stop)`` tuples for leakage audits.
    """

    values: np.ndarray
    channel_names: list[str]
    pretrain_end: int
    val_end: int
    clock: int | None = None
    audit_trail: list[tuple[int | None, int, int]] | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-D [T x C] array")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def rows(self, start: int, stop: int) -> np.ndarray:
        """Return values[start:stop], honoring the stream clock if set."""
        if start < 0 or stop > len(self) or start >= stop:
            raise OutOfRange(f"rows [{start}, {stop}) outside series of length {len(self)}")
        if self.audit_trail is not None:
            self.audit_trail.append((self.clock, start, stop))
        if self.clock is not None and stop - 1 > self.clock:
            raise CausalityError(
                f"read up to index {stop - 1} with stream clock at {self.clock}"
            )
        return self.values[start:stop]

    def advance_clock(self, t: int) -> None:
        self.clock = t

    def release_clock(self) -> None:
        self.clock = None

    def with_values(self, values: np.ndarray) -> "SeriesStore":
        """Copy of this store backed by a transformed value array."""
        return SeriesStore(
            values=values,
            channel_names=list(self.channel_names),
            pretrain_end=self.pretrain_end,
            val_end=self.val_end,
        )


@dataclass(frozen=True)
class WindowPair:
    """Lookback x ([L x C], indices anchor-L+1..anchor) and horizon y
    ([H x C], indices anchor+1..anchor+H)."""

    x: np.ndarray
    y: np.ndarray
    anchor: int


@dataclass(frozen=True)
class HistoryBuffer:
    """The last M fully observed values [M x C] at some query time."""

    values: np.ndarray

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def _parse_cell(raw: str, row_idx: int, col_idx: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise MalformedRow(f"row {row_idx}, column {col_idx}: non-numeric cell {raw!r}") from None
    return v


def load_csv(
    path: str | Path,
    *,
    has_header: bool | None = None,
    timestamp_column: bool | None = None,
    forward_fill: bool = False,
) -> SeriesStore:
    """Load a comma-separated series file into a :class:`SeriesStore`.

    Layout: optional header row, optional leading timestamp column (string,
    ignored), then C numeric channel columns. ``None`` for the layout flags
    means auto-detect from the first rows. Non-finite cells are rejected
    unless ``forward_fill`` is set, in which case they are filled from the
    previous row (a non-finite first row is always rejected).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptySeries(f"{path} contains no rows")

    def _is_number(cell: str) -> bool:
        try:
            float(cell)
        except ValueError:
            return False
        return True

    if has_header is None:
        # A leading timestamp cell may be non-numeric even without a header,
        # so sniff on the remaining cells (or the only cell for 1-column files).
        probe = rows[0][1:] if len(rows[0]) > 1 else rows[0]
        has_header = not all(_is_number(c) for c in probe)
    header = rows[0] if has_header else None
    data_rows = rows[1:] if has_header else rows
    if not data_rows:
        raise EmptySeries(f"{path} contains a header but no data rows")

    if timestamp_column is None:
        timestamp_column = len(data_rows[0]) > 1 and not _is_number(data_rows[0][0])

    first_col = 1 if timestamp_column else 0
    n_cols = len(data_rows[0]) - first_col
    if n_cols < 1:
        raise MalformedRow("no numeric channel columns found")

    values = np.empty((len(data_rows), n_cols), dtype=np.float64)
    for i, row in enumerate(data_rows):
        if len(row) - first_col != n_cols:
            raise MalformedRow(f"row {i}: expected {n_cols} channels, got {len(row) - first_col}")
        for j in range(n_cols):
            values[i, j] = _parse_cell(row[first_col + j], i, first_col + j)

    bad = ~np.isfinite(values)
    if bad.any():
        if not forward_fill:
            i, j = np.argwhere(bad)[0]
            raise MalformedRow(f"row {i}, column {j}: non-finite value")
        if bad[0].any():
            raise MalformedRow("first row is non-finite; cannot forward-fill")
        for i in range(1, len(values)):
            m = bad[i]
            if m.any():
                values[i, m] = values[i - 1, m]

    if header is not None:
        names = [c.strip() for c in header[first_col:]]
    else:
        names = [f"ch{j}" for j in range(n_cols)]

    pretrain_end, val_end = split_indices(len(values))
    return SeriesStore(values, names, pretrain_end, val_end)


@dataclass(frozen=True)
class Normalizer:
    """Per-channel z-score statistics fit on the pretrain split only.

    Fit once at load time and never refreshed online; downstream MSE and
    danger-signal sensitivities assume this fixed normalized scale.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, store: SeriesStore) -> "Normalizer":
        if store.pretrain_end < 2:
            raise EmptySeries("pretrain split too short to fit normalization statistics")
        head = store.values[: store.pretrain_end]
        mean = head.mean(axis=0)
        std = head.std(axis=0)
        flat = np.nonzero(std <= 0.0)[0]
        if flat.size:
            names = ", ".join(store.channel_names[int(i)] for i in flat)
            raise ConstantChannel(f"zero-variance channel(s) on pretrain split: {names}")
        return cls(mean=mean, std=std)

    def normalize(self, v: np.ndarray) -> np.ndarray:
        return (v - self.mean) / self.std

    def denormalize(self, v: np.ndarray) -> np.ndarray:
        return v * self.std + self.mean

    def normalized_store(self, store: SeriesStore) -> SeriesStore:
        return store.with_values(self.normalize(store.values))


def make_window(store: SeriesStore, anchor: int, lookback: int, horizon: int) -> WindowPair:
    """Exact-index window pair around ``anchor`` (last lookback element)."""
    if anchor - lookback + 1 < 0 or anchor + horizon > len(store) - 1:
        raise OutOfRange(
            f"window anchor={anchor} L={lookback} H={horizon} outside [0, {len(store) - 1}]"
        )
    x = store.rows(anchor - lookback + 1, anchor + 1)
    y = store.rows(anchor + 1, anchor + horizon + 1)
    return WindowPair(x=x, y=y, anchor=anchor)


def history_at(store: SeriesStore, t: int, buffer_len: int) -> HistoryBuffer:
    """Rolling buffer of the last ``buffer_len`` observations ending at t."""
    if t - buffer_len + 1 < 0:
        raise OutOfRange(f"history of length {buffer_len} not available at t={t}")
    if t > len(store) - 1:
        raise OutOfRange(f"t={t} beyond series of length {len(store)}")
    return HistoryBuffer(values=store.rows(t - buffer_len + 1, t + 1))
