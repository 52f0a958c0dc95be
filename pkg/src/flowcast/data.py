"""Dataset ingestion and supervised case construction.

CSV layout: a mandatory header ``timestamp,power[,power_site2..5]
[,ws10,wd10,ws100,wd100]``.  Timestamps are ISO 8601 strings or plain
numbers on a uniform grid; power is normalized to [0, 1] by capacity.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

POWER_COLUMNS = ("power", "power_site2", "power_site3", "power_site4", "power_site5")
NWP_COLUMNS = ("ws10", "wd10", "ws100", "wd100")
CLAMP_TOLERANCE = 0.05
DEFAULT_LAG = 6
DEFAULT_HORIZON = {1: 24, 2: 1, 3: 6, 4: 1}


class DataError(ValueError):
    pass


@dataclass
class SeriesFrame:
    timestamps: np.ndarray  # original labels (str)
    seconds: np.ndarray  # float seconds for spacing checks
    power: np.ndarray  # (T, sites) in [0, 1]
    nwp: np.ndarray | None  # (T, k)
    step: float
    power_columns: tuple[str, ...]
    nwp_columns: tuple[str, ...] = ()
    dropped: int = 0
    clamped: int = 0

    def __len__(self) -> int:
        return len(self.seconds)


@dataclass
class SupervisedSet:
    X: np.ndarray
    Y: np.ndarray
    case: int
    issue_times: np.ndarray
    target_times: np.ndarray = field(default_factory=lambda: np.empty((0, 0), dtype=object))
    lead: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.X)

    def take(self, rows) -> "SupervisedSet":
        lead = None if self.lead is None else self.lead[rows]
        return replace(
            self,
            X=self.X[rows],
            Y=self.Y[rows],
            issue_times=self.issue_times[rows],
            target_times=self.target_times[rows],
            lead=lead,
        )


def _parse_time(raw: str, lineno: int) -> float:
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(raw.strip().replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"line {lineno}: unparseable timestamp {raw!r}") from exc
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def normalize(values, capacity: float) -> np.ndarray:
    return np.asarray(values, dtype=float) / capacity


def denormalize(values, capacity: float) -> np.ndarray:
    return np.asarray(values, dtype=float) * capacity


def load_csv(
    path,
    schema: tuple[str, ...] | None = None,
    capacity: float | None = 1.0,
    clamp_tolerance: float = CLAMP_TOLERANCE,
) -> SeriesFrame:
    """Parse a power CSV.

    Rows with an empty field are dropped (counted in ``dropped``).  With
    ``capacity`` set, power is divided by it; values within
    ``clamp_tolerance`` outside [0, 1] are clamped (counted in ``clamped``),
    anything further out is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if schema is not None and tuple(header) != tuple(schema):
            raise DataError(f"{path}: header {header} does not match schema {list(schema)}")
        if not header or header[0] != "timestamp":
            raise DataError(f"{path}: first column must be 'timestamp'")
        power_cols = tuple(h for h in header[1:] if h in POWER_COLUMNS)
        nwp_cols = tuple(h for h in header[1:] if h in NWP_COLUMNS)
        unknown = [h for h in header[1:] if h not in POWER_COLUMNS and h not in NWP_COLUMNS]
        if unknown:
            raise DataError(f"{path}: unknown columns {unknown}")
        if not power_cols:
            raise DataError(f"{path}: no power column")
        p_idx = [header.index(c) for c in power_cols]
        n_idx = [header.index(c) for c in nwp_cols]

        labels, all_seconds, kept_seconds, power, nwp = [], [], [], [], []
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            t = _parse_time(row[0], lineno) if row[0].strip() else math.nan
            all_seconds.append(t)
            if any(not cell.strip() for cell in row):
                dropped += 1
                continue
            try:
                pw = [float(row[i]) for i in p_idx]
                nw = [float(row[i]) for i in n_idx]
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
            labels.append(row[0].strip())
            kept_seconds.append(t)
            power.append(pw)
            nwp.append(nw)

    if not labels:
        raise DataError(f"{path}: no complete rows")
    stamps = np.asarray([s for s in all_seconds if not math.isnan(s)])
    steps = np.diff(stamps)
    step = float(steps[0]) if steps.size else 1.0
    if steps.size and (step <= 0 or np.any(np.abs(steps - step) > 1e-9 * max(abs(step), 1.0))):
        raise DataError(f"{path}: timestamps are not strictly increasing on a uniform grid")

    power_arr = np.asarray(power, dtype=float)
    clamped = 0
    if capacity is not None:
        power_arr = normalize(power_arr, capacity)
        over = (power_arr > 1.0) | (power_arr < 0.0)
        far = (power_arr > 1.0 + clamp_tolerance) | (power_arr < -clamp_tolerance)
        if np.any(far):
            raise DataError(f"{path}: normalized power outside [0, 1] beyond tolerance {clamp_tolerance}")
        clamped = int(over.sum())
        power_arr = np.clip(power_arr, 0.0, 1.0)
    return SeriesFrame(
        timestamps=np.asarray(labels, dtype=object),
        seconds=np.asarray(kept_seconds, dtype=float),
        power=power_arr,
        nwp=np.asarray(nwp, dtype=float) if nwp_cols else None,
        step=step,
        power_columns=power_cols,
        nwp_columns=nwp_cols,
        dropped=dropped,
        clamped=clamped,
    )


def frame_from_arrays(power, nwp=None, step: float = 1.0) -> SeriesFrame:
    """In-memory frame on an integer time grid (synthetic data, tests)."""
    power = np.asarray(power, dtype=float)
    if power.ndim == 1:
        power = power[:, None]
    n = len(power)
    seconds = np.arange(n, dtype=float) * step
    nwp_arr = None if nwp is None else np.asarray(nwp, dtype=float).reshape(n, -1)
    return SeriesFrame(
        timestamps=np.asarray([f"{s:g}" for s in seconds], dtype=object),
        seconds=seconds,
        power=power,
        nwp=nwp_arr,
        step=step,
        power_columns=POWER_COLUMNS[: power.shape[1]],
        nwp_columns=NWP_COLUMNS[: 0 if nwp_arr is None else nwp_arr.shape[1]],
    )


def _valid_windows(frame: SeriesFrame, span: int) -> np.ndarray:
    """Start indices whose ``span`` rows are consecutive on the time grid."""
    n = len(frame)
    if n < span:
        return np.empty(0, dtype=int)
    gaps = np.abs(np.diff(frame.seconds) - frame.step) > 1e-9 * max(abs(frame.step), 1.0)
    breaks = np.concatenate([[0], np.cumsum(gaps)])
    starts = np.arange(n - span + 1)
    return starts[breaks[starts + span - 1] == breaks[starts]]


def make_case(
    frame: SeriesFrame,
    case: int,
    lag: int = DEFAULT_LAG,
    horizon: int | None = None,
    site: int = 0,
) -> SupervisedSet:
    """Build the supervised layout for one of the four case settings.

    1: NWP row at the target time -> power (d = 1); ``lead`` cycles 1..H.
    2: lags t-L+1..t -> power at t+H (d = 1).
    3: lags -> power at t+1..t+H (d = H).
    4: every site's lags, site-major -> all sites at t+H (d = sites).
    """
    if case not in (1, 2, 3, 4):
        raise ValueError(f"unknown case {case}")
    horizon = DEFAULT_HORIZON[case] if horizon is None else horizon
    if horizon < 1 or lag < 1:
        raise ValueError("lag and horizon must be >= 1")
    labels = frame.timestamps

    if case == 1:
        if frame.nwp is None:
            raise DataError("case 1 needs NWP columns")
        rows = np.arange(len(frame))
        return SupervisedSet(
            X=frame.nwp.copy(),
            Y=frame.power[:, site : site + 1].copy(),
            case=1,
            issue_times=labels[rows],
            target_times=labels[rows][:, None],
            lead=(np.arange(len(frame)) % horizon) + 1,
        )

    span = lag + horizon
    starts = _valid_windows(frame, span)
    if starts.size == 0:
        raise DataError(f"series of length {len(frame)} too short for lag {lag} + horizon {horizon}")
    issue = starts + lag - 1
    if case == 4:
        if frame.power.shape[1] < 2:
            raise DataError("case 4 needs at least two sites")
        windows = sliding_window_view(frame.power, lag, axis=0)[starts]  # (N, sites, lag)
        X = windows.reshape(len(starts), -1)
        target_idx = issue + horizon
        Y = frame.power[target_idx]
        targets = labels[target_idx][:, None]
    else:
        series = frame.power[:, site]
        X = sliding_window_view(series, lag)[starts]
        if case == 2:
            target_idx = (issue + horizon)[:, None]
        else:
            target_idx = issue[:, None] + np.arange(1, horizon + 1)[None, :]
        Y = series[target_idx]
        targets = labels[target_idx]
    return SupervisedSet(
        X=np.ascontiguousarray(X, dtype=float),
        Y=np.ascontiguousarray(Y, dtype=float),
        case=case,
        issue_times=labels[issue],
        target_times=targets,
    )


def split(data: SupervisedSet, ratios=(0.7, 0.1, 0.2)):
    """Contiguous chronological train/validation/test partition."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(data)
    n_train = math.floor(ratios[0] * n + 1e-9)
    n_val = math.floor(ratios[1] * n + 1e-9)
    bounds = [0, n_train, n_train + n_val, n]
    parts = [data.take(np.arange(a, b)) for a, b in zip(bounds[:-1], bounds[1:])]
    if any(len(p) == 0 for p in parts):
        raise DataError(f"split of {n} rows with ratios {ratios} leaves an empty partition")
    return tuple(parts)
