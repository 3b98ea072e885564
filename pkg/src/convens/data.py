"""Dataset ingestion, rescaling, windowing, splitting, and synthetic data.

CSV layout: header row, one column per dimension, optional final column
named ``label`` with 0/1 values, row order = time order.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class LabeledSeries:
    """A C x D observation matrix with optional per-observation 0/1 labels.

    Labels are evaluation-only; nothing in training or tuning reads them.
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise DataError(f"series values must be a C x D matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.values.shape[0],):
                raise DataError(
                    f"labels length {self.labels.shape} does not match C={self.values.shape[0]}"
                )
            if not np.all((self.labels == 0) | (self.labels == 1)):
                raise DataError("labels must be 0 or 1")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass
class ScaleParams:
    """Per-dimension location/scale used by the z-score transform."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class WindowBatch:
    """Overlapping stride-1 windows: windows[j] covers observations
    start_indices[j] .. start_indices[j] + w - 1 of the source series."""

    windows: np.ndarray        # (B, w, D)
    start_indices: np.ndarray  # (B,)

    @property
    def count(self) -> int:
        return self.windows.shape[0]

    @property
    def window_size(self) -> int:
        return self.windows.shape[1]


def load_series(path, label_column: str = "label", name: str | None = None) -> LabeledSeries:
    """Parse a CSV file into a LabeledSeries.

    Malformed rows are reported with their file line number (the header
    is line 1). Values must be finite; the label column, when present,
    must contain only 0/1.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        has_labels = bool(header) and header[-1] == label_column
        n_dims = len(header) - 1 if has_labels else len(header)
        if n_dims < 1:
            raise DataError(f"{path}: no value columns")

        values: list[list[float]] = []
        labels: list[int] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                parsed = [float(cell) for cell in row[:n_dims]]
            except ValueError:
                raise DataError(f"{path}: line {line_no}: non-numeric value") from None
            if not all(math.isfinite(v) for v in parsed):
                raise DataError(f"{path}: line {line_no}: non-finite value")
            values.append(parsed)
            if has_labels:
                cell = row[-1].strip()
                try:
                    lab = float(cell)
                except ValueError:
                    raise DataError(f"{path}: line {line_no}: non-binary label {cell!r}") from None
                if lab not in (0.0, 1.0):
                    raise DataError(f"{path}: line {line_no}: non-binary label {cell!r}")
                labels.append(int(lab))

    if not values:
        raise DataError(f"{path}: no data rows")
    return LabeledSeries(
        values=np.array(values, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64) if has_labels else None,
        name=name if name is not None else path.stem,
    )


def save_series(series: LabeledSeries, path) -> None:
    """Write a LabeledSeries back to CSV (inverse of load_series)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = series.dims
    header = [f"dim_{i}" for i in range(d)]
    if series.labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(series.length):
            row = [repr(float(v)) for v in series.values[t]]
            if series.labels is not None:
                row.append(str(int(series.labels[t])))
            writer.writerow(row)


def zscore_fit(train: LabeledSeries) -> ScaleParams:
    """Per-dimension mean and population standard deviation of the training
    values. Constant dimensions get std 1 (with a warning) so they center
    to zero instead of dividing by zero."""
    if train.length < 2:
        raise DataError("zscore_fit needs at least 2 observations")
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)  # population: divide by C
    degenerate = std == 0.0
    if degenerate.any():
        dims = np.flatnonzero(degenerate).tolist()
        warnings.warn(f"constant dimensions {dims}: std set to 1", stacklevel=2)
        std = np.where(degenerate, 1.0, std)
    return ScaleParams(mean=mean, std=std)


def zscore_apply(series: LabeledSeries, scale: ScaleParams) -> LabeledSeries:
    """Rescale each observation to (x - mean) / std; labels pass through."""
    if series.dims != scale.mean.shape[0]:
        raise DataError(
            f"dimension mismatch: series D={series.dims}, scale D={scale.mean.shape[0]}"
        )
    return LabeledSeries(
        values=(series.values - scale.mean) / scale.std,
        labels=None if series.labels is None else series.labels.copy(),
        name=series.name,
    )


def make_windows(series: LabeledSeries, window_size: int) -> WindowBatch:
    """All stride-1 windows of the series: C - w + 1 windows of shape (w, D)."""
    w = int(window_size)
    if w < 2:
        raise DataError(f"window size must be >= 2, got {w}")
    c = series.length
    if c < w:
        raise DataError(f"series length {c} < window size {w}")
    b = c - w + 1
    view = np.lib.stride_tricks.sliding_window_view(series.values, w, axis=0)
    windows = view.transpose(0, 2, 1).copy()  # (B, w, D)
    return WindowBatch(windows=windows, start_indices=np.arange(b))


def split_train_validation(series: LabeledSeries, ratio: float,
                           min_length: int = 2) -> tuple[LabeledSeries, LabeledSeries]:
    """Contiguous temporal split: the first ceil(C * (1 - ratio)) observations
    become the training part, the rest the validation part. Labels are
    dropped from both (tuning is unsupervised)."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    c = series.length
    n_train = c - int(math.floor(c * ratio + 1e-9))
    n_val = c - n_train
    if n_train < min_length or n_val < min_length:
        raise DataError(
            f"split of C={c} at ratio {ratio} leaves a side shorter than {min_length}"
        )
    train = LabeledSeries(series.values[:n_train].copy(), None, name=f"{series.name}-train")
    val = LabeledSeries(series.values[n_train:].copy(), None, name=f"{series.name}-validation")
    return train, val


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic labeled-series generator settings."""

    seed: int = 0
    length: int = 1000
    dims: int = 3
    contamination: float = 0.01
    spike_magnitude: float = 4.0
    noise_std: float = 0.1
    name: str = "synth"


def synth_generate(config: GeneratorConfig) -> LabeledSeries:
    """Multi-sinusoid base signal plus Gaussian noise; floor(contamination * C)
    randomly placed observations receive an additive spike on one random
    dimension and label 1. Pure function of the config."""
    if not 0.0 <= config.contamination < 0.5:
        raise DataError(f"contamination must be in [0, 0.5), got {config.contamination}")
    rng = np.random.default_rng(config.seed)
    c, d = config.length, config.dims
    t = np.arange(c, dtype=np.float64)

    values = np.zeros((c, d))
    for dim in range(d):
        for _ in range(3):
            period = rng.uniform(20.0, 200.0)
            amplitude = rng.uniform(0.4, 1.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            values[:, dim] += amplitude * np.sin(2.0 * math.pi * t / period + phase)
    values += rng.normal(0.0, config.noise_std, size=(c, d))

    labels = np.zeros(c, dtype=np.int64)
    n_outliers = int(math.floor(config.contamination * c + 1e-9))
    if n_outliers > 0:
        positions = rng.choice(c, size=n_outliers, replace=False)
        spike_dims = rng.integers(0, d, size=n_outliers)
        signs = rng.choice([-1.0, 1.0], size=n_outliers)
        for pos, dim, sign in zip(positions, spike_dims, signs):
            values[pos, dim] += sign * config.spike_magnitude
            labels[pos] = 1
    return LabeledSeries(values=values, labels=labels, name=config.name)
