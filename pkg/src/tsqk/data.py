"""Datasets: synthetic generators, UCR-format ingestion, decimation, scaling.

All instances are (p, d) float matrices on a shared strictly-increasing
time grid with binary labels in {-1, +1}.  Generators are bit-exactly
reproducible from their seed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import IngestionError, UsageError


@dataclass
class TimeSeriesInstance:
    """One labeled multivariate sequence: values (p, d), label in {-1, +1}."""

    values: np.ndarray
    label: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise UsageError(f"instance values must be (p, d), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise UsageError("instance contains non-finite values")
        if self.label not in (-1, 1):
            raise UsageError(f"label must be -1 or +1, got {self.label}")
        self.label = int(self.label)


@dataclass
class Dataset:
    """A list of instances sharing one time grid."""

    instances: List[TimeSeriesInstance]
    times: np.ndarray
    d: int
    name: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or len(self.times) < 1:
            raise UsageError("times must be a non-empty vector")
        if np.any(np.diff(self.times) <= 0):
            raise UsageError("times must be strictly increasing")
        p = len(self.times)
        for inst in self.instances:
            if inst.values.shape != (p, self.d):
                raise UsageError(
                    f"instance shape {inst.values.shape} does not match (p={p}, d={self.d})"
                )

    @property
    def n(self) -> int:
        return len(self.instances)

    @property
    def p(self) -> int:
        return len(self.times)

    def labels(self) -> np.ndarray:
        return np.array([inst.label for inst in self.instances], dtype=np.int64)

    def both_classes_present(self) -> bool:
        labels = self.labels()
        return bool(np.any(labels == 1) and np.any(labels == -1))

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        return Dataset([self.instances[i] for i in indices], self.times, self.d,
                       name if name is not None else self.name, self.seed)


# ---------------------------------------------------------------------------
# generators

def gen_moons2circles(n_instances: int = 100, p: int = 10, noise_std: float = 0.05,
                      seed: int = 0) -> Dataset:
    """Planar series interpolating two interleaved half circles into two
    concentric circles.

    Endpoints: the half circles are offset by (1, 0.5); the concentric
    circles have radii 1.0 (class -1) and 0.5 (class +1).  The upper half
    circle carries class +1, so over the series each class migrates into
    territory the other class occupied earlier (the +1 arc sits on the
    radius the -1 ring ends on); a classifier that cannot change its
    notion of similarity with time has to compromise across slices.
    Endpoint pairs are matched within class by angle-sorted rank, and
    intermediate steps interpolate linearly on a uniform [0, 1] grid.
    """
    if n_instances % 2 != 0 or n_instances < 2:
        raise UsageError("n_instances must be even (balanced classes)")
    if p < 2:
        raise UsageError("p must be >= 2")
    rng = np.random.default_rng(seed)
    half = n_instances // 2
    s = np.linspace(0.0, 1.0, p)

    def moon_points(label):
        phi = np.sort(rng.uniform(0.0, math.pi, half))
        if label == 1:
            pts = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        else:
            pts = np.stack([1.0 - np.cos(phi), 0.5 - np.sin(phi)], axis=1)
        return pts + rng.normal(scale=noise_std, size=pts.shape)

    def circle_points(label):
        psi = np.sort(rng.uniform(0.0, 2 * math.pi, half))
        radius = 1.0 if label == -1 else 0.5
        pts = radius * np.stack([np.cos(psi), np.sin(psi)], axis=1)
        return pts + rng.normal(scale=noise_std, size=pts.shape)

    instances = []
    for label in (-1, 1):
        moons = moon_points(label)
        circles = circle_points(label)
        for m, c in zip(moons, circles):
            values = (1.0 - s)[:, None] * m[None, :] + s[:, None] * c[None, :]
            instances.append(TimeSeriesInstance(values, label))
    return Dataset(instances, s, d=2, name="moons2circles", seed=seed)


def gen_sincos(p: int, seed: int = 0, t_lo: float = 0.0, t_hi: float = math.pi) -> Dataset:
    """Two-instance toy: -sin(t) with label +1 versus -cos(t) with label -1.

    Deterministic; ``seed`` is accepted for interface parity and recorded
    but not used.
    """
    if p < 2:
        raise UsageError("p must be >= 2")
    t = np.linspace(t_lo, t_hi, p)
    instances = [
        TimeSeriesInstance(-np.sin(t)[:, None], 1),
        TimeSeriesInstance(-np.cos(t)[:, None], -1),
    ]
    return Dataset(instances, t, d=1, name="sincos", seed=seed)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def gen_gunpoint_like(n_instances: int = 200, p: int = 150, seed: int = 0) -> Dataset:
    """Synthetic stand-in for hand-motion traces in the gun/point style.

    Univariate z-normalized curves: rest, a smooth lift to a plateau, a
    hold, and a return to rest.  The two classes share the coarse shape
    and differ only in the transition segments (class +1 has draw/holster
    dips around the lift and the return and a slower lift; class -1 has a
    sharper lift with a small overshoot), so the discriminative signal
    lives away from the start, middle and end of the series.  This is NOT
    the UCR gun-point recording; it exists so the full pipeline can run
    where that archive is unavailable.
    """
    if n_instances % 2 != 0 or n_instances < 2:
        raise UsageError("n_instances must be even (balanced classes)")
    if p < 8:
        raise UsageError("p must be >= 8")
    rng = np.random.default_rng(seed)
    t = np.linspace(1.0 / p, 1.0, p)
    instances = []
    for label in (1, -1):
        for _ in range(n_instances // 2):
            a = rng.normal(0.28, 0.015)
            b = rng.normal(0.72, 0.015)
            s1 = max(rng.normal(0.045, 0.004), 0.02)
            s2 = max(rng.normal(0.045, 0.004), 0.02)
            amp = rng.normal(1.0, 0.04)
            if label == 1:
                s1 *= 1.35
            curve = amp * _sigmoid((t - a) / s1) * _sigmoid(-(t - b) / s2)
            if label == 1:
                draw = max(rng.normal(0.18, 0.04), 0.0)
                holster = max(rng.normal(0.18, 0.04), 0.0)
                curve -= draw * np.exp(-(((t - (a - 0.07)) / 0.020) ** 2))
                curve -= holster * np.exp(-(((t - (b + 0.07)) / 0.020) ** 2))
            else:
                flourish = max(rng.normal(0.15, 0.03), 0.0)
                curve += flourish * np.exp(-(((t - (a + 0.06)) / 0.025) ** 2))
            curve += rng.normal(scale=0.01, size=p)
            curve = (curve - curve.mean()) / curve.std()
            instances.append(TimeSeriesInstance(curve[:, None], label))
    return Dataset(instances, t, d=1, name="gunpoint_like", seed=seed)


# ---------------------------------------------------------------------------
# UCR text format

def _parse_ucr_file(path) -> Tuple[np.ndarray, np.ndarray]:
    rows = []
    labels = []
    width = None
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            delim = "\t" if "\t" in line else ","
            fields = [f for f in line.split(delim) if f != ""]
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise IngestionError(f"non-numeric field in {path}: {exc}", line=lineno)
            if len(values) < 2:
                raise IngestionError(f"instance needs a label and values in {path}",
                                     line=lineno)
            label_raw = values[0]
            if label_raw == 1:
                label = 1
            elif label_raw == 2:
                label = -1
            else:
                raise IngestionError(
                    f"unknown class label {label_raw!r} in {path} (expected 1 or 2)",
                    line=lineno,
                )
            if width is None:
                width = len(values) - 1
            elif len(values) - 1 != width:
                raise IngestionError(
                    f"ragged row in {path}: {len(values) - 1} values, expected {width}",
                    line=lineno,
                )
            labels.append(label)
            rows.append(values[1:])
    if not rows:
        raise IngestionError(f"no instances found in {path}")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def load_ucr(train_path, test_path) -> Tuple[Dataset, Dataset]:
    """Load a univariate UCR-style pair of text files.

    One instance per line: class label (1 -> +1, 2 -> -1) followed by p
    values, tab- or comma-delimited.  The time grid is l/p on (0, 1].
    """
    train_rows, train_labels = _parse_ucr_file(train_path)
    test_rows, test_labels = _parse_ucr_file(test_path)
    if train_rows.shape[1] != test_rows.shape[1]:
        raise IngestionError(
            f"train has p={train_rows.shape[1]} but test has p={test_rows.shape[1]}"
        )
    p = train_rows.shape[1]
    times = np.linspace(1.0 / p, 1.0, p)

    def build(rows, labels, name):
        instances = [TimeSeriesInstance(r[:, None], int(l)) for r, l in zip(rows, labels)]
        return Dataset(instances, times, d=1, name=name)

    return build(train_rows, train_labels, "ucr_train"), build(test_rows, test_labels, "ucr_test")


def save_ucr(dataset: Dataset, path, delimiter: str = "\t"):
    """Write a univariate dataset in the UCR text layout (+1 -> 1, -1 -> 2)."""
    if dataset.d != 1:
        raise UsageError("UCR text format holds univariate series only")
    with open(path, "w") as fh:
        for inst in dataset.instances:
            label = 1 if inst.label == 1 else 2
            fields = [str(label)] + [repr(float(v)) for v in inst.values[:, 0]]
            fh.write(delimiter.join(fields) + "\n")


# ---------------------------------------------------------------------------
# transforms

def decimate(dataset: Dataset, factor: int) -> Dataset:
    """Keep every ``factor``-th time index (0, factor, 2*factor, ...)."""
    if factor < 1:
        raise UsageError("decimation factor must be >= 1")
    if factor > dataset.p:
        raise UsageError(f"decimation factor {factor} exceeds p={dataset.p}")
    keep = np.arange(0, dataset.p, factor)
    instances = [TimeSeriesInstance(inst.values[keep], inst.label)
                 for inst in dataset.instances]
    return Dataset(instances, dataset.times[keep], dataset.d,
                   dataset.name, dataset.seed)


@dataclass
class FeatureScaler:
    """Per-dimension affine map value -> value * scale + offset (no clipping)."""

    scale: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(-1)
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(-1)

    def transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.scale[None, :] + self.offset[None, :]

    def to_dict(self) -> dict:
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.array(d["scale"]), np.array(d["offset"]))


def fit_scaler(train: Dataset, range_lo: float = 0.0,
               range_hi: float = math.pi) -> FeatureScaler:
    """Affine maps sending each training dimension's [min, max] to [lo, hi].

    Degenerate dimensions (max == min) map to the range midpoint with a
    warning.  Test values outside the training range extend past the
    target range unclipped.
    """
    stacked = np.concatenate([inst.values for inst in train.instances], axis=0)
    vmin = stacked.min(axis=0)
    vmax = stacked.max(axis=0)
    scale = np.empty(train.d)
    offset = np.empty(train.d)
    for j in range(train.d):
        if vmax[j] > vmin[j]:
            scale[j] = (range_hi - range_lo) / (vmax[j] - vmin[j])
            offset[j] = range_lo - vmin[j] * scale[j]
        else:
            warnings.warn(f"feature dimension {j} is constant on the training set; "
                          "mapping it to the range midpoint")
            scale[j] = 0.0
            offset[j] = 0.5 * (range_lo + range_hi)
    return FeatureScaler(scale, offset)


def apply_scaler(dataset: Dataset, scaler: FeatureScaler) -> Dataset:
    instances = [TimeSeriesInstance(scaler.transform(inst.values), inst.label)
                 for inst in dataset.instances]
    return Dataset(instances, dataset.times, dataset.d, dataset.name, dataset.seed)


def scale_instances(instances: Iterable[TimeSeriesInstance],
                    scaler: Optional[FeatureScaler]) -> list:
    if scaler is None:
        return list(instances)
    return [TimeSeriesInstance(scaler.transform(inst.values), inst.label)
            for inst in instances]


# ---------------------------------------------------------------------------
# CSV + manifest

def save_dataset_csv(dataset: Dataset, path):
    """Write instances as CSV: header ``label,t1_f1,...``, one row each."""
    header = ["label"]
    for l in range(1, dataset.p + 1):
        for f in range(1, dataset.d + 1):
            header.append(f"t{l}_f{f}")
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for inst in dataset.instances:
            fields = [str(inst.label)] + [repr(float(v)) for v in inst.values.reshape(-1)]
            fh.write(",".join(fields) + "\n")


def load_dataset_csv(path, times, name: str = "", seed=None) -> Dataset:
    """Read back the CSV layout written by :func:`save_dataset_csv`."""
    times = np.asarray(times, dtype=np.float64)
    p = len(times)
    instances = []
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
        d = (len(header) - 1) // p
        if len(header) - 1 != p * d or d < 1:
            raise IngestionError(f"CSV header width {len(header)} does not fit p={p}")
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != 1 + p * d:
                raise IngestionError(f"row width {len(fields)} != {1 + p * d}", line=lineno)
            try:
                label = int(float(fields[0]))
                values = np.array([float(f) for f in fields[1:]]).reshape(p, d)
            except ValueError as exc:
                raise IngestionError(str(exc), line=lineno)
            instances.append(TimeSeriesInstance(values, label))
    return Dataset(instances, times, d, name, seed)


def dataset_manifest(dataset: Dataset) -> dict:
    return {
        "name": dataset.name,
        "n": dataset.n,
        "p": dataset.p,
        "d": dataset.d,
        "times": dataset.times.tolist(),
        "seed": dataset.seed,
    }


def save_manifest(dataset: Dataset, path):
    with open(path, "w") as fh:
        json.dump(dataset_manifest(dataset), fh, indent=2, sort_keys=True)
        fh.write("\n")
