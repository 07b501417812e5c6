"""Interaction event streams: loading, chronological splits, batching and
negative destination sampling.

Streams are stored as parallel column arrays (sources, destinations,
timestamps, features) stably sorted by timestamp. Node ids are dense
integers assigned in first-appearance order, with sources and destinations
in separate id spaces, matching bipartite interaction datasets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError, ParseError


@dataclass(frozen=True)
class Event:
    """One timestamped source -> destination interaction."""

    src: int
    dst: int
    t: float
    features: np.ndarray
    idx: int


@dataclass
class EventStream:
    """A time-sorted stream of interaction events with dense node ids."""

    src: np.ndarray        # (N,) int64
    dst: np.ndarray        # (N,) int64
    t: np.ndarray          # (N,) float64, non-decreasing
    features: np.ndarray   # (N, F) float64
    n_src_nodes: int
    n_dst_nodes: int

    def __post_init__(self):
        if len(self.t) > 1 and (np.diff(self.t) < 0).any():
            raise FormatError("event timestamps are not sorted")
        if len(self.src) and (self.src.max() >= self.n_src_nodes or self.src.min() < 0):
            raise FormatError("source id out of declared range")
        if len(self.dst) and (self.dst.max() >= self.n_dst_nodes or self.dst.min() < 0):
            raise FormatError("destination id out of declared range")

    def __len__(self):
        return len(self.t)

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def event(self, i):
        return Event(int(self.src[i]), int(self.dst[i]), float(self.t[i]),
                     self.features[i], i)

    def __iter__(self):
        for i in range(len(self)):
            yield self.event(i)

    def slice(self, start, stop):
        return EventStream(self.src[start:stop], self.dst[start:stop],
                           self.t[start:stop], self.features[start:stop],
                           self.n_src_nodes, self.n_dst_nodes)


@dataclass(frozen=True)
class SplitSpec:
    """Three chronological split ratios that must sum to one."""

    ratios: tuple

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise DomainError(f"split needs three non-negative ratios, got {self.ratios}")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DomainError(f"split ratios must sum to 1, got {sum(self.ratios)}")


@dataclass(frozen=True)
class Batch:
    """A contiguous time-ordered slice of one split."""

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    features: np.ndarray

    def __len__(self):
        return len(self.t)


def _dense_remap(raw):
    """Map raw ids to dense 0..k-1 in first-appearance order."""
    mapping = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, v in enumerate(raw):
        key = int(v)
        if key not in mapping:
            mapping[key] = len(mapping)
        out[i] = mapping[key]
    return out, len(mapping)


def _from_columns(raw_src, raw_dst, t, features):
    order = np.argsort(t, kind="stable")
    raw_src, raw_dst = raw_src[order], raw_dst[order]
    t, features = t[order], features[order]
    src, n_src = _dense_remap(raw_src)
    dst, n_dst = _dense_remap(raw_dst)
    return EventStream(src, dst, t, features, n_src, n_dst)


def _parse_lines(path):
    # line-by-line fallback parse with precise error locations
    rows = []
    feat_dim = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line_no == 1 and line.startswith("user_id"):
                continue
            parts = line.split(",")
            if len(parts) < 4:
                raise ParseError(f"expected at least 4 comma-separated fields, got {len(parts)}",
                                 line_no)
            try:
                values = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
            if not math.isfinite(values[2]) or values[2] < 0:
                raise ParseError(f"bad timestamp {parts[2]}", line_no)
            if feat_dim is None:
                feat_dim = len(values) - 4
            elif len(values) - 4 != feat_dim:
                raise FormatError(
                    f"line {line_no}: {len(values) - 4} features, expected {feat_dim}")
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    return arr


def load_events(path):
    """Parse a JODIE-style CSV into a time-sorted EventStream.

    Format: optional header starting with "user_id"; rows of
    src,dst,timestamp,state_label,f1,...,fk. The state label is ignored.
    """
    # fast path via numpy; fall back to the explicit parser for diagnostics
    try:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
            skip = 1 if first.startswith("user_id") else 0
        arr = np.loadtxt(path, delimiter=",", skiprows=skip, dtype=np.float64, ndmin=2)
        if arr.shape[1] < 4 or not np.isfinite(arr[:, 2]).all() or (arr[:, 2] < 0).any():
            raise ValueError
    except (ValueError, StopIteration):
        arr = _parse_lines(path)
    except OSError:
        raise
    return _from_columns(arr[:, 0], arr[:, 1], arr[:, 2].copy(),
                         np.ascontiguousarray(arr[:, 4:]))


def chronological_split(stream, spec):
    """Split into train/val/test at floor(N*r1) and floor(N*(r1+r2))."""
    n = len(stream)
    if n == 0:
        raise DomainError("cannot split an empty stream")
    r1, r2, _ = spec.ratios
    first = math.floor(n * r1)
    second = math.floor(n * (r1 + r2))
    return stream.slice(0, first), stream.slice(first, second), stream.slice(second, n)


def batches(stream, batch_size):
    """Consecutive non-overlapping time-ordered slices; the last may be short."""
    if batch_size < 1:
        raise DomainError(f"batch size must be >= 1, got {batch_size}")
    out = []
    for start in range(0, len(stream), batch_size):
        stop = min(start + batch_size, len(stream))
        out.append(Batch(stream.src[start:stop], stream.dst[start:stop],
                         stream.t[start:stop], stream.features[start:stop]))
    return out


def sample_negatives(rng, batch, k, dst_universe):
    """Draw k uniform negative destinations per event, excluding the true one.

    Sampling is with replacement among the k draws. `dst_universe` is a
    sorted array of candidate destination ids (or an int meaning range(n)).
    """
    universe = np.arange(dst_universe) if np.isscalar(dst_universe) \
        else np.asarray(sorted(dst_universe), dtype=np.int64)
    m = len(universe)
    if m < 2:
        raise DomainError("negative sampling needs at least 2 candidate destinations")
    b = len(batch)
    pos = np.searchsorted(universe, batch.dst)
    in_universe = (pos < m) & (universe[np.minimum(pos, m - 1)] == batch.dst)
    # one slot fewer where the true destination must be excluded
    high = np.where(in_universe, m - 1, m)
    draws = np.minimum((rng.uniform(size=(b, k)) * high[:, None]).astype(np.int64),
                       high[:, None] - 1)
    # skip over the true destination's slot so the draw stays uniform on the rest
    shift = (draws >= pos[:, None]) & in_universe[:, None]
    return universe[draws + shift]
