"""Synthetic bipartite event streams with controllable temporal drift.

Sources belong to regimes. Each regime holds a pair of random direction
vectors in destination-preference space and in feature space; as time runs
from 0 to 1 the active direction rotates by drift_rate radians, so both
which destinations a regime favors and its feature prototype shift
continuously; the features additionally pick up a uniform offset that
accumulates with drift_rate * t (a pure statistics shift). With
drift_rate = 0 the stream is stationary. Everything is a pure function of
the spec (including its seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .numcore import Rng
from .tgraph import EventStream

# spread of the destination-preference logits; larger = more peaked choices
PREFERENCE_SCALE = 5.0
# strength of the uniform feature offset that accumulates with drift_rate * t
OFFSET_SCALE = 1.0


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings; the time horizon is normalized to [0, 1]."""

    n_src: int = 200
    n_dst: int = 100
    n_events: int = 20_000
    feature_dim: int = 16
    n_regimes: int = 4
    drift_rate: float = 1.0
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_src, self.n_dst, self.n_events,
               self.feature_dim, self.n_regimes) < 1:
            raise DomainError("all synth counts must be >= 1")
        if self.drift_rate < 0 or self.noise_std < 0:
            raise DomainError("drift_rate and noise_std must be >= 0")

    def to_dict(self):
        return {
            "n_src": self.n_src, "n_dst": self.n_dst, "n_events": self.n_events,
            "feature_dim": self.feature_dim, "n_regimes": self.n_regimes,
            "drift_rate": self.drift_rate, "noise_std": self.noise_std,
            "seed": self.seed,
        }


def generate(spec):
    """Sample one EventStream from the spec, deterministically."""
    rng = Rng(spec.seed).stream("synth")
    t = np.sort(rng.uniform(size=spec.n_events))
    src = rng.integers(0, spec.n_src, size=spec.n_events).astype(np.int64)
    regime_of_src = rng.integers(0, spec.n_regimes, size=spec.n_src)

    pref_a = rng.standard_normal((spec.n_regimes, spec.n_dst)) * PREFERENCE_SCALE
    pref_b = rng.standard_normal((spec.n_regimes, spec.n_dst)) * PREFERENCE_SCALE
    proto_a = rng.standard_normal((spec.n_regimes, spec.feature_dim))
    proto_b = rng.standard_normal((spec.n_regimes, spec.feature_dim))

    angle = spec.drift_rate * t
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    regime = regime_of_src[src]

    logits = pref_a[regime] * cos_a[:, None] + pref_b[regime] * sin_a[:, None]
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.uniform(size=spec.n_events)
    dst = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1).astype(np.int64)
    dst = np.minimum(dst, spec.n_dst - 1)

    # the regime prototype rotates with the same angle as the preferences and
    # every feature dimension picks up a uniform drifting offset
    offset = OFFSET_SCALE * angle
    features = (proto_a[regime] * cos_a[:, None] + proto_b[regime] * sin_a[:, None]
                + offset[:, None]
                + spec.noise_std * rng.standard_normal((spec.n_events, spec.feature_dim)))

    return EventStream(src=src, dst=dst, t=t, features=features,
                       n_src_nodes=spec.n_src, n_dst_nodes=spec.n_dst)


def shift_magnitude(stream, n_buckets):
    """Per-bucket L2 distance of the feature mean from the first bucket's mean."""
    if len(stream) == 0:
        raise DomainError("cannot measure shift of an empty stream")
    t_min, t_max = float(stream.t.min()), float(stream.t.max())
    span = t_max - t_min
    if span == 0:
        idx = np.zeros(len(stream), dtype=np.int64)
    else:
        idx = np.minimum(((stream.t - t_min) / span * n_buckets).astype(np.int64),
                         n_buckets - 1)
    means = []
    for b in range(n_buckets):
        rows = stream.features[idx == b]
        means.append(rows.mean(axis=0) if len(rows) else None)
    base = means[0]
    out = np.zeros(n_buckets)
    for b, m in enumerate(means):
        out[b] = np.linalg.norm(m - base) if m is not None and base is not None else 0.0
    return out


def write_csv(stream, path):
    """Write a stream in the loader's CSV format (state label always 0)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n")
        for i in range(len(stream)):
            feats = ",".join(repr(float(v)) for v in stream.features[i])
            fh.write(f"{int(stream.src[i])},{int(stream.dst[i])},{float(stream.t[i])!r},0,{feats}\n")
