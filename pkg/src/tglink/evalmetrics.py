"""Ranking metrics for the negative-sampling evaluation protocol.

Each positive link is scored against k sampled negative destinations.
AP pools every candidate of the whole evaluation into one score-descending
ranking; MRR ranks each positive within its own candidate set. Ties are
broken pessimistically (a positive ranks after any negative it ties with),
so a constant scorer earns worst-case credit.

For long-horizon analysis the test span is cut into uniform time buckets and
both metrics are recomputed per bucket.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import EncodeContext, encode_batch, score_links
from .numcore import Tensor
from .tgraph import batches as split_batches
from .tgraph import sample_negatives
from .ummu import MODE_EVAL


@dataclass
class CandidateSet:
    """One positive score with its k negative scores and the event time."""

    positive_score: float
    negative_scores: np.ndarray
    event_time: float


@dataclass
class BucketRow:
    index: int
    t_lo: float
    t_hi: float
    ap: float | None
    mrr: float | None
    n_events: int


@dataclass
class EvalReport:
    """Overall and per-bucket metrics plus everything needed to reproduce."""

    ap: float
    mrr: float
    per_bucket: list
    config: dict = field(default_factory=dict)
    seed: int = 0
    variant: str = "full"

    def to_dict(self):
        return {
            "ap": self.ap,
            "mrr": self.mrr,
            "per_bucket": [
                {"bucket": row.index, "t_lo": row.t_lo, "t_hi": row.t_hi,
                 "ap": row.ap, "mrr": row.mrr, "n_events": row.n_events}
                for row in self.per_bucket
            ],
            "config": self.config,
            "seed": self.seed,
            "variant": self.variant,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        # one row per bucket plus an "overall" row; empty cells for null metrics
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["row", "t_lo", "t_hi", "ap", "mrr", "n_events"])
            total = 0
            for row in self.per_bucket:
                writer.writerow([f"bucket_{row.index}", repr(row.t_lo), repr(row.t_hi),
                                 "" if row.ap is None else repr(row.ap),
                                 "" if row.mrr is None else repr(row.mrr),
                                 row.n_events])
                total += row.n_events
            writer.writerow(["overall", "", "", repr(self.ap), repr(self.mrr), total])


def average_precision(scores, labels):
    """AP over one pooled ranking; ties rank positives after negatives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise DomainError("average_precision needs at least one positive")
    # sort by descending score, negatives first among ties
    order = np.lexsort((labels, -scores))
    ranked = labels[order]
    positions = np.flatnonzero(ranked == 1) + 1
    hits = np.arange(1, n_pos + 1)
    return float((hits / positions).sum() / n_pos)


def _rank_of_positive(cset):
    worse_or_tied = (cset.negative_scores >= cset.positive_score).sum()
    return 1 + int(worse_or_tied)


def mrr(candidate_sets):
    """Mean reciprocal rank of each positive within its own candidate set."""
    if not candidate_sets:
        raise DomainError("mrr needs at least one candidate set")
    return float(np.mean([1.0 / _rank_of_positive(c) for c in candidate_sets]))


def _metrics_of(candidate_sets):
    pooled_scores = []
    pooled_labels = []
    for c in candidate_sets:
        pooled_scores.append(c.positive_score)
        pooled_labels.append(1)
        pooled_scores.extend(c.negative_scores.tolist())
        pooled_labels.extend([0] * len(c.negative_scores))
    return average_precision(pooled_scores, pooled_labels), mrr(candidate_sets)


def collect_candidate_sets(params, memory, stream, k_neg, rng, batch_size,
                           scorer=None):
    """Score each event against its true and k sampled negative destinations.

    Scoring sees only the memory state before the event's batch; the batch
    then advances the memory in eval mode. `memory` is updated in place.
    `scorer(src_emb, cand_emb) -> (n, 1) scores` defaults to the model head.
    """
    if len(stream) == 0:
        raise DomainError("cannot evaluate an empty stream")
    if scorer is None:
        def scorer(a, b):
            return score_links(params, a, b).data
    sets = []
    state = memory
    for batch in split_batches(stream, batch_size):
        b = len(batch)
        negs = sample_negatives(rng, batch, k_neg, stream.n_dst_nodes)
        src_emb = state.src_memory[batch.src]
        pos_scores = scorer(Tensor(src_emb), Tensor(state.dst_memory[batch.dst])).ravel()
        flat_negs = negs.ravel()
        neg_scores = scorer(Tensor(np.repeat(src_emb, k_neg, axis=0)),
                            Tensor(state.dst_memory[flat_negs])).reshape(b, k_neg)
        for i in range(b):
            sets.append(CandidateSet(float(pos_scores[i]), neg_scores[i].copy(),
                                     float(batch.t[i])))
        _, _, state = encode_batch(params, state, batch, EncodeContext(mode=MODE_EVAL))
    memory.load(state)
    return sets


def evaluate(params, memory, stream, k_neg, rng, batch_size, scorer=None):
    """Overall (AP, MRR) for a stream; deterministic for a fixed rng stream."""
    sets = collect_candidate_sets(params, memory, stream, k_neg, rng, batch_size,
                                  scorer=scorer)
    return _metrics_of(sets)


def bucket_index(t, t_min, t_max, n_buckets):
    """Uniform half-open buckets over [t_min, t_max]; the last one is closed."""
    if t_max <= t_min:
        return 0
    idx = int((t - t_min) / (t_max - t_min) * n_buckets)
    return min(idx, n_buckets - 1)


def bucketed_from_sets(candidate_sets, n_buckets, config=None, seed=0, variant="full"):
    """Assemble an EvalReport (overall plus per-time-bucket rows) from sets."""
    if not candidate_sets:
        raise DomainError("cannot bucket an empty evaluation")
    times = np.array([c.event_time for c in candidate_sets])
    t_min, t_max = float(times.min()), float(times.max())
    span = (t_max - t_min) / n_buckets if t_max > t_min else 0.0
    grouped = [[] for _ in range(n_buckets)]
    for c in candidate_sets:
        grouped[bucket_index(c.event_time, t_min, t_max, n_buckets)].append(c)
    rows = []
    for i, group in enumerate(grouped):
        t_lo = t_min + i * span
        t_hi = t_max if i == n_buckets - 1 else t_min + (i + 1) * span
        if group:
            ap, rr = _metrics_of(group)
        else:
            ap, rr = None, None
        rows.append(BucketRow(i, t_lo, t_hi, ap, rr, len(group)))
    overall_ap, overall_mrr = _metrics_of(candidate_sets)
    return EvalReport(ap=overall_ap, mrr=overall_mrr, per_bucket=rows,
                      config=dict(config or {}), seed=seed, variant=variant)


def bucketed_eval(params, memory, test_stream, n_buckets, k_neg, rng, batch_size,
                  config=None, seed=0, variant="full"):
    """Evaluate a test stream and split the metrics into uniform time buckets."""
    sets = collect_candidate_sets(params, memory, test_stream, k_neg, rng, batch_size)
    return bucketed_from_sets(sets, n_buckets, config=config, seed=seed, variant=variant)
