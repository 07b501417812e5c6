import numpy as np
import pytest

from tglink import evalmetrics as em
from tglink import model, tgraph
from tglink.errors import DomainError
from tglink.numcore import Rng


def make_sets(rng, n_sets, k=50):
    sets = []
    for i in range(n_sets):
        sets.append(em.CandidateSet(float(rng.uniform()), rng.uniform(size=k),
                                    float(i)))
    return sets


# ------------------------------------------------------------------------ AP

def test_ap_perfect_ranking():
    assert em.average_precision([0.9, 0.1], [1, 0]) == 1.0


def test_ap_inverted_ranking():
    assert em.average_precision([0.1, 0.9], [1, 0]) == 0.5


def test_ap_hand_case():
    got = em.average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    assert got == pytest.approx((1.0 + 2.0 / 3.0) / 2.0, abs=1e-12)


def test_ap_pessimistic_ties():
    # constant scorer: both positives rank after both negatives
    got = em.average_precision([0.5, 0.5, 0.5, 0.5], [1, 1, 0, 0])
    assert got == pytest.approx((1.0 / 3.0 + 2.0 / 4.0) / 2.0, abs=1e-12)


def test_ap_requires_a_positive():
    with pytest.raises(DomainError):
        em.average_precision([0.4, 0.2], [0, 0])


# ----------------------------------------------------------------------- MRR

def test_mrr_rank_one():
    cset = em.CandidateSet(0.99, np.linspace(0.0, 0.9, 50), 0.0)
    assert em.mrr([cset]) == 1.0


def test_mrr_rank_three():
    cset = em.CandidateSet(0.5, np.array([0.9, 0.7, 0.1, 0.2]), 0.0)
    assert em.mrr([cset]) == pytest.approx(1.0 / 3.0)


def test_mrr_mean_over_sets():
    first = em.CandidateSet(0.9, np.array([0.1, 0.2]), 0.0)
    second = em.CandidateSet(0.5, np.array([0.7, 0.1]), 0.0)
    assert em.mrr([first, second]) == pytest.approx(0.75)


def test_mrr_empty_rejected():
    with pytest.raises(DomainError):
        em.mrr([])


def test_mrr_pessimistic_tie():
    cset = em.CandidateSet(0.5, np.array([0.5, 0.1]), 0.0)
    assert em.mrr([cset]) == pytest.approx(0.5)


def test_random_scorer_mrr_matches_harmonic_prediction():
    rng = np.random.default_rng(1)
    sets = make_sets(rng, 10_000, k=50)
    h51 = sum(1.0 / r for r in range(1, 52))
    assert abs(em.mrr(sets) - h51 / 51.0) < 0.01


def test_metrics_invariant_under_monotone_transform():
    rng = np.random.default_rng(2)
    sets = make_sets(rng, 200, k=10)
    ap0, mrr0 = em._metrics_of(sets)
    squashed = [em.CandidateSet(np.tanh(c.positive_score * 3.0),
                                np.tanh(c.negative_scores * 3.0), c.event_time)
                for c in sets]
    ap1, mrr1 = em._metrics_of(squashed)
    assert ap1 == pytest.approx(ap0, abs=1e-12)
    assert mrr1 == pytest.approx(mrr0, abs=1e-12)
    assert 1.0 / 51.0 <= mrr0 <= 1.0 and 0.0 <= ap0 <= 1.0


# ----------------------------------------------------------------- evaluation

def eval_stream(n=60, seed=0):
    rng = np.random.default_rng(seed)
    return tgraph.EventStream(
        src=rng.integers(0, 5, size=n),
        dst=rng.integers(0, 8, size=n),
        t=np.sort(rng.uniform(0, 100, size=n)),
        features=rng.normal(size=(n, 2)),
        n_src_nodes=5,
        n_dst_nodes=8,
    )


def test_evaluate_with_oracle_scorer_is_perfect():
    stream = eval_stream()
    params = model.ModelParams.zeros(4, stream.feature_dim, 3)
    memory = model.MemoryState.zeros(stream.n_src_nodes, stream.n_dst_nodes, 4)
    # the oracle peeks at the true destination via closure over each batch
    truth = {}
    for i in range(len(stream)):
        truth[i] = int(stream.dst[i])

    calls = {"i": 0}

    def oracle(src_emb, cand_emb):
        # positives arrive first (one call), then negatives (one call) per batch
        n = src_emb.rows
        if calls["i"] % 2 == 0:
            out = np.ones((n, 1))
        else:
            out = np.zeros((n, 1))
        calls["i"] += 1
        return out

    ap, rr = em.evaluate(params, memory, stream, 5, Rng(3).stream("neg"), 16,
                         scorer=oracle)
    assert ap == 1.0 and rr == 1.0


def test_evaluate_deterministic_for_seed():
    stream = eval_stream(seed=4)
    params = model.ModelParams.init(Rng(5).stream("init"), 4, stream.feature_dim, 3)
    results = []
    for _ in range(2):
        memory = model.MemoryState.zeros(stream.n_src_nodes, stream.n_dst_nodes, 4)
        results.append(em.evaluate(params, memory, stream, 7, Rng(6).stream("neg"), 16))
    assert results[0] == results[1]


def test_evaluate_negative_count_and_exclusion():
    stream = eval_stream(seed=7)
    params = model.ModelParams.init(Rng(8).stream("init"), 4, stream.feature_dim, 3)
    memory = model.MemoryState.zeros(stream.n_src_nodes, stream.n_dst_nodes, 4)
    sets = em.collect_candidate_sets(params, memory, stream, 50, Rng(9).stream("neg"), 16)
    assert len(sets) == len(stream)
    assert all(len(c.negative_scores) == 50 for c in sets)


def test_evaluate_empty_stream_rejected():
    stream = eval_stream().slice(0, 0)
    params = model.ModelParams.zeros(4, 2, 3)
    memory = model.MemoryState.zeros(5, 8, 4)
    with pytest.raises(DomainError):
        em.evaluate(params, memory, stream, 5, Rng(0), 16)


# -------------------------------------------------------------------- buckets

def test_bucket_boundaries_uniform():
    # span [0, 100): event at 15 lands in bucket 1, at 95 in bucket 9
    assert em.bucket_index(15.0, 0.0, 100.0, 10) == 1
    assert em.bucket_index(95.0, 0.0, 100.0, 10) == 9
    assert em.bucket_index(100.0, 0.0, 100.0, 10) == 9  # last bucket closed
    assert em.bucket_index(10.0, 0.0, 100.0, 10) == 1   # half-open below


def test_bucketed_degenerate_span_lands_in_bucket_zero():
    sets = [em.CandidateSet(0.9, np.array([0.1]), 5.0) for _ in range(4)]
    report = em.bucketed_from_sets(sets, 10)
    assert report.per_bucket[0].n_events == 4
    assert sum(r.n_events for r in report.per_bucket[1:]) == 0


def test_bucketed_counts_partition_events():
    rng = np.random.default_rng(10)
    sets = make_sets(rng, 137, k=5)
    report = em.bucketed_from_sets(sets, 10)
    assert sum(r.n_events for r in report.per_bucket) == 137
    assert len(report.per_bucket) == 10


def test_bucketed_empty_bucket_reports_null():
    sets = [em.CandidateSet(0.9, np.array([0.1]), t) for t in (0.0, 0.1, 10.0)]
    report = em.bucketed_from_sets(sets, 10)
    middle = report.per_bucket[5]
    assert middle.n_events == 0 and middle.ap is None and middle.mrr is None


def test_report_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    sets = make_sets(rng, 40, k=3)
    report = em.bucketed_from_sets(sets, 4, config={"k_neg": 3}, seed=12)
    json_path = tmp_path / "eval_report.json"
    csv_path = tmp_path / "eval_buckets.csv"
    report.write_json(json_path)
    report.write_csv(csv_path)
    import json

    payload = json.loads(json_path.read_text())
    assert payload["ap"] == report.ap
    assert len(payload["per_bucket"]) == 4
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 1 + 4 + 1  # header, buckets, overall
    assert lines[-1].startswith("overall")
