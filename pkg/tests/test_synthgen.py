import numpy as np
import pytest

from tglink import synthgen, tgraph
from tglink.errors import DomainError

# chi-square critical value at p = 0.01 for 9 degrees of freedom
CHI2_CRIT_DOF9 = 21.666


def two_sample_chi2(a_counts, b_counts):
    total = a_counts + b_counts
    keep = total > 0
    a, b, tot = a_counts[keep], b_counts[keep], total[keep]
    ea = tot * a.sum() / tot.sum()
    eb = tot * b.sum() / tot.sum()
    return ((a - ea) ** 2 / ea).sum() + ((b - eb) ** 2 / eb).sum()


def test_generate_is_deterministic():
    spec = synthgen.SynthSpec(n_events=2000, seed=5)
    s1, s2 = synthgen.generate(spec), synthgen.generate(spec)
    assert np.array_equal(s1.t, s2.t)
    assert np.array_equal(s1.src, s2.src)
    assert np.array_equal(s1.dst, s2.dst)
    assert np.array_equal(s1.features, s2.features)


def test_generate_count_and_sortedness():
    stream = synthgen.generate(synthgen.SynthSpec(n_events=5000, seed=1))
    assert len(stream) == 5000
    assert (np.diff(stream.t) >= 0).all()
    assert stream.src.max() < stream.n_src_nodes and stream.src.min() >= 0
    assert stream.dst.max() < stream.n_dst_nodes and stream.dst.min() >= 0
    assert stream.features.shape == (5000, stream.feature_dim)


def test_generate_rejects_bad_spec():
    with pytest.raises(DomainError):
        synthgen.SynthSpec(n_src=0)
    with pytest.raises(DomainError):
        synthgen.SynthSpec(drift_rate=-1.0)


def test_zero_drift_destination_choice_is_stationary():
    # single source, 10k events: first vs last decile counts pass chi-square
    spec = synthgen.SynthSpec(n_src=1, n_dst=10, n_events=10_000, feature_dim=4,
                              n_regimes=1, drift_rate=0.0, noise_std=0.1, seed=2)
    stream = synthgen.generate(spec)
    decile = len(stream) // 10
    first = np.bincount(stream.dst[:decile], minlength=10)
    last = np.bincount(stream.dst[-decile:], minlength=10)
    assert two_sample_chi2(first, last) < CHI2_CRIT_DOF9


def test_strong_drift_shifts_destination_choice():
    spec = synthgen.SynthSpec(n_src=1, n_dst=10, n_events=10_000, feature_dim=4,
                              n_regimes=1, drift_rate=2.0, noise_std=0.1, seed=2)
    stream = synthgen.generate(spec)
    decile = len(stream) // 10
    first = np.bincount(stream.dst[:decile], minlength=10)
    last = np.bincount(stream.dst[-decile:], minlength=10)
    assert two_sample_chi2(first, last) > CHI2_CRIT_DOF9


def test_strong_drift_separates_feature_means():
    spec = synthgen.SynthSpec(drift_rate=2.0, seed=1)
    stream = synthgen.generate(spec)
    decile = len(stream) // 10
    first = stream.features[:decile].mean(axis=0)
    last = stream.features[-decile:].mean(axis=0)
    noise_se = spec.noise_std * np.sqrt(2.0 * spec.feature_dim / decile)
    assert np.linalg.norm(first - last) > 5 * noise_se


def test_shift_magnitude_constant_stream_is_zero():
    stream = synthgen.generate(synthgen.SynthSpec(n_events=500, seed=3))
    flat = tgraph.EventStream(stream.src, stream.dst, stream.t,
                              np.ones_like(stream.features),
                              stream.n_src_nodes, stream.n_dst_nodes)
    assert not synthgen.shift_magnitude(flat, 10).any()


def test_shift_magnitude_zero_drift_stays_small():
    spec = synthgen.SynthSpec(drift_rate=0.0, seed=1)
    distances = synthgen.shift_magnitude(synthgen.generate(spec), 10)
    # regime-mix sampling noise only; measured max ~0.23 on this spec
    assert distances.max() < 0.5


def test_shift_magnitude_monotone_under_drift():
    spec = synthgen.SynthSpec(drift_rate=1.0, seed=1)
    distances = synthgen.shift_magnitude(synthgen.generate(spec), 10)
    assert (np.diff(distances) > -0.15).all()
    assert distances[-1] > 1.0


def test_csv_round_trip(tmp_path):
    spec = synthgen.SynthSpec(n_events=300, seed=4)
    stream = synthgen.generate(spec)
    path = tmp_path / "synth.csv"
    synthgen.write_csv(stream, path)
    loaded = tgraph.load_events(str(path))
    assert len(loaded) == len(stream)
    assert np.array_equal(loaded.t, stream.t)
    assert np.array_equal(loaded.features, stream.features)
