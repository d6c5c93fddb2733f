import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from airan.errors import ConfigError, TraceFormatError
from airan.traces import (DemandProfile, Scaler, ai_demand, build_profile, export_profile,
                          label_spikes, load_trace, make_windows, normalize_ran_demand,
                          spike_threshold, standardize, synth_trace, write_trace)


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------------ loading
def test_load_three_rows(tmp_path):
    s = load_trace(write(tmp_path, "timestamp,rnti_count\n0,5\n900,7\n1800,6\n"))
    assert len(s) == 3
    assert s.rnti_count.tolist() == [5, 7, 6]


def test_load_iso_timestamps_without_header(tmp_path):
    s = load_trace(write(tmp_path, "2023-01-01T00:00:00Z,1\n2023-01-01T00:15:00Z,2\n"))
    assert s.timestamps[1] - s.timestamps[0] == 900.0


def test_negative_count_names_line(tmp_path):
    p = write(tmp_path, "timestamp,rnti_count\n0,5\n900,-2\n")
    with pytest.raises(TraceFormatError, match=":3:"):
        load_trace(p)


def test_duplicate_timestamp_rejected(tmp_path):
    p = write(tmp_path, "0,5\n900,7\n900,8\n")
    with pytest.raises(TraceFormatError, match="increasing"):
        load_trace(p)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_trace("/nonexistent/trace.csv")


def test_unparseable_row(tmp_path):
    with pytest.raises(TraceFormatError, match=":2:"):
        load_trace(write(tmp_path, "0,5\n900,abc\n"))


def test_single_gap_forward_filled(tmp_path):
    s = load_trace(write(tmp_path, "0,5\n900,7\n2700,9\n3600,4\n"))
    assert s.rnti_count.tolist() == [5, 7, 7, 9, 4]
    assert np.all(np.diff(s.timestamps) == 900.0)


def test_write_load_round_trip(tmp_path):
    s = synth_trace("diurnal", 50, 3)
    back = load_trace(write_trace(tmp_path / "d.csv", s))
    assert np.array_equal(back.rnti_count, s.rnti_count)
    assert np.array_equal(back.timestamps, s.timestamps)


# ------------------------------------------------------------ normalisation
def test_normalize_three_values():
    np.testing.assert_allclose(normalize_ran_demand([10, 20, 30], 1e-8), [0.0, 0.5, 1.0], atol=1e-9)


def test_normalize_constant_is_zero():
    assert np.array_equal(normalize_ran_demand([4, 4, 4]), np.zeros(3))


def test_normalize_extremes_on_loaded_file(tmp_path):
    s = synth_trace("event-spike", 200, 8)
    counts = load_trace(write_trace(tmp_path / "e.csv", s)).rnti_count
    d = normalize_ran_demand(counts, 1e-8)
    lo, hi = float(counts.min()), float(counts.max())
    assert d[np.argmin(counts)] == 0.0
    assert d[np.argmax(counts)] == (hi - lo) / (hi - lo + 1e-8)
    assert d.max() < 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=60))
def test_profile_values_in_unit_interval(counts):
    d = normalize_ran_demand(counts)
    assert np.all((d >= 0.0) & (d < 1.0))
    DemandProfile(d, ai_demand(len(d)))


# --------------------------------------------------------------- AI demand
def test_ai_demand_start():
    assert ai_demand(100)[0] == 0.5


def test_ai_demand_near_peak():
    assert ai_demand(100)[12] == pytest.approx((math.sin(0.48 * math.pi) + 1) / 2, abs=1e-15)
    assert 0.998 < ai_demand(100)[12] < 1.0
    # the continuous peak sits at t = N/8; N=8 puts it on the grid
    assert ai_demand(8)[1] == 1.0


def test_ai_demand_two_oscillations():
    d = ai_demand(100)
    interior = np.arange(1, 99)
    maxima = [k for k in interior if d[k] > d[k - 1] and d[k] >= d[k + 1]]
    minima = [k for k in interior if d[k] < d[k - 1] and d[k] <= d[k + 1]]
    assert len(maxima) == 2 and len(minima) == 2


def test_ai_demand_global_offset_matches_longer_series():
    long = ai_demand(300, horizon=100)
    np.testing.assert_array_equal(ai_demand(50, horizon=100, t0=120), long[120:170])


# ----------------------------------------------------------------- spikes
def test_label_top_decile():
    labels = label_spikes(np.arange(1, 11))
    assert labels.tolist() == [0] * 9 + [1]


def test_label_constant_series():
    assert not label_spikes(np.full(20, 3.0)).any()


def test_label_fraction_iid():
    x = np.random.default_rng(0).normal(size=100_000)
    assert abs(label_spikes(x).mean() - 0.10) <= 0.005


@pytest.mark.parametrize("pct", [0.0, 100.0, -5.0, 120.0])
def test_label_bad_percentile(pct):
    with pytest.raises(ConfigError):
        label_spikes([1.0, 2.0], pct)


def test_train_threshold_reused_on_test():
    train = np.random.default_rng(1).normal(size=500)
    test = np.random.default_rng(2).normal(loc=0.5, size=300)
    tau = spike_threshold(train)
    assert tau == spike_threshold(train)
    np.testing.assert_array_equal(label_spikes(test, threshold=tau), (test > np.percentile(train, 90)).astype(float))


# ---------------------------------------------------------- standardising
def test_standardize_train_itself():
    z, _ = standardize(np.random.default_rng(0).uniform(size=1000))
    assert abs(z.mean()) < 1e-12 and abs(z.std() - 1.0) < 1e-12


def test_scaler_round_trip():
    x = np.random.default_rng(3).normal(5, 2, 100)
    sc = Scaler.fit(x)
    np.testing.assert_allclose(sc.inverse(sc.transform(x)), x, rtol=0, atol=1e-12)


def test_test_split_uses_train_statistics():
    train = np.array([1.0, 2.0, 3.0, 4.0])
    test = np.array([10.0, 20.0])
    z, _ = standardize(train, test)
    mean = sum(train) / 4
    std = math.sqrt(sum((v - mean) ** 2 for v in train) / 4)
    np.testing.assert_allclose(z, [(10 - mean) / std, (20 - mean) / std], rtol=1e-14)


def test_constant_train_is_floored():
    z, sc = standardize(np.ones(5))
    assert sc.std == 1e-8 and np.all(z == 0.0)


# --------------------------------------------------------------- windows
def test_window_count():
    ds = make_windows(np.arange(12.0), seq_len=10)
    assert len(ds) == 2 and ds.inputs.shape == (2, 10)


def test_targets_outside_own_window():
    x = np.arange(30.0)
    ds = make_windows(x, seq_len=10)
    for i in range(len(ds)):
        assert ds.targets[i] == x[i + 10]
        assert ds.targets[i] not in ds.inputs[i]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 15), st.integers(1, 40))
def test_window_reconstruction(seq_len, extra):
    x = np.random.default_rng(seq_len * 100 + extra).normal(size=seq_len + extra)
    labels = (x > 0).astype(float)
    ds = make_windows(x, labels, seq_len)
    np.testing.assert_array_equal(np.concatenate([ds.inputs[0], ds.targets]), x)
    np.testing.assert_array_equal(ds.spike_labels, labels[seq_len:])
    assert set(np.unique(ds.spike_labels)) <= {0.0, 1.0}


def test_window_too_short():
    with pytest.raises(ConfigError):
        make_windows(np.arange(10.0), seq_len=10)


# ------------------------------------------------------------- synthesis
@pytest.mark.parametrize("kind", ["event-spike", "diurnal", "flat"])
def test_synth_deterministic(kind):
    a, b = synth_trace(kind, 300, 5), synth_trace(kind, 300, 5)
    assert np.array_equal(a.rnti_count, b.rnti_count)
    assert not np.array_equal(a.rnti_count, synth_trace(kind, 300, 6).rnti_count)


def test_synth_event_spike_has_labelled_surge():
    s = synth_trace("event-spike", 96 * 4, 2)
    labels = label_spikes(s.rnti_count)
    assert labels.mean() > 0
    # the surge is contiguous: the longest labelled run spans several steps
    runs, cur = [], 0
    for v in labels:
        cur = cur + 1 if v else 0
        runs.append(cur)
    assert max(runs) >= 5


def test_synth_diurnal_dominant_period():
    period = 96
    s = synth_trace("diurnal", period * 8, 4, period=period)
    x = s.rnti_count - s.rnti_count.mean()
    spectrum = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size)
    k = int(np.argmax(spectrum[1:])) + 1
    assert 1.0 / freqs[k] == pytest.approx(period)


def test_synth_flat_low_variance():
    s = synth_trace("flat", 1000, 1)
    assert s.rnti_count.std() / s.rnti_count.mean() < 0.1


def test_synth_bad_kind():
    with pytest.raises(ConfigError):
        synth_trace("bursty", 10, 0)


def test_export_profile(tmp_path):
    prof = build_profile(synth_trace("flat", 20, 0), ai_horizon=20)
    p = export_profile(tmp_path / "p.csv", prof, label_spikes(prof.d_ran))
    lines = p.read_text().splitlines()
    assert lines[0] == "t,d_ran,d_ai,spike_label" and len(lines) == 21
