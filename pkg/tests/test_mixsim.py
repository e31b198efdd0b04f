import numpy as np
import pytest
from hypothesis import given, strategies as st

from avisam.mixsim import (MIN_SEGMENT, ActivitySchedule, SchedulingError, SimConfig, active_region_snr_db,
                           make_sparse_schedule, max_normalized_xcorr, measured_snr_db, mix_dense, mix_sparse,
                           simulate_sample, snr_scale, synth_speech_like)

snr_values = st.floats(-10, 10, allow_nan=False)


@given(st.lists(snr_values, min_size=1, max_size=3), st.integers(0, 10**6))
def test_dense_mixture_hits_requested_snr(snrs, seed):
    clips = [synth_speech_like(seed + k, 0.5) for k in range(len(snrs) + 1)]
    sample = mix_dense(clips, snrs)
    for k, want in enumerate(snrs, 1):
        assert abs(measured_snr_db(sample.sources[0], sample.sources[k]) - want) < 1e-6
    np.testing.assert_allclose(sample.mixture, np.sum(sample.sources, axis=0), atol=1e-12)


def test_dense_truncates_to_shortest():
    sample = mix_dense([np.ones(10), np.ones(7) * 0.5], [0.0])
    assert len(sample.mixture) == 7


@given(st.integers(2, 3), st.floats(0.0, 0.6), st.integers(0, 10**6))
def test_sparse_schedule_overlap_and_coverage(n_spk, frac, seed):
    total = 32000
    sched = make_sparse_schedule(total, n_spk, frac, seed)
    act = sched.activity()
    count = act.sum(axis=0)
    assert count.max() <= 2
    assert np.all(count >= 1)
    assert int((count >= 2).sum()) == round(frac * total)
    assert all(row.any() for row in act)


def test_sparse_schedule_is_seeded():
    a = make_sparse_schedule(32000, 2, 0.3, 5)
    b = make_sparse_schedule(32000, 2, 0.3, 5)
    c = make_sparse_schedule(32000, 2, 0.3, 6)
    assert a.intervals == b.intervals
    assert a.intervals != c.intervals


def test_schedule_rejects_bad_parameters():
    with pytest.raises(SchedulingError):
        make_sparse_schedule(32000, 2, 1.5, 0)
    with pytest.raises(SchedulingError):
        make_sparse_schedule(MIN_SEGMENT, 2, 0.3, 0)
    with pytest.raises(SchedulingError):
        ActivitySchedule([[(0, 10), (5, 20)]], 20)


@given(st.integers(2, 3), snr_values, snr_values, st.integers(0, 10**6))
def test_sparse_mixture_snr_over_active_regions(n_spk, s1, s2, seed):
    sched = make_sparse_schedule(32000, n_spk, 0.3, seed)
    snrs = [s1, s2][: n_spk - 1]
    material = [synth_speech_like(seed + k, 2.0) for k in range(n_spk)]
    sample = mix_sparse(material, sched, snrs)
    for k, want in enumerate(snrs, 1):
        assert abs(active_region_snr_db(sample, k) - want) < 1e-6
    np.testing.assert_allclose(sample.mixture, np.sum(sample.sources, axis=0), atol=1e-12)
    act = sched.activity()
    for k, src in enumerate(sample.sources):
        assert not np.any(src[~act[k]])


def test_sparse_mixture_needs_enough_material():
    sched = make_sparse_schedule(32000, 2, 0.3, 0)
    with pytest.raises(SchedulingError):
        mix_sparse([np.ones(100), np.ones(32000)], sched, [0.0])


def test_snr_scale_oracle():
    # equal power, 20 dB -> gain 0.1
    assert snr_scale(np.ones(4), -np.ones(4), 20.0) == pytest.approx(0.1, rel=1e-15)


@pytest.mark.parametrize("mode", ["dense", "sparse"])
def test_simulation_is_a_pure_function_of_seed_and_index(mode):
    cfg = SimConfig(mode=mode, duration=1.0)
    a, b = simulate_sample(3, 4, cfg), simulate_sample(3, 4, cfg)
    np.testing.assert_array_equal(a.mixture, b.mixture)
    assert not np.array_equal(a.mixture, simulate_sample(3, 5, cfg).mixture)
    assert a.meta["seed"] == 3 and a.meta["index"] == 4
    assert np.max(np.abs(a.mixture)) <= 0.9 + 1e-12


def test_simulated_snrs_stay_exact_after_peak_rescale():
    cfg = SimConfig(n_speakers=3)
    for i in range(5):
        s = simulate_sample(0, i, cfg)
        for k, want in enumerate(s.snrs_db, 1):
            assert abs(active_region_snr_db(s, k) - want) < 1e-6
            assert -10 <= want <= 10


def test_synthetic_voices_are_distinct():
    a, b = synth_speech_like(1, 1.0), synth_speech_like(2, 1.0)
    assert np.max(np.abs(a)) == pytest.approx(0.5)
    assert max_normalized_xcorr(a, b) < 0.5
    assert max_normalized_xcorr(a, a) == pytest.approx(1.0)
