import numpy as np
import pytest

from ecselect.epochs import (BandSpec, ChannelMeta, EpochSet, bandpass_filter,
                             ensemble_normalize, load_epochs, save_epochs,
                             segment)
from ecselect.errors import ConfigError, FormatError


def make_epochs(data, fs=250.0, labels=None):
    return EpochSet(data=np.asarray(data, dtype=np.float64), fs=fs,
                    labels=labels)


# ---------------------------------------------------------------------------
# container and file formats
# ---------------------------------------------------------------------------


def test_eegb_round_trip_small(tmp_path):
    data = np.arange(8, dtype=np.float64).reshape(1, 2, 4)
    ep = make_epochs(data)
    path = tmp_path / "x.eegb"
    save_epochs(ep, path)
    back = load_epochs(path)
    assert back.data.shape == (1, 2, 4)
    assert np.array_equal(back.data, data)  # values are float32-exact
    assert back.fs == 250.0
    assert back.channel_names == ["ch00", "ch01"]


def test_eegb_save_load_save_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ep = make_epochs(rng.standard_normal((3, 4, 16)), labels=[0, 1, 0])
    p1 = tmp_path / "a.eegb"
    p2 = tmp_path / "b.eegb"
    save_epochs(ep, p1)
    save_epochs(load_epochs(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(load_epochs(p2).labels, [0, 1, 0])


def test_eegb_truncated_payload(tmp_path):
    ep = make_epochs(np.zeros((10, 2, 5)))
    path = tmp_path / "x.eegb"
    save_epochs(ep, path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 2 * 5 * 4])  # drop one trial
    with pytest.raises(FormatError, match="payload"):
        load_epochs(path)


def test_eegb_bad_magic(tmp_path):
    path = tmp_path / "x.eegb"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="magic"):
        load_epochs(path)


def test_eegb_rejects_nonfinite(tmp_path):
    ep = make_epochs(np.zeros((1, 1, 4)))
    path = tmp_path / "x.eegb"
    save_epochs(ep, path)
    blob = bytearray(path.read_bytes())
    blob[-4:] = np.float32("nan").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="non-finite"):
        load_epochs(path)


def test_csv_smallest_valid(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("t,C3,C4\n0.0,1.0,4.0\n0.004,2.0,5.0\n0.008,3.0,6.0\n")
    ep = load_epochs(path, format="csv")
    assert ep.data.shape == (1, 2, 3)
    assert ep.channel_names == ["C3", "C4"]
    assert ep.fs == pytest.approx(250.0)
    assert np.array_equal(ep.data[0], [[1, 2, 3], [4, 5, 6]])


def test_csv_bad_header(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("time,C3\n0,1\n")
    with pytest.raises(FormatError, match="header"):
        load_epochs(path, format="csv")


def test_channel_invariants():
    with pytest.raises(ConfigError, match="unique"):
        EpochSet(data=np.zeros((1, 2, 3)), fs=10.0,
                 channels=[ChannelMeta(0, "A"), ChannelMeta(1, "A")])
    with pytest.raises(ConfigError, match="contiguous"):
        EpochSet(data=np.zeros((1, 2, 3)), fs=10.0,
                 channels=[ChannelMeta(0, "A"), ChannelMeta(2, "B")])


# ---------------------------------------------------------------------------
# band-pass filter
# ---------------------------------------------------------------------------


def analytic_bandpass_gain(freq, f_low, f_high, order, fs):
    """Magnitude of the designed filter at ``freq``, from the analog
    Butterworth prototype through the bilinear mapping.

    The digital filter's response at f equals the analog prototype's at
    the pre-warped frequency; forward-backward application squares it.
    """
    warp = lambda f: 2.0 * fs * np.tan(np.pi * f / fs)
    w = warp(freq)
    w1, w2 = warp(f_low), warp(f_high)
    lowpass_arg = (w * w - w1 * w2) / (w * (w2 - w1))
    one_pass_sq = 1.0 / (1.0 + lowpass_arg ** (2 * order))
    return one_pass_sq  # two passes: amplitude gain = |H|^2


def sine_epochs(freq, fs=250.0, seconds=8.0):
    t = np.arange(int(seconds * fs)) / fs
    return make_epochs(np.sin(2 * np.pi * freq * t)[None, None, :], fs=fs), t


def measured_gain(epochs, band, order, fs):
    out = bandpass_filter(epochs, band, order)
    edge = int(fs)  # discard 1 s transients each side
    core = out.data[0, 0, edge:-edge]
    ref = epochs.data[0, 0, edge:-edge]
    return np.sqrt(np.mean(core ** 2) / np.mean(ref ** 2))


def test_filter_zero_in_zero_out():
    ep = make_epochs(np.zeros((2, 3, 500)))
    out = bandpass_filter(ep, BandSpec(8, 30, "broad"), 3)
    assert np.array_equal(out.data, ep.data)


def test_filter_passband_matches_analytic_oracle():
    # oracle-computed amplitude for a 10 Hz tone through the 8-30 Hz
    # order-3 design: 0.93382 after the two passes (10 Hz is only 2 Hz
    # above the -3 dB edge, so it is not unity)
    band = BandSpec(8, 30, "broad")
    ep, _ = sine_epochs(10.0)
    gain = measured_gain(ep, band, 3, 250.0)
    oracle = analytic_bandpass_gain(10.0, 8, 30, 3, 250.0)
    assert oracle == pytest.approx(0.933818, abs=1e-6)
    assert gain == pytest.approx(oracle, abs=5e-3)


def test_filter_deep_passband_is_unity():
    band = BandSpec(8, 30, "broad")
    ep, _ = sine_epochs(15.0)
    gain = measured_gain(ep, band, 3, 250.0)
    oracle = analytic_bandpass_gain(15.0, 8, 30, 3, 250.0)
    assert abs(oracle - 1.0) < 1e-6
    assert abs(gain - 1.0) < 0.01


def test_filter_stopband_matches_analytic_oracle():
    band = BandSpec(8, 30, "broad")
    ep, _ = sine_epochs(2.0)
    gain = measured_gain(ep, band, 3, 250.0)
    oracle = analytic_bandpass_gain(2.0, 8, 30, 3, 250.0)
    assert gain < 0.05
    assert oracle < 0.05
    assert gain == pytest.approx(oracle, abs=5e-3)


def test_filter_linearity():
    rng = np.random.default_rng(3)
    band = BandSpec(8, 30, "broad")
    x = make_epochs(rng.standard_normal((1, 2, 800)))
    y = make_epochs(rng.standard_normal((1, 2, 800)))
    combo = make_epochs(2.5 * x.data - 1.5 * y.data)
    lhs = bandpass_filter(combo, band, 3).data
    rhs = (2.5 * bandpass_filter(x, band, 3).data
           - 1.5 * bandpass_filter(y, band, 3).data)
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_filter_zero_phase():
    ep, _ = sine_epochs(15.0, seconds=4.0)
    out = bandpass_filter(ep, BandSpec(8, 30, "broad"), 3)
    edge = 250
    a = ep.data[0, 0, edge:-edge]
    b = out.data[0, 0, edge:-edge]
    lags = np.arange(-20, 21)
    corr = [np.dot(a[max(0, lag): len(a) + min(0, lag)],
                   b[max(0, -lag): len(b) + min(0, -lag)]) for lag in lags]
    assert lags[int(np.argmax(corr))] == 0


def test_filter_rejects_band_at_nyquist():
    ep = make_epochs(np.zeros((1, 1, 500)), fs=50.0)
    with pytest.raises(ConfigError, match="Nyquist"):
        bandpass_filter(ep, BandSpec(8, 25.0, "bad"), 3)


def test_filter_order_range():
    ep = make_epochs(np.zeros((1, 1, 500)))
    with pytest.raises(ConfigError, match="order"):
        bandpass_filter(ep, BandSpec(8, 30, "b"), 0)
    with pytest.raises(ConfigError, match="order"):
        bandpass_filter(ep, BandSpec(8, 30, "b"), 11)


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def test_segment_full_range_is_identity():
    rng = np.random.default_rng(5)
    ep = make_epochs(rng.standard_normal((2, 3, 50)), labels=[0, 1])
    out = segment(ep, 0, 50)
    assert np.array_equal(out.data, ep.data)
    assert np.array_equal(out.labels, ep.labels)


def test_segment_trial_window():
    # the sample range [625, 1375) keeps exactly 750 samples per trial
    ep = make_epochs(np.zeros((4, 2, 1500)))
    out = segment(ep, 625, 1375)
    assert out.n_samples == 750


def test_segment_empty_range_rejected():
    ep = make_epochs(np.zeros((1, 1, 10)))
    with pytest.raises(ConfigError):
        segment(ep, 5, 5)
    with pytest.raises(ConfigError):
        segment(ep, -1, 5)
    with pytest.raises(ConfigError):
        segment(ep, 0, 11)


# ---------------------------------------------------------------------------
# ensemble normalization
# ---------------------------------------------------------------------------


def test_ensemble_two_trial_values():
    # values {1, 3}: mean 2, unbiased std sqrt(2) -> +/- 1/sqrt(2)
    ep = make_epochs(np.array([[[1.0]], [[3.0]]]))
    out = ensemble_normalize(ep)
    assert out.data[:, 0, 0] == pytest.approx([-0.70711, 0.70711], abs=1e-5)


def test_ensemble_constant_trials_zeroed():
    ep = make_epochs(np.full((5, 2, 4), 3.7))
    out = ensemble_normalize(ep)
    assert np.array_equal(out.data, np.zeros((5, 2, 4)))


def test_ensemble_moments():
    rng = np.random.default_rng(8)
    ep = make_epochs(rng.standard_normal((20, 3, 30)) * 4 + 2)
    out = ensemble_normalize(ep)
    assert np.max(np.abs(out.data.mean(axis=0))) < 1e-10
    assert np.max(np.abs(out.data.std(axis=0, ddof=1) - 1)) < 1e-10


def test_ensemble_idempotent():
    rng = np.random.default_rng(9)
    ep = make_epochs(rng.standard_normal((10, 2, 20)))
    once = ensemble_normalize(ep)
    twice = ensemble_normalize(once)
    assert np.max(np.abs(twice.data - once.data)) < 1e-9


def test_ensemble_permutation_equivariant():
    rng = np.random.default_rng(10)
    ep = make_epochs(rng.standard_normal((6, 2, 15)))
    perm = rng.permutation(6)
    direct = ensemble_normalize(make_epochs(ep.data[perm]))
    indirect = ensemble_normalize(ep).data[perm]
    assert np.max(np.abs(direct.data - indirect)) < 1e-12


def test_ensemble_single_trial_rejected():
    with pytest.raises(ConfigError, match="2 trials"):
        ensemble_normalize(make_epochs(np.zeros((1, 1, 5))))


def test_pick_channels():
    rng = np.random.default_rng(11)
    ep = make_epochs(rng.standard_normal((2, 4, 10)), labels=[0, 1])
    sub = ep.pick_channels([3, 1])
    assert sub.n_channels == 2
    assert np.array_equal(sub.data[:, 0], ep.data[:, 3])
    assert sub.channel_names == ["ch03", "ch01"]
    assert [c.index for c in sub.channels] == [0, 1]
    with pytest.raises(ConfigError):
        ep.pick_channels([0, 0])
