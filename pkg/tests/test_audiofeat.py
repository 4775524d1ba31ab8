import math

import numpy as np
import pytest

from coeffcast import audiofeat as af
from coeffcast.errors import AlignmentError, FormatError, LengthError, ParameterError


def test_silence_wav_round_trip(tmp_path):
    af.write_wav(tmp_path / "s.wav", np.zeros(16000))
    x = af.load_wav(tmp_path / "s.wav")
    assert x.shape == (16000,) and not x.any()


def test_square_wave_scaling(tmp_path):
    sq = np.where(np.arange(800) % 40 < 20, 32767, -32767) / 32768.0
    af.write_wav(tmp_path / "q.wav", sq)
    x = af.load_wav(tmp_path / "q.wav")
    assert set(np.unique(x)) == {32767 / 32768, -32767 / 32768}


def test_wrong_rate_and_channels(tmp_path):
    import wave

    for name, rate, ch in (("r.wav", 44100, 1), ("c.wav", 16000, 2)):
        with wave.open(str(tmp_path / name), "wb") as wf:
            wf.setnchannels(ch)
            wf.setsampwidth(2)
            wf.setframerate(rate)
            wf.writeframes(bytes(400))
        with pytest.raises(FormatError):
            af.load_wav(tmp_path / name)


def test_silence_hits_floor():
    mel = af.mel_spectrogram(np.zeros(5000)).mel
    assert mel.shape == (math.ceil(5000 / 533), 80)
    assert np.all(mel == math.log(1e-5))


def test_too_short():
    with pytest.raises(LengthError):
        af.mel_spectrogram(np.zeros(1023))


def dft_power(frame, n_fft):
    """Direct DFT, independent of numpy.fft."""
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(n_fft)[None, :]
    basis = np.exp(-2j * np.pi * k * n / n_fft)
    return np.abs(basis @ frame) ** 2


def test_sine_argmax_in_440_band():
    t = np.arange(16000) / 16000
    x = 0.5 * np.sin(2 * np.pi * 440 * t)
    mel = af.mel_spectrogram(x).mel
    # the 440 Hz band from analytic HTK edges: triangles whose support contains 440
    edges = 700 * (10 ** (np.linspace(0, 2595 * np.log10(1 + 8000 / 700), 82) / 2595) - 1)
    candidates = [b for b in range(80) if edges[b] < 440 < edges[b + 2]]
    # independent filter response on one interior frame
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(1024) / 1024)
    power = dft_power(x[5000 - 512:5000 + 512] * win, 1024)
    freqs = np.arange(513) * 16000 / 1024
    resp = []
    for b in range(80):
        lo, c, hi = edges[b], edges[b + 1], edges[b + 2]
        tri = np.clip(np.minimum((freqs - lo) / (c - lo), (hi - freqs) / (hi - c)), 0, None)
        resp.append(tri @ power)
    expected = int(np.argmax(resp))
    assert expected in candidates
    interior = mel[2:-2]
    assert np.all(interior.argmax(axis=1) == expected)


def test_power_scaling_gain(rng):
    noise = rng.standard_normal(16000) * 0.1
    a = af.mel_spectrogram(noise).mel
    b = af.mel_spectrogram(2 * noise).mel
    np.testing.assert_allclose(b - a, math.log(4), atol=0.1)


def test_time_shift_covariance(rng):
    x = rng.standard_normal(12000) * 0.1
    shifted = np.concatenate([rng.standard_normal(533) * 0.1, x])
    a = af.mel_spectrogram(x).mel
    b = af.mel_spectrogram(shifted).mel
    n = len(a)
    np.testing.assert_allclose(b[3 : n - 2], a[2 : n - 3], atol=1e-6)


def test_deterministic(rng):
    x = rng.standard_normal(4000)
    assert af.mel_spectrogram(x).mel.tobytes() == af.mel_spectrogram(x).mel.tobytes()


def test_normalize_flag(rng):
    mel = af.mel_spectrogram(rng.standard_normal(8000), normalize=True).mel
    np.testing.assert_allclose(mel.mean(0), 0, atol=1e-9)


def feat(rows):
    return af.AudioFeatureSequence(np.zeros((rows, 80)))


def test_align():
    assert len(af.align_to_frames(feat(91), 90)) == 90
    out = af.align_to_frames(feat(89), 90)
    assert len(out) == 90 and np.all(out.mel[-1] == af.FLOOR_VALUE)
    with pytest.raises(AlignmentError):
        af.align_to_frames(feat(80), 90)


def test_window_pool(rng):
    mel = rng.standard_normal((24, 80))
    tok = af.window_pool(mel, 12)
    assert tok.shape == (2, 960)
    np.testing.assert_array_equal(af.window_pool(mel, 1), mel)
    tok = af.window_pool(rng.standard_normal((25, 80)), 12)
    assert tok.shape == (3, 960)
    tail = af.unpool(tok, 12)[25:]
    assert tail.shape == (11, 80) and np.all(tail == af.FLOOR_VALUE)
    np.testing.assert_array_equal(af.unpool(af.window_pool(mel, 12), 12), mel)
    with pytest.raises(ParameterError):
        af.window_pool(mel, 0)


def test_sliding_tokens_match_pool(rng):
    mel = rng.standard_normal((36, 80))
    np.testing.assert_array_equal(af.sliding_tokens(mel, 12, np.array([0, 12, 24])), af.window_pool(mel, 12))


def test_frame_rms(rng):
    x = np.ones(5330) * 0.5
    rms = af.frame_rms(x, 10)
    assert rms.shape == (10,)
    assert rms[3] == pytest.approx(0.5)
