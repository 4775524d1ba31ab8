"""16 kHz WAV loading, frame-synchronous log-mel features and window pooling."""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, FormatError, LengthError, ParameterError

SAMPLE_RATE = 16000
HOP = 533  # round(16000 / 30): one mel row per 30 fps animation frame
N_FFT = 1024
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
LOG_FLOOR = 1e-5
FLOOR_VALUE = math.log(LOG_FLOOR)
MAX_DRIFT = 3


@dataclass(frozen=True)
class AudioFeatureSequence:
    mel: np.ndarray
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP

    def __len__(self):
        return self.mel.shape[0]


def load_wav(path) -> np.ndarray:
    """Read a PCM16 mono 16 kHz WAV as float64 samples in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            rate, channels, width = wf.getframerate(), wf.getnchannels(), wf.getsampwidth()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a readable PCM WAV ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE} (no resampling)")
    if channels != 1:
        raise FormatError(f"{path}: {channels} channels, expected mono")
    if width != 2:
        raise FormatError(f"{path}: {8 * width}-bit samples, expected PCM16")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, samples) -> None:
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.astype("<i2").tobytes())


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_mels=N_MELS, f_min=F_MIN, f_max=F_MAX):
    """Hz positions of the n_mels + 2 triangle corners (HTK mel scale)."""
    return mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))


def mel_filterbank(n_fft=N_FFT, n_mels=N_MELS, sr=SAMPLE_RATE, f_min=F_MIN, f_max=F_MAX):
    edges = mel_band_edges(n_mels, f_min, f_max)
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sr)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lower) / (center - lower)
    down = (upper - freqs[None, :]) / (upper - center)
    return np.maximum(0.0, np.minimum(up, down))


_FILTERS = mel_filterbank()
_WINDOW = np.hanning(N_FFT + 1)[:-1]  # periodic Hann


def mel_spectrogram(samples, normalize: bool = False) -> AudioFeatureSequence:
    """Log-mel power spectrogram with one row per 533-sample hop.

    Row ``t`` is centred on sample ``t * HOP`` (reflection padded at both
    ends), giving ``ceil(len / HOP)`` rows. ``normalize`` standardizes each
    band over the clip.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ParameterError("samples must be a 1-D buffer")
    if x.size < N_FFT:
        raise LengthError(f"need at least {N_FFT} samples, got {x.size}")
    n_rows = -(-x.size // HOP)
    padded = np.pad(x, N_FFT // 2, mode="reflect")
    idx = np.arange(n_rows)[:, None] * HOP + np.arange(N_FFT)[None, :]
    spec = np.fft.rfft(padded[idx] * _WINDOW, axis=1)
    power = spec.real**2 + spec.imag**2
    mel = np.log(np.maximum(power @ _FILTERS.T, LOG_FLOOR))
    if normalize:
        mel = (mel - mel.mean(0)) / (mel.std(0) + 1e-8)
    return AudioFeatureSequence(mel)


def frame_rms(samples, n_frames=None) -> np.ndarray:
    """Per-frame RMS energy over the same centred windows as the mel rows."""
    x = np.asarray(samples, dtype=np.float64)
    n_rows = -(-x.size // HOP)
    padded = np.pad(x, N_FFT // 2, mode="constant")
    idx = np.arange(n_rows)[:, None] * HOP + np.arange(N_FFT)[None, :]
    rms = np.sqrt((padded[idx] ** 2).mean(axis=1))
    if n_frames is not None:
        rms = rms[:n_frames]
        if rms.size < n_frames:
            rms = np.pad(rms, (0, n_frames - rms.size))
    return rms


def align_to_frames(feat: AudioFeatureSequence, n_frames: int) -> AudioFeatureSequence:
    rows = feat.mel.shape[0]
    if abs(rows - n_frames) > MAX_DRIFT:
        raise AlignmentError(
            f"audio has {rows} feature rows for {n_frames} coefficient frames "
            f"(drift > {MAX_DRIFT})"
        )
    if rows >= n_frames:
        mel = feat.mel[:n_frames]
    else:
        pad = np.full((n_frames - rows, feat.mel.shape[1]), FLOOR_VALUE)
        mel = np.concatenate([feat.mel, pad], axis=0)
    return AudioFeatureSequence(mel, feat.sample_rate, feat.hop)


def pad_rows(mel, w):
    mel = np.asarray(mel)
    extra = (-mel.shape[0]) % w
    if extra:
        mel = np.concatenate([mel, np.full((extra, mel.shape[1]), FLOOR_VALUE)], axis=0)
    return mel


def window_pool(feat, w: int) -> np.ndarray:
    """Non-overlapping window tokens: token k flattens rows k*w .. k*w+w-1.

    Returns an array of shape ``(ceil(T / w), w * M)``; the tail is padded
    with floor rows.
    """
    if int(w) != w or w < 1:
        raise ParameterError(f"window length must be >= 1, got {w!r}")
    w = int(w)
    mel = pad_rows(getattr(feat, "mel", feat), w)
    return mel.reshape(mel.shape[0] // w, w * mel.shape[1])


def unpool(tokens, w: int, n_mels: int = N_MELS) -> np.ndarray:
    tokens = np.asarray(tokens)
    return tokens.reshape(tokens.shape[0] * w, n_mels)


def sliding_tokens(feat, w: int, starts) -> np.ndarray:
    """Audio tokens for windows beginning at arbitrary frames ``starts``."""
    mel = np.asarray(getattr(feat, "mel", feat))
    starts = np.asarray(starts)
    need = int(starts.max()) + w if starts.size else 0
    if need > mel.shape[0]:
        mel = np.concatenate([mel, np.full((need - mel.shape[0], mel.shape[1]), FLOOR_VALUE)])
    idx = starts[:, None] + np.arange(w)[None, :]
    return mel[idx].reshape(len(starts), w * mel.shape[1])
