"""Seeded synthetic audio + coefficient clips with a known causal structure.

Audio is noise bursts at random syllable times. The jaw opening follows a
low-passed copy of the burst envelope, expression is a low-rank
mean-reverting walk nudged by the same envelope, detail is a fixed linear
map of expression plus noise, and head pose is an independent random walk
that never sees the audio.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .audiofeat import SAMPLE_RATE, write_wav
from .coeffstream import (
    DETAIL,
    EXPRESSION,
    FPS,
    HEAD,
    JAW,
    NUM_COLUMNS,
    ClipManifest,
    CoefficientSequence,
    ManifestEntry,
    write_coeff_file,
    write_manifest,
)
from .errors import ParameterError

N_EXPRESSION = 50
N_DETAIL = 128


@dataclass(frozen=True)
class SynthSpec:
    clips: int = 50
    frames: int = 300
    seed: int = 0
    syllable_rate: float = 3.0
    jaw_gain: float = 0.8
    jaw_smoothing: float = 0.5  # one-pole low-pass coefficient per frame
    head_step: float = 0.05
    head_reversion: float = 0.03
    expression_rank: int = 4
    expression_scale: float = 0.3
    expression_drive: float = 0.5
    articulation: float = 8.0
    detail_noise: float = 0.02
    audio_gain: float = 0.25

    def validate(self, window: int = 12):
        if self.clips < 1:
            raise ParameterError("clips must be >= 1")
        if self.frames < 4 * window:
            raise ParameterError(f"frames must be >= 4 * window ({4 * window})")
        if self.syllable_rate < 0:
            raise ParameterError("syllable_rate must be >= 0")
        positive = ("jaw_gain", "head_step", "head_reversion", "expression_scale",
                    "detail_noise", "audio_gain")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")
        if self.articulation < 0:
            raise ParameterError("articulation must be >= 0")
        if not 0 < self.jaw_smoothing <= 1 or self.expression_rank < 1:
            raise ParameterError("jaw_smoothing must be in (0, 1] and expression_rank >= 1")

    def to_dict(self):
        return asdict(self)


def _fixed_maps(spec: SynthSpec):
    rng = np.random.default_rng([spec.seed, 0x5EED])
    mix = rng.standard_normal((N_EXPRESSION, spec.expression_rank))
    mix *= spec.expression_scale / np.sqrt(spec.expression_rank)
    detail = rng.standard_normal((N_DETAIL, N_EXPRESSION)) / np.sqrt(N_EXPRESSION)
    mouth_open = rng.standard_normal(N_EXPRESSION)
    return mix, detail, mouth_open / np.linalg.norm(mouth_open)


def _envelope(times, onsets, amps, durs):
    env = np.zeros_like(times)
    for t0, a, d in zip(onsets, amps, durs):
        phase = (times - t0) / d
        inside = (phase >= 0) & (phase <= 1)
        env[inside] += a * np.sin(np.pi * phase[inside]) ** 2
    return env


def generate_clip(spec: SynthSpec, index: int):
    """Return ``(samples, CoefficientSequence)`` for clip ``index``."""
    spec.validate()
    T = spec.frames
    rng = np.random.default_rng([spec.seed, 1, index])
    head_rng = np.random.default_rng([spec.seed, 2, index])
    mix, detail_map, mouth_open = _fixed_maps(spec)

    duration = T / FPS
    n_samples = int(round(duration * SAMPLE_RATE))
    n_syl = rng.poisson(spec.syllable_rate * duration) if spec.syllable_rate > 0 else 0
    onsets = np.sort(rng.uniform(0.0, duration, n_syl))
    amps = rng.uniform(0.5, 1.0, n_syl)
    durs = rng.uniform(0.12, 0.25, n_syl)

    sample_env = _envelope(np.arange(n_samples) / SAMPLE_RATE, onsets, amps, durs)
    noise = rng.standard_normal(n_samples)
    samples = np.clip(spec.audio_gain * sample_env * noise, -1.0, 1.0)

    frame_env = _envelope(np.arange(T) / FPS, onsets, amps, durs)
    jaw = np.zeros(T)
    acc = 0.0
    for t in range(T):
        acc += spec.jaw_smoothing * (frame_env[t] - acc)
        jaw[t] = acc

    r = spec.expression_rank
    decay = 1.0 / 20.0
    sigma = np.sqrt(2.0 * decay)
    state = rng.standard_normal(r)
    latent = np.empty((T, r))
    drive = np.zeros(r)
    drive[0] = spec.expression_drive
    for t in range(T):
        state = state - decay * state + sigma * rng.standard_normal(r) + decay * drive * jaw[t] * 4.0
        latent[t] = state
    # jaw-locked "mouth open" direction on top of the slow random walk
    expression = latent @ mix.T + spec.articulation * jaw[:, None] * mouth_open
    detail = expression @ detail_map.T + spec.detail_noise * rng.standard_normal((T, N_DETAIL))

    head = np.empty((T, 3))
    h = head_rng.normal(0.0, spec.head_step, 3)
    for t in range(T):
        h = h - spec.head_reversion * h + spec.head_step * head_rng.standard_normal(3)
        head[t] = h
    head = np.clip(head, -np.pi, np.pi)

    frames = np.zeros((T, NUM_COLUMNS))
    frames[:, HEAD] = head
    frames[:, JAW.start] = spec.jaw_gain * jaw
    frames[:, EXPRESSION] = expression
    frames[:, DETAIL] = detail
    seq = CoefficientSequence(frames.astype(np.float32), clip_id=clip_id(index))
    return samples, seq


def clip_id(index: int) -> str:
    return f"clip_{index:04d}"


def split_for(index: int, clips: int) -> str:
    n_val = clips // 10
    n_test = clips // 10
    n_train = clips - n_val - n_test
    if index < n_train:
        return "train"
    return "val" if index < n_train + n_val else "test"


def generate_dataset(spec: SynthSpec, out_dir) -> ClipManifest:
    spec.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out}: {exc}") from exc
    entries = []
    for i in range(spec.clips):
        samples, seq = generate_clip(spec, i)
        cid = clip_id(i)
        try:
            write_coeff_file(seq, out / f"{cid}.coeff")
            write_wav(out / f"{cid}.wav", samples)
        except OSError as exc:
            raise OSError(f"failed writing clip {cid} under {out}: {exc}") from exc
        entries.append(ManifestEntry(cid, f"{cid}.coeff", f"{cid}.wav", split_for(i, spec.clips)))
    manifest = ClipManifest(entries, root=out)
    write_manifest(manifest, out / "manifest.jsonl")
    return manifest
