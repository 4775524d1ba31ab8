"""Stage functions shared by the CLI and the test-suite: data loading, training, inference, evaluation."""

from __future__ import annotations

import json
import logging
import os
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__, audiofeat, metrics
from .coeffstream import (
    CoefficientSequence,
    coeff_path_for,
    concat_streams,
    read_coeff_file,
    read_manifest,
    validate_sequence,
    write_coeff_file,
)
from .config import RunConfig
from .errors import DataError, ValidationError
from .predictor import autoregressive_infer, load_predictors, save_predictors, train_predictors
from .vqvae import load_vqvae, save_vqvae, select_stream, train_vqvae

log = logging.getLogger(__name__)


def configure_threads():
    n = os.environ.get("COEFFCAST_THREADS")
    if n:
        torch.set_num_threads(max(1, int(n)))


@dataclass
class Clip:
    clip_id: str
    frames: np.ndarray
    mel: np.ndarray
    energy: np.ndarray


def load_clip(manifest, entry, normalize_audio=False) -> Clip:
    seq = read_coeff_file(manifest.resolve(entry.coeff_path), clip_id=entry.clip_id)
    samples = audiofeat.load_wav(manifest.resolve(entry.wav_path))
    feat = audiofeat.align_to_frames(audiofeat.mel_spectrogram(samples, normalize_audio), len(seq))
    energy = audiofeat.frame_rms(samples, len(seq))
    return Clip(entry.clip_id, np.asarray(seq.frames, dtype=np.float32), feat.mel.astype(np.float32), energy)


def load_split(manifest, split, normalize_audio=False):
    return [load_clip(manifest, e, normalize_audio) for e in manifest.split(split)]


def manifest_path(cfg: RunConfig) -> Path:
    p = Path(cfg.dataset)
    return p if p.suffix == ".jsonl" else p / "manifest.jsonl"


def run_metadata(cfg: RunConfig, command: str, **extra):
    meta = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "mode": cfg.mode,
        "versions": {
            "coeffcast": __version__,
            "numpy": np.__version__,
            "torch": torch.__version__,
            "python": platform.python_version(),
        },
    }
    meta.update(extra)
    return meta


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def vq_path(out, selector):
    return Path(out) / f"vq_{selector}.ckpt"


def predictor_path(out):
    return Path(out) / "predictor.ckpt"


def stage_train_vqvae(cfg: RunConfig, selector: str, manifest=None):
    cfg.validate()
    manifest = manifest or read_manifest(manifest_path(cfg))
    train = load_split(manifest, "train", cfg.normalize_audio)
    if not train:
        raise DataError("training split is empty")
    val = load_split(manifest, "val", cfg.normalize_audio)
    vq_cfg = cfg.vq_config(selector)
    model, history = train_vqvae(
        [select_stream(c.frames, selector) for c in train],
        vq_cfg,
        cfg.vq_epochs,
        seed=cfg.seed,
        val_clips=[select_stream(c.frames, selector) for c in val] or None,
    )
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_vqvae(model, vq_path(out, selector), extra={"seed": cfg.seed, "selector": selector})
    write_json(out / f"vq_{selector}_history.json", history)
    return model, history


def stage_train_predictor(cfg: RunConfig, manifest=None):
    cfg.validate()
    manifest = manifest or read_manifest(manifest_path(cfg))
    train = load_split(manifest, "train", cfg.normalize_audio)
    if not train:
        raise DataError("training split is empty")
    streams = {}
    for selector in cfg.selectors:
        path = vq_path(cfg.out, selector)
        if not path.is_file():
            raise DataError(f"missing VQ-VAE checkpoint {path}; run train-vqvae first")
        vq = load_vqvae(path)
        pcfg = cfg.predictor_config(selector)
        streams[selector] = (pcfg, vq, [(select_stream(c.frames, selector), c.mel) for c in train])
    models, history = train_predictors(streams, cfg.predictor_epochs, seed=cfg.seed)
    save_predictors(models, predictor_path(cfg.out), extra={"seed": cfg.seed, "mode": cfg.mode})
    write_json(Path(cfg.out) / "predictor_history.json", history)
    return models, history


def load_models(out):
    models = load_predictors(predictor_path(out))
    vqs = {}
    for name in models:
        path = vq_path(out, name)
        if not path.is_file():
            raise DataError(f"missing VQ-VAE checkpoint {path}")
        vqs[name] = load_vqvae(path)
    return models, vqs


def infer_clip(models, vqs, mel, T_out, mode=None, clip_id="") -> CoefficientSequence:
    head, mouth = autoregressive_infer(models, vqs, mel, T_out, mode)
    seq = concat_streams(head.astype(np.float32), mouth.astype(np.float32), clip_id=clip_id)
    report = validate_sequence(seq)
    if not report.ok:
        raise ValidationError(f"inferred clip {clip_id!r} is invalid: {report.violations[0]}")
    return seq


def stage_infer(cfg: RunConfig, manifest=None, split=None, pred_dir=None, mode=None):
    manifest = manifest or read_manifest(manifest_path(cfg))
    split = split or cfg.infer_split
    pred_dir = Path(pred_dir or Path(cfg.out) / "pred")
    pred_dir.mkdir(parents=True, exist_ok=True)
    models, vqs = load_models(cfg.out)
    written = []
    for clip in load_split(manifest, split, cfg.normalize_audio):
        seq = infer_clip(models, vqs, clip.mel, len(clip.frames), mode, clip.clip_id)
        path = coeff_path_for(pred_dir, clip.clip_id)
        write_coeff_file(seq, path)
        written.append(path)
    return written


def stage_eval(cfg: RunConfig, pred_dir, manifest=None, split=None, out_dir=None):
    manifest = manifest or read_manifest(manifest_path(cfg))
    split = split or cfg.infer_split
    clips = load_split(manifest, split, cfg.normalize_audio)
    preds, gts, energies, ids = [], [], [], []
    for clip in clips:
        path = Path(coeff_path_for(pred_dir, clip.clip_id))
        if not path.is_file():
            raise DataError(f"missing prediction {path}")
        preds.append(read_coeff_file(path).frames)
        gts.append(clip.frames)
        energies.append(clip.energy)
        ids.append(clip.clip_id)
    report, rows = metrics.evaluate_clips(preds, gts, energies, ids, cfg.diversity_pairs, cfg.diversity_seed)
    out_dir = Path(out_dir or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "report.json", report.to_dict())
    metrics.write_per_clip_csv(rows, out_dir / "per_clip.csv")
    return report, rows


def run_all(cfg: RunConfig):
    """synth -> train VQ-VAE(s) -> train predictor(s) -> infer -> eval, under ``cfg.out``."""
    from .synthgen import generate_dataset

    cfg.validate()
    configure_threads()
    manifest = generate_dataset(cfg.synth, cfg.dataset)
    for selector in cfg.selectors:
        stage_train_vqvae(cfg, selector, manifest)
    stage_train_predictor(cfg, manifest)
    pred_dir = Path(cfg.out) / "pred"
    stage_infer(cfg, manifest, pred_dir=pred_dir)
    report, _ = stage_eval(cfg, pred_dir, manifest)
    write_json(Path(cfg.out) / "run_metadata.json", run_metadata(cfg, "run"))
    return report
