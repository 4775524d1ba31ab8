"""Coefficient-level evaluation: L2 errors, discrete Fréchet distance, diversity, sync proxy."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DataError, ShapeError

L2_SCALE = 1e3
SYNC_MAX_LAG = 5


@dataclass
class EvalReport:
    pose_error: float
    mouth_error: float
    detail_error: float
    frechet_distance: float
    diversity: float
    sync_corr: float
    sync_lag_frames: float
    clip_count: int
    head_sync_corr: float = 0.0
    diversity_seed: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def to_dict(self):
        return asdict(self)


def _matrix(x):
    x = np.asarray(getattr(x, "frames", x), dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def l2_error(pred, gt, scale: float = L2_SCALE) -> float:
    """Mean over frames of the per-frame Euclidean distance, times ``scale``."""
    p, g = _matrix(pred), _matrix(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} vs ground truth {g.shape}")
    return float(np.linalg.norm(p - g, axis=1).mean() * scale)


def frechet_distance(a, b) -> float:
    """Discrete Fréchet distance under the Euclidean ground metric."""
    a, b = _matrix(a), _matrix(b)
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ShapeError("curves need at least one point")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"curve widths differ: {a.shape[1]} vs {b.shape[1]}")
    return kernels.discrete_frechet(a, b)


def diversity_pairs(n: int, pairs: int | None, seed: int):
    if n < 2:
        raise DataError(f"diversity needs at least 2 sequences, got {n}")
    pairs = n // 2 if pairs is None else min(int(pairs), n // 2)
    order = np.random.default_rng(seed).permutation(n)
    return [(int(order[2 * k]), int(order[2 * k + 1])) for k in range(pairs)]


def diversity(sequences, pairs: int | None = None, seed: int = 0) -> float:
    """Mean per-frame distance within seeded disjoint random pairs of sequences."""
    mats = [_matrix(s) for s in sequences]
    if len(mats) < 2:
        raise DataError(f"diversity needs at least 2 sequences, got {len(mats)}")
    if len({m.shape for m in mats}) != 1:
        raise ShapeError("diversity sequences must share one shape")
    dists = [np.linalg.norm(mats[i] - mats[j], axis=1).mean() for i, j in diversity_pairs(len(mats), pairs, seed)]
    return float(np.mean(dists))


class SyncResult(NamedTuple):
    corr: float
    lag: int
    degenerate: bool


def _pearson(x, y):
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if den <= 1e-12 * max(1.0, x.size):
        return None
    return float(np.clip((xc * yc).sum() / den, -1.0, 1.0))


def jaw_opening(mouth) -> np.ndarray:
    m = _matrix(mouth)
    return np.linalg.norm(m[:, :3], axis=1)


def sync_proxy(energy, signal, max_lag: int = SYNC_MAX_LAG) -> SyncResult:
    """Best lagged Pearson correlation between audio energy and a motion signal.

    ``signal`` is either a 1-D magnitude or a stream whose first three
    columns are reduced by their Euclidean norm (jaw columns of a mouth
    stream, or a head-pose stream). A positive lag means the motion trails
    the audio: ``signal[t + lag]`` is paired with ``energy[t]``.
    """
    e = np.asarray(energy, dtype=np.float64).ravel()
    s = np.asarray(signal, dtype=np.float64)
    s = s.ravel() if s.ndim == 1 else jaw_opening(s)
    if e.size != s.size:
        raise ShapeError(f"energy has {e.size} frames, motion has {s.size}")
    if e.std() == 0 or s.std() == 0:
        return SyncResult(0.0, 0, True)
    best = None
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l)):
        if lag >= 0:
            x, y = e[: e.size - lag], s[lag:]
        else:
            x, y = e[-lag:], s[: s.size + lag]
        if x.size < 3:
            continue
        r = _pearson(x, y)
        if r is not None and (best is None or r > best[0]):
            best = (r, lag)
    if best is None:
        return SyncResult(0.0, 0, True)
    return SyncResult(best[0], best[1], False)


PER_CLIP_FIELDS = ("clip_id", "pose_error", "mouth_error", "detail_error", "frechet_distance",
                   "sync_corr", "sync_lag_frames", "head_sync_corr")


def evaluate_clips(pred_frames, gt_frames, energies, clip_ids, diversity_pairs_n=None, seed=0):
    """Build the aggregate :class:`EvalReport` and per-clip rows.

    Inputs are parallel lists of ``T x 184`` predictions, ground truth and
    per-frame audio energies.
    """
    if not clip_ids:
        raise DataError("no clips to evaluate")
    rows = []
    for cid, p, g, e in zip(clip_ids, pred_frames, gt_frames, energies):
        p, g = _matrix(p), _matrix(g)
        if p.shape != g.shape:
            raise ShapeError(f"clip {cid}: prediction {p.shape} vs ground truth {g.shape}")
        sync = sync_proxy(e, p[:, 3:6])
        head_sync = sync_proxy(e, p[:, 0:3])
        rows.append({
            "clip_id": cid,
            "pose_error": l2_error(p[:, 0:3], g[:, 0:3]),
            "mouth_error": l2_error(p[:, 3:56], g[:, 3:56]),
            "detail_error": l2_error(p[:, 56:184], g[:, 56:184]),
            "frechet_distance": frechet_distance(p, g),
            "sync_corr": sync.corr,
            "sync_lag_frames": sync.lag,
            "head_sync_corr": head_sync.corr,
        })
    heads = [_matrix(p)[:, 0:3] for p in pred_frames]
    div = 0.0
    if len(heads) >= 2 and len({h.shape for h in heads}) == 1:
        div = diversity(heads, diversity_pairs_n, seed)

    def mean(key):
        return float(np.mean([r[key] for r in rows]))

    report = EvalReport(
        pose_error=mean("pose_error"),
        mouth_error=mean("mouth_error"),
        detail_error=mean("detail_error"),
        frechet_distance=mean("frechet_distance"),
        diversity=div,
        sync_corr=mean("sync_corr"),
        sync_lag_frames=mean("sync_lag_frames"),
        clip_count=len(rows),
        head_sync_corr=mean("head_sync_corr"),
        diversity_seed=seed,
    )
    return report, rows


def write_per_clip_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=PER_CLIP_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
