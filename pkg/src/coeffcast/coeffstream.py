"""Coefficient data model, the ``.coeff`` binary format, stream split/merge and smoothing.

Column layout of a frame (184 floats)::

    0-2     head pose, axis-angle (rad)
    3-5     jaw pose, axis-angle (rad)
    6-55    expression coefficients
    56-183  detail latent
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    CorruptionError,
    DataError,
    FormatError,
    ParameterError,
    ShapeError,
    ValidationError,
)

FPS = 30
NUM_COLUMNS = 184
HEAD = slice(0, 3)
JAW = slice(3, 6)
EXPRESSION = slice(6, 56)
DETAIL = slice(56, 184)
MOUTH_DETAIL = slice(3, 184)
HEAD_DIM = 3
MOUTH_DETAIL_DIM = 181
# within a mouth/detail row: jaw+expression first, then the detail latent
MOUTH_BLOCK = slice(0, 53)
DETAIL_BLOCK = slice(53, 181)

MAGIC = b"VTCF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")
HEADER_SIZE = _HEADER.size

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CoefficientSequence:
    frames: np.ndarray
    clip_id: str = ""
    fps: int = FPS

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2:
            raise ShapeError(f"frames must be 2-D, got shape {frames.shape}")
        if not np.issubdtype(frames.dtype, np.floating):
            frames = frames.astype(np.float64)
        frames = np.array(frames, copy=True)
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return self.frames.shape[0]

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class HeadPoseStream:
    frames: np.ndarray

    def __post_init__(self):
        _check_stream(self.frames, HEAD_DIM, "head pose")


@dataclass(frozen=True)
class MouthDetailStream:
    frames: np.ndarray

    def __post_init__(self):
        _check_stream(self.frames, MOUTH_DETAIL_DIM, "mouth/detail")


def _check_stream(frames, width, name):
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != width:
        raise ShapeError(f"{name} stream must be T x {width}, got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValidationError(f"{name} stream has non-finite entries")


@dataclass(frozen=True)
class Violation:
    message: str
    frame: int | None = None
    column: int | None = None

    def __str__(self):
        where = []
        if self.frame is not None:
            where.append(f"frame {self.frame}")
        if self.column is not None:
            where.append(f"column {self.column}")
        return f"{', '.join(where)}: {self.message}" if where else self.message


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)

    def __str__(self):
        return "valid" if self.ok else "; ".join(str(v) for v in self.violations)


def validate_sequence(seq) -> ValidationReport:
    """List every broken invariant; an empty report means the sequence is valid.

    Accepts a :class:`CoefficientSequence` or a bare matrix so that malformed
    data can be inspected without being constructed first.
    """
    frames = np.asarray(seq.frames if isinstance(seq, CoefficientSequence) else seq)
    report = ValidationReport()
    if frames.ndim != 2:
        report.violations.append(Violation(f"expected a 2-D matrix, got {frames.ndim}-D"))
        return report
    T, C = frames.shape
    if T < 1:
        report.violations.append(Violation("sequence has no frames (T >= 1 required)"))
    if C != NUM_COLUMNS:
        report.violations.append(
            Violation(f"column count {C} != {NUM_COLUMNS}")
        )
    bad_t, bad_c = np.nonzero(~np.isfinite(frames))
    for t, c in zip(bad_t, bad_c):
        report.violations.append(Violation("non-finite value", int(t), int(c)))
    rot = frames[:, : min(C, 6)]
    with np.errstate(invalid="ignore"):
        out_t, out_c = np.nonzero(np.abs(rot) > math.pi)
    for t, c in zip(out_t, out_c):
        report.violations.append(
            Violation(f"rotation {rot[t, c]:.6g} outside [-pi, pi]", int(t), int(c))
        )
    return report


def _require_valid(seq):
    report = validate_sequence(seq)
    if not report.ok:
        raise ValidationError(f"invalid coefficient sequence: {report.violations[0]}")


def write_coeff_file(seq: CoefficientSequence, path) -> None:
    _require_valid(seq)
    T, C = seq.frames.shape
    payload = np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, T, C))
        fh.write(payload)


def read_coeff_file(path, clip_id: str | None = None) -> CoefficientSequence:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER_SIZE:
        raise FormatError(f"{path}: file shorter than the {HEADER_SIZE}-byte header")
    magic, version, T, C = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if C != NUM_COLUMNS:
        raise FormatError(f"{path}: column count {C} != {NUM_COLUMNS}")
    if T < 1:
        raise FormatError(f"{path}: header declares zero frames")
    expected = T * C * 4
    body = len(data) - HEADER_SIZE
    if body < expected:
        raise CorruptionError(f"{path}: payload truncated ({body} of {expected} bytes)")
    if body > expected:
        raise CorruptionError(f"{path}: {body - expected} trailing bytes after payload")
    frames = np.frombuffer(data, dtype="<f4", count=T * C, offset=HEADER_SIZE)
    frames = frames.reshape(T, C).astype(np.float32)
    seq = CoefficientSequence(frames, clip_id=path.stem if clip_id is None else clip_id)
    report = validate_sequence(seq)
    if not report.ok:
        raise ValidationError(f"{path}: {report.violations[0]}")
    return seq


def split_streams(seq: CoefficientSequence):
    """Columns 0-2 and 3-183. Only structure and finiteness are checked, not rotation range."""
    frames = np.asarray(getattr(seq, "frames", seq))
    if frames.ndim != 2 or frames.shape[1] != NUM_COLUMNS:
        raise ShapeError(f"expected T x {NUM_COLUMNS} frames, got {frames.shape}")
    if not np.all(np.isfinite(frames)):
        raise ValidationError("cannot split a sequence with non-finite values")
    seq = seq if isinstance(seq, CoefficientSequence) else CoefficientSequence(frames)
    return HeadPoseStream(seq.frames[:, HEAD]), MouthDetailStream(seq.frames[:, MOUTH_DETAIL])


def concat_streams(head, mouth, clip_id: str = "") -> CoefficientSequence:
    h = np.asarray(getattr(head, "frames", head))
    m = np.asarray(getattr(mouth, "frames", mouth))
    if h.ndim != 2 or m.ndim != 2 or h.shape[1] != HEAD_DIM or m.shape[1] != MOUTH_DETAIL_DIM:
        raise ShapeError(f"stream widths must be 3 and 181, got {h.shape} and {m.shape}")
    if h.shape[0] != m.shape[0]:
        raise ShapeError(f"stream lengths differ: {h.shape[0]} vs {m.shape[0]}")
    dtype = np.result_type(h.dtype, m.dtype)
    return CoefficientSequence(np.concatenate([h, m], axis=1).astype(dtype), clip_id=clip_id)


def smooth_sequence(seq: CoefficientSequence, window: int = 4, weights=None) -> CoefficientSequence:
    """Causal weighted moving average.

    Output frame ``t`` is ``sum_k weights[k] * x[t - window + 1 + k]``; indices
    before the first frame clamp to frame 0, so the output keeps the input
    length and no future frame leaks in.
    """
    if int(window) != window or window < 1:
        raise ParameterError(f"window must be a positive integer, got {window!r}")
    window = int(window)
    if weights is None:
        weights = np.full(window, 1.0 / window)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (window,):
        raise ParameterError(f"expected {window} weights, got {weights.shape}")
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ParameterError("weights must be non-negative and sum to 1")
    frames = np.asarray(seq.frames if isinstance(seq, CoefficientSequence) else seq)
    out = kernels.causal_smooth(frames, weights)
    clip_id = seq.clip_id if isinstance(seq, CoefficientSequence) else ""
    return CoefficientSequence(out, clip_id=clip_id)


# -- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    coeff_path: str
    wav_path: str
    split: str


@dataclass
class ClipManifest:
    entries: list
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def split(self, name):
        return [e for e in self.entries if e.split == name]

    def resolve(self, relpath):
        return self.root / relpath

    def validate(self, check_files=True):
        seen = set()
        for e in self.entries:
            if e.clip_id in seen:
                raise DataError(f"duplicate clip_id {e.clip_id!r} in manifest")
            seen.add(e.clip_id)
            if e.split not in SPLITS:
                raise DataError(f"clip {e.clip_id!r}: unknown split {e.split!r}")
            if check_files:
                for p in (e.coeff_path, e.wav_path):
                    if not self.resolve(p).is_file():
                        raise DataError(f"clip {e.clip_id!r}: missing file {self.resolve(p)}")


def write_manifest(manifest: ClipManifest, path) -> None:
    lines = [
        json.dumps(
            {"clip_id": e.clip_id, "coeff_path": e.coeff_path, "wav_path": e.wav_path, "split": e.split},
            sort_keys=True,
        )
        for e in manifest.entries
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path, check_files=True) -> ClipManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            entries.append(
                ManifestEntry(obj["clip_id"], obj["coeff_path"], obj["wav_path"], obj["split"])
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}:{lineno}: bad manifest line ({exc})") from exc
    manifest = ClipManifest(entries, root=path.parent)
    manifest.validate(check_files=check_files)
    return manifest


def coeff_path_for(out_dir, clip_id):
    return os.path.join(out_dir, f"{clip_id}.coeff")
