"""Toy blendshape head: expression offsets, jaw and head rotations, Wavefront OBJ export.

Only a visual-inspection aid. The template is a parametric ellipsoid shipped
in ``assets/template.obj``; the expression basis is a seeded set of smooth
vertex fields. Nothing here is comparable to a FLAME render.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import ShapeError, ValidationError

N_EXPRESSION = 50
TEMPLATE_NAME = "template.obj"


@dataclass(frozen=True)
class BlendshapeModel:
    template: np.ndarray  # (N, 3)
    basis: np.ndarray  # (N, 3, 50)
    jaw_mask: np.ndarray  # (N,) bool
    jaw_pivot: np.ndarray  # (3,)
    faces: np.ndarray  # (F, 3), 0-based

    def __post_init__(self):
        n = self.template.shape[0]
        if self.template.shape != (n, 3) or n < 4:
            raise ShapeError(f"template must be N x 3 with N >= 4, got {self.template.shape}")
        if self.basis.shape != (n, 3, N_EXPRESSION):
            raise ShapeError(f"basis must be {n} x 3 x {N_EXPRESSION}, got {self.basis.shape}")
        if not np.all(np.isfinite(self.basis)):
            raise ValidationError("expression basis has non-finite entries")
        if self.jaw_mask.shape != (n,) or not self.jaw_mask.any():
            raise ValidationError("jaw mask must select at least one vertex")


def ellipsoid_mesh(n_lat=20, n_lon=25, radii=(0.8, 1.0, 0.9)):
    """UV ellipsoid: two poles plus an ``(n_lat - 1) x n_lon`` ring grid, front facing +z."""
    rx, ry, rz = radii
    verts = [(0.0, ry, 0.0)]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2 * np.pi * j / n_lon
            verts.append((rx * np.sin(theta) * np.sin(phi), ry * np.cos(theta), rz * np.sin(theta) * np.cos(phi)))
    verts.append((0.0, -ry, 0.0))
    verts = np.array(verts)
    bottom = len(verts) - 1
    faces = []

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        faces.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b, c, d = ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1)
            faces += [(a, c, b), (b, c, d)]
    for j in range(n_lon):
        faces.append((ring(n_lat - 1, j), bottom, ring(n_lat - 1, j + 1)))
    return verts, np.array(faces, dtype=np.int64)


def read_obj(path):
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64)


def write_obj(path, vertices, faces):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(vertices, dtype=np.float64)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_template():
    with resources.as_file(resources.files("coeffcast") / "assets" / TEMPLATE_NAME) as p:
        return read_obj(p)


def toy_model(seed: int = 0, amplitude: float = 0.02) -> BlendshapeModel:
    """Template from the asset file plus a seeded smooth expression basis."""
    verts, faces = load_template()
    rng = np.random.default_rng(seed)
    x, y, z = verts.T
    # low-order polynomial fields, stronger on the lower front of the face
    feats = np.stack([np.ones_like(x), x, y, z, x * y, y * z, x * z, x * x, y * y, z * z], axis=1)
    weight = np.clip(0.5 - y, 0.0, None) * np.clip(z, 0.0, None)
    coef = rng.standard_normal((feats.shape[1], 3, N_EXPRESSION))
    basis = amplitude * np.einsum("nf,fck->nck", feats, coef) * weight[:, None, None]
    jaw_mask = (y < -0.25) & (z > 0.0)
    pivot = np.array([0.0, -0.1, -0.2])
    return BlendshapeModel(verts, basis, jaw_mask, pivot, faces)


def rotation_matrix(rotvec) -> np.ndarray:
    """Axis-angle to rotation matrix via the exponential map."""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def apply_frame(model: BlendshapeModel, frame) -> np.ndarray:
    """Deform the template by one ``[head 3 | jaw 3 | expression 50]`` frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[0] < 6 + N_EXPRESSION:
        raise ShapeError(f"frame needs {6 + N_EXPRESSION} values, got {frame.shape[0]}")
    frame = frame[: 6 + N_EXPRESSION]
    if not np.all(np.isfinite(frame)):
        raise ValidationError("frame has non-finite values")
    verts = model.template + model.basis @ frame[6:]
    if np.any(frame[3:6]):  # the pivot round trip is not bit-exact, so skip it at zero angle
        jaw = verts[model.jaw_mask] - model.jaw_pivot
        verts[model.jaw_mask] = jaw @ rotation_matrix(frame[3:6]).T + model.jaw_pivot
    return verts @ rotation_matrix(frame[0:3]).T


def apply_sequence(model: BlendshapeModel, frames) -> np.ndarray:
    frames = np.asarray(getattr(frames, "frames", frames))
    return np.stack([apply_frame(model, f) for f in frames])


def vertex_normals(vertices, faces):
    v = np.asarray(vertices, dtype=np.float64)
    tri = v[faces]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    normals = np.zeros_like(v)
    for k in range(3):
        np.add.at(normals, faces[:, k], fn)
    return normals / np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-12)


def detail_debug_displacement(vertices, faces, detail, scale=1e-3):
    """Debug only, not physical: push every vertex along its normal by ``scale * |detail|``."""
    return vertices + scale * float(np.linalg.norm(detail)) * vertex_normals(vertices, faces)


def export_obj(vertex_frames, faces, out_dir):
    """Write ``frame_%06d.obj`` per frame; returns the paths."""
    frames = np.asarray(vertex_frames)
    if frames.ndim != 3 or frames.shape[2] != 3:
        raise ShapeError(f"vertex frames must be T x N x 3, got {frames.shape}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, verts in enumerate(frames):
        path = out / f"frame_{t:06d}.obj"
        write_obj(path, verts, faces)
        paths.append(path)
    return paths
