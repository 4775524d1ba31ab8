import numpy as np
import pytest
from scipy.linalg import expm

from coeffcast import meshexport as mx
from coeffcast.errors import ShapeError, ValidationError


@pytest.fixture(scope="module")
def model():
    return mx.toy_model()


def skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def oracle_frame(model, frame):
    """Matrix exponential of the skew matrix plus an explicit loop over basis columns."""
    verts = model.template.copy()
    for k in range(50):
        verts = verts + model.basis[:, :, k] * frame[6 + k]
    r_jaw = expm(skew(frame[3:6]))
    for i in np.nonzero(model.jaw_mask)[0]:
        verts[i] = r_jaw @ (verts[i] - model.jaw_pivot) + model.jaw_pivot
    r_head = expm(skew(frame[0:3]))
    return np.array([r_head @ v for v in verts])


def test_template_asset(model):
    assert 400 <= model.template.shape[0] <= 600
    assert model.faces.max() < model.template.shape[0]
    assert model.jaw_mask.any() and not model.jaw_mask.all()


def test_zero_frame_is_template(model):
    np.testing.assert_array_equal(mx.apply_frame(model, np.zeros(56)), model.template)


def test_half_turn_about_z(model):
    out = mx.apply_frame(model, np.r_[0, 0, np.pi, np.zeros(53)])
    np.testing.assert_allclose(out[:, :2], -model.template[:, :2], atol=1e-12)
    np.testing.assert_allclose(out[:, 2], model.template[:, 2], atol=1e-12)


def test_random_frames_match_oracle(model, rng):
    for _ in range(5):
        frame = rng.standard_normal(56) * 0.4
        np.testing.assert_allclose(mx.apply_frame(model, frame), oracle_frame(model, frame), atol=1e-9)


def test_linear_in_expression_at_zero_pose(model, rng):
    a, b = rng.standard_normal((2, 50))
    f = lambda e: mx.apply_frame(model, np.r_[np.zeros(6), e]) - model.template
    np.testing.assert_allclose(f(2 * a - 3 * b), 2 * f(a) - 3 * f(b), atol=1e-12)


def test_head_rotation_rigid(model, rng):
    frame = np.r_[rng.standard_normal(3), np.zeros(3), rng.standard_normal(50) * 0.3]
    base = frame.copy()
    base[:3] = 0
    d = lambda v: np.linalg.norm(v[:, None] - v[None], axis=-1)
    np.testing.assert_allclose(d(mx.apply_frame(model, frame)), d(mx.apply_frame(model, base)), atol=1e-6)


def test_non_finite_rejected(model):
    frame = np.zeros(56)
    frame[10] = np.inf
    with pytest.raises(ValidationError):
        mx.apply_frame(model, frame)


def test_model_invariants():
    v = np.zeros((4, 3))
    with pytest.raises(ValidationError):
        mx.BlendshapeModel(v, np.zeros((4, 3, 50)), np.zeros(4, bool), np.zeros(3), np.zeros((1, 3), int))
    with pytest.raises(ShapeError):
        mx.BlendshapeModel(v[:3], np.zeros((3, 3, 50)), np.ones(3, bool), np.zeros(3), np.zeros((1, 3), int))


def test_export_small(tmp_path):
    verts = np.array([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]], float)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    (path,) = mx.export_obj(verts, faces, tmp_path)
    assert path.name == "frame_000000.obj"
    lines = path.read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 4
    assert sum(l.startswith("f ") for l in lines) == 2
    assert all(l[0] in "vf" for l in lines)


def test_export_count_and_round_trip(model, rng, tmp_path):
    frames = rng.standard_normal((3, 56)) * 0.2
    verts = mx.apply_sequence(model, frames)
    paths = mx.export_obj(verts, model.faces, tmp_path)
    assert len(paths) == 3
    back, faces = mx.read_obj(paths[2])
    np.testing.assert_allclose(back, verts[2], rtol=1e-8, atol=1e-9)
    np.testing.assert_array_equal(faces, model.faces)


def test_detail_debug_moves_along_normals(model):
    out = mx.detail_debug_displacement(model.template, model.faces, np.full(128, 0.5), scale=1.0)
    moved = np.linalg.norm(out - model.template, axis=1)
    np.testing.assert_allclose(moved, np.linalg.norm(np.full(128, 0.5)), rtol=1e-9)
    # outward for a convex closed surface
    assert np.all(np.linalg.norm(out, axis=1) > np.linalg.norm(model.template, axis=1))
