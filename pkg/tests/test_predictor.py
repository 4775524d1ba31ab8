import math

import numpy as np
import pytest
import torch

from coeffcast import predictor as pr
from coeffcast import vqvae as vq
from coeffcast.coeffstream import concat_streams, validate_sequence
from coeffcast.errors import ConfigError, DataError, ParameterError, ShapeError

from test_vqvae import TINY, central_difference_check

PTINY = dict(d_model=16, heads=2, blocks=1, ff_dim=32, batch_size=2, lr=1e-3, lr_final=1e-4, decay_epochs=2)


def tiny_predictor(w=3, seed=0, **kw):
    torch.manual_seed(seed)
    cfg = pr.PredictorConfig(w=w, **{**PTINY, **kw})
    return pr.WindowPredictor(cfg).eval()


def tiny_vq(input_dim, seed=0):
    torch.manual_seed(seed)
    return vq.VQVAE(vq.VqConfig(input_dim=input_dim, **TINY)).eval()


def test_window_tokens():
    cfg = pr.PredictorConfig(w=2, d_model=4, heads=1)
    t = pr.build_window_tokens(np.zeros(160), np.zeros((0, 4)), cfg)
    assert t.roles == ["audio", "motion", "motion"] and not t.motion.any()
    past = np.arange(4.0)[None] + 1
    t = pr.build_window_tokens(np.zeros(160), past, cfg)
    np.testing.assert_array_equal(t.motion, [[0, 0, 0, 0], [1, 2, 3, 4]])
    with pytest.raises(ShapeError):
        pr.build_window_tokens(np.zeros(100), past, cfg)
    with pytest.raises(ShapeError):
        pr.build_window_tokens(np.zeros(160), np.zeros((3, 4)), cfg)


def test_mid_clip_slice(rng):
    cfg = pr.PredictorConfig(w=3, d_model=4, heads=1)
    lat = rng.standard_normal((10, 4))
    t = 6
    tok = pr.build_window_tokens(np.zeros(240), lat[t - 3 + 1: t + 1], cfg)
    np.testing.assert_array_equal(tok.motion, lat[4:7].astype(np.float32))


def test_mask_entries():
    m = pr.attention_mask(["audio", "motion", "motion", "audio"])
    inf = torch.isinf(m)
    assert inf[0, 0] and inf[0, 3] and inf[3, 0] and inf[3, 3]
    assert inf.sum() == 4 and (m[~inf] == 0).all()


def hand_attention(x, wq, wk, wv, roles):
    """Scalar loops: softmax((q.k + mask) / sqrt(D)) v for each query."""
    n, d = len(x), len(x[0])
    proj = lambda W, v: [sum(v[a] * W[b][a] for a in range(d)) for b in range(d)]
    q = [proj(wq, t) for t in x]
    k = [proj(wk, t) for t in x]
    v = [proj(wv, t) for t in x]
    out = []
    for i in range(n):
        scores = []
        for j in range(n):
            if roles[i] == "audio" and roles[j] == "audio":
                scores.append(None)
            else:
                scores.append(sum(q[i][a] * k[j][a] for a in range(d)) / math.sqrt(d))
        top = max(s for s in scores if s is not None)
        ex = [0.0 if s is None else math.exp(s - top) for s in scores]
        z = sum(ex)
        out.append([sum(ex[j] / z * v[j][a] for j in range(n)) for a in range(d)])
    return out


def test_three_token_hand_case():
    x = [[1.0, 0.5], [-0.3, 2.0], [0.7, -1.2]]
    wq = [[0.5, -1.0], [1.5, 0.2]]
    wk = [[1.0, 0.3], [-0.4, 0.8]]
    wv = [[0.2, 1.0], [-1.0, 0.6]]
    roles = ["audio", "motion", "motion"]
    attn = pr.MaskedMultiHeadAttention(2, 1)
    with torch.no_grad():
        attn.w_q.weight.copy_(torch.tensor(wq))
        attn.w_k.weight.copy_(torch.tensor(wk))
        attn.w_v.weight.copy_(torch.tensor(wv))
        attn.w_o.weight.copy_(torch.eye(2))
        attn.w_o.bias.zero_()
        out = attn(torch.tensor([x]), pr.attention_mask(roles))[0]
    np.testing.assert_allclose(out.numpy(), hand_attention(x, wq, wk, wv, roles), atol=1e-6)


def test_realized_mask_mass_and_row_sums(rng):
    model = tiny_predictor(w=4)
    for _ in range(100):
        audio = torch.as_tensor(rng.standard_normal((1, 4 * 80)), dtype=torch.float32)
        past = torch.as_tensor(rng.standard_normal((1, 4, 16)), dtype=torch.float32)
        with torch.no_grad():
            _, weights = model(audio, past, return_weights=True)
        for wts in weights:
            assert (wts[..., 0, 0] == 0).all()
            torch.testing.assert_close(wts.sum(-1), torch.ones_like(wts.sum(-1)), atol=1e-6, rtol=0)


def test_forward_shapes():
    model = tiny_predictor(w=5)
    out = model(torch.zeros(3, 400), torch.zeros(3, 5, 16))
    assert out.shape == (3, 5, 16)
    with pytest.raises(ShapeError):
        model(torch.zeros(3, 400), torch.zeros(3, 4, 16))


def test_qkv_gradients(rng):
    torch.manual_seed(0)
    model = pr.WindowPredictor(pr.PredictorConfig(w=3, **PTINY)).double().train()
    audio = torch.as_tensor(rng.standard_normal((2, 240)))
    past = torch.as_tensor(rng.standard_normal((2, 3, 16)))
    target = torch.as_tensor(rng.standard_normal((2, 3, 16)))
    attn = model.blocks[0].attn
    loss_fn = lambda: ((model(audio, past) - target) ** 2).sum(-1).mean()
    central_difference_check([attn.w_q.weight, attn.w_k.weight, attn.w_v.weight], loss_fn, rng)


def latents_and_mel(rng, T, d=16):
    return (torch.as_tensor(rng.standard_normal((1, T, d)), dtype=torch.float32),
            torch.as_tensor(rng.standard_normal((1, T, 80)), dtype=torch.float32))


def test_window_batch_layout(rng):
    z, mel = latents_and_mel(rng, 10)
    audio, past, target, n = pr.window_batch(z, mel, 3, 3)
    assert n == 3
    assert not past[0].any()
    torch.testing.assert_close(past[1], z[0, 0:3])
    torch.testing.assert_close(target[2], z[0, 6:9])
    torch.testing.assert_close(audio[1].view(3, 80), mel[0, 3:6])
    with pytest.raises(DataError):
        pr.window_batch(z[:, :5], mel[:, :5], 3, 3)


def test_perfect_predictions_give_vq_floor(rng):
    v = tiny_vq(3)
    x = torch.as_tensor(rng.standard_normal((1, 12, 3)), dtype=torch.float32) * 0.1
    z = pr.quantized_latents(v, x)
    mel = torch.zeros(1, 12, 80)
    _, _, target, n = pr.window_batch(z, mel, 3, 3)
    loss = pr.teacher_forced_loss(None, v, z, x, mel, predictions=target)
    assert loss.latent.item() == 0
    with torch.no_grad():
        direct = ((v.decode(z) - x) ** 2).sum(-1).mean()
    assert loss.coefficient.item() == pytest.approx(direct.item(), rel=1e-6)


def test_zero_predictor_closed_form(rng):
    v = tiny_vq(181)
    x = torch.as_tensor(rng.standard_normal((1, 12, 181)), dtype=torch.float32) * 0.1
    z = pr.quantized_latents(v, x)
    mel = torch.zeros(1, 12, 80)
    loss = pr.teacher_forced_loss(None, v, z, x, mel, predictions=pr.zero_predictions(3)(z, x, mel))
    zz = z[0].numpy().astype(np.float64)
    with torch.no_grad():
        dec0 = v.decode(torch.zeros(1, 12, 16))[0].numpy().astype(np.float64)
    xx = x[0].numpy().astype(np.float64)
    expected_latent = (zz ** 2).sum(1).mean()
    expected_coef = ((dec0[:, :53] - xx[:, :53]) ** 2).sum(1).mean() + ((dec0[:, 53:] - xx[:, 53:]) ** 2).sum(1).mean()
    assert loss.latent.item() == pytest.approx(expected_latent, rel=1e-5)
    assert loss.coefficient.item() == pytest.approx(expected_coef, rel=1e-5)


def test_loss_nonnegative(rng):
    v = tiny_vq(3)
    model = tiny_predictor(w=3)
    x = torch.as_tensor(rng.standard_normal((2, 9, 3)), dtype=torch.float32)
    z = pr.quantized_latents(v, x)
    loss = pr.teacher_forced_loss(model, v, z, x, torch.as_tensor(rng.standard_normal((2, 9, 80)), dtype=torch.float32))
    assert all(np.isfinite(val) and val >= 0 for val in loss.as_floats().values())


def test_smoke_training_and_round_trip(rng, tmp_path):
    v = tiny_vq(3)
    clips = [(rng.standard_normal((9, 3)).astype(np.float32) * 0.1, rng.standard_normal((9, 80)).astype(np.float32))
             for _ in range(2)]
    cfg = pr.PredictorConfig(w=3, stream="head", **PTINY)
    models, hist = pr.train_predictors({"head": (cfg, v, clips)}, epochs=1, seed=0)
    assert np.isfinite(hist["curve"][0]["head"]["total"])
    pr.save_predictors(models, tmp_path / "p.ckpt")
    back = pr.load_predictors(tmp_path / "p.ckpt")
    for (k, a), (_, b) in zip(models["head"].state_dict().items(), back["head"].state_dict().items()):
        assert torch.equal(a, b), k
    again = pr.train_predictors({"head": (cfg, v, clips)}, epochs=2, seed=0)[1]["curve"]
    assert again == pr.train_predictors({"head": (cfg, v, clips)}, epochs=2, seed=0)[1]["curve"]


def test_mismatched_width_rejected(rng):
    v = tiny_vq(3)
    cfg = pr.PredictorConfig(w=3, stream="head", **{**PTINY, "d_model": 8})
    with pytest.raises(ConfigError):
        pr.train_predictors({"head": (cfg, v, [(np.zeros((9, 3)), np.zeros((9, 80)))])}, epochs=1)


@pytest.mark.parametrize("w", [1, 3, 12])
def test_inference_length_contract(rng, w):
    models = {"head": tiny_predictor(w=w, stream="head"), "mouth_detail": tiny_predictor(w=w, seed=1)}
    vqs = {"head": tiny_vq(3), "mouth_detail": tiny_vq(181, seed=1)}
    mel = rng.standard_normal((70, 80)).astype(np.float32)
    for T_out in sorted({1, max(w - 1, 1), w, 5 * w + 3}):
        for mode in ("per_frame", "per_window"):
            head, mouth = pr.autoregressive_infer(models, vqs, mel, T_out, mode)
            assert head.shape == (T_out, 3) and mouth.shape == (T_out, 181)
            assert validate_sequence(concat_streams(head, mouth)).ok
    with pytest.raises(ParameterError):
        pr.autoregressive_latents(models["head"], mel, 0)


def test_single_frame_is_first_prediction(rng):
    model = tiny_predictor(w=4)
    mel = rng.standard_normal((10, 80)).astype(np.float32)
    out = pr.autoregressive_latents(model, mel, 1)
    with torch.no_grad():
        first = model(torch.as_tensor(mel[:4].reshape(1, -1)), torch.zeros(1, 4, 16))[0, 0]
    np.testing.assert_array_equal(out[0], first.numpy())


def test_w1_matches_reference_recurrence(rng):
    model = tiny_predictor(w=1)
    mel = rng.standard_normal((15, 80)).astype(np.float32)
    got = pr.autoregressive_latents(model, mel, 15, "per_frame")
    prev = torch.zeros(1, 1, 16)
    ref = []
    with torch.no_grad():
        for t in range(15):
            prev = model(torch.as_tensor(mel[t][None]), prev)
            ref.append(prev[0, 0].numpy())
    np.testing.assert_allclose(got, np.stack(ref), atol=1e-6)


def test_first_window_matches_teacher_forcing(rng):
    model = tiny_predictor(w=4)
    mel = rng.standard_normal((12, 80)).astype(np.float32)
    z = torch.as_tensor(rng.standard_normal((1, 12, 16)), dtype=torch.float32)
    audio, past, _, _ = pr.window_batch(z, torch.as_tensor(mel)[None], 4, 4)
    with torch.no_grad():
        tf = model(audio, past)[0]
    ar = pr.autoregressive_latents(model, mel, 4, "per_window")
    np.testing.assert_allclose(ar, tf.numpy(), atol=1e-6)


def test_inference_deterministic(rng):
    model = tiny_predictor(w=3)
    mel = rng.standard_normal((20, 80)).astype(np.float32)
    a = pr.autoregressive_latents(model, mel, 20)
    assert a.tobytes() == pr.autoregressive_latents(model, mel, 20).tobytes()


def test_snap_returns_codebook_rows(rng):
    model = tiny_predictor(w=3)
    v = tiny_vq(3)
    mel = rng.standard_normal((9, 80)).astype(np.float32)
    out = pr.autoregressive_latents(model, mel, 9, snap=True, vq=v)
    book = v.codebook.detach().numpy()
    assert all(any(np.array_equal(row, code) for code in book) for row in out)


def test_config_validation():
    with pytest.raises(ConfigError):
        pr.PredictorConfig(w=0)
    with pytest.raises(ConfigError):
        pr.PredictorConfig(infer_mode="sideways")
