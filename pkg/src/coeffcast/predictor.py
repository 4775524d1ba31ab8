"""Window-based masked-attention predictor over VQ latents.

Each step sees one window: a projected audio token for the next ``w``
frames followed by the ``w`` latents of the previous window. Attention is
full within the window except that audio tokens may not attend to audio
tokens. Outputs at the motion positions are the next window's latents.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import audiofeat
from .checkpoint import load_archive, save_archive
from .errors import ConfigError, DataError, DivergenceError, ParameterError, ShapeError
from .vqvae import VQVAE, length_batches, lr_at, nearest_indices, sinusoidal_encoding

log = logging.getLogger(__name__)

AUDIO, MOTION = "audio", "motion"


@dataclass
class PredictorConfig:
    w: int = 12
    d_model: int = 256
    heads: int = 8
    blocks: int = 4
    ff_dim: int = 1024
    n_mels: int = audiofeat.N_MELS
    stream: str = "mouth_detail"
    dropout: float = 0.0
    train_stride: int | None = None  # None: stride w
    infer_mode: str = "per_frame"
    snap: bool = False
    lr: float = 1e-2
    lr_final: float = 1e-6
    decay_epochs: int = 400
    batch_size: int = 64
    grad_clip: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.w < 1:
            raise ConfigError(f"window length must be >= 1, got {self.w}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.stream not in ("head", "mouth_detail", "joint"):
            raise ConfigError(f"unknown stream {self.stream!r}")
        if self.infer_mode not in ("per_frame", "per_window"):
            raise ConfigError(f"unknown inference mode {self.infer_mode!r}")
        if self.train_stride is not None and not 1 <= self.train_stride <= self.w:
            raise ConfigError("train_stride must be within [1, w]")

    @property
    def stride(self):
        return self.train_stride or self.w

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def to_dict(self):
        return asdict(self)


# -- window construction -------------------------------------------------------


@dataclass
class WindowTokens:
    audio: np.ndarray  # (w * n_mels,)
    motion: np.ndarray  # (w, d_model)
    roles: list = field(default_factory=list)

    def __len__(self):
        return len(self.roles)


def build_window_tokens(audio_token, past_latents, config: PredictorConfig) -> WindowTokens:
    """Audio token first, then ``w`` motion tokens (zero-padded at the front)."""
    w, d = config.w, config.d_model
    audio_token = np.asarray(audio_token, dtype=np.float32).ravel()
    if audio_token.size != w * config.n_mels:
        raise ShapeError(f"audio token has {audio_token.size} values, expected {w * config.n_mels}")
    past = np.asarray(getattr(past_latents, "vectors", past_latents), dtype=np.float32)
    if past.size == 0:
        past = np.zeros((0, d), dtype=np.float32)
    if past.ndim != 2 or past.shape[1] != d:
        raise ShapeError(f"past latents must be n x {d}, got {past.shape}")
    if past.shape[0] > w:
        raise ShapeError(f"past slice has {past.shape[0]} latents, window holds {w}")
    motion = np.zeros((w, d), dtype=np.float32)
    if past.shape[0]:
        motion[w - past.shape[0]:] = past
    return WindowTokens(audio_token, motion, [AUDIO] + [MOTION] * w)


def attention_mask(roles, dtype=torch.float32) -> torch.Tensor:
    """0 everywhere except -inf where both query and key are audio tokens."""
    is_audio = torch.tensor([r == AUDIO for r in roles])
    mask = torch.zeros(len(roles), len(roles), dtype=dtype)
    mask[is_audio[:, None] & is_audio[None, :]] = float("-inf")
    return mask


def masked_attention(q, k, v, mask, scale):
    """``softmax((q @ k^T + mask) / scale) @ v``; returns output and weights."""
    scores = (q @ k.transpose(-2, -1) + mask) / scale
    weights = torch.softmax(scores, dim=-1)
    return weights @ v, weights


# -- network -------------------------------------------------------------------


class MaskedMultiHeadAttention(nn.Module):
    def __init__(self, d_model, heads):
        super().__init__()
        self.d_model, self.heads = d_model, heads
        self.w_q = nn.Linear(d_model, d_model, bias=False)
        self.w_k = nn.Linear(d_model, d_model, bias=False)
        self.w_v = nn.Linear(d_model, d_model, bias=False)
        self.w_o = nn.Linear(d_model, d_model)

    def forward(self, x, mask, return_weights=False):
        B, n, _ = x.shape
        hd = self.d_model // self.heads

        def split(t):
            return t.view(B, n, self.heads, hd).transpose(1, 2)

        out, weights = masked_attention(
            split(self.w_q(x)), split(self.w_k(x)), split(self.w_v(x)), mask, math.sqrt(self.d_model)
        )
        out = self.w_o(out.transpose(1, 2).reshape(B, n, self.d_model))
        return (out, weights) if return_weights else out


class AttentionBlock(nn.Module):
    def __init__(self, d_model, heads, ff_dim, dropout):
        super().__init__()
        self.attn = MaskedMultiHeadAttention(d_model, heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, ff_dim), nn.GELU(), nn.Linear(ff_dim, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, mask, return_weights=False):
        a, weights = self.attn(x, mask, return_weights=True)
        x = self.norm1(x + self.drop(a))
        x = self.norm2(x + self.drop(self.ff(x)))
        return (x, weights) if return_weights else x


class WindowPredictor(nn.Module):
    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        self.audio_proj = nn.Linear(cfg.w * cfg.n_mels, cfg.d_model)
        self.audio_norm = nn.LayerNorm(cfg.d_model)
        self.role_embed = nn.Parameter(torch.zeros(2, cfg.d_model))
        self.blocks = nn.ModuleList(
            AttentionBlock(cfg.d_model, cfg.heads, cfg.ff_dim, cfg.dropout) for _ in range(cfg.blocks)
        )
        self.head = nn.Linear(cfg.d_model, cfg.d_model)
        self.register_buffer("mask", attention_mask([AUDIO] + [MOTION] * cfg.w), persistent=False)

    def tokens(self, audio, past):
        a = self.audio_norm(self.audio_proj(audio))[:, None, :] + self.role_embed[0]
        m = past + self.role_embed[1]
        x = torch.cat([a, m], dim=1)
        return x + sinusoidal_encoding(x.shape[1], self.cfg.d_model, x.dtype)

    def forward(self, audio, past, return_weights=False):
        """``audio``: (B, w*n_mels); ``past``: (B, w, d) -> next-window latents (B, w, d)."""
        if past.shape[1:] != (self.cfg.w, self.cfg.d_model):
            raise ShapeError(f"past must be (B, {self.cfg.w}, {self.cfg.d_model}), got {tuple(past.shape)}")
        x = self.tokens(audio, past)
        mask = self.mask.to(x.dtype)
        all_weights = []
        for block in self.blocks:
            x, wts = block(x, mask, return_weights=True)
            all_weights.append(wts)
        out = self.head(x[:, 1:])  # audio position discarded
        return (out, all_weights) if return_weights else out


def masked_attention_forward(model: WindowPredictor, tokens: WindowTokens):
    """Run one window through the predictor; returns ``(w x d)`` latents and per-block weights."""
    with torch.no_grad():
        audio = torch.as_tensor(tokens.audio, dtype=torch.float32)[None]
        past = torch.as_tensor(tokens.motion, dtype=torch.float32)[None]
        out, weights = model(audio, past, return_weights=True)
    return out[0].numpy(), [wt[0].numpy() for wt in weights]


# -- teacher forcing -----------------------------------------------------------


def window_batch(latents, mel, w, stride):
    """Slice teacher-forcing windows from ``latents (B, T, d)`` and ``mel (B, T, M)``.

    Window starts are ``0, stride, 2*stride, ...`` while a full window fits.
    Returns audio tokens (B*n, w*M), past (B*n, w, d), targets (B*n, w, d), n.
    """
    B, T, d = latents.shape
    if T < 2 * w:
        raise DataError(f"clip of {T} frames is shorter than 2w = {2 * w}")
    starts = np.arange(0, T - w + 1, stride)
    padded = torch.cat([latents.new_zeros(B, w, d), latents], dim=1)
    idx = torch.as_tensor(starts[:, None] + np.arange(w)[None, :])
    past = padded[:, idx]  # frames start-w .. start-1, zero before the clip
    target = latents[:, idx]
    audio = mel[:, idx].reshape(B, len(starts), -1)
    n = len(starts)
    return audio.reshape(B * n, -1), past.reshape(B * n, w, d), target.reshape(B * n, w, d), n


@dataclass
class PredictorLoss:
    total: torch.Tensor
    latent: torch.Tensor
    coefficient: torch.Tensor
    blocks: list = field(default_factory=list)

    def as_floats(self):
        return {"total": self.total.item(), "latent": self.latent.item(),
                "coefficient": self.coefficient.item()}


def coefficient_blocks(width):
    from .vqvae import RECON_BLOCKS

    return RECON_BLOCKS.get(width, ((0, width),))


def loss_from_predictions(pred, target, vq: VQVAE, coeffs, B, n, w, stride):
    """Latent MSE over every predicted frame plus coefficient MSE of the decoded tiling."""
    latent = ((pred - target) ** 2).sum(-1).mean()
    tiled = pred.reshape(B, n, w, -1)[:, :, :stride].reshape(B, n * stride, -1)
    decoded = vq.decode(tiled)
    gt = coeffs[:, : n * stride]
    blocks = [((decoded[..., a:b] - gt[..., a:b]) ** 2).sum(-1).mean() for a, b in coefficient_blocks(gt.shape[-1])]
    coef = sum(blocks)
    return PredictorLoss(latent + coef, latent, coef, blocks)


def teacher_forced_loss(model: WindowPredictor | None, vq: VQVAE, gt_latents, coeffs, mel,
                        predictions=None) -> PredictorLoss:
    """Teacher-forced objective for a batch of equal-length clips.

    ``gt_latents`` are the frozen VQ-VAE's quantized codes (B, T, d),
    ``coeffs`` the ground-truth stream (B, T, C), ``mel`` aligned features
    (B, T, M). Pass ``predictions`` (B*n, w, d) to score a fixed predictor.
    """
    cfg = model.cfg if model is not None else None
    w = cfg.w if cfg else predictions.shape[1]
    stride = cfg.stride if cfg else w
    B = gt_latents.shape[0]
    audio, past, target, n = window_batch(gt_latents, mel, w, stride)
    if predictions is None:
        predictions = model(audio, past)
    return loss_from_predictions(predictions, target, vq, coeffs, B, n, w, stride)


@torch.no_grad()
def quantized_latents(vq: VQVAE, stream) -> torch.Tensor:
    if isinstance(stream, torch.Tensor):
        x = stream.float()
    else:
        x = torch.from_numpy(np.array(stream, dtype=np.float32))
    if x.ndim == 2:
        x = x[None]
    z_e = vq.encode(x)
    return vq.codebook[nearest_indices(z_e, vq.codebook)]


# -- training ------------------------------------------------------------------


def _check_pairing(cfg: PredictorConfig, vq: VQVAE):
    if cfg.d_model != vq.cfg.d_model:
        raise ConfigError(f"predictor d_model {cfg.d_model} != codebook dimension N_e {vq.cfg.d_model}")


def train_predictors(streams: dict, epochs: int, seed: int = 0):
    """Train one predictor per stream under a shared epoch loop.

    ``streams`` maps a stream name to ``(config, frozen_vq, clips)`` where
    ``clips`` is a list of ``(stream_frames T x C, mel T x M)`` pairs.
    Returns ``({name: model}, history)``.
    """
    rng = np.random.default_rng(seed)
    states = {}
    for offset, (name, (cfg, vq, clips)) in enumerate(sorted(streams.items())):
        _check_pairing(cfg, vq)
        if not clips:
            raise DataError(f"no training clips for the {name} predictor")
        vq.eval()
        for p in vq.parameters():
            p.requires_grad_(False)
        data = []
        for frames, mel in clips:
            if len(frames) < 2 * cfg.w:
                raise DataError(f"clip of {len(frames)} frames is shorter than 2w = {2 * cfg.w}")
            x = torch.from_numpy(np.array(frames, dtype=np.float32))
            data.append((quantized_latents(vq, x)[0], x, torch.from_numpy(np.array(mel, dtype=np.float32))))
        torch.manual_seed(seed * 1000 + offset)
        model = WindowPredictor(cfg)
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        states[name] = (cfg, vq, data, model, opt)

    curve = []
    for epoch in range(epochs):
        entry = {"epoch": epoch}
        for name, (cfg, vq, data, model, opt) in states.items():
            lr = lr_at(epoch, cfg.lr, cfg.lr_final, cfg.decay_epochs)
            for g in opt.param_groups:
                g["lr"] = lr
            model.train()
            sums = {"total": 0.0, "latent": 0.0, "coefficient": 0.0}
            count = 0
            for batch in length_batches([d[0] for d in data], cfg.batch_size, rng):
                z = torch.stack([data[i][0] for i in batch])
                x = torch.stack([data[i][1] for i in batch])
                mel = torch.stack([data[i][2] for i in batch])
                loss = teacher_forced_loss(model, vq, z, x, mel)
                if not torch.isfinite(loss.total):
                    raise DivergenceError(f"non-finite {name} predictor loss at epoch {epoch}")
                opt.zero_grad()
                loss.total.backward()
                if cfg.grad_clip:
                    nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
                opt.step()
                for k, v in loss.as_floats().items():
                    sums[k] += v * len(batch)
                count += len(batch)
            entry[name] = {k: v / count for k, v in sums.items()}
            entry[name]["lr"] = lr
        curve.append(entry)
        log.debug("predictor epoch %d: %s", epoch, entry)
    models = {}
    for name, (cfg, vq, data, model, opt) in states.items():
        model.eval()
        models[name] = model
    return models, {"curve": curve}


@torch.no_grad()
def evaluate_teacher_forced(model, vq, clips, predictions_fn=None):
    """Frame-weighted mean loss components over ``(frames, mel)`` clips."""
    model.eval() if model is not None else None
    sums = {"total": 0.0, "latent": 0.0, "coefficient": 0.0}
    for frames, mel in clips:
        x = torch.from_numpy(np.array(frames, dtype=np.float32))[None]
        m = torch.from_numpy(np.array(mel, dtype=np.float32))[None]
        z = quantized_latents(vq, x)
        preds = predictions_fn(z, x, m) if predictions_fn else None
        loss = teacher_forced_loss(model, vq, z, x, m, predictions=preds)
        for k, v in loss.as_floats().items():
            sums[k] += v
    return {k: v / len(clips) for k, v in sums.items()}


def zero_predictions(w):
    def fn(z, x, m):
        T = z.shape[1]
        n = (T - w) // w + 1
        return z.new_zeros(n, w, z.shape[-1])

    return fn


# -- inference -----------------------------------------------------------------


@torch.no_grad()
def autoregressive_latents(model: WindowPredictor, mel, T_out: int, mode: str | None = None,
                           snap: bool | None = None, vq: VQVAE | None = None) -> np.ndarray:
    """Roll the predictor forward from zero history; returns ``T_out x d`` latents."""
    if int(T_out) != T_out or T_out < 1:
        raise ParameterError(f"T_out must be >= 1, got {T_out!r}")
    cfg = model.cfg
    mode = mode or cfg.infer_mode
    snap = cfg.snap if snap is None else snap
    if mode not in ("per_frame", "per_window"):
        raise ParameterError(f"unknown inference mode {mode!r}")
    model.eval()
    w, d = cfg.w, cfg.d_model
    mel = np.asarray(getattr(mel, "mel", mel), dtype=np.float32)
    keep = 1 if mode == "per_frame" else w
    history = torch.zeros(w + T_out + w, d)  # w leading zeros stand in for frames before the clip
    t = 0
    while t < T_out:
        audio = torch.as_tensor(audiofeat.sliding_tokens(mel, w, np.array([t])), dtype=torch.float32)
        past = history[t: t + w][None]
        pred = model(audio, past)[0]
        if snap and vq is not None:
            pred = vq.codebook[nearest_indices(pred, vq.codebook)]
        history[w + t: w + t + keep] = pred[:keep]
        t += keep
    return history[w: w + T_out].numpy()


@torch.no_grad()
def autoregressive_infer(models: dict, vqs: dict, mel, T_out: int, mode: str | None = None,
                         snap: bool | None = None):
    """Predict ``T_out`` frames per stream and decode them with the frozen VQ-VAEs.

    Returns ``(head T_out x 3, mouth_detail T_out x 181)`` arrays.
    """
    out = {}
    for name, model in models.items():
        vq = vqs[name]
        z = autoregressive_latents(model, mel, T_out, mode, snap, vq)
        vq.eval()
        out[name] = vq.decode(torch.as_tensor(z)[None])[0].numpy()
    if "joint" in out:
        return out["joint"][:, :3], out["joint"][:, 3:]
    return out["head"], out["mouth_detail"]


def save_predictors(models: dict, path, extra=None):
    tensors = {}
    for name, model in models.items():
        for k, v in model.state_dict().items():
            tensors[f"{name}/{k}"] = v.detach().cpu().numpy()
    config = {name: m.cfg.to_dict() for name, m in models.items()}
    save_archive(path, "predictor", config, tensors, extra)


def load_predictors(path) -> dict:
    config, tensors, _ = load_archive(path, kind="predictor")
    models = {}
    for name, cfg_dict in config.items():
        model = WindowPredictor(PredictorConfig.from_dict(cfg_dict))
        prefix = f"{name}/"
        state = {k[len(prefix):]: torch.from_numpy(np.array(v)) for k, v in tensors.items() if k.startswith(prefix)}
        model.load_state_dict(state)
        model.eval()
        models[name] = model
    return models
