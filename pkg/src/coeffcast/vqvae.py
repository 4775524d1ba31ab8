"""Vector-quantized autoencoders for the head-pose and mouth/detail streams.

Each stream gets its own model: linear input projection, a transformer
encoder with full self-attention over the clip, a learned codebook with one
code per frame, and a mirrored transformer decoder. The ``joint`` selector
trains one model on all 184 columns (no disentanglement).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn

from . import kernels
from .checkpoint import load_archive, save_archive
from .errors import ConfigError, DataError, DivergenceError, ParameterError, ShapeError

log = logging.getLogger(__name__)

SELECTOR_DIMS = {"head": 3, "mouth_detail": 181, "joint": 184}
SELECTOR_COLUMNS = {"head": slice(0, 3), "mouth_detail": slice(3, 184), "joint": slice(0, 184)}

# column blocks that each contribute one reconstruction term
RECON_BLOCKS = {
    3: ((0, 3),),
    181: ((0, 53), (53, 181)),
    184: ((0, 3), (3, 56), (56, 184)),
}


@dataclass
class VqConfig:
    input_dim: int = 181
    d_model: int = 256
    layers: int = 12
    heads: int = 8
    ff_dim: int = 1024
    codebook_size: int = 256
    commitment_weight: float = 0.25
    dropout: float = 0.0
    recon_norm: str = "l2"
    latent_scale: float | None = None  # None: 1 / sqrt(d_model)
    lr: float = 1e-2
    lr_final: float = 1e-6
    decay_epochs: int = 400
    batch_size: int = 64
    grad_clip: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.input_dim not in RECON_BLOCKS:
            raise ConfigError(f"input_dim must be one of 3, 181, 184; got {self.input_dim}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.codebook_size < 1:
            raise ConfigError("codebook_size must be >= 1")
        if self.recon_norm not in ("l2", "l1"):
            raise ConfigError(f"recon_norm must be 'l2' or 'l1', got {self.recon_norm!r}")
        if self.layers < 1 or self.batch_size < 1:
            raise ConfigError("layers and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def to_dict(self):
        return asdict(self)


@dataclass
class LatentCodeSequence:
    vectors: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.indices)


def sinusoidal_encoding(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    freq = torch.exp(-math.log(10000.0) * i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)[:, : dim // 2]
    return pe.to(dtype)


def _stack(cfg: VqConfig):
    layer = nn.TransformerEncoderLayer(
        cfg.d_model, cfg.heads, cfg.ff_dim, dropout=cfg.dropout, batch_first=True
    )
    return nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)


def nearest_indices(z: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Exact Euclidean nearest code per row of ``z`` (lowest index on ties)."""
    flat = z.detach().reshape(-1, z.shape[-1]).cpu().numpy()
    idx = kernels.nearest_code(flat, codebook.detach().cpu().numpy())
    return torch.from_numpy(idx).reshape(z.shape[:-1])


class VQVAE(nn.Module):
    def __init__(self, cfg: VqConfig):
        super().__init__()
        self.cfg = cfg
        self.in_proj = nn.Linear(cfg.input_dim, cfg.d_model)
        self.encoder = _stack(cfg)
        self.codebook = nn.Parameter(
            torch.empty(cfg.codebook_size, cfg.d_model).uniform_(
                -1.0 / cfg.codebook_size, 1.0 / cfg.codebook_size
            )
        )
        self.decoder = _stack(cfg)
        self.out_proj = nn.Linear(cfg.d_model, cfg.input_dim)
        # per-column standardization fitted on training data; not trained
        self.register_buffer("input_mean", torch.zeros(cfg.input_dim))
        self.register_buffer("input_std", torch.ones(cfg.input_dim))

    @torch.no_grad()
    def fit_normalization(self, clips):
        x = np.concatenate([np.asarray(c, dtype=np.float64) for c in clips])
        self.input_mean.copy_(torch.as_tensor(x.mean(0)))
        self.input_std.copy_(torch.as_tensor(np.maximum(x.std(0), 1e-6)))

    @property
    def latent_scale(self):
        return self.cfg.latent_scale if self.cfg.latent_scale else 1.0 / math.sqrt(self.cfg.d_model)

    def _pe(self, x):
        return sinusoidal_encoding(x.shape[1], self.cfg.d_model, x.dtype)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.cfg.input_dim:
            raise ShapeError(f"expected width {self.cfg.input_dim}, got {x.shape[-1]}")
        h = self.in_proj((x - self.input_mean) / self.input_std) * math.sqrt(self.cfg.d_model)
        return self.encoder(h + self._pe(h)) * self.latent_scale

    def quantize(self, z: torch.Tensor):
        idx = nearest_indices(z, self.codebook)
        return self.codebook[idx], idx

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.cfg.d_model:
            raise ShapeError(f"expected latent width {self.cfg.d_model}, got {z.shape[-1]}")
        u = z / self.latent_scale
        out = self.out_proj(self.decoder(u + self._pe(u)))
        return out * self.input_std + self.input_mean

    def forward(self, x: torch.Tensor):
        z_e = self.encode(x)
        z_q, idx = self.quantize(z_e)
        # straight-through: forward uses z_q, backward copies the gradient onto z_e
        z_st = z_e + (z_q - z_e).detach()
        recon = self.decode(z_st)
        return {"recon": recon, "z_e": z_e, "z_q": z_q, "z_st": z_st, "indices": idx}


@dataclass
class VqLoss:
    total: torch.Tensor
    reconstruction: torch.Tensor
    codebook: torch.Tensor
    commitment: torch.Tensor
    blocks: list = field(default_factory=list)

    def as_floats(self):
        return {
            "total": self.total.item(),
            "reconstruction": self.reconstruction.item(),
            "codebook": self.codebook.item(),
            "commitment": self.commitment.item(),
        }


def reconstruction_error(target, recon, norm="l2"):
    """Sum over column blocks of the mean per-frame block norm; also returns the block terms."""
    if target.shape != recon.shape:
        raise ShapeError(f"target {tuple(target.shape)} vs reconstruction {tuple(recon.shape)}")
    blocks = RECON_BLOCKS.get(target.shape[-1], ((0, target.shape[-1]),))
    ord_ = 2 if norm == "l2" else 1
    terms = [
        torch.linalg.vector_norm(recon[..., a:b] - target[..., a:b], ord=ord_, dim=-1).mean()
        for a, b in blocks
    ]
    return sum(terms), terms


def vq_loss(target, recon, z_e, z_q, commitment_weight=0.25, norm="l2") -> VqLoss:
    """Reconstruction + codebook + commitment objective.

    ``z_q`` must be the raw codebook rows (not the straight-through tensor) so
    that the codebook term is the only path to the codebook.
    """
    if z_e.shape != z_q.shape:
        raise ShapeError(f"latent shapes differ: {tuple(z_e.shape)} vs {tuple(z_q.shape)}")
    rec, terms = reconstruction_error(target, recon, norm)
    codebook = ((z_e.detach() - z_q) ** 2).sum(-1).mean()
    commitment = commitment_weight * ((z_q.detach() - z_e) ** 2).sum(-1).mean()
    return VqLoss(rec + codebook + commitment, rec, codebook, commitment, terms)


# -- array-level API -----------------------------------------------------------


def _as_batch(stream):
    x = torch.from_numpy(np.array(getattr(stream, "frames", stream), dtype=np.float32))
    if x.ndim != 2:
        raise ShapeError(f"stream must be T x C, got {tuple(x.shape)}")
    return x[None]


@torch.no_grad()
def encode(model: VQVAE, stream) -> np.ndarray:
    model.eval()
    return model.encode(_as_batch(stream))[0].numpy()


def quantize(latents, codebook) -> LatentCodeSequence:
    latents = np.asarray(latents)
    codebook = np.asarray(codebook)
    if codebook.ndim != 2 or codebook.shape[0] == 0:
        raise ParameterError("codebook is empty")
    if latents.ndim != 2 or latents.shape[1] != codebook.shape[1]:
        raise ShapeError(f"latents {latents.shape} incompatible with codebook {codebook.shape}")
    idx = kernels.nearest_code(latents, codebook)
    return LatentCodeSequence(codebook[idx].copy(), idx)


@torch.no_grad()
def decode(model: VQVAE, codes) -> np.ndarray:
    model.eval()
    vectors = getattr(codes, "vectors", codes)
    z = torch.from_numpy(np.array(vectors, dtype=np.float32))
    if z.ndim != 2:
        raise ShapeError(f"codes must be T x N_e, got {tuple(z.shape)}")
    return model.decode(z[None])[0].numpy()


@torch.no_grad()
def reconstruct(model: VQVAE, stream) -> np.ndarray:
    model.eval()
    return model(_as_batch(stream))["recon"][0].numpy()


@torch.no_grad()
def latent_codes(model: VQVAE, stream) -> LatentCodeSequence:
    z = encode(model, stream)
    return quantize(z, model.codebook.detach().numpy())


# -- training ------------------------------------------------------------------


def select_stream(frames, selector):
    if selector not in SELECTOR_COLUMNS:
        raise ConfigError(f"unknown stream selector {selector!r}")
    return np.asarray(frames)[:, SELECTOR_COLUMNS[selector]]


def lr_at(epoch, lr, lr_final, decay_epochs):
    """Exponential decay from ``lr`` to ``lr_final`` at ``decay_epochs``, flat after."""
    frac = min(epoch, decay_epochs) / max(decay_epochs, 1)
    return lr * (lr_final / lr) ** frac


def length_batches(clips, batch_size, rng=None):
    """Group clip indices into batches of equal length (optionally shuffled)."""
    by_len = {}
    for i, c in enumerate(clips):
        by_len.setdefault(len(c), []).append(i)
    batches = []
    for length in sorted(by_len):
        ids = np.array(by_len[length])
        if rng is not None:
            ids = rng.permutation(ids)
        batches += [ids[s:s + batch_size].tolist() for s in range(0, len(ids), batch_size)]
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


@torch.no_grad()
def _init_codebook_from_data(model, clips, rng, iterations=10):
    """k-means over the untrained encoder's outputs, seeded from random frames."""
    model.eval()
    lat = np.concatenate([
        model.encode(torch.from_numpy(np.array(c, dtype=np.float32))[None])[0].numpy() for c in clips
    ]).astype(np.float64)
    K = model.cfg.codebook_size
    centers = lat[rng.choice(lat.shape[0], size=K, replace=lat.shape[0] < K)].copy()
    for _ in range(iterations):
        assign = kernels.nearest_code(lat, centers)
        for k in range(K):
            members = lat[assign == k]
            if len(members):
                centers[k] = members.mean(0)
    model.codebook.copy_(torch.as_tensor(centers, dtype=model.codebook.dtype))
    model.train()


@torch.no_grad()
def codebook_utilization(model, clips) -> float:
    if not clips:
        return 0.0
    used = set()
    for c in clips:
        used.update(latent_codes(model, c).indices.tolist())
    return len(used) / model.cfg.codebook_size


@torch.no_grad()
def evaluate_loss(model, clips):
    model.eval()
    totals = {"total": 0.0, "reconstruction": 0.0, "codebook": 0.0, "commitment": 0.0}
    frames = 0
    for c in clips:
        x = torch.from_numpy(np.array(c, dtype=np.float32))[None]
        out = model(x)
        parts = vq_loss(x, out["recon"], out["z_e"], out["z_q"], model.cfg.commitment_weight,
                        model.cfg.recon_norm).as_floats()
        for k in totals:
            totals[k] += parts[k] * len(c)
        frames += len(c)
    return {k: v / frames for k, v in totals.items()}


def train_vqvae(train_clips, config: VqConfig, epochs: int, seed: int = 0, val_clips=None,
                init_from_data: bool = True):
    """Fit one VQ-VAE on a list of ``T x input_dim`` arrays.

    Returns ``(model, history)``; ``history`` has one dict of loss components
    per epoch plus the final validation codebook utilization.
    """
    if not train_clips:
        raise DataError("no training clips for the VQ-VAE")
    for c in train_clips:
        if np.asarray(c).shape[1] != config.input_dim:
            raise ShapeError(f"clip width {np.asarray(c).shape[1]} != input_dim {config.input_dim}")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = VQVAE(config)
    clips = [np.array(c, dtype=np.float32) for c in train_clips]
    model.fit_normalization(clips)
    if init_from_data:
        _init_codebook_from_data(model, clips, rng)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    curve = []
    for epoch in range(epochs):
        lr = lr_at(epoch, config.lr, config.lr_final, config.decay_epochs)
        for g in opt.param_groups:
            g["lr"] = lr
        model.train()
        sums = {"total": 0.0, "reconstruction": 0.0, "codebook": 0.0, "commitment": 0.0}
        n = 0
        for batch in length_batches(clips, config.batch_size, rng):
            x = torch.as_tensor(np.stack([clips[i] for i in batch]))
            out = model(x)
            loss = vq_loss(x, out["recon"], out["z_e"], out["z_q"], config.commitment_weight,
                           config.recon_norm)
            if not torch.isfinite(loss.total):
                raise DivergenceError(f"non-finite VQ-VAE loss at epoch {epoch}")
            opt.zero_grad()
            loss.total.backward()
            if config.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
            opt.step()
            for k, v in loss.as_floats().items():
                sums[k] += v * len(batch)
            n += len(batch)
        entry = {"epoch": epoch, "lr": lr, **{k: v / n for k, v in sums.items()}}
        curve.append(entry)
        log.debug("vq epoch %d: %s", epoch, entry)
    model.eval()
    history = {
        "curve": curve,
        "train_eval": evaluate_loss(model, clips),
        "utilization": codebook_utilization(model, val_clips if val_clips else clips),
    }
    return model, history


def save_vqvae(model: VQVAE, path, extra=None):
    tensors = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    save_archive(path, "vqvae", model.cfg.to_dict(), tensors, extra)


def load_vqvae(path) -> VQVAE:
    config, tensors, _ = load_archive(path, kind="vqvae")
    model = VQVAE(VqConfig.from_dict(config))
    model.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in tensors.items()})
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    return model
