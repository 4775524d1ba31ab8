"""Run configuration: one JSON file, flags override, ablation modes."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .predictor import PredictorConfig
from .synthgen import SynthSpec
from .vqvae import VqConfig

# mode -> (VQ-VAE selectors, window length override)
MODES = {
    "full": (("head", "mouth_detail"), None),
    "no_disentangle": (("joint",), None),
    "no_window": (("head", "mouth_detail"), 1),
    "neither": (("joint",), 1),
}


@dataclass
class RunConfig:
    dataset: str = "data"
    out: str = "runs"
    seed: int = 0
    mode: str = "full"
    vq_epochs: int = 400
    predictor_epochs: int = 400
    vq_head: VqConfig = field(default_factory=lambda: VqConfig(input_dim=3))
    vq_mouth: VqConfig = field(default_factory=lambda: VqConfig(input_dim=181))
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    normalize_audio: bool = False
    smoothing_window: int = 4
    smoothing_weights: list | None = None
    diversity_pairs: int | None = None
    diversity_seed: int = 0
    infer_split: str = "test"

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        for name, vq in self.vq_configs().items():
            if vq.d_model != self.predictor.d_model:
                raise ConfigError(
                    f"predictor d_model {self.predictor.d_model} != N_e {vq.d_model} of the {name} VQ-VAE"
                )
        if self.vq_epochs < 0 or self.predictor_epochs < 0:
            raise ConfigError("epochs must be >= 0")
        return self

    @property
    def selectors(self):
        return MODES[self.mode][0]

    def vq_config(self, selector) -> VqConfig:
        if selector == "head":
            return self.vq_head
        if selector == "mouth_detail":
            return self.vq_mouth
        if selector == "joint":
            return replace(self.vq_mouth, input_dim=184)
        raise ConfigError(f"unknown selector {selector!r}")

    def vq_configs(self):
        return {s: self.vq_config(s) for s in self.selectors}

    def predictor_config(self, selector) -> PredictorConfig:
        w = MODES[self.mode][1]
        cfg = replace(self.predictor, stream=selector)
        if w is not None:
            cfg = replace(cfg, w=w, train_stride=None)
        return cfg

    def to_dict(self):
        return asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            for key, kind in (("vq_head", VqConfig), ("vq_mouth", VqConfig)):
                if key in d and isinstance(d[key], dict):
                    base = asdict(getattr(cls(), key))
                    base.update(d[key])
                    d[key] = kind.from_dict(base)
            if "predictor" in d and isinstance(d["predictor"], dict):
                d["predictor"] = PredictorConfig.from_dict({**asdict(PredictorConfig()), **d["predictor"]})
            if "synth" in d and isinstance(d["synth"], dict):
                d["synth"] = SynthSpec(**{**asdict(SynthSpec()), **d["synth"]})
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc


def desk_config(**overrides) -> RunConfig:
    """Small CPU-sized model used by the acceptance suite and the README walkthrough."""
    vq = dict(d_model=64, layers=2, heads=4, ff_dim=128, codebook_size=64,
              lr=1e-3, lr_final=1e-4, decay_epochs=80, batch_size=4)
    cfg = RunConfig(
        vq_epochs=80,
        predictor_epochs=80,
        vq_head=VqConfig(input_dim=3, **vq),
        vq_mouth=VqConfig(input_dim=181, **vq),
        predictor=PredictorConfig(d_model=64, heads=4, blocks=2, ff_dim=128,
                                  lr=1e-3, lr_final=1e-4, decay_epochs=80, batch_size=4),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if data.pop("preset", None) == "desk":
        base = desk_config().to_dict()
        for key in ("vq_head", "vq_mouth", "predictor", "synth"):
            if key in data:
                base[key].update(data.pop(key))
        base.update(data)
        data = base
    return RunConfig.from_dict(data)
