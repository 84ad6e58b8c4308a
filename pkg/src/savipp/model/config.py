"""Network hyperparameters."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    resolution: tuple = (64, 64)
    num_slots: int = 8
    slot_dim: int = 64
    # encoder: stem conv, then one residual block per entry of enc_channels
    stem_channels: int = 32
    stem_kernel: int = 5
    stem_stride: int = 2
    enc_channels: tuple = (32, 32, 64, 64)
    enc_strides: tuple = (1, 1, 2, 1)
    groups: int = 8
    embed_dim: int | None = None  # width of projected frame features; None means slot_dim
    use_transformer: bool = True
    transformer_layers: int = 2
    transformer_heads: int = 4
    transformer_head_dim: int = 16
    transformer_hidden: int = 256
    # corrector (slot attention)
    corrector_qkv: int = 128
    corrector_iters: int = 1
    corrector_hidden: int = 256
    corrector_eps: float = 1e-8
    # predictor (one transformer block over slots, post-norm)
    predictor_heads: int = 4
    predictor_qkv: int = 128
    predictor_hidden: int = 256
    # spatial broadcast decoder: one stride-2 up-conv per entry of decoder_channels
    decoder_grid: tuple = (8, 8)
    decoder_channels: tuple = (64, 64, 64)
    decoder_kernel: int = 5
    use_decoder: bool = True
    target_channels: int = 1
    # initializer and box readout
    conditional: bool = True
    init_hidden: int = 256
    readout_hidden: int = 256
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        for name in ("enc_channels", "enc_strides", "decoder_grid", "decoder_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @property
    def feature_dim(self) -> int:
        return self.slot_dim if self.embed_dim is None else self.embed_dim

    @property
    def encoder_stride(self) -> int:
        s = self.stem_stride
        for v in self.enc_strides:
            s *= v
        return s

    @property
    def feature_grid(self) -> tuple:
        h, w = self.resolution
        return h // self.encoder_stride, w // self.encoder_stride

    def validate(self) -> None:
        h, w = self.resolution
        s = self.encoder_stride
        if h % s or w % s:
            raise ValueError(f"resolution {self.resolution} not divisible by encoder stride {s}")
        if len(self.enc_channels) != len(self.enc_strides):
            raise ValueError("enc_channels and enc_strides differ in length")
        for c in (self.stem_channels,) + self.enc_channels:
            if c % self.groups:
                raise ValueError(f"{c} channels not divisible into {self.groups} groups")
        if self.num_slots < 1 or self.slot_dim < 1:
            raise ValueError("num_slots and slot_dim must be positive")
        if self.embed_dim is not None and self.embed_dim < 1:
            raise ValueError("embed_dim must be positive or None")
        if self.corrector_iters < 1:
            raise ValueError("corrector_iters must be >= 1")
        if self.predictor_qkv % self.predictor_heads:
            raise ValueError("predictor_qkv must be divisible by predictor_heads")
        if self.use_decoder:
            up = 2 ** len(self.decoder_channels)
            gh, gw = self.decoder_grid
            if (gh * up, gw * up) != (h, w):
                raise ValueError(f"decoder grid {self.decoder_grid} with {len(self.decoder_channels)} "
                                 f"up-convs does not reach {self.resolution}")
            if self.decoder_kernel < 2:
                raise ValueError("decoder_kernel must be >= 2 for stride-2 up-convs")
        if self.target_channels < 1:
            raise ValueError("target_channels must be >= 1")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ValueError(f"unknown model config keys: {unknown}")
        return cls(**d)

    def digest(self) -> bytes:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).digest()

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


def full_config(**kw) -> ModelConfig:
    """Full-size widths: 128x128 input, stride 8, 64-wide features, 256-wide slot attention."""
    base = dict(resolution=(128, 128), num_slots=24, slot_dim=128, stem_channels=64, stem_stride=1,
                enc_channels=(64, 64, 128, 128), enc_strides=(1, 2, 2, 2), groups=32, embed_dim=64,
                transformer_layers=4, transformer_heads=4, transformer_head_dim=16,
                transformer_hidden=1024, corrector_qkv=256, predictor_qkv=256,
                predictor_hidden=1024, decoder_grid=(8, 8), decoder_channels=(64, 64, 64, 64))
    base.update(kw)
    return ModelConfig(**base)


def smoke_config(**kw) -> ModelConfig:
    """Narrow network sized for single-core CPU training at 64x64."""
    base = dict(resolution=(64, 64), num_slots=4, slot_dim=32, stem_channels=16, stem_kernel=5,
                stem_stride=2, enc_channels=(16, 32), enc_strides=(1, 2), groups=4,
                transformer_layers=1, transformer_heads=2, transformer_head_dim=16,
                transformer_hidden=64, corrector_qkv=32, corrector_hidden=64,
                predictor_heads=2, predictor_qkv=32, predictor_hidden=64,
                decoder_grid=(8, 8), decoder_channels=(32, 16, 16), decoder_kernel=4,
                init_hidden=64, readout_hidden=64)
    base.update(kw)
    return ModelConfig(**base)


def tiny_config(**kw) -> ModelConfig:
    """16x16, K=2, D=8: small enough for finite-difference checks of the whole network."""
    base = dict(resolution=(16, 16), num_slots=2, slot_dim=8, stem_channels=4, stem_kernel=3,
                stem_stride=2, enc_channels=(4,), enc_strides=(2,), groups=2,
                transformer_layers=1, transformer_heads=2, transformer_head_dim=4,
                transformer_hidden=8, corrector_qkv=8, corrector_hidden=8,
                predictor_heads=2, predictor_qkv=8, predictor_hidden=8,
                decoder_grid=(4, 4), decoder_channels=(4, 4), decoder_kernel=3,
                init_hidden=8, readout_hidden=8)
    base.update(kw)
    return ModelConfig(**base)
