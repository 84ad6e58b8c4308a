"""Slot-based video model: initializer, encoder, corrector, predictor, decoder, box readout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import ndgrad as nd
from ..ndgrad import Tensor
from .config import ModelConfig
from .layers import (
    MLP, GRU, Conv, ConvTranspose, GroupNorm, LayerNorm, Linear, Module, MultiHeadAttention,
    TransformerBlock, coordinate_grid,
)


class ResidualBlock(Module):
    def __init__(self, rng, cin: int, cout: int, stride: int, groups: int):
        super().__init__()
        self.conv1 = self.child("conv1", Conv(rng, cin, cout, 3, stride, bias=False))
        self.norm1 = self.child("norm1", GroupNorm(cout, groups))
        self.conv2 = self.child("conv2", Conv(rng, cout, cout, 3, 1, bias=False))
        self.norm2 = self.child("norm2", GroupNorm(cout, groups))
        self.proj = None
        if stride != 1 or cin != cout:
            self.proj = self.child("proj", Conv(rng, cin, cout, 1, stride, bias=False))
            self.proj_norm = self.child("proj_norm", GroupNorm(cout, groups))

    def __call__(self, x: Tensor) -> Tensor:
        y = nd.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        skip = self.proj_norm(self.proj(x)) if self.proj is not None else x
        return nd.relu(nd.add(y, skip))


class Encoder(Module):
    """Residual CNN with group norm, additive linear position code, optional transformer."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = self.child("stem", Conv(rng, 3, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride, bias=False))
        self.stem_norm = self.child("stem_norm", GroupNorm(cfg.stem_channels, cfg.groups))
        self.blocks = []
        cin = cfg.stem_channels
        for i, (c, s) in enumerate(zip(cfg.enc_channels, cfg.enc_strides)):
            self.blocks.append(self.child(f"block{i}", ResidualBlock(rng, cin, c, s, cfg.groups)))
            cin = c
        self.pos = self.child("pos", Linear(rng, 2, cin))
        self.embed = self.child("embed", Linear(rng, cin, cfg.feature_dim))
        self.layers = []
        if cfg.use_transformer:
            for i in range(cfg.transformer_layers):
                self.layers.append(self.child(f"transformer{i}", TransformerBlock(
                    rng, cfg.feature_dim, cfg.transformer_heads, cfg.transformer_head_dim,
                    cfg.transformer_hidden, pre_norm=True)))
        self.grid = coordinate_grid(*cfg.feature_grid)

    def cnn(self, rgb: Tensor) -> Tensor:
        """``[B, H, W, 3] -> [B, h, w, c]`` convolutional features before the position code."""
        x = nd.relu(self.stem_norm(self.stem(rgb)))
        for block in self.blocks:
            x = block(x)
        return x

    def __call__(self, rgb: Tensor) -> Tensor:
        h, w = self.cfg.resolution
        if rgb.shape[-3:] != (h, w, 3):
            raise ValueError(f"expected frames of shape {(h, w, 3)}, got {rgb.shape}")
        x = self.cnn(rgb)
        x = nd.add(x, self.pos(Tensor(self.grid.astype(x.dtype))))
        b, gh, gw, c = x.shape
        x = nd.relu(self.embed(nd.reshape(x, (b, gh * gw, c))))
        for layer in self.layers:
            x = layer(x)
        return x


class Corrector(Module):
    """Slot attention: softmax over slots, weighted mean over inputs, GRU plus residual MLP."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        d, f, q = cfg.slot_dim, cfg.feature_dim, cfg.corrector_qkv
        self.iters, self.eps, self.qkv = cfg.corrector_iters, cfg.corrector_eps, q
        self.norm_inputs = self.child("norm_inputs", LayerNorm(f))
        self.norm_slots = self.child("norm_slots", LayerNorm(d))
        self.norm_mlp = self.child("norm_mlp", LayerNorm(d))
        self.q = self.child("q", Linear(rng, d, q, bias=False))
        self.k = self.child("k", Linear(rng, f, q, bias=False))
        self.v = self.child("v", Linear(rng, f, q, bias=False))
        self.gru = self.child("gru", GRU(rng, q, d))
        self.mlp = self.child("mlp", MLP(rng, d, cfg.corrector_hidden, d))
        self.last_attention = None

    def __call__(self, slots: Tensor, inputs: Tensor) -> Tensor:
        x = self.norm_inputs(inputs)
        k = nd.transpose(self.k(x), (0, 2, 1))
        v = self.v(x)
        scale = 1.0 / math.sqrt(self.qkv)
        for _ in range(self.iters):
            q = nd.mul(self.q(self.norm_slots(slots)), scale)
            attn = nd.softmax_axis(nd.matmul(q, k), 1)  # [B, K, N], normalized over slots
            self.last_attention = attn.data
            w = nd.add(attn, self.eps)
            w = nd.div(w, nd.expand(nd.sum(w, axis=2, keepdims=True), w.shape))
            slots = self.gru(slots, nd.matmul(w, v))
            slots = nd.add(slots, self.mlp(self.norm_mlp(slots)))
        return slots


class Predictor(Module):
    """One post-norm transformer block over the slot axis."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.block = self.child("block", TransformerBlock(
            rng, cfg.slot_dim, cfg.predictor_heads, cfg.predictor_qkv // cfg.predictor_heads,
            cfg.predictor_hidden, pre_norm=False))

    def __call__(self, slots: Tensor) -> Tensor:
        return self.block(slots)


class Decoder(Module):
    """Spatial broadcast decoder; channel ``C`` of the per-slot output is the alpha logit."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.pos = self.child("pos", Linear(rng, 2, cfg.slot_dim))
        self.ups = []
        cin = cfg.slot_dim
        for i, c in enumerate(cfg.decoder_channels):
            self.ups.append(self.child(f"up{i}", ConvTranspose(rng, cin, c, cfg.decoder_kernel, 2)))
            cin = c
        self.head = self.child("head", Linear(rng, cin, cfg.target_channels + 1))
        self.grid = coordinate_grid(*cfg.decoder_grid)

    def __call__(self, slots: Tensor):
        """``[..., K, D]`` slots -> (prediction ``[..., H, W, C]``, alpha ``[..., K, H, W]``, per-slot outputs)."""
        lead, (k, d) = slots.shape[:-2], slots.shape[-2:]
        n = int(np.prod(lead, dtype=np.int64)) * k
        gh, gw = self.cfg.decoder_grid
        h, w = self.cfg.resolution
        c = self.cfg.target_channels
        x = nd.expand(nd.reshape(slots, (n, 1, 1, d)), (n, gh, gw, d))
        x = nd.add(x, self.pos(Tensor(self.grid.astype(x.dtype))))
        for up in self.ups:
            x = nd.relu(up(x))
        out = nd.reshape(self.head(x), lead + (k, h, w, c + 1))
        ax = len(lead)
        alpha = nd.softmax_axis(out[..., c:], ax)  # [..., K, H, W, 1]
        content = out[..., :c]
        weighted = nd.mul(nd.expand(alpha, content.shape), content)
        prediction = nd.sum(weighted, axis=ax)
        return prediction, nd.reshape(alpha, lead + (k, h, w)), content


class ConditionalInit(Module):
    """Shared per-box MLP: ``[..., K, 4]`` boxes -> ``[..., K, D]`` slots."""

    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.num_slots = cfg.num_slots
        self.mlp = self.child("mlp", MLP(rng, 4, cfg.init_hidden, cfg.slot_dim))

    def __call__(self, boxes) -> Tensor:
        if not isinstance(boxes, Tensor):
            boxes = Tensor(np.asarray(boxes, dtype=self.mlp.fc1.w.dtype))
        if boxes.shape[-2] != self.num_slots:
            raise ValueError(f"got {boxes.shape[-2]} boxes for {self.num_slots} slots")
        return self.mlp(boxes)


class LearnedInit(Module):
    def __init__(self, rng, cfg: ModelConfig):
        super().__init__()
        self.slots = self.param("slots", rng.standard_normal((cfg.num_slots, cfg.slot_dim)) * 0.5)

    def __call__(self, batch: int | None = None) -> Tensor:
        if batch is None:
            return self.slots
        return nd.expand(self.slots, (batch,) + self.slots.shape)


class Readout(Module):
    """Per-slot box regressor; ``barrier`` stops its loss from reaching the slots."""

    def __init__(self, rng, cfg: ModelConfig, barrier: bool = True):
        super().__init__()
        self.barrier = barrier
        self.mlp = self.child("mlp", MLP(rng, cfg.slot_dim, cfg.readout_hidden, 4))

    def __call__(self, slots: Tensor) -> Tensor:
        return self.mlp(nd.stop_gradient(slots) if self.barrier else slots)


@dataclass
class UnrollOutput:
    """Per-frame outputs of a batched unroll; all tensors lead with ``[B, T]``."""

    slots: Tensor                 # [B, T, K, D] post-corrector slots
    boxes: Tensor                 # [B, T, K, 4]
    prediction: Tensor | None     # [B, T, H, W, C]
    alpha: Tensor | None          # [B, T, K, H, W]
    attention: list               # per frame [B, K, N] corrector attention (last iteration)
    corrector_calls: int = 0
    predictor_calls: int = 0

    @property
    def hard_masks(self) -> np.ndarray:
        """``[B, T, H, W]`` argmax slot index per pixel."""
        return np.argmax(self.alpha.data, axis=2)


class SAVi(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        if cfg.conditional:
            self.init = self.child("init", ConditionalInit(rng, cfg))
        else:
            self.init = self.child("init", LearnedInit(rng, cfg))
        self.encoder = self.child("encoder", Encoder(rng, cfg))
        self.corrector = self.child("corrector", Corrector(rng, cfg))
        self.predictor = self.child("predictor", Predictor(rng, cfg))
        self.decoder = self.child("decoder", Decoder(rng, cfg)) if cfg.use_decoder else None
        self.readout = self.child("readout", Readout(rng, cfg, barrier=cfg.use_decoder))

    # single-sample conveniences ------------------------------------------------
    def init_slots(self, boxes=None, batch: int = 1) -> Tensor:
        if self.cfg.conditional:
            if boxes is None:
                raise ValueError("conditional model needs first-frame boxes")
            return self.init(boxes)
        return self.init(batch)

    def encode_frame(self, rgb) -> Tensor:
        rgb = rgb if isinstance(rgb, Tensor) else Tensor(np.asarray(rgb, dtype=self.dtype))
        if rgb.ndim == 3:
            return nd.reshape(self.encoder(nd.reshape(rgb, (1,) + rgb.shape)), (-1, self.cfg.feature_dim))
        return self.encoder(rgb)

    def _batched(self, fn, slots: Tensor, *args):
        if slots.ndim == 2:
            args = [nd.reshape(a, (1,) + a.shape) for a in args]
            out = fn(nd.reshape(slots, (1,) + slots.shape), *args)
            return nd.reshape(out, out.shape[1:])
        return fn(slots, *args)

    def slot_attention_step(self, slots: Tensor, features: Tensor) -> Tensor:
        return self._batched(self.corrector, slots, features)

    def predict_next(self, slots: Tensor) -> Tensor:
        return self._batched(self.predictor, slots)

    def decode(self, slots: Tensor):
        if self.decoder is None:
            raise ValueError("model was built without a decoder")
        return self.decoder(slots)

    def readout_bboxes(self, slots: Tensor) -> Tensor:
        return self.readout(slots)

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    # full video ---------------------------------------------------------------
    def unroll(self, video, boxes=None, decode: bool = True) -> UnrollOutput:
        """Run ``[B, T, H, W, 3]`` frames; ``boxes`` are ``[B, K, 4]`` first-frame boxes.

        Per frame: correct slots with that frame's features, record them, then
        advance with the predictor for the next frame. Decoding happens on the
        post-corrector slots, batched over all frames once the loop is done.
        """
        video = video if isinstance(video, Tensor) else Tensor(np.asarray(video, dtype=self.dtype))
        if video.ndim == 4:
            video = nd.reshape(video, (1,) + video.shape)
        b, t = video.shape[:2]
        if t < 1:
            raise ValueError("need at least one frame")
        if self.cfg.conditional:
            if boxes is None:
                raise ValueError("conditional model needs first-frame boxes")
            boxes = boxes if isinstance(boxes, Tensor) else Tensor(np.asarray(boxes, dtype=self.dtype))
            if boxes.ndim == 2:
                boxes = nd.reshape(boxes, (1,) + boxes.shape)
            slots = self.init(boxes)
        else:
            slots = self.init(b)
        feats = self.encoder(nd.reshape(video, (b * t,) + video.shape[2:]))
        feats = nd.reshape(feats, (b, t) + feats.shape[1:])
        per_frame, attention = [], []
        predictor_calls = 0
        for i in range(t):
            if i > 0:
                slots = self.predictor(slots)
                predictor_calls += 1
            slots = self.corrector(slots, feats[:, i])
            attention.append(self.corrector.last_attention)
            per_frame.append(slots)
        all_slots = nd.stack(per_frame, axis=1)
        boxes_out = self.readout(all_slots)
        prediction = alpha = None
        if decode and self.decoder is not None:
            prediction, alpha, _ = self.decoder(all_slots)
        return UnrollOutput(all_slots, boxes_out, prediction, alpha, attention, t, predictor_calls)
