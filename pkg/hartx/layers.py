"""Transformer encoder building blocks on top of :mod:`hartx.autodiff`.

The encoder never uses a lookup table: the one-hot sensor rows go through a fully
connected input projection. Attention is bidirectional (no causal mask) and the
sublayers use pre-norm residual wiring.
"""
from __future__ import annotations

import functools
import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

# fields that fix parameter shapes; dropout and positional flags do not
SHAPE_FIELDS = ("n_layers", "d_model", "n_heads", "d_ff", "seq_len", "input_dim")


class EncoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_layers: int = Field(2, ge=0)
    d_model: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    d_ff: int = Field(128, ge=1)
    seq_len: int = Field(32, ge=1)
    input_dim: int = Field(..., ge=1)
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    use_positional_encoding: bool = True

    @model_validator(mode="after")
    def _heads_divide_width(self) -> EncoderConfig:
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        return self

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def shape_signature(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in SHAPE_FIELDS}


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class LayerParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor

    FIELDS = (
        "wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2",
        "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
    )

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.FIELDS:
            yield name, getattr(self, name)

    @classmethod
    def init(cls, config: EncoderConfig, rng: np.random.Generator) -> LayerParams:
        d, ff = config.d_model, config.d_ff
        return cls(
            wq=xavier_uniform(rng, d, d),
            wk=xavier_uniform(rng, d, d),
            wv=xavier_uniform(rng, d, d),
            wo=xavier_uniform(rng, d, d),
            w1=xavier_uniform(rng, d, ff),
            b1=zeros(ff),
            w2=xavier_uniform(rng, ff, d),
            b2=zeros(d),
            ln1_gain=ones(d),
            ln1_bias=zeros(d),
            ln2_gain=ones(d),
            ln2_bias=zeros(d),
        )

    @staticmethod
    def shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
        d, ff = config.d_model, config.d_ff
        return {
            "wq": (d, d), "wk": (d, d), "wv": (d, d), "wo": (d, d),
            "w1": (d, ff), "b1": (ff,), "w2": (ff, d), "b2": (d,),
            "ln1_gain": (d,), "ln1_bias": (d,), "ln2_gain": (d,), "ln2_bias": (d,),
        }


@dataclass
class EncoderParams:
    proj_w: Tensor
    proj_b: Tensor
    layers: list[LayerParams]

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield "proj_w", self.proj_w
        yield "proj_b", self.proj_b
        for i, layer in enumerate(self.layers):
            for name, t in layer.named():
                yield f"layers.{i}.{name}", t

    @staticmethod
    def shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
        out: dict[str, tuple[int, ...]] = {
            "proj_w": (config.input_dim, config.d_model),
            "proj_b": (config.d_model,),
        }
        for i in range(config.n_layers):
            for name, shape in LayerParams.shapes(config).items():
                out[f"layers.{i}.{name}"] = shape
        return out


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    return EncoderParams(
        proj_w=xavier_uniform(rng, config.input_dim, config.d_model),
        proj_b=zeros(config.d_model),
        layers=[LayerParams.init(config, rng) for _ in range(config.n_layers)],
    )


def input_projection(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-timestep affine map of sensor rows into model width."""
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"input_projection shape mismatch: x {x.shape}, W {w.shape}, b {b.shape}")
    return ad.add(ad.matmul(x, w), b)


@functools.lru_cache(maxsize=32)
def _sinusoid_table(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


def positional_encoding(seq_len: int, d_model: int) -> Tensor:
    if seq_len < 1 or d_model < 1:
        raise ShapeError(
            f"positional_encoding needs positive sizes, got T={seq_len} d_model={d_model}"
        )
    return Tensor(_sinusoid_table(seq_len, d_model))


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """softmax(QK^T / sqrt(d_k)); every query row sums to one."""
    if q.shape != k.shape:
        raise ShapeError(f"attention shape mismatch: Q {q.shape} vs K {k.shape}")
    scores = ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / math.sqrt(q.shape[-1]))
    return ad.softmax(scores)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if v.shape != q.shape:
        raise ShapeError(f"attention shape mismatch: Q {q.shape} vs V {v.shape}")
    return ad.matmul(attention_weights(q, k), v)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, t, d = x.shape
    return ad.transpose(ad.reshape(x, (b, t, n_heads, d // n_heads)), (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def multi_head_attention(x: Tensor, p: LayerParams, n_heads: int) -> Tensor:
    if x.ndim != 3 or x.shape[-1] != p.wq.shape[0]:
        raise ShapeError(f"multi_head_attention expects B x T x {p.wq.shape[0]}, got {x.shape}")
    if x.shape[-1] % n_heads:
        raise ShapeError(f"width {x.shape[-1]} not divisible into {n_heads} heads")
    q = split_heads(ad.matmul(x, p.wq), n_heads)
    k = split_heads(ad.matmul(x, p.wk), n_heads)
    v = split_heads(ad.matmul(x, p.wv), n_heads)
    return ad.matmul(merge_heads(scaled_dot_attention(q, k, v)), p.wo)


def feed_forward(x: Tensor, p: LayerParams) -> Tensor:
    return ad.add(ad.matmul(ad.gelu(ad.add(ad.matmul(x, p.w1), p.b1)), p.w2), p.b2)


def encoder_layer(
    x: Tensor,
    p: LayerParams,
    config: EncoderConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    if x.ndim != 3 or x.shape[-1] != config.d_model:
        raise ShapeError(f"encoder_layer expects B x T x {config.d_model}, got {x.shape}")
    attn = multi_head_attention(ad.layer_norm(x, p.ln1_gain, p.ln1_bias), p, config.n_heads)
    h = ad.add(x, ad.dropout(attn, config.dropout_rate, rng, training))
    ff = feed_forward(ad.layer_norm(h, p.ln2_gain, p.ln2_bias), p)
    return ad.add(h, ad.dropout(ff, config.dropout_rate, rng, training))


def encoder_forward(
    x: Tensor,
    params: EncoderParams,
    config: EncoderConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """The encoding function f: B x T x V sensor windows -> B x T x d_model."""
    x = ad.as_tensor(x)
    expected = (config.seq_len, config.input_dim)
    if x.ndim != 3 or x.shape[1:] != expected:
        raise ShapeError(f"encoder expects B x {expected[0]} x {expected[1]} input, got {x.shape}")
    if np.any((x.data < 0.0) | (x.data > 1.0)):
        raise ValueError("encoder input must be one-hot/multi-hot valued in [0, 1]")
    h = input_projection(x, params.proj_w, params.proj_b)
    if config.use_positional_encoding:
        h = ad.add(h, positional_encoding(config.seq_len, config.d_model))
    for layer in params.layers:
        h = encoder_layer(h, layer, config, training=training, rng=rng)
    return h
