"""Recognition and pretraining networks.

Every head reads the encoder output: the classifier and the pair head consume the
pooled encoding, the decoder runs per timestep on the full sequence.
"""
from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .layers import (
    EncoderConfig,
    EncoderParams,
    LayerParams,
    encoder_forward,
    init_encoder,
    xavier_uniform,
    zeros,
)

HEADS = ("classifier_head", "decoder_head", "pair_head")
SECTIONS = ("encoder", *HEADS)

Pooling = Literal["mean", "max", "first"]


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    encoder: EncoderConfig
    n_classes: int = Field(..., ge=1)
    d_hidden: int = Field(64, ge=1)
    pooling: Pooling = "mean"


@dataclass
class MLPHead:
    """Two-layer MLP, GELU hidden activation, raw outputs."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self) -> Iterator[tuple[str, Tensor]]:
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w1.shape[0]:
            raise ShapeError(f"head expects width {self.w1.shape[0]}, got {x.shape}")
        hidden = ad.gelu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(hidden, self.w2), self.b2)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> MLPHead:
        return cls(
            w1=xavier_uniform(rng, in_dim, hidden),
            b1=zeros(hidden),
            w2=xavier_uniform(rng, hidden, out_dim),
            b2=zeros(out_dim),
        )

    @staticmethod
    def shapes(in_dim: int, hidden: int, out_dim: int) -> dict[str, tuple[int, ...]]:
        return {"w1": (in_dim, hidden), "b1": (hidden,), "w2": (hidden, out_dim), "b2": (out_dim,)}


def head_dims(config: ModelConfig, head: str) -> tuple[int, int, int]:
    d, hidden = config.encoder.d_model, config.d_hidden
    if head == "classifier_head":
        return d, hidden, config.n_classes
    if head == "decoder_head":
        return d, hidden, config.encoder.input_dim
    if head == "pair_head":
        return 2 * d, hidden, 2
    raise ValueError(f"unknown head: {head}")


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: EncoderParams
    classifier_head: MLPHead | None = None
    decoder_head: MLPHead | None = None
    pair_head: MLPHead | None = None

    @property
    def heads(self) -> tuple[str, ...]:
        return tuple(h for h in HEADS if getattr(self, h) is not None)

    def named_parameters(self, sections: Iterable[str] | None = None) -> list[tuple[str, Tensor]]:
        """Parameters in the fixed serialisation order: encoder, classifier, decoder, pair."""
        wanted = set(SECTIONS if sections is None else sections)
        out: list[tuple[str, Tensor]] = []
        if "encoder" in wanted:
            out.extend((f"encoder.{n}", t) for n, t in self.encoder.named())
        for head in HEADS:
            module = getattr(self, head)
            if head in wanted and module is not None:
                out.extend((f"{head}.{n}", t) for n, t in module.named())
        return out

    def parameter_dict(self, sections: Iterable[str] | None = None) -> dict[str, Tensor]:
        return dict(self.named_parameters(sections))


def expected_shapes(config: ModelConfig, heads: Iterable[str]) -> dict[str, tuple[int, ...]]:
    out = {f"encoder.{n}": s for n, s in EncoderParams.shapes(config.encoder).items()}
    for head in HEADS:
        if head in heads:
            shapes = MLPHead.shapes(*head_dims(config, head))
            out.update({f"{head}.{n}": s for n, s in shapes.items()})
    return out


def init_model(config: ModelConfig, seed: int = 0, heads: Iterable[str] = HEADS) -> ModelParams:
    rng = np.random.default_rng(seed)
    params = ModelParams(config=config, encoder=init_encoder(config.encoder, rng))
    for head in HEADS:
        if head in heads:
            setattr(params, head, MLPHead.init(rng, *head_dims(config, head)))
    return params


def params_from_arrays(
    config: ModelConfig, heads: Iterable[str], arrays: dict[str, np.ndarray]
) -> ModelParams:
    """Rebuild ModelParams from named arrays (checkpoint loading)."""
    heads = tuple(heads)
    t = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    enc = config.encoder
    layers = [
        LayerParams(**{f: t[f"encoder.layers.{i}.{f}"] for f in LayerParams.FIELDS})
        for i in range(enc.n_layers)
    ]
    encoder = EncoderParams(t["encoder.proj_w"], t["encoder.proj_b"], layers)
    params = ModelParams(config=config, encoder=encoder)
    for head in heads:
        setattr(params, head, MLPHead(*(t[f"{head}.{n}"] for n in ("w1", "b1", "w2", "b2"))))
    return params


def clone_params(params: ModelParams) -> ModelParams:
    arrays = {name: t.data.copy() for name, t in params.named_parameters()}
    return params_from_arrays(params.config, params.heads, arrays)


@dataclass
class Encoding:
    sequence: Tensor  # B x T x d_model
    pooled: Tensor  # B x d_model


def pool(sequence: Tensor, how: Pooling) -> Tensor:
    if how == "mean":
        return ad.mean(sequence, axis=1)
    if how == "max":
        return ad.max_over(sequence, axis=1)
    b, _, d = sequence.shape
    return ad.reshape(ad.take(sequence, [0], axis=1), (b, d))


def encode(
    x: Tensor | np.ndarray,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Encoding:
    """The function f plus pooling: hidden representation h of a window batch."""
    seq = encoder_forward(
        ad.as_tensor(x), params.encoder, params.config.encoder, training=training, rng=rng
    )
    return Encoding(sequence=seq, pooled=pool(seq, params.config.pooling))


def _require(params: ModelParams, head: str) -> MLPHead:
    module = getattr(params, head)
    if module is None:
        raise ConfigError(f"model has no {head}")
    return module


def classifier_logits(
    x: Tensor | np.ndarray,
    params: ModelParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    h = encode(x, params, training=training, rng=rng).pooled
    return _require(params, "classifier_head").forward(h)


def classify(x: Tensor | np.ndarray, params: ModelParams) -> Tensor:
    """Class probabilities, B x C; argmax is the predicted activity."""
    return ad.softmax(classifier_logits(x, params))


def decode(h: Encoding, params: ModelParams) -> Tensor:
    """The decoder g: per-timestep reconstruction in (0, 1), same shape as the window."""
    return ad.sigmoid(_require(params, "decoder_head").forward(h.sequence))


def pair_logits(h_i: Tensor, h_j: Tensor, params: ModelParams) -> Tensor:
    """Logits over {different-input, same-input} for concatenated pooled encodings.

    Not symmetric: pair_logits(a, b) and pair_logits(b, a) generally differ.
    """
    head = _require(params, "pair_head")
    if h_i.shape != h_j.shape or 2 * h_i.shape[-1] != head.in_dim:
        raise ShapeError(
            f"pair_logits width mismatch: {h_i.shape} and {h_j.shape} for head input {head.in_dim}"
        )
    return head.forward(ad.concat([h_i, h_j], axis=-1))


def transfer_encoder(
    pretrained: ModelParams, target: ModelConfig | None = None, seed: int = 0
) -> ModelParams:
    """Keep the pretrained encoder, drop decoder and pair heads, fresh classifier head."""
    target = target or pretrained.config
    have = pretrained.config.encoder.shape_signature()
    want = target.encoder.shape_signature()
    diff = {k: (have[k], want[k]) for k in have if have[k] != want[k]}
    if diff:
        detail = ", ".join(f"{k}: pretrained={a} target={b}" for k, (a, b) in diff.items())
        raise ConfigError(f"encoder config mismatch ({detail})")
    rng = np.random.default_rng(seed)
    arrays = {name: t.data.copy() for name, t in pretrained.named_parameters(["encoder"])}
    fresh = params_from_arrays(target, (), arrays)
    fresh.classifier_head = MLPHead.init(rng, *head_dims(target, "classifier_head"))
    return fresh
