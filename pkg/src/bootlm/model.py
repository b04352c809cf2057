"""Masked-autoencoder transformer with relative disentangled attention.

Shapes follow the batch-first convention ``[batch, length, hidden]``. Every
forward helper also accepts unbatched inputs (``tokens`` of shape ``[L]``) and
returns unbatched outputs in that case.

There are no absolute position embeddings: the only positional signal is the
clipped signed distance between *original* token indices, which is what lets
the encoder run on the unmasked tokens alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import MaskTokenInEncoder, PositionOverlap, ShapeMismatch

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 4096
    hidden: int = 384
    heads: int = 6
    ff_inner: int = 1024
    n_encoder_layers: int = 12
    n_decoder_layers: int = 4
    max_relative_distance: int = 32
    seq_len: int = 256
    encoder_dropout: float = 0.1
    decoder_dropout: float = 0.0
    layer_norm_eps: float = 1e-7
    init_std: float = 0.02
    mask_id: int = 2
    dtype: str = "float32"

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.n_decoder_layers < 1:
            raise ValueError("at least one decoder layer is required")
        if self.n_encoder_layers < 0 or self.max_relative_distance < 1:
            raise ValueError("invalid layer count or relative distance")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**values)

    @classmethod
    def base(cls, **overrides) -> "ModelConfig":
        return cls(**{**dict(vocab_size=16384, hidden=768, heads=12, ff_inner=2048), **overrides})

    @classmethod
    def small(cls, **overrides) -> "ModelConfig":
        return cls(**{**dict(vocab_size=4096, hidden=384, heads=6, ff_inner=1024), **overrides})


def geglu_ffn(x, w1, w2, w3, inner_norm=None):
    """``(GELU(x W1) * (x W2)) W3`` with the exact erf GELU.

    Weights use the ``x @ W`` convention: ``w1, w2`` are ``[d, d_ff]`` and ``w3``
    is ``[d_ff, d]``. ``inner_norm`` (if given) is applied to the gated
    activation before the output projection.
    """
    d = x.shape[-1]
    if w1.shape != w2.shape or w1.shape[0] != d or w3.shape != (w1.shape[1], d):
        raise ShapeMismatch(
            f"x[..., {d}] incompatible with W1{tuple(w1.shape)}, W2{tuple(w2.shape)}, W3{tuple(w3.shape)}"
        )
    gated = F.gelu(x @ w1) * (x @ w2)
    if inner_norm is not None:
        gated = inner_norm(gated)
    return gated @ w3


def relative_indices(positions: torch.Tensor, max_distance: int) -> torch.Tensor:
    """``[B, L, L]`` table of ``clip(pos_i - pos_j, -K, K) + K``."""
    delta = positions[:, :, None] - positions[:, None, :]
    return delta.clamp(-max_distance, max_distance) + max_distance


class DisentangledAttention(nn.Module):
    """Content-content + content-position + position-content attention.

    score(i, j) = q_c(i)·k_c(j) + q_c(i)·k_r(δ(i,j)) + q_r(δ(j,i))·k_c(j),
    scaled by 1/sqrt(3 · head_dim). The relative embedding table is layer-normed
    and then shares the content query/key projections.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.hidden
        self.heads = config.heads
        self.head_dim = config.head_dim
        self.max_distance = config.max_relative_distance
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.output = nn.Linear(d, d)
        self.relative_embedding = nn.Parameter(torch.empty(2 * config.max_relative_distance + 1, d))
        self.relative_norm = nn.LayerNorm(d, eps=config.layer_norm_eps)

    def _split(self, x):
        *lead, length, _ = x.shape
        return x.view(*lead, length, self.heads, self.head_dim).transpose(-3, -2)

    def attention_probs(self, x, positions):
        B, L, _ = x.shape
        q, k = self._split(self.query(x)), self._split(self.key(x))
        rel_emb = self.relative_norm(self.relative_embedding)
        q_rel = self._split(self.query(rel_emb))  # [h, 2K+1, dh]
        k_rel = self._split(self.key(rel_emb))
        rel = relative_indices(positions, self.max_distance)[:, None].expand(B, self.heads, L, L)

        c2c = q @ k.transpose(-1, -2)
        c2p = torch.gather(q @ k_rel.transpose(-1, -2), -1, rel)
        # row j, column i holds k_c(j)·q_r(δ(j,i)); transpose into [i, j]
        p2c = torch.gather(k @ q_rel.transpose(-1, -2), -1, rel).transpose(-1, -2)
        scores = (c2c + c2p + p2c) / math.sqrt(3 * self.head_dim)
        return torch.softmax(scores, dim=-1)

    def forward(self, x, positions):
        B, L, d = x.shape
        if positions.shape != (B, L):
            raise ShapeMismatch(f"positions {tuple(positions.shape)} do not match states {(B, L)}")
        probs = self.attention_probs(x, positions)
        context = (probs @ self._split(self.value(x))).transpose(1, 2).reshape(B, L, d)
        return self.output(context)


class TransformerLayer(nn.Module):
    """Attention and GEGLU sublayers, each with a pre-LN and an inner LN."""

    def __init__(self, config: ModelConfig, dropout: float):
        super().__init__()
        d, d_ff, eps = config.hidden, config.ff_inner, config.layer_norm_eps
        self.attention_norm = nn.LayerNorm(d, eps=eps)
        self.attention = DisentangledAttention(config)
        self.attention_post_norm = nn.LayerNorm(d, eps=eps)
        self.ff_norm = nn.LayerNorm(d, eps=eps)
        self.w1 = nn.Linear(d, d_ff, bias=False)
        self.w2 = nn.Linear(d, d_ff, bias=False)
        self.ff_inner_norm = nn.LayerNorm(d_ff, eps=eps)
        self.w3 = nn.Linear(d_ff, d, bias=False)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, positions):
        h = self.dropout(self.attention(self.attention_norm(x), positions))
        x = x + self.attention_post_norm(h)
        inner = lambda g: self.ff_inner_norm(self.dropout(g))  # noqa: E731
        return x + geglu_ffn(
            self.ff_norm(x), self.w1.weight.T, self.w2.weight.T, self.w3.weight.T, inner
        )


def _batched(t: torch.Tensor, unbatched_dims: int):
    """Add a batch axis to unbatched input; the flag tells callers to strip it again."""
    return (t.unsqueeze(0), True) if t.dim() == unbatched_dims else (t, False)


def _gather_rows(states, index):
    return torch.gather(states, 1, index[..., None].expand(*index.shape, states.shape[-1]))


class BootModel(nn.Module):
    """Encoder, decoder and the two prediction heads.

    ``latent_head=False`` builds the parameter mirror used for the teacher and
    for student-only exports.
    """

    def __init__(self, config: ModelConfig, latent_head: bool = True):
        super().__init__()
        self.config = config
        d = config.hidden
        self.embedding = nn.Embedding(config.vocab_size, d)
        self.encoder = nn.ModuleList(
            TransformerLayer(config, config.encoder_dropout) for _ in range(config.n_encoder_layers)
        )
        self.decoder = nn.ModuleList(
            TransformerLayer(config, config.decoder_dropout) for _ in range(config.n_decoder_layers)
        )
        self.mask_embedding = nn.Parameter(torch.empty(d))
        self.mlm_norm = nn.LayerNorm(d, eps=config.layer_norm_eps)
        self.mlm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        self.latent_head = nn.Linear(d, d, bias=False) if latent_head else None
        self.reset_parameters()
        self.to(config.torch_dtype)

    @torch.no_grad()
    def reset_parameters(self):
        std = self.config.init_std
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif "norm" in name:
                p.fill_(1.0)
            else:
                nn.init.trunc_normal_(p, std=std, a=-2 * std, b=2 * std)

    def _check_positions(self, positions, length):
        if positions.shape[-1] != length:
            raise ShapeMismatch(f"{positions.shape[-1]} positions for {length} tokens")

    def encoder_forward(self, tokens, positions=None) -> list[torch.Tensor]:
        """Run the encoder on unmasked tokens; returns the embedding plus every layer's output."""
        tokens, unbatched = _batched(torch.as_tensor(tokens), 1)
        if positions is None:
            positions = torch.arange(tokens.shape[1]).expand_as(tokens)
        positions = _batched(torch.as_tensor(positions).long(), 1)[0]
        self._check_positions(positions, tokens.shape[1])
        if (tokens == self.config.mask_id).any():
            raise MaskTokenInEncoder("the encoder never receives [MASK] tokens")
        h = self.embedding(tokens)
        states = [h]
        for layer in self.encoder:
            h = layer(h, positions)
            states.append(h)
        return [s[0] for s in states] if unbatched else states

    def assemble_decoder_input(self, encoder_final, encoder_positions, masked_positions):
        encoder_final, unbatched = _batched(encoder_final, 2)
        encoder_positions = _batched(torch.as_tensor(encoder_positions).long(), 1)[0]
        masked_positions = _batched(torch.as_tensor(masked_positions).long(), 1)[0]
        B, n_enc, d = encoder_final.shape
        self._check_positions(encoder_positions, n_enc)
        if masked_positions.shape[0] != B:
            raise ShapeMismatch("batch size of masked positions differs from encoder states")
        length = n_enc + masked_positions.shape[1]
        order = torch.cat([encoder_positions, masked_positions], dim=1).long()
        sorted_order = order.sort(dim=1).values
        if not torch.equal(sorted_order, torch.arange(length).expand(B, length)):
            if (sorted_order[:, 1:] == sorted_order[:, :-1]).any():
                raise PositionOverlap("masked and unmasked positions intersect")
            raise ShapeMismatch(f"positions do not cover 0..{length - 1} exactly")
        mask_rows = self.mask_embedding.expand(B, masked_positions.shape[1], d)
        stacked = torch.cat([encoder_final, mask_rows], dim=1)
        full = _gather_rows(stacked, order.argsort(dim=1))
        return full[0] if unbatched else full

    def decoder_forward(self, encoder_final, encoder_positions, masked_positions) -> torch.Tensor:
        """Fill masked slots with the mask embedding and run the decoder over the full sequence."""
        h = self.assemble_decoder_input(encoder_final, encoder_positions, masked_positions)
        h, unbatched = _batched(h, 2)
        positions = torch.arange(h.shape[1]).expand(h.shape[0], h.shape[1])
        for layer in self.decoder:
            h = layer(h, positions)
        return h[0] if unbatched else h

    def mlm_logits(self, decoder_states, masked_positions) -> torch.Tensor:
        h, unbatched = _batched(decoder_states, 2)
        idx = _batched(torch.as_tensor(masked_positions).long(), 1)[0]
        rows = self.mlm_norm(_gather_rows(h, idx))
        logits = F.linear(rows, self.embedding.weight, self.mlm_bias)
        return logits[0] if unbatched else logits

    def latent_predictions(self, decoder_states, masked_positions) -> torch.Tensor:
        if self.latent_head is None:
            raise RuntimeError("this model was built without a latent head")
        h, unbatched = _batched(decoder_states, 2)
        idx = _batched(torch.as_tensor(masked_positions).long(), 1)[0]
        out = self.latent_head(_gather_rows(h, idx))
        return out[0] if unbatched else out

    def forward(self, encoder_tokens, encoder_positions, masked_positions):
        """Student pass: returns (decoder states, MLM logits at masked positions)."""
        enc = self.encoder_forward(encoder_tokens, encoder_positions)[-1]
        dec = self.decoder_forward(enc, encoder_positions, masked_positions)
        return dec, self.mlm_logits(dec, masked_positions)


def make_teacher(student: BootModel) -> BootModel:
    """Gradient-free mirror of ``student`` without the latent head."""
    teacher = BootModel(student.config, latent_head=False)
    teacher.load_state_dict(
        {k: v for k, v in student.state_dict().items() if not k.startswith("latent_head.")}
    )
    teacher.requires_grad_(False)
    return teacher


def parameter_free_layer_norm(x: torch.Tensor, eps: float = 1e-7) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], eps=eps)
