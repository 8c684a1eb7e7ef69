"""Toy transformer encoder producing one vector per sentence.

Sized for desk experiments: d_model 32, 2 heads, 2 layers by default. Token
and learned positional embeddings feed post-norm blocks (self-attention then
feed-forward, each wrapped in residual + layer norm). The sentence vector is
the [CLS] row or the token mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .vocab import PAD_ID

POOLING_MODES = ("cls", "mean")


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    d_model: int = 32
    n_heads: int = 2
    n_layers: int = 2
    ffn_dim: int = 64
    max_len: int = 64
    pooling: str = "cls"
    dropout: float = 0.1

    def __post_init__(self):
        if self.vocab_size < 6:
            raise ValueError("vocab_size must cover the five reserved ids plus content")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if min(self.d_model, self.n_layers, self.ffn_dim, self.max_len) < 1:
            raise ValueError("model dimensions must be positive")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v, with an optional additive mask on the scores."""
    d = q.shape[1]
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d))
    if mask is not None:
        scores = ad.add(scores, Tensor(mask))
    return ad.matmul(ad.softmax_rows(scores), v)


def causal_mask(t: int) -> np.ndarray:
    """Additive mask letting position i see positions <= i."""
    m = np.full((t, t), -1e9)
    return np.triu(m, k=1)


def _attention_params(rng, d: float, prefix: str, params: dict) -> None:
    for name in ("wq", "wk", "wv", "wo"):
        params[f"{prefix}.{name}"] = Tensor(rng.normal(0.0, 0.02, (int(d), int(d))), requires_grad=True)
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{prefix}.{name}"] = Tensor(np.zeros(int(d)), requires_grad=True)


def _block_params(rng, d: int, ffn: int, prefix: str, params: dict) -> None:
    params[f"{prefix}.ln1.g"] = Tensor(np.ones(d), requires_grad=True)
    params[f"{prefix}.ln1.b"] = Tensor(np.zeros(d), requires_grad=True)
    params[f"{prefix}.w1"] = Tensor(rng.normal(0.0, 0.02, (d, ffn)), requires_grad=True)
    params[f"{prefix}.b1"] = Tensor(np.zeros(ffn), requires_grad=True)
    params[f"{prefix}.w2"] = Tensor(rng.normal(0.0, 0.02, (ffn, d)), requires_grad=True)
    params[f"{prefix}.b2"] = Tensor(np.zeros(d), requires_grad=True)
    params[f"{prefix}.ln2.g"] = Tensor(np.ones(d), requires_grad=True)
    params[f"{prefix}.ln2.b"] = Tensor(np.zeros(d), requires_grad=True)


def multi_head_attention(x: Tensor, kv: Tensor, params: dict, prefix: str, n_heads: int,
                         mask: np.ndarray | None = None) -> Tensor:
    """Project, split columns into heads, attend per head, concat, project out."""
    q = ad.add(ad.matmul(x, params[f"{prefix}.wq"]), params[f"{prefix}.bq"])
    k = ad.add(ad.matmul(kv, params[f"{prefix}.wk"]), params[f"{prefix}.bk"])
    v = ad.add(ad.matmul(kv, params[f"{prefix}.wv"]), params[f"{prefix}.bv"])
    dh = q.shape[1] // n_heads
    heads = []
    for h in range(n_heads):
        qs = ad.slice_cols(q, h * dh, (h + 1) * dh)
        ks = ad.slice_cols(k, h * dh, (h + 1) * dh)
        vs = ad.slice_cols(v, h * dh, (h + 1) * dh)
        heads.append(scaled_dot_attention(qs, ks, vs, mask))
    merged = heads[0] if n_heads == 1 else ad.concat_cols(heads)
    return ad.add(ad.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])


def feed_forward(x: Tensor, params: dict, prefix: str) -> Tensor:
    h = ad.gelu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def pool(hidden: Tensor, mode: str, token_ids=None) -> Tensor:
    """Sentence vector as a (1, d) tensor: the [CLS] row or the token mean.

    For mean pooling, [PAD] positions are excluded when token_ids are given;
    the per-sentence paths in this package never pad.
    """
    if mode == "cls":
        return ad.take_row(hidden, 0)
    if mode == "mean":
        if token_ids is not None:
            keep = [i for i, t in enumerate(token_ids) if t != PAD_ID]
            if not keep:
                raise ValueError("cannot mean-pool a sentence of only [PAD]")
            if len(keep) != hidden.shape[0]:
                return ad.mean_rows(ad.embedding_rows(hidden, keep))
        return ad.mean_rows(hidden)
    raise ValueError(f"unknown pooling mode {mode!r}")


class SentenceEncoder:
    """Encoder parameters plus the forward pass. Owns the shared token table."""

    def __init__(self, config: EncoderConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        p["tok_emb"] = Tensor(rng.normal(0.0, 0.02, (config.vocab_size, config.d_model)), requires_grad=True)
        p["pos_emb"] = Tensor(rng.normal(0.0, 0.02, (config.max_len, config.d_model)), requires_grad=True)
        for i in range(config.n_layers):
            _attention_params(rng, config.d_model, f"enc{i}.attn", p)
            _block_params(rng, config.d_model, config.ffn_dim, f"enc{i}", p)
        self.params = p

    def encode(self, token_ids, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Hidden states (t, d) for one sentence of token ids."""
        cfg = self.config
        ids = list(token_ids)
        if not ids:
            raise ValueError("cannot encode an empty token sequence")
        if len(ids) > cfg.max_len:
            raise ValueError(f"sequence length {len(ids)} exceeds max_len {cfg.max_len}")
        if min(ids) < 0 or max(ids) >= cfg.vocab_size:
            raise ValueError("token id outside the vocabulary")
        p = self.params
        drop = cfg.dropout if train else 0.0
        if drop > 0.0 and rng is None:
            raise ValueError("training-mode encode needs an rng for dropout")
        x = ad.add(ad.embedding_rows(p["tok_emb"], ids),
                   ad.embedding_rows(p["pos_emb"], list(range(len(ids)))))
        for i in range(cfg.n_layers):
            a = multi_head_attention(x, x, p, f"enc{i}.attn", cfg.n_heads)
            if drop > 0.0:
                a = ad.dropout(a, drop, rng)
            x = ad.layer_norm_rows(ad.add(x, a), p[f"enc{i}.ln1.g"], p[f"enc{i}.ln1.b"])
            f = feed_forward(x, p, f"enc{i}")
            if drop > 0.0:
                f = ad.dropout(f, drop, rng)
            x = ad.layer_norm_rows(ad.add(x, f), p[f"enc{i}.ln2.g"], p[f"enc{i}.ln2.b"])
        return x

    def embed(self, token_ids) -> np.ndarray:
        """Inference-mode sentence vector as a plain (d,) float64 array."""
        pooled = pool(self.encode(token_ids), self.config.pooling, token_ids)
        return pooled.data[0].copy()

    def copy(self) -> "SentenceEncoder":
        """Independent encoder with the same config and weight values."""
        twin = SentenceEncoder(self.config, seed=0)
        for name, p in self.params.items():
            twin.params[name].data[...] = p.data
        return twin
