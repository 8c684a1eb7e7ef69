"""Denoising autoencoder pre-training for the sentence encoder.

Each training example deletes a fixed fraction of a sentence's tokens, encodes
what is left into a single vector, and asks a small decoder to reproduce the
original token sequence. The decoder reads the sentence only through
cross-attention onto that one vector, so the vector has to carry the sentence.
Encoder and decoder share the token-embedding storage, and the decoder's
output projection is that same table transposed.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .config import PretrainConfig
from .encoder import EncoderConfig, SentenceEncoder, _attention_params, _block_params, causal_mask, \
    multi_head_attention, feed_forward, pool, scaled_dot_attention
from .optim import AdamW
from .vocab import CLS_ID, EOS_ID, Vocab, build_vocab, tokenize


@dataclass(frozen=True)
class NoiseSpec:
    """Deletion noise: remove floor(ratio * n) tokens, order preserved.

    Removal indices come from numpy.random.default_rng(rng_seed) via
    choice(n, size=k, replace=False); re-running that generator reproduces
    the exact survivors.
    """

    deletion_ratio: float = 0.6
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.deletion_ratio < 1.0:
            raise ValueError(f"deletion_ratio must be in [0, 1), got {self.deletion_ratio}")


def _delete_tokens(token_ids: list[int], ratio: float, rng: np.random.Generator) -> list[int]:
    n = len(token_ids)
    if n == 0:
        raise ValueError("cannot apply deletion noise to an empty token list")
    k = int(ratio * n)
    if k >= n:
        k = n - 1
    if k == 0:
        return list(token_ids)
    removed = set(rng.choice(n, size=k, replace=False).tolist())
    return [t for i, t in enumerate(token_ids) if i not in removed]


def apply_deletion_noise(token_ids: list[int], spec: NoiseSpec) -> list[int]:
    """Noisy copy of a content-token list ([CLS] must not be included)."""
    return _delete_tokens(token_ids, spec.deletion_ratio, np.random.default_rng(spec.rng_seed))


def restricted_cross_attention(hidden: Tensor, sentence: Tensor, weights) -> Tensor:
    """Attention whose keys and values are a single projected sentence vector.

    With one key the softmax weight is exactly 1 for every query row, so all
    output rows are identical; with identity projections each row is the
    sentence vector itself.
    """
    if sentence.shape[0] != 1:
        raise ValueError(f"sentence embedding must be one row, got {sentence.shape}")
    q = ad.add(ad.matmul(hidden, weights["wq"]), weights["bq"])
    k = ad.add(ad.matmul(sentence, weights["wk"]), weights["bk"])
    v = ad.add(ad.matmul(sentence, weights["wv"]), weights["bv"])
    att = scaled_dot_attention(q, k, v)
    return ad.add(ad.matmul(att, weights["wo"]), weights["bo"])


class ReconstructionDecoder:
    """Decoder over the target sequence; depth 1 is plenty at desk scale.

    Holds a reference to the encoder's token table rather than a copy: the
    input embedding and the output projection are literally the same Tensor.
    """

    def __init__(self, encoder: SentenceEncoder, n_layers: int = 1, seed: int = 0):
        if n_layers < 1:
            raise ValueError("decoder needs at least one layer")
        cfg = encoder.config
        self.config = cfg
        self.n_layers = n_layers
        self.tok_emb = encoder.params["tok_emb"]
        rng = np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        p["dec_pos_emb"] = Tensor(rng.normal(0.0, 0.02, (cfg.max_len, cfg.d_model)), requires_grad=True)
        for i in range(n_layers):
            _attention_params(rng, cfg.d_model, f"dec{i}.self", p)
            _attention_params(rng, cfg.d_model, f"dec{i}.cross", p)
            p[f"dec{i}.lnc.g"] = Tensor(np.ones(cfg.d_model), requires_grad=True)
            p[f"dec{i}.lnc.b"] = Tensor(np.zeros(cfg.d_model), requires_grad=True)
            _block_params(rng, cfg.d_model, cfg.ffn_dim, f"dec{i}", p)
        self.params = p

    def cross_weights(self, layer: int) -> dict[str, Tensor]:
        pre = f"dec{layer}.cross"
        return {k: self.params[f"{pre}.{k}"] for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


def decode_teacher_forced(target_ids, sentence: Tensor, decoder: ReconstructionDecoder,
                          train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Logits (t, vocab) for each target position under teacher forcing.

    The target sequence, [EOS]-terminated, is shifted right behind a [CLS]
    start symbol, and self-attention is causally masked, so the logits at
    position i never see targets at positions >= i. Every position reads the
    sentence vector through restricted cross-attention.
    """
    targets = list(target_ids)
    if not targets or targets[-1] != EOS_ID:
        raise ValueError("decoder targets must end with [EOS]")
    cfg = decoder.config
    t = len(targets)
    if t > cfg.max_len:
        raise ValueError(f"target length {t} exceeds max_len {cfg.max_len}")
    p = decoder.params
    drop = cfg.dropout if train else 0.0
    if drop > 0.0 and rng is None:
        raise ValueError("training-mode decode needs an rng for dropout")
    inputs = [CLS_ID] + targets[:-1]
    x = ad.add(ad.embedding_rows(decoder.tok_emb, inputs),
               ad.embedding_rows(p["dec_pos_emb"], list(range(t))))
    mask = causal_mask(t)
    for i in range(decoder.n_layers):
        a = multi_head_attention(x, x, p, f"dec{i}.self", cfg.n_heads, mask)
        if drop > 0.0:
            a = ad.dropout(a, drop, rng)
        x = ad.layer_norm_rows(ad.add(x, a), p[f"dec{i}.ln1.g"], p[f"dec{i}.ln1.b"])
        c = restricted_cross_attention(x, sentence, decoder.cross_weights(i))
        if drop > 0.0:
            c = ad.dropout(c, drop, rng)
        x = ad.layer_norm_rows(ad.add(x, c), p[f"dec{i}.lnc.g"], p[f"dec{i}.lnc.b"])
        f = feed_forward(x, p, f"dec{i}")
        if drop > 0.0:
            f = ad.dropout(f, drop, rng)
        x = ad.layer_norm_rows(ad.add(x, f), p[f"dec{i}.ln2.g"], p[f"dec{i}.ln2.b"])
    return ad.matmul(x, ad.transpose(decoder.tok_emb))


def reconstruction_loss(encoder: SentenceEncoder, decoder: ReconstructionDecoder,
                        content_ids: list[int], noisy_ids: list[int],
                        train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Cross-entropy of reconstructing content_ids from the noisy encoding."""
    enc_ids = [CLS_ID] + list(noisy_ids)
    hidden = encoder.encode(enc_ids, train=train, rng=rng)
    sent = pool(hidden, encoder.config.pooling, enc_ids)
    targets = list(content_ids) + [EOS_ID]
    logits = decode_teacher_forced(targets, sent, decoder, train=train, rng=rng)
    return ad.cross_entropy(logits, targets)


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data[...] = snap[k]


def train_denoising(sentences: list[list[int]], encoder: SentenceEncoder,
                    decoder: ReconstructionDecoder, cfg: PretrainConfig,
                    deletion_ratio: float, seed: int):
    """Run the pre-training loop over tokenized content sequences.

    Returns (train_history, eval_history, best_eval_loss); histories are
    (step, loss) pairs. A 5% held-out split (at least one sentence when the
    corpus has 20+) is scored every evaluation_steps and at the end; with
    save_best the weights giving the best held-out loss are kept.
    """
    if not sentences:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(seed)
    eval_seed = int(rng.integers(2**31))

    order = rng.permutation(len(sentences))
    n_hold = int(0.05 * len(sentences))
    holdout = [sentences[i] for i in order[:n_hold]]
    train_set = [sentences[i] for i in order[n_hold:]]
    if not train_set:
        train_set, holdout = holdout, []
    eval_set = holdout if holdout else train_set

    params = dict(encoder.params)
    for k, v in decoder.params.items():
        params[k] = v
    opt = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    def eval_loss() -> float:
        ev_rng = np.random.default_rng(eval_seed)
        total = 0.0
        for content in eval_set:
            noisy = _delete_tokens(content, deletion_ratio, ev_rng)
            total += reconstruction_loss(encoder, decoder, content, noisy).item()
        return total / len(eval_set)

    steps_per_epoch = max(1, (len(train_set) + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    train_hist: list[tuple[int, float]] = []
    eval_hist: list[tuple[int, float]] = []
    best = (float("inf"), None)
    step = 0
    while step < total_steps:
        epoch_order = rng.permutation(len(train_set))
        for b0 in range(0, len(train_set), cfg.batch_size):
            if step >= total_steps:
                break
            batch = [train_set[i] for i in epoch_order[b0 : b0 + cfg.batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                total = None
                for content in batch:
                    noisy = _delete_tokens(content, deletion_ratio, rng)
                    loss_i = reconstruction_loss(encoder, decoder, content, noisy, train=True, rng=rng)
                    total = loss_i if total is None else ad.add(total, loss_i)
                loss = ad.scale(total, 1.0 / len(batch))
                loss_value = loss.item()
                backward(tape, loss)
            opt.step()
            step += 1
            train_hist.append((step, loss_value))
            if step % cfg.evaluation_steps == 0 or step == total_steps:
                ev = eval_loss()
                eval_hist.append((step, ev))
                if ev < best[0]:
                    best = (ev, _snapshot(params))
                if cfg.show_progress:
                    print(f"[pretrain] step {step}/{total_steps} train {loss_value:.4f} eval {ev:.4f}",
                          file=sys.stderr)
    if cfg.save_best and best[1] is not None:
        _restore(params, best[1])
    return train_hist, eval_hist, best[0]


class DenoisingPretrainer(BaseEstimator):
    """Estimator wrapper: fit(sentences) builds the vocabulary, trains the
    encoder-decoder pair, and keeps the encoder; transform(sentences) embeds.
    """

    def __init__(self, d_model=32, n_heads=2, n_layers=2, ffn_dim=64, max_len=64,
                 pooling="cls", dropout=0.1, decoder_layers=1, deletion_ratio=0.6,
                 min_count=1, epochs=1, learning_rate=1e-4, weight_decay=1e-5,
                 scheduler="constant", batch_size=128, evaluation_steps=500,
                 save_best=True, show_progress=True, use_amp=False, max_steps=None,
                 seed=0):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ffn_dim = ffn_dim
        self.max_len = max_len
        self.pooling = pooling
        self.dropout = dropout
        self.decoder_layers = decoder_layers
        self.deletion_ratio = deletion_ratio
        self.min_count = min_count
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.scheduler = scheduler
        self.batch_size = batch_size
        self.evaluation_steps = evaluation_steps
        self.save_best = save_best
        self.show_progress = show_progress
        self.use_amp = use_amp
        self.max_steps = max_steps
        self.seed = seed

    def _train_config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, scheduler=self.scheduler,
            batch_size=self.batch_size, evaluation_steps=self.evaluation_steps,
            save_best=self.save_best, show_progress=self.show_progress,
            use_amp=self.use_amp, max_steps=self.max_steps)

    def fit(self, X, y=None):
        corpus = [s for s in X if s and s.strip()]
        if not corpus:
            raise ValueError("the corpus has no non-empty sentences")
        NoiseSpec(deletion_ratio=self.deletion_ratio)  # range check
        cfg_train = self._train_config()
        self.vocab_ = build_vocab(corpus, min_count=self.min_count)
        enc_cfg = EncoderConfig(
            vocab_size=len(self.vocab_), d_model=self.d_model, n_heads=self.n_heads,
            n_layers=self.n_layers, ffn_dim=self.ffn_dim, max_len=self.max_len,
            pooling=self.pooling, dropout=self.dropout)
        self.encoder_ = SentenceEncoder(enc_cfg, seed=self.seed)
        self.decoder_ = ReconstructionDecoder(self.encoder_, n_layers=self.decoder_layers,
                                              seed=self.seed + 1)
        tokenized = []
        for s in corpus:
            content = tokenize(s, self.vocab_, self.max_len)[1:]
            if content:
                tokenized.append(content)
        self.train_history_, self.eval_history_, self.best_eval_loss_ = train_denoising(
            tokenized, self.encoder_, self.decoder_, cfg_train, self.deletion_ratio, self.seed)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "encoder_"):
            raise NotFittedError("DenoisingPretrainer is not fitted")
        rows = [self.encoder_.embed(tokenize(s, self.vocab_, self.max_len)) for s in X]
        return np.asarray(rows, dtype=np.float32)
