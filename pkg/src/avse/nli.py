"""Contrastive fine-tuning on inference-labeled sentence pairs.

Premises with an entailed hypothesis and a contradicted hypothesis become
(anchor, positive, negative) triplets. Within a batch every non-matching
candidate acts as an additional negative: scores are scaled cosines between
each anchor and all batch candidates, and the loss is cross-entropy against
the anchor's own positive.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .config import FinetuneConfig
from .encoder import SentenceEncoder, pool
from .optim import AdamW
from .tasks import cosine
from .vocab import Vocab, tokenize

LABELS = ("entailment", "neutral", "contradiction")


@dataclass(frozen=True)
class NliExample:
    premise: str
    hypothesis: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")


def _header_columns(header: str, required: tuple[str, ...], path: str) -> dict[str, int]:
    names = header.rstrip("\n").split("\t")
    cols = {}
    for want in required:
        if want not in names:
            raise ValueError(f"{path}: header is missing column {want!r}")
        cols[want] = names.index(want)
    return cols


def load_nli(path) -> list[NliExample]:
    """Read labeled pairs from a TSV with a header naming at least
    sentence1, sentence2 and label; other columns are ignored."""
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file")
        cols = _header_columns(header, ("sentence1", "sentence2", "label"), path)
        out = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) <= max(cols.values()):
                raise ValueError(f"{path} line {lineno}: expected at least "
                                 f"{max(cols.values()) + 1} fields, got {len(fields)}")
            label = fields[cols["label"]]
            if label not in LABELS:
                raise ValueError(f"{path} line {lineno}: unknown label {label!r}")
            out.append(NliExample(fields[cols["sentence1"]], fields[cols["sentence2"]], label))
    return out


def build_triplets(examples) -> list[tuple[str, str, str]]:
    """(premise, entailed, contradicted) triplets, premises in first-seen
    order, hypothesis pairs in file order. Neutral pairs contribute nothing."""
    ent: dict[str, list[str]] = {}
    con: dict[str, list[str]] = {}
    order: list[str] = []
    for ex in examples:
        if ex.premise not in ent:
            ent[ex.premise] = []
            con[ex.premise] = []
            order.append(ex.premise)
        if ex.label == "entailment":
            ent[ex.premise].append(ex.hypothesis)
        elif ex.label == "contradiction":
            con[ex.premise].append(ex.hypothesis)
    triplets = []
    for premise in order:
        for p in ent[premise]:
            for n in con[premise]:
                triplets.append((premise, p, n))
    return triplets


def mnr_loss(anchors: Tensor, positives: Tensor, negatives: Tensor, scale: float = 20.0) -> Tensor:
    """Cross-entropy over scaled anchor-candidate cosines.

    Candidates are the batch's positives then its negatives (2B rows); the
    correct class for anchor i is candidate i.
    """
    b = anchors.shape[0]
    if positives.shape != anchors.shape or negatives.shape != anchors.shape:
        raise ValueError("anchors, positives and negatives must share one shape")
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    a = ad.normalize_rows(anchors)
    cand = ad.normalize_rows(ad.concat_rows([positives, negatives]))
    scores = ad.scale(ad.matmul(a, ad.transpose(cand)), scale)
    return ad.cross_entropy(scores, list(range(b)))


def classification_logits(u: np.ndarray, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Three-way logits from the concatenation (u, v, |u - v|); w is (3, 3d).

    This is the classification head used when training directly on the labels
    instead of contrastively; kept as a plain function for comparisons.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    feat = np.concatenate([u, v, np.abs(u - v)])
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (3, feat.shape[0]):
        raise ValueError(f"w must be (3, {feat.shape[0]}), got {w.shape}")
    return w @ feat


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(gold, pred) -> float:
    """Rank correlation with average ranks for ties."""
    g = np.asarray(gold, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if g.shape != p.shape:
        raise ValueError(f"shape mismatch {g.shape} vs {p.shape}")
    if len(g) < 2:
        raise ValueError("need at least two observations")
    if np.all(g == g[0]) or np.all(p == p[0]):
        raise ValueError("rank correlation is undefined for constant input")
    rg = _average_ranks(g) - (len(g) + 1) / 2.0
    rp = _average_ranks(p) - (len(p) + 1) / 2.0
    return float((rg @ rp) / np.sqrt((rg @ rg) * (rp @ rp)))


def load_sts(path) -> tuple[list[tuple[str, str]], list[float]]:
    """Sentence pairs and similarity scores in [0, 5] from a headered TSV."""
    path = str(path)
    pairs: list[tuple[str, str]] = []
    gold: list[float] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file")
        cols = _header_columns(header, ("sentence1", "sentence2", "score"), path)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) <= max(cols.values()):
                raise ValueError(f"{path} line {lineno}: expected at least "
                                 f"{max(cols.values()) + 1} fields, got {len(fields)}")
            try:
                score = float(fields[cols["score"]])
            except ValueError:
                raise ValueError(f"{path} line {lineno}: bad score "
                                 f"{fields[cols['score']]!r}") from None
            if not 0.0 <= score <= 5.0:
                raise ValueError(f"{path} line {lineno}: score {score} outside [0, 5]")
            pairs.append((fields[cols["sentence1"]], fields[cols["sentence2"]]))
            gold.append(score)
    return pairs, gold


def evaluate_sts(encoder: SentenceEncoder, vocab: Vocab, pairs, gold) -> float:
    """Spearman correlation of embedding cosines against the gold scores."""
    max_len = encoder.config.max_len
    preds = [cosine(encoder.embed(tokenize(s1, vocab, max_len)),
                    encoder.embed(tokenize(s2, vocab, max_len))) for s1, s2 in pairs]
    return spearman(gold, preds)


def _embed_batch(encoder: SentenceEncoder, vocab: Vocab, sentences, train, rng) -> Tensor:
    cfg = encoder.config
    rows = []
    for s in sentences:
        ids = tokenize(s, vocab, cfg.max_len)
        rows.append(pool(encoder.encode(ids, train=train, rng=rng), cfg.pooling, ids))
    return rows[0] if len(rows) == 1 else ad.concat_rows(rows)


def train_contrastive(triplets, encoder: SentenceEncoder, vocab: Vocab,
                      cfg: FinetuneConfig, seed: int, sts_dev=None):
    """Fine-tune the encoder in place on (anchor, positive, negative) strings.

    Returns (train_history, dev_history, best_dev) as (step, value) pairs.
    With dev pairs the best-correlation weights are restored at the end when
    save_best is set; without them the final weights stand.
    """
    triplets = list(triplets)
    if not triplets:
        raise ValueError("no training triplets")
    rng = np.random.default_rng(seed)
    opt = AdamW(encoder.params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    def dev_score() -> float:
        pairs, gold = sts_dev
        return evaluate_sts(encoder, vocab, pairs, gold)

    steps_per_epoch = max(1, (len(triplets) + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = cfg.max_steps if cfg.max_steps is not None else cfg.epochs * steps_per_epoch
    train_hist: list[tuple[int, float]] = []
    dev_hist: list[tuple[int, float]] = []
    best: tuple[float, dict | None] = (-np.inf, None)
    step = 0
    while step < total_steps:
        epoch_order = rng.permutation(len(triplets))
        for b0 in range(0, len(triplets), cfg.batch_size):
            if step >= total_steps:
                break
            batch = [triplets[i] for i in epoch_order[b0 : b0 + cfg.batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                anchors = _embed_batch(encoder, vocab, [t[0] for t in batch], True, rng)
                positives = _embed_batch(encoder, vocab, [t[1] for t in batch], True, rng)
                negatives = _embed_batch(encoder, vocab, [t[2] for t in batch], True, rng)
                loss = mnr_loss(anchors, positives, negatives, scale=cfg.scale)
                loss_value = loss.item()
                backward(tape, loss)
            opt.step()
            step += 1
            train_hist.append((step, loss_value))
            if sts_dev is not None and (step % cfg.evaluation_steps == 0 or step == total_steps):
                rho = dev_score()
                dev_hist.append((step, rho))
                if rho > best[0]:
                    best = (rho, {k: p.data.copy() for k, p in encoder.params.items()})
                if cfg.show_progress:
                    print(f"[finetune] step {step}/{total_steps} loss {loss_value:.4f} "
                          f"dev rho {rho:.4f}", file=sys.stderr)
            elif cfg.show_progress:
                print(f"[finetune] step {step}/{total_steps} loss {loss_value:.4f}",
                      file=sys.stderr)
    if cfg.save_best and best[1] is not None:
        for k, p in encoder.params.items():
            p.data[...] = best[1][k]
    return train_hist, dev_hist, best[0]


class ContrastiveFinetuner(BaseEstimator):
    """Estimator face of the fine-tuning loop.

    fit(X) accepts NliExample records or ready (anchor, positive, negative)
    string triplets; the supplied encoder is copied, never mutated.
    """

    def __init__(self, encoder=None, vocab=None, scale=20.0, epochs=1,
                 learning_rate=1e-5, weight_decay=1e-6, scheduler="constant",
                 batch_size=128, evaluation_steps=500, save_best=True,
                 show_progress=True, use_amp=False, max_steps=None, seed=0):
        self.encoder = encoder
        self.vocab = vocab
        self.scale = scale
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

    def _train_config(self) -> FinetuneConfig:
        return FinetuneConfig(
            epochs=self.epochs, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, scheduler=self.scheduler,
            batch_size=self.batch_size, evaluation_steps=self.evaluation_steps,
            save_best=self.save_best, show_progress=self.show_progress,
            use_amp=self.use_amp, max_steps=self.max_steps, scale=self.scale)

    def fit(self, X, y=None, sts_dev=None):
        if self.encoder is None or self.vocab is None:
            raise ValueError("ContrastiveFinetuner needs encoder and vocab")
        rows = list(X)
        if rows and isinstance(rows[0], NliExample):
            triplets = build_triplets(rows)
        else:
            triplets = [tuple(r) for r in rows]
            if any(len(t) != 3 for t in triplets):
                raise ValueError("triplets must have exactly three sentences")
        cfg = self._train_config()
        self.encoder_ = self.encoder.copy()
        self.history_, self.dev_history_, self.best_spearman_ = train_contrastive(
            triplets, self.encoder_, self.vocab, cfg, self.seed, sts_dev=sts_dev)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "encoder_"):
            raise NotFittedError("ContrastiveFinetuner is not fitted")
        max_len = self.encoder_.config.max_len
        rows = [self.encoder_.embed(tokenize(s, self.vocab, max_len)) for s in X]
        return np.asarray(rows, dtype=np.float32)
