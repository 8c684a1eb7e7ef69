"""Command-line pipeline: normalize, train, embed, and query DATIS text.

Every command is a pure function of its inputs, the config file and --seed;
running one twice writes byte-identical output. Progress goes to stderr so
redirected stdout stays clean.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import load_settings
from .denoising import DenoisingPretrainer
from .nli import (ContrastiveFinetuner, _header_columns, evaluate_sts, load_nli,
                  load_sts)
from .normalizer import clean_message, load_rules, parse_raw_file, segment_sentences
from .persistence import (atomic_write_text, load_checkpoint, load_embeddings,
                          model_from_checkpoint, save_checkpoint, save_embeddings)
from .tasks import dedup_counts, kmeans_cluster, paraphrase_mine, project_2d, \
    semantic_search, cosine
from .vocab import Vocab, tokenize


def _emit(out_path, text: str) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        atomic_write_text(out_path, text)


def _require_out(args, command: str) -> str:
    if args.out is None:
        raise ValueError(f"{command} writes a binary artifact; --out is required")
    return args.out


def _read_lines(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def _load_model(ckpt_path: str, vocab_path: str):
    ckpt = load_checkpoint(ckpt_path)
    encoder, _ = model_from_checkpoint(ckpt)
    vocab = Vocab.load(vocab_path)
    if len(vocab) != ckpt.config.vocab_size:
        raise ValueError(f"vocabulary has {len(vocab)} entries but the checkpoint "
                         f"expects {ckpt.config.vocab_size}")
    return encoder, vocab


def _embed_sentences(encoder, vocab, sentences) -> np.ndarray:
    max_len = encoder.config.max_len
    rows = [encoder.embed(tokenize(s, vocab, max_len)) for s in sentences]
    return np.asarray(rows, dtype=np.float32)


def _cmd_clean(args) -> int:
    # raw DATIS files keep CRLF inside records; newline="" preserves them
    with open(args.input, encoding="utf-8", newline="") as fh:
        text = fh.read()
    rules = load_rules(args.rules)
    bodies = [clean_message(m, rules).body for m in parse_raw_file(text)]
    _emit(args.out, "".join(b + "\n" for b in bodies))
    return 0


def _cmd_segment(args) -> int:
    sentences = []
    for body in _read_lines(args.input):
        sentences.extend(segment_sentences(body))
    if args.keep_duplicates:
        if args.counts_out:
            raise ValueError("--counts-out needs deduplication; drop --keep-duplicates")
        out_sentences = sentences
    else:
        counted = dedup_counts(sentences)
        out_sentences = [s for s, _ in counted]
        if args.counts_out:
            atomic_write_text(args.counts_out, "".join(f"{c}\n" for _, c in counted))
    _emit(args.out, "".join(s + "\n" for s in out_sentences))
    return 0


def _cmd_pretrain(args) -> int:
    out = _require_out(args, "pretrain-tsdae")
    settings = load_settings(args.config, args.seed)
    corpus = _read_lines(args.corpus)
    pre = settings.pretrain
    trainer = DenoisingPretrainer(
        deletion_ratio=settings.deletion_ratio, min_count=settings.min_count,
        decoder_layers=settings.decoder_layers, epochs=pre.epochs,
        learning_rate=pre.learning_rate, weight_decay=pre.weight_decay,
        scheduler=pre.scheduler, batch_size=pre.batch_size,
        evaluation_steps=pre.evaluation_steps, save_best=pre.save_best,
        show_progress=pre.show_progress, use_amp=pre.use_amp,
        max_steps=pre.max_steps, seed=settings.seed, **settings.encoder)
    trainer.fit(corpus)
    params = dict(trainer.encoder_.params)
    params.update(trainer.decoder_.params)
    save_checkpoint(out, "pretrained", trainer.encoder_.config, params,
                    decoder_layers=settings.decoder_layers)
    vocab_out = args.vocab_out if args.vocab_out else out + ".vocab"
    trainer.vocab_.save(vocab_out)
    return 0


def _cmd_finetune(args) -> int:
    out = _require_out(args, "finetune-nli")
    settings = load_settings(args.config, args.seed)
    encoder, vocab = _load_model(args.model, args.vocab)
    examples = load_nli(args.nli)
    sts_dev = load_sts(args.sts_dev) if args.sts_dev else None
    fin = settings.finetune
    tuner = ContrastiveFinetuner(
        encoder=encoder, vocab=vocab, scale=fin.scale, epochs=fin.epochs,
        learning_rate=fin.learning_rate, weight_decay=fin.weight_decay,
        scheduler=fin.scheduler, batch_size=fin.batch_size,
        evaluation_steps=fin.evaluation_steps, save_best=fin.save_best,
        show_progress=fin.show_progress, use_amp=fin.use_amp,
        max_steps=fin.max_steps, seed=settings.seed)
    tuner.fit(examples, sts_dev=sts_dev)
    save_checkpoint(out, "finetuned", encoder.config, tuner.encoder_.params,
                    decoder_layers=0)
    return 0


def _cmd_embed(args) -> int:
    out = _require_out(args, "embed")
    encoder, vocab = _load_model(args.model, args.vocab)
    sentences = _read_lines(args.corpus)
    save_embeddings(out, _embed_sentences(encoder, vocab, sentences), sentences)
    return 0


def _cmd_search(args) -> int:
    matrix, sentences = load_embeddings(args.embeddings)
    encoder, vocab = _load_model(args.model, args.vocab)
    counts = None
    if args.counts_file:
        counts = [int(c) for c in _read_lines(args.counts_file)]
        if len(counts) != len(sentences):
            raise ValueError(f"{args.counts_file}: {len(counts)} counts for "
                             f"{len(sentences)} sentences")
    query_vec = encoder.embed(tokenize(args.query, vocab, encoder.config.max_len))
    hits = semantic_search(query_vec, matrix, top_k=args.top_k)
    header = "rank\tindex\tsentence\tscore"
    lines = [header + ("\tcount" if counts else "")]
    for rank, (idx, score) in enumerate(hits, start=1):
        row = f"{rank}\t{idx}\t{sentences[idx]}\t{score:.4f}"
        if counts:
            row += f"\t{counts[idx]}"
        lines.append(row)
    _emit(args.out, "".join(l + "\n" for l in lines))
    return 0


def _cmd_cluster(args) -> int:
    matrix, sentences = load_embeddings(args.embeddings)
    result = kmeans_cluster(matrix, args.k, seed=args.seed, max_iters=args.max_iters)
    lines = ["index\tsentence\tcluster_id"]
    for i, (s, c) in enumerate(zip(sentences, result.labels)):
        lines.append(f"{i}\t{s}\t{int(c)}")
    _emit(args.out, "".join(l + "\n" for l in lines))
    if args.projection_out:
        coords = project_2d(matrix)
        plines = ["index\tx\ty\tcluster_id"]
        for i, (xy, c) in enumerate(zip(coords, result.labels)):
            plines.append(f"{i}\t{xy[0]:.6f}\t{xy[1]:.6f}\t{int(c)}")
        atomic_write_text(args.projection_out, "".join(l + "\n" for l in plines))
    return 0


def _cmd_mine(args) -> int:
    matrix, sentences = load_embeddings(args.embeddings)
    pairs = paraphrase_mine(matrix, top_k_per_query=args.top_k_per_query,
                            max_pairs=args.max_pairs,
                            query_chunk_size=args.query_chunk_size,
                            corpus_chunk_size=args.corpus_chunk_size)
    lines = ["i\tj\tsentence_i\tsentence_j\tscore"]
    for i, j, score in pairs:
        lines.append(f"{i}\t{j}\t{sentences[i]}\t{sentences[j]}\t{score:.4f}")
    _emit(args.out, "".join(l + "\n" for l in lines))
    return 0


def _cmd_sts_eval(args) -> int:
    encoder, vocab = _load_model(args.model, args.vocab)
    pairs, gold = load_sts(args.pairs)
    rho = evaluate_sts(encoder, vocab, pairs, gold)
    _emit(args.out, f"spearman\t{rho:.6f}\n")
    return 0


def _load_pairs(path: str) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path}: empty file")
        cols = _header_columns(header, ("sentence1", "sentence2"), path)
        pairs = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) <= max(cols.values()):
                raise ValueError(f"{path} line {lineno}: expected at least "
                                 f"{max(cols.values()) + 1} fields, got {len(fields)}")
            pairs.append((fields[cols["sentence1"]], fields[cols["sentence2"]]))
    return pairs


def _cmd_compare(args) -> int:
    models = []
    with open(args.models, encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{args.models}: empty file")
        cols = _header_columns(header, ("name", "checkpoint", "vocab"), args.models)
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) <= max(cols.values()):
                raise ValueError(f"{args.models} line {lineno}: expected at least "
                                 f"{max(cols.values()) + 1} fields, got {len(fields)}")
            models.append((fields[cols["name"]], fields[cols["checkpoint"]],
                           fields[cols["vocab"]]))
    if not models:
        raise ValueError(f"{args.models}: no model rows")
    pairs = _load_pairs(args.pairs)
    columns = []
    for _, ckpt_path, vocab_path in models:
        encoder, vocab = _load_model(ckpt_path, vocab_path)
        max_len = encoder.config.max_len
        scores = [cosine(encoder.embed(tokenize(s1, vocab, max_len)),
                         encoder.embed(tokenize(s2, vocab, max_len)))
                  for s1, s2 in pairs]
        columns.append(scores)
    lines = ["Index\tSentence1\tSentence2\t" + "\t".join(name for name, _, _ in models)]
    for i, (s1, s2) in enumerate(pairs):
        cells = "\t".join(f"{col[i]:.3f}" for col in columns)
        lines.append(f"{i}\t{s1}\t{s2}\t{cells}")
    _emit(args.out, "".join(l + "\n" for l in lines))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avse",
                                     description="Aviation sentence-embedding pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="fixes all randomness")
    common.add_argument("--config", default=None, help="flat key=value settings file")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("clean", parents=[common], help="normalize raw DATIS messages")
    p.add_argument("--input", required=True, help="raw message file (blank-line separated)")
    p.add_argument("--rules", default=None, help="alternate cleaning-rule TSV")
    p.set_defaults(func=_cmd_clean)

    p = sub.add_parser("segment", parents=[common], help="split cleaned messages into sentences")
    p.add_argument("--input", required=True, help="cleaned messages, one per line")
    p.add_argument("--keep-duplicates", action="store_true")
    p.add_argument("--counts-out", default=None, help="write per-sentence multiplicities here")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("pretrain-tsdae", parents=[common], help="denoising pre-training")
    p.add_argument("--corpus", required=True, help="sentences, one per line")
    p.add_argument("--vocab-out", default=None, help="vocabulary path (default: OUT.vocab)")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("finetune-nli", parents=[common], help="contrastive fine-tuning")
    p.add_argument("--model", required=True, help="pretrained checkpoint")
    p.add_argument("--vocab", required=True)
    p.add_argument("--nli", required=True, help="TSV with sentence1/sentence2/label")
    p.add_argument("--sts-dev", default=None, help="TSV with sentence1/sentence2/score")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("embed", parents=[common], help="embed a sentence file")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("search", parents=[common], help="semantic search over embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--counts-file", default=None,
                   help="per-sentence multiplicities from `segment --counts-out`")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("cluster", parents=[common], help="k-means over embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int, default=11)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--projection-out", default=None, help="2-D projection TSV")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("mine-paraphrases", parents=[common], help="highest-cosine pairs")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--top-k-per-query", type=int, default=100)
    p.add_argument("--max-pairs", type=int, default=500000)
    p.add_argument("--query-chunk-size", type=int, default=5000)
    p.add_argument("--corpus-chunk-size", type=int, default=100000)
    p.set_defaults(func=_cmd_mine)

    p = sub.add_parser("sts-eval", parents=[common], help="Spearman against gold scores")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--pairs", required=True, help="TSV with sentence1/sentence2/score")
    p.set_defaults(func=_cmd_sts_eval)

    p = sub.add_parser("compare-models", parents=[common],
                       help="per-pair cosine table across checkpoints")
    p.add_argument("--models", required=True, help="TSV with name/checkpoint/vocab")
    p.add_argument("--pairs", required=True, help="TSV with sentence1/sentence2")
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
