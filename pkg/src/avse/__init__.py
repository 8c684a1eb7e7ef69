"""Sentence embeddings for abbreviated aviation text.

The pipeline: normalize raw DATIS/ATIS dumps into a sentence corpus, pre-train
a small transformer encoder by denoising reconstruction, fine-tune it on
entailment/contradiction triplets, then embed sentences for search, paraphrase
mining, clustering, and similarity scoring. `avse.cli` exposes the same steps
as subcommands.
"""
from avse.config import FinetuneConfig, PretrainConfig, Settings, load_settings
from avse.denoising import (
    DenoisingPretrainer,
    NoiseSpec,
    ReconstructionDecoder,
    apply_deletion_noise,
    reconstruction_loss,
    train_denoising,
)
from avse.encoder import EncoderConfig, SentenceEncoder
from avse.nli import (
    ContrastiveFinetuner,
    NliExample,
    build_triplets,
    evaluate_sts,
    load_nli,
    load_sts,
    mnr_loss,
    spearman,
    train_contrastive,
)
from avse.normalizer import (
    CleanMessage,
    CleaningRule,
    DatisNormalizer,
    RawMessage,
    build_corpus,
    clean_message,
    load_rules,
    parse_raw_file,
    segment_sentences,
)
from avse.persistence import (
    Checkpoint,
    load_checkpoint,
    load_embeddings,
    model_from_checkpoint,
    save_checkpoint,
    save_embeddings,
)
from avse.tasks import (
    ClusterAssignment,
    CosineKMeans,
    PlanarProjection,
    cosine,
    dedup_counts,
    kmeans_cluster,
    paraphrase_mine,
    project_2d,
    semantic_search,
)
from avse.vocab import Vocab, build_vocab, split_tokens, tokenize

__version__ = "0.1.0"

__all__ = [
    "CleanMessage",
    "CleaningRule",
    "Checkpoint",
    "ClusterAssignment",
    "ContrastiveFinetuner",
    "CosineKMeans",
    "DatisNormalizer",
    "DenoisingPretrainer",
    "EncoderConfig",
    "FinetuneConfig",
    "NliExample",
    "NoiseSpec",
    "PlanarProjection",
    "PretrainConfig",
    "RawMessage",
    "ReconstructionDecoder",
    "SentenceEncoder",
    "Settings",
    "Vocab",
    "apply_deletion_noise",
    "build_corpus",
    "build_triplets",
    "build_vocab",
    "clean_message",
    "cosine",
    "dedup_counts",
    "evaluate_sts",
    "kmeans_cluster",
    "load_checkpoint",
    "load_embeddings",
    "load_nli",
    "load_rules",
    "load_settings",
    "load_sts",
    "mnr_loss",
    "model_from_checkpoint",
    "paraphrase_mine",
    "parse_raw_file",
    "project_2d",
    "reconstruction_loss",
    "save_checkpoint",
    "save_embeddings",
    "segment_sentences",
    "semantic_search",
    "spearman",
    "split_tokens",
    "tokenize",
    "train_contrastive",
    "train_denoising",
]
