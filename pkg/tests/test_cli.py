import os
import re
from types import SimpleNamespace

import numpy as np
import pytest

from avse.cli import main
from avse.persistence import load_checkpoint, load_embeddings, model_from_checkpoint
from avse.tasks import cosine
from avse.vocab import Vocab, tokenize
from conftest import FIXTURES

RAW = os.path.join(FIXTURES, "raw_messages.txt")
GOLDEN = os.path.join(FIXTURES, "golden_clean.txt")

CONFIG = """\
# desk-sized model so the pipeline runs in seconds
min_count = 1
decoder_layers = 1
encoder.d_model = 16
encoder.n_heads = 2
encoder.n_layers = 1
encoder.ffn_dim = 32
encoder.max_len = 16
encoder.dropout = 0.0
pretrain.batch_size = 8
pretrain.evaluation_steps = 2
pretrain.max_steps = 4
pretrain.show_progress = false
finetune.learning_rate = 0.001
finetune.batch_size = 4
finetune.evaluation_steps = 2
finetune.max_steps = 2
finetune.show_progress = false
"""

NLI = """\
sentence1\tsentence2\tlabel
RWY 7R, 7L APPROACH IN USE.\tAPPROACH IN USE.\tentailment
RWY 7R, 7L APPROACH IN USE.\tRWY 7R CLOSED.\tcontradiction
NOTAMS.\tNOTAMS CURRENT.\tentailment
NOTAMS.\tNO NOTAMS.\tcontradiction
"""

STS = """\
sentence1\tsentence2\tscore
NOTAMS.\tNOTAMS.\t5.0
NOTAMS.\tRWY 7R CLOSED.\t1.0
APPROACH IN USE.\tRWY 7R, 7L APPROACH IN USE.\t4.0
APPROACH IN USE.\tHAZD WX INFO.\t0.5
"""

PAIRS = """\
sentence1\tsentence2
NOTAMS.\tNOTAMS.
APPROACH IN USE.\tRWY 7R CLOSED.
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "settings.cfg"
    cfg.write_text(CONFIG, encoding="utf-8")
    cleaned = d / "cleaned.txt"
    sentences = d / "sentences.txt"
    counts = d / "counts.txt"
    ckpt = d / "model.ckpt"
    fine = d / "fine.ckpt"
    emb = d / "emb.bin"
    nli = d / "nli.tsv"
    nli.write_text(NLI, encoding="utf-8")
    sts = d / "sts.tsv"
    sts.write_text(STS, encoding="utf-8")
    pairs = d / "pairs.tsv"
    pairs.write_text(PAIRS, encoding="utf-8")

    assert main(["clean", "--input", RAW, "--out", str(cleaned)]) == 0
    assert main(["segment", "--input", str(cleaned), "--out", str(sentences),
                 "--counts-out", str(counts)]) == 0
    assert main(["pretrain-tsdae", "--corpus", str(sentences),
                 "--config", str(cfg), "--out", str(ckpt)]) == 0
    vocab = str(ckpt) + ".vocab"
    assert main(["embed", "--model", str(ckpt), "--vocab", vocab,
                 "--corpus", str(sentences), "--out", str(emb)]) == 0
    assert main(["finetune-nli", "--model", str(ckpt), "--vocab", vocab,
                 "--nli", str(nli), "--sts-dev", str(sts),
                 "--config", str(cfg), "--out", str(fine)]) == 0
    return SimpleNamespace(dir=d, cfg=cfg, cleaned=cleaned, sentences=sentences,
                           counts=counts, ckpt=ckpt, vocab=vocab, emb=emb,
                           fine=fine, nli=nli, sts=sts, pairs=pairs)


def test_clean_reproduces_golden_bytes(pipeline):
    with open(GOLDEN, "rb") as fh:
        assert pipeline.cleaned.read_bytes() == fh.read()
    again = pipeline.dir / "cleaned2.txt"
    assert main(["clean", "--input", RAW, "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline.cleaned.read_bytes()


def test_clean_writes_stdout_by_default(capsys):
    assert main(["clean", "--input", RAW]) == 0
    out = capsys.readouterr().out
    with open(GOLDEN, encoding="utf-8") as fh:
        assert out == fh.read()


def test_segment_sentences_and_counts(pipeline):
    sentences = pipeline.sentences.read_text(encoding="utf-8").splitlines()
    counts = [int(c) for c in pipeline.counts.read_text(encoding="utf-8").split()]
    assert len(sentences) == len(set(sentences))
    assert len(counts) == len(sentences)
    assert all(c >= 1 for c in counts)

    kept = pipeline.dir / "dups.txt"
    assert main(["segment", "--input", str(pipeline.cleaned), "--out", str(kept),
                 "--keep-duplicates"]) == 0
    with_dups = kept.read_text(encoding="utf-8").splitlines()
    assert len(with_dups) == sum(counts)


def test_segment_flag_conflict(pipeline, capsys):
    rc = main(["segment", "--input", str(pipeline.cleaned), "--keep-duplicates",
               "--counts-out", str(pipeline.dir / "never.txt")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_pretrain_is_byte_deterministic(pipeline):
    again = pipeline.dir / "model2.ckpt"
    assert main(["pretrain-tsdae", "--corpus", str(pipeline.sentences),
                 "--config", str(pipeline.cfg), "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline.ckpt.read_bytes()
    with open(str(again) + ".vocab", "rb") as a, open(pipeline.vocab, "rb") as b:
        assert a.read() == b.read()


def test_pretrain_checkpoint_contents(pipeline):
    ckpt = load_checkpoint(pipeline.ckpt)
    assert ckpt.stage == "pretrained"
    assert ckpt.decoder_layers == 1
    assert ckpt.config.d_model == 16
    assert any(name.startswith("dec0.") for name in ckpt.tensors)


def test_embed_deterministic_and_faithful(pipeline):
    again = pipeline.dir / "emb2.bin"
    assert main(["embed", "--model", str(pipeline.ckpt), "--vocab", pipeline.vocab,
                 "--corpus", str(pipeline.sentences), "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline.emb.read_bytes()

    matrix, sentences = load_embeddings(pipeline.emb)
    assert matrix.shape == (len(sentences), 16)
    assert sentences == pipeline.sentences.read_text(encoding="utf-8").splitlines()
    # stored f32 rows lose almost nothing against the f64 originals
    encoder, _ = model_from_checkpoint(load_checkpoint(pipeline.ckpt))
    vocab = Vocab.load(pipeline.vocab)
    for row, s in zip(matrix, sentences):
        full = encoder.embed(tokenize(s, vocab, 16))
        assert cosine(full, row) > 1.0 - 1e-6


def test_finetune_outputs(pipeline):
    ckpt = load_checkpoint(pipeline.fine)
    assert ckpt.stage == "finetuned"
    assert ckpt.decoder_layers == 0
    assert not any(name.startswith("dec0.") for name in ckpt.tensors)
    again = pipeline.dir / "fine2.ckpt"
    assert main(["finetune-nli", "--model", str(pipeline.ckpt), "--vocab", pipeline.vocab,
                 "--nli", str(pipeline.nli), "--sts-dev", str(pipeline.sts),
                 "--config", str(pipeline.cfg), "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline.fine.read_bytes()


def test_search_output_format(pipeline, capsys):
    argv = ["search", "--embeddings", str(pipeline.emb), "--model", str(pipeline.ckpt),
            "--vocab", pipeline.vocab, "--query", "APPROACH IN USE.", "--top-k", "5"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    lines = first.splitlines()
    assert lines[0] == "rank\tindex\tsentence\tscore"
    assert len(lines) == 6
    for rank, line in enumerate(lines[1:], start=1):
        cells = line.split("\t")
        assert int(cells[0]) == rank
        assert re.fullmatch(r"-?\d+\.\d{4}", cells[3])
    scores = [float(l.split("\t")[3]) for l in lines[1:]]
    assert scores == sorted(scores, reverse=True)
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_search_with_counts_column(pipeline, capsys):
    assert main(["search", "--embeddings", str(pipeline.emb), "--model", str(pipeline.ckpt),
                 "--vocab", pipeline.vocab, "--query", "NOTAMS.",
                 "--counts-file", str(pipeline.counts)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "rank\tindex\tsentence\tscore\tcount"
    assert all(len(l.split("\t")) == 5 for l in lines[1:])

    short = pipeline.dir / "short_counts.txt"
    short.write_text("1\n2\n", encoding="utf-8")
    rc = main(["search", "--embeddings", str(pipeline.emb), "--model", str(pipeline.ckpt),
               "--vocab", pipeline.vocab, "--query", "NOTAMS.",
               "--counts-file", str(short)])
    assert rc == 1
    assert "counts" in capsys.readouterr().err


def test_cluster_output_format(pipeline):
    out = pipeline.dir / "clusters.tsv"
    proj = pipeline.dir / "proj.tsv"
    argv = ["cluster", "--embeddings", str(pipeline.emb), "--k", "3",
            "--out", str(out), "--projection-out", str(proj)]
    assert main(argv) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    n = len(load_embeddings(pipeline.emb)[1])
    assert lines[0] == "index\tsentence\tcluster_id"
    assert len(lines) == n + 1
    labels = [int(l.split("\t")[2]) for l in lines[1:]]
    assert set(labels) <= {0, 1, 2}

    plines = proj.read_text(encoding="utf-8").splitlines()
    assert plines[0] == "index\tx\ty\tcluster_id"
    assert len(plines) == n + 1
    for line in plines[1:]:
        _, x, y, c = line.split("\t")
        assert re.fullmatch(r"-?\d+\.\d{6}", x)
        assert re.fullmatch(r"-?\d+\.\d{6}", y)
        assert int(c) in {0, 1, 2}

    out2 = pipeline.dir / "clusters2.tsv"
    assert main(["cluster", "--embeddings", str(pipeline.emb), "--k", "3",
                 "--out", str(out2), "--projection-out", str(proj)]) == 0
    assert out2.read_bytes() == out.read_bytes()


def test_mine_output_format(pipeline, capsys):
    argv = ["mine-paraphrases", "--embeddings", str(pipeline.emb),
            "--top-k-per-query", "3"]
    assert main(argv) == 0
    first = capsys.readouterr().out
    lines = first.splitlines()
    assert lines[0] == "i\tj\tsentence_i\tsentence_j\tscore"
    scores = []
    for line in lines[1:]:
        i, j, _, _, s = line.split("\t")
        assert int(i) < int(j)
        assert re.fullmatch(r"-?\d+\.\d{4}", s)
        scores.append(float(s))
    assert scores == sorted(scores, reverse=True)
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_sts_eval_output(pipeline, capsys):
    assert main(["sts-eval", "--model", str(pipeline.fine), "--vocab", pipeline.vocab,
                 "--pairs", str(pipeline.sts)]) == 0
    out = capsys.readouterr().out
    assert re.fullmatch(r"spearman\t-?\d\.\d{6}\n", out)


def test_compare_models_table(pipeline, capsys):
    models = pipeline.dir / "models.tsv"
    models.write_text("name\tcheckpoint\tvocab\n"
                      f"base\t{pipeline.ckpt}\t{pipeline.vocab}\n"
                      f"tuned\t{pipeline.fine}\t{pipeline.vocab}\n", encoding="utf-8")
    argv = ["compare-models", "--models", str(models), "--pairs", str(pipeline.pairs)]
    assert main(argv) == 0
    first = capsys.readouterr().out
    lines = first.splitlines()
    assert lines[0] == "Index\tSentence1\tSentence2\tbase\ttuned"
    assert len(lines) == 3
    for i, line in enumerate(lines[1:]):
        cells = line.split("\t")
        assert int(cells[0]) == i
        assert re.fullmatch(r"-?\d\.\d{3}", cells[3])
        assert re.fullmatch(r"-?\d\.\d{3}", cells[4])
    # identical sentences score 1.000 for every model
    assert lines[1].split("\t")[3] == "1.000"
    assert main(argv) == 0
    assert capsys.readouterr().out == first


def test_runtime_errors_exit_1(pipeline, capsys):
    assert main(["clean", "--input", str(pipeline.dir / "missing.txt")]) == 1
    assert capsys.readouterr().err.startswith("error:")
    assert main(["embed", "--model", str(pipeline.ckpt), "--vocab", pipeline.vocab,
                 "--corpus", str(pipeline.sentences)]) == 1
    assert "--out is required" in capsys.readouterr().err
    assert main(["sts-eval", "--model", str(pipeline.ckpt), "--vocab", pipeline.vocab,
                 "--pairs", str(pipeline.nli)]) == 1  # wrong schema: no score column
    assert capsys.readouterr().err.startswith("error:")


def test_usage_errors_exit_2(pipeline):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["search", "--embeddings", str(pipeline.emb)])  # missing required flags
    assert exc.value.code == 2
