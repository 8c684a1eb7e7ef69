"""Binary model checkpoints and embedding files.

Checkpoint layout: 4-byte magic, u32 format version, u32 manifest length,
UTF-8 manifest, then one little-endian float32 blob. The manifest carries the
training stage, the encoder configuration, and one line per tensor giving its
shape and byte offset into the blob. Weights live in the file as float32;
in memory they are float64, so the file is the precision boundary.

Embedding files: 4-byte magic, u32 version, u32 row count, u32 dimension,
then rows as little-endian float32. The sentences belonging to the rows sit
next to the file in "<path>.txt", one per line, same order.

All writes go through a temp file and os.replace, so a crash never leaves a
half-written artifact at the target path.
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .encoder import EncoderConfig, SentenceEncoder

CHECKPOINT_MAGIC = b"AVCK"
EMBEDDING_MAGIC = b"AVSE"
FORMAT_VERSION = 1
STAGES = ("pretrained", "finetuned")


def atomic_write_bytes(path, data: bytes) -> None:
    path = str(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


@dataclass
class Checkpoint:
    stage: str
    config: EncoderConfig
    decoder_layers: int
    tensors: dict[str, np.ndarray]


def _config_lines(cfg: EncoderConfig) -> list[str]:
    return [f"vocab_size={cfg.vocab_size}", f"d_model={cfg.d_model}",
            f"n_heads={cfg.n_heads}", f"n_layers={cfg.n_layers}",
            f"ffn_dim={cfg.ffn_dim}", f"max_len={cfg.max_len}",
            f"pooling={cfg.pooling}", f"dropout={cfg.dropout!r}"]


def save_checkpoint(path, stage: str, config: EncoderConfig, tensors,
                    decoder_layers: int = 0) -> None:
    """Write a checkpoint; tensors maps name -> array (or .data carrier)."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}, got {stage!r}")
    named = {}
    for name, t in tensors.items():
        data = np.asarray(getattr(t, "data", t), dtype=np.float64)
        if " " in name or "\n" in name or not name:
            raise ValueError(f"bad tensor name {name!r}")
        named[name] = data
    lines = [f"stage={stage}", f"decoder_layers={decoder_layers}"]
    lines.extend(_config_lines(config))
    blob = bytearray()
    for name in sorted(named):
        data = named[name]
        shape = ",".join(str(s) for s in data.shape)
        lines.append(f"tensor={name} shape={shape} offset={len(blob)}")
        blob.extend(np.ascontiguousarray(data, dtype="<f4").tobytes())
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(manifest))
    out += manifest
    out += blob
    atomic_write_bytes(path, bytes(out))


def _parse_kv(lines: list[str], key: str, path: str) -> str:
    prefix = key + "="
    for line in lines:
        if line.startswith(prefix):
            return line[len(prefix):]
    raise ValueError(f"{path}: manifest is missing {key!r}")


def load_checkpoint(path) -> Checkpoint:
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12:
        raise ValueError(f"{path}: file ends at byte {len(raw)}, header needs 12")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    version, mlen = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if 12 + mlen > len(raw):
        raise ValueError(f"{path}: manifest of {mlen} bytes overruns file "
                         f"of {len(raw)} bytes")
    manifest = raw[12 : 12 + mlen].decode("utf-8")
    blob = raw[12 + mlen:]
    lines = [l for l in manifest.split("\n") if l]
    stage = _parse_kv(lines, "stage", path)
    if stage not in STAGES:
        raise ValueError(f"{path}: unknown stage {stage!r}")
    decoder_layers = int(_parse_kv(lines, "decoder_layers", path))
    cfg = EncoderConfig(
        vocab_size=int(_parse_kv(lines, "vocab_size", path)),
        d_model=int(_parse_kv(lines, "d_model", path)),
        n_heads=int(_parse_kv(lines, "n_heads", path)),
        n_layers=int(_parse_kv(lines, "n_layers", path)),
        ffn_dim=int(_parse_kv(lines, "ffn_dim", path)),
        max_len=int(_parse_kv(lines, "max_len", path)),
        pooling=_parse_kv(lines, "pooling", path),
        dropout=float(_parse_kv(lines, "dropout", path)))
    tensors: dict[str, np.ndarray] = {}
    for line in lines:
        if not line.startswith("tensor="):
            continue
        try:
            name_part, shape_part, off_part = line.split(" ")
            name = name_part[len("tensor="):]
            shape = tuple(int(s) for s in shape_part[len("shape="):].split(","))
            offset = int(off_part[len("offset="):])
        except (ValueError, IndexError):
            raise ValueError(f"{path}: malformed tensor line {line!r}") from None
        count = 1
        for s in shape:
            count *= s
        end = offset + 4 * count
        if offset < 0 or end > len(blob):
            raise ValueError(f"{path}: tensor {name!r} spans blob bytes "
                             f"{offset}..{end} but the blob has {len(blob)}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    if not tensors:
        raise ValueError(f"{path}: checkpoint holds no tensors")
    return Checkpoint(stage=stage, config=cfg, decoder_layers=decoder_layers,
                      tensors=tensors)


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild (encoder, decoder-or-None) from loaded tensors."""
    from .denoising import ReconstructionDecoder

    encoder = SentenceEncoder(ckpt.config, seed=0)
    for name, p in encoder.params.items():
        if name not in ckpt.tensors:
            raise ValueError(f"checkpoint is missing encoder tensor {name!r}")
        if ckpt.tensors[name].shape != p.data.shape:
            raise ValueError(f"tensor {name!r} has shape {ckpt.tensors[name].shape}, "
                             f"expected {p.data.shape}")
        p.data[...] = ckpt.tensors[name]
    decoder = None
    if ckpt.decoder_layers > 0:
        decoder = ReconstructionDecoder(encoder, n_layers=ckpt.decoder_layers, seed=0)
        for name, p in decoder.params.items():
            if name not in ckpt.tensors:
                raise ValueError(f"checkpoint is missing decoder tensor {name!r}")
            p.data[...] = ckpt.tensors[name]
    return encoder, decoder


def save_embeddings(path, matrix, sentences) -> None:
    """Write an embedding matrix plus its sentence sidecar "<path>.txt"."""
    path = str(path)
    m = np.ascontiguousarray(np.asarray(matrix), dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"embeddings must be 2-D, got shape {m.shape}")
    sentences = list(sentences)
    if len(sentences) != m.shape[0]:
        raise ValueError(f"{m.shape[0]} rows but {len(sentences)} sentences")
    for i, s in enumerate(sentences):
        if "\n" in s or "\r" in s:
            raise ValueError(f"sentence {i} contains a line break")
    out = bytearray()
    out += EMBEDDING_MAGIC
    out += struct.pack("<III", FORMAT_VERSION, m.shape[0], m.shape[1])
    out += m.tobytes()
    atomic_write_bytes(path, bytes(out))
    atomic_write_text(path + ".txt", "".join(s + "\n" for s in sentences))


def load_embeddings(path, with_sentences: bool = True):
    """Read (matrix, sentences); sentences is None if the sidecar is skipped."""
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise ValueError(f"{path}: file ends at byte {len(raw)}, header needs 16")
    if raw[:4] != EMBEDDING_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r} at byte 0")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    need = 16 + 4 * n * d
    if len(raw) != need:
        raise ValueError(f"{path}: {n}x{d} embeddings need {need} bytes, file has {len(raw)}")
    matrix = np.frombuffer(raw, dtype="<f4", count=n * d, offset=16).reshape(n, d).copy()
    sentences = None
    if with_sentences:
        side = path + ".txt"
        with open(side, encoding="utf-8") as fh:
            sentences = [line.rstrip("\n") for line in fh]
        if len(sentences) != n:
            raise ValueError(f"{side}: {len(sentences)} sentences for {n} rows")
    return matrix, sentences
