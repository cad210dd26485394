"""Binary checkpoint format.

Layout (little-endian):

    magic b"FUSE" | u32 version
    tensor block      u32 count, then per entry:
                      u16 name length, UTF-8 name, u8 rank, rank x u32 dims, f64 payload
    optimizer block   u32 count, then per optimizer:
                      u16 name length, UTF-8 name, 4 x f64 (lr, beta1, beta2, eps), u32 step,
                      a tensor block of first moments, a tensor block of second moments
    rng block         a tensor block; each entry is one PCG64 stream as 10 f64 words
    config block      u32 length, UTF-8 ``key = value`` text
    metadata block    u32 length, UTF-8 JSON (vocabularies and feature widths)
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from .errors import CheckpointError
from .layers import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"FUSE"
VERSION = 1
_WORD = 1 << 32


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray]
    optimizers: Dict[str, AdamState] = field(default_factory=dict)
    rng_states: Dict[str, dict] = field(default_factory=dict)
    config_text: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)


# rng state <-> words

def rng_state_to_words(state: dict) -> np.ndarray:
    if state.get("bit_generator") != "PCG64":
        raise CheckpointError(f"unsupported bit generator '{state.get('bit_generator')}'")
    words = []
    for value in (state["state"]["state"], state["state"]["inc"]):
        words.extend((value >> (32 * i)) % _WORD for i in range(4))
    words.extend((state["has_uint32"], state["uinteger"]))
    return np.array(words, dtype=np.float64)


def words_to_rng_state(words: np.ndarray) -> dict:
    if words.shape != (10,):
        raise CheckpointError(f"rng entry has shape {words.shape}, expected (10,)")
    ints = [int(w) for w in words]

    def join(chunk: Sequence[int]) -> int:
        return sum(w << (32 * i) for i, w in enumerate(chunk))

    return {
        "bit_generator": "PCG64",
        "state": {"state": join(ints[0:4]), "inc": join(ints[4:8])},
        "has_uint32": ints[8],
        "uinteger": ints[9],
    }


# encoding

def _name(name: str) -> bytes:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise CheckpointError(f"entry name too long: {name[:40]}...")
    return struct.pack("<H", len(raw)) + raw


def _text(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _tensor_block(entries: Sequence[Tuple[str, np.ndarray]]) -> bytes:
    names = [name for name, _ in entries]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise CheckpointError(f"checkpoint entry name collision: {duplicates}")
    parts = [struct.pack("<I", len(entries))]
    for name, value in entries:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 0xFF:
            raise CheckpointError(f"entry '{name}' has rank {value.ndim}")
        parts.append(_name(name))
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.astype("<f8").tobytes())
    return b"".join(parts)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _tensor_block(list(checkpoint.tensors.items()))]
    parts.append(struct.pack("<I", len(checkpoint.optimizers)))
    for name, state in checkpoint.optimizers.items():
        parts.append(_name(name))
        parts.append(struct.pack("<4dI", state.lr, state.beta1, state.beta2, state.eps, state.step))
        parts.append(_tensor_block(sorted(state.m.items())))
        parts.append(_tensor_block(sorted(state.v.items())))
    parts.append(_tensor_block([(name, rng_state_to_words(s)) for name, s in checkpoint.rng_states.items()]))
    parts.append(_text(checkpoint.config_text))
    parts.append(_text(json.dumps(checkpoint.metadata, sort_keys=True)))
    return b"".join(parts)


# decoding

class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data = data
        self.offset = 0
        self.source = source

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"{self.source}: truncated at byte {self.offset} (needed {n} more bytes)"
            )
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (length,) = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{self.source}: entry name is not UTF-8") from None

    def text(self) -> str:
        (length,) = self.unpack("<I")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{self.source}: text block is not UTF-8") from None

    def tensor_block(self) -> Dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        entries: Dict[str, np.ndarray] = {}
        for _ in range(count):
            name = self.name()
            if name in entries:
                raise CheckpointError(f"{self.source}: entry name collision '{name}'")
            (rank,) = self.unpack("<B")
            dims = self.unpack(f"<{rank}I")
            size = int(np.prod(dims, dtype=np.int64))
            payload = self.take(8 * size)
            entries[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        return entries


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(data, source)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{source}: bad magic, not a fuselab checkpoint")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {VERSION})")
    tensors = reader.tensor_block()
    optimizers: Dict[str, AdamState] = {}
    (n_optimizers,) = reader.unpack("<I")
    for _ in range(n_optimizers):
        name = reader.name()
        lr, beta1, beta2, eps, step = reader.unpack("<4dI")
        m = reader.tensor_block()
        v = reader.tensor_block()
        optimizers[name] = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, step=step, m=m, v=v)
    rng_states = {name: words_to_rng_state(words) for name, words in reader.tensor_block().items()}
    config_text = reader.text()
    try:
        metadata = json.loads(reader.text())
    except json.JSONDecodeError:
        raise CheckpointError(f"{source}: metadata block is not valid JSON") from None
    if reader.offset != len(data):
        raise CheckpointError(f"{source}: {len(data) - reader.offset} trailing bytes after metadata block")
    return Checkpoint(tensors, optimizers, rng_states, config_text, metadata)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    data = encode_checkpoint(checkpoint)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path} ({len(checkpoint.tensors)} tensors, {len(data)} bytes)")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    return decode_checkpoint(data, source=path)
