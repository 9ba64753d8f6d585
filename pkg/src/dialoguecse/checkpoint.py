"""Binary checkpoint format.

Layout (all integers little-endian uint32):

    magic b"DCSE1"
    tensor_count
    per tensor: name_len, name (UTF-8), rows, cols, rows*cols float32 LE
    json_len, JSON block {"config": ..., "step": ..., "vocab": [...]}

Tensor payloads are float32 regardless of training precision, so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorpusFormatError

MAGIC = b"DCSE1"
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]  # name -> float32 (rows, cols) array
    config: dict
    step: int
    vocab_tokens: list[str]

    def save(self, path: str | Path) -> None:
        chunks = [MAGIC, _U32.pack(len(self.tensors))]
        for name, arr in self.tensors.items():
            if arr.ndim != 2:
                raise ValueError(f"tensor {name!r} is not rank-2")
            payload = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            chunks.append(_U32.pack(len(encoded)))
            chunks.append(encoded)
            chunks.append(_U32.pack(arr.shape[0]))
            chunks.append(_U32.pack(arr.shape[1]))
            chunks.append(payload.tobytes(order="C"))
        meta = json.dumps(
            {"config": self.config, "step": self.step, "vocab": self.vocab_tokens},
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        ).encode("utf-8")
        chunks.append(_U32.pack(len(meta)))
        chunks.append(meta)
        Path(path).write_bytes(b"".join(chunks))

    @staticmethod
    def load(path: str | Path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        view = memoryview(raw)
        if raw[: len(MAGIC)] != MAGIC:
            raise CorpusFormatError(f"{path}: not a checkpoint (bad magic bytes)")
        offset = len(MAGIC)

        def read_u32() -> int:
            nonlocal offset
            if offset + 4 > len(raw):
                raise CorpusFormatError(f"{path}: truncated checkpoint")
            (value,) = _U32.unpack_from(view, offset)
            offset += 4
            return value

        count = read_u32()
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            name_len = read_u32()
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            rows = read_u32()
            cols = read_u32()
            nbytes = rows * cols * 4
            if offset + nbytes > len(raw):
                raise CorpusFormatError(f"{path}: truncated tensor {name!r}")
            arr = np.frombuffer(view, dtype="<f4", count=rows * cols, offset=offset)
            tensors[name] = arr.reshape(rows, cols).copy()
            offset += nbytes
        meta_len = read_u32()
        try:
            meta = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorpusFormatError(f"{path}: bad metadata block") from exc
        for field in ("config", "step", "vocab"):
            if field not in meta:
                raise CorpusFormatError(f"{path}: metadata missing {field!r}")
        return Checkpoint(
            tensors=tensors,
            config=meta["config"],
            step=int(meta["step"]),
            vocab_tokens=list(meta["vocab"]),
        )
