"""Model checkpoint serialization.

Layout (little-endian):
  magic "CPFMCKPT" | format version u16 |
  EncoderConfig as 9 u32 fields (series_len, channels, patch_len,
  model_dim, heads, layers, prompt_len, classes, mask_ratio in
  micro-units, i.e. round(ratio * 1e6)) |
  parameter count u32, then per parameter:
    name length u16 | name bytes | rank u8 | dims u32 * rank | float64 values |
  teacher-buffer entry count u32, then per entry:
    sample id u64 | classes float64 values
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .encoder import EncoderConfig
from .errors import FormatError

MAGIC = b"CPFMCKPT"
VERSION = 1
_CONFIG_FIELDS = ("series_len", "channels", "patch_len", "model_dim",
                  "heads", "layers", "prompt_len", "classes")


def save_checkpoint(path, cfg: EncoderConfig, params: dict,
                    buffer_entries: dict | None = None) -> None:
    """Write config + named parameters (+ optional teacher buffer)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fields = [getattr(cfg, f) for f in _CONFIG_FIELDS]
        fields.append(int(round(cfg.mask_ratio * 1_000_000)))
        fh.write(struct.pack("<9I", *fields))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = params[name]
            arr = np.asarray(arr.data if isinstance(arr, Tensor) else arr,
                             dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())
        entries = buffer_entries or {}
        fh.write(struct.pack("<I", len(entries)))
        for sample_id in sorted(entries):
            fh.write(struct.pack("<Q", sample_id))
            row = np.asarray(entries[sample_id], dtype="<f8")
            fh.write(row.tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    """Returns (EncoderConfig, {name: ndarray}, {sample_id: ndarray})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}",
                          offset=len(MAGIC))
    fields = r.unpack("<9I", "config")
    cfg = EncoderConfig(*fields[:8], mask_ratio=fields[8] / 1_000_000)
    (n_params,) = r.unpack("<I", "parameter count")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<H", "parameter name length")
        name = r.take(name_len, "parameter name").decode("utf-8")
        (rank,) = r.unpack("<B", "parameter rank")
        dims = r.unpack(f"<{rank}I", "parameter dims") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        values = np.frombuffer(r.take(count * 8, f"values of {name}"),
                               dtype="<f8").reshape(dims).copy()
        params[name] = values
    (n_entries,) = r.unpack("<I", "buffer count")
    buffer: dict[int, np.ndarray] = {}
    for _ in range(n_entries):
        (sample_id,) = r.unpack("<Q", "buffer sample id")
        row = np.frombuffer(r.take(cfg.classes * 8, "buffer entry"),
                            dtype="<f8").copy()
        buffer[sample_id] = row
    if r.pos != len(raw):
        raise FormatError("trailing bytes after checkpoint payload",
                          offset=r.pos)
    return cfg, params, buffer
