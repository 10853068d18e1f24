"""Independent reference for the local-hash embedder.

Lowercase, character 3-grams (whole string when shorter than 3 chars),
FNV-1a 64 over each gram's UTF-8 bytes, bucket = hash % dim,
sign = +1 if the top bit is clear else -1, then L2-normalize.

Prints the nonzero (index, value) pairs for float32 and float64 as bit
patterns so the Rust test can compare exactly.
"""
import struct
import sys

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK = (1 << 64) - 1


def fnv1a(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK
    return h


def counts(text: str, dim: int):
    chars = list(text.lower())
    grams = ["".join(chars[i:i + 3]) for i in range(len(chars) - 2)] or ["".join(chars)]
    out = [0] * dim
    for g in grams:
        h = fnv1a(g.encode("utf-8"))
        out[h % dim] += 1 if (h >> 63) == 0 else -1
    return out


def embed(text: str, dim: int, dtype):
    c = np.array(counts(text, dim), dtype=dtype)
    norm = np.sqrt(np.sum(c * c, dtype=dtype), dtype=dtype)
    return c / norm


if __name__ == "__main__":
    text = sys.argv[1] if len(sys.argv) > 1 else "steel production"
    dim = int(sys.argv[2]) if len(sys.argv) > 2 else 256
    print("counts", [(i, v) for i, v in enumerate(counts(text, dim)) if v])
    v32 = embed(text, dim, np.float32)
    print("f32", [(i, hex(struct.unpack("<I", struct.pack("<f", x))[0])) for i, x in enumerate(v32) if x])
    v64 = embed(text, dim, np.float64)
    print("f64", [(i, hex(struct.unpack("<Q", struct.pack("<d", x))[0])) for i, x in enumerate(v64) if x])
    print("fnv(abc)", hex(fnv1a(b"abc")))
