"""File formats: matrix text fixtures and the binary dataset archive.

Matrix text format
    First line ``"rows cols"``, then whitespace-separated row-major decimals.

Dataset archive ("SGLD")
    Header: magic ``b"SGLD"``, version u16, p u32, n u32, family tag u8,
    seed u64, record count u64 (all little-endian).  Each record holds the
    covariance upper triangle (p(p+1)/2 float64), the binary edge labels as
    an LSB-first bitset over the canonical edge order, and the soft labels
    (N_e float64).
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Iterable, List, Tuple

import numpy as np

from .errors import CorruptFile

ARCHIVE_MAGIC = b"SGLD"
ARCHIVE_VERSION = 1

FAMILY_TAGS = {
    "uniform-sparse": 0,
    "small-world": 1,
    "er-substitute": 2,
    "laplace": 3,
}
FAMILY_NAMES = {v: k for k, v in FAMILY_TAGS.items()}


def write_matrix_text(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{a.shape[0]} {a.shape[1]}\n")
        for row in a:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


def read_matrix_text(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if len(tokens) < 2:
        raise CorruptFile(f"{path}: missing matrix header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    except ValueError as exc:
        raise CorruptFile(f"{path}: malformed matrix text") from exc
    if values.size != rows * cols:
        raise CorruptFile(
            f"{path}: expected {rows * cols} values, found {values.size}"
        )
    return values.reshape(rows, cols)


def upper_triangle(a: np.ndarray, with_diagonal: bool = True) -> np.ndarray:
    p = a.shape[0]
    iu = np.triu_indices(p, 0 if with_diagonal else 1)
    return np.ascontiguousarray(a[iu])


def from_upper_triangle(vec: np.ndarray, p: int) -> np.ndarray:
    out = np.zeros((p, p), dtype=np.float64)
    iu = np.triu_indices(p)
    out[iu] = vec
    out = out + np.triu(out, 1).T
    return out


def _read_exact(fh: BinaryIO, nbytes: int, what: str) -> bytes:
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise CorruptFile(f"truncated archive while reading {what}")
    return buf


def write_archive(path, p: int, n: int, family: str, seed: int,
                  records: Iterable[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> int:
    """Write (sigma_hat, y_binary, y_soft) records; returns the record count."""
    if family not in FAMILY_TAGS:
        raise ValueError(f"unknown family {family!r}")
    n_edges = p * (p - 1) // 2
    recs: List[bytes] = []
    for sigma, y_bin, y_soft in records:
        tri = upper_triangle(np.asarray(sigma, dtype=np.float64))
        y_bin = np.asarray(y_bin, dtype=np.uint8)
        y_soft = np.asarray(y_soft, dtype=np.float64)
        if tri.size != p * (p + 1) // 2 or y_bin.size != n_edges or y_soft.size != n_edges:
            raise ValueError("record shape inconsistent with header p")
        bits = np.packbits(y_bin, bitorder="little")
        recs.append(tri.astype("<f8").tobytes()
                    + bits.tobytes()
                    + y_soft.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<HIIBQQ", ARCHIVE_VERSION, p, n,
                             FAMILY_TAGS[family], seed & (2**64 - 1), len(recs)))
        for blob in recs:
            fh.write(blob)
    return len(recs)


def read_archive(path):
    """Read an SGLD archive; returns (header dict, list of records)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != ARCHIVE_MAGIC:
            raise CorruptFile(f"{path}: bad magic {magic!r}")
        header = _read_exact(fh, struct.calcsize("<HIIBQQ"), "header")
        version, p, n, family_tag, seed, count = struct.unpack("<HIIBQQ", header)
        if version != ARCHIVE_VERSION:
            raise CorruptFile(f"{path}: unsupported archive version {version}")
        if family_tag not in FAMILY_NAMES:
            raise CorruptFile(f"{path}: unknown family tag {family_tag}")
        n_edges = p * (p - 1) // 2
        tri_bytes = 8 * (p * (p + 1) // 2)
        bit_bytes = (n_edges + 7) // 8
        soft_bytes = 8 * n_edges
        records = []
        for k in range(count):
            tri = np.frombuffer(_read_exact(fh, tri_bytes, f"record {k}"), dtype="<f8")
            bits = np.frombuffer(_read_exact(fh, bit_bytes, f"record {k}"), dtype=np.uint8)
            y_soft = np.frombuffer(_read_exact(fh, soft_bytes, f"record {k}"), dtype="<f8")
            y_bin = np.unpackbits(bits, count=n_edges, bitorder="little").astype(np.uint8)
            records.append((from_upper_triangle(tri.copy(), p), y_bin, y_soft.copy()))
        trailing = fh.read(1)
        if trailing:
            raise CorruptFile(f"{path}: trailing bytes after {count} records")
    meta = {"p": p, "n": n, "family": FAMILY_NAMES[family_tag], "seed": seed,
            "count": count, "version": version}
    return meta, records
