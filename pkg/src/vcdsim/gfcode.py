"""GF(2^8) arithmetic and generation-based random linear network coding.

Field elements are bytes under the reduction polynomial x^8+x^4+x^3+x+1
(0x11B). Multiplication goes through a full 256x256 product table built
from log/antilog tables, so whole rows can be scaled with one numpy gather.

A :class:`GenerationBuffer` keeps received rows in reduced row echelon form.
Each row is the coefficient vector concatenated with the payload, so one
elimination pass handles both. ``piece_size=0`` gives a coefficient-only
buffer, which the simulator uses to track rank without carrying bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

POLY = 0x11B
GENERATOR = 0x03

DEFAULT_PIECE_SIZE = 4096
DEFAULT_GENERATION_SIZE = 16


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int64)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        # multiply by the generator 0x03 = x + 1
        x2 = x << 1
        if x2 & 0x100:
            x2 ^= POLY
        x = x2 ^ x
    exp[255:510] = exp[0:255]
    mul = np.zeros((256, 256), dtype=np.uint8)
    nz = np.arange(1, 256)
    mul[1:, 1:] = exp[(log[nz][:, None] + log[nz][None, :]) % 255]
    inv = np.zeros(256, dtype=np.uint8)
    inv[1:] = exp[(255 - log[nz]) % 255]
    return exp, log, mul, inv


EXP, LOG, MUL, INV = _build_tables()


def gf_add(a: int, b: int) -> int:
    return a ^ b


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(2^8)")
    return int(INV[a])


def gf_scale(c: int, vec: np.ndarray) -> np.ndarray:
    """Multiply every byte of ``vec`` by the field element ``c``."""
    return MUL[c, np.asarray(vec, dtype=np.uint8)]


class NotDecodable(Exception):
    """Raised when a generation is decoded before it reaches full rank."""


@dataclass(eq=False)
class CodedPiece:
    content_id: object
    generation_id: int
    coeffs: np.ndarray
    payload: np.ndarray

    def row(self) -> np.ndarray:
        return np.concatenate([self.coeffs, self.payload]).astype(np.uint8, copy=False)


def random_coeffs(rng: np.random.Generator, g: int, live: int | None = None) -> np.ndarray:
    """Uniform coefficient vector with no all-zero draw.

    Columns at or beyond ``live`` stay zero; they belong to zero padding.
    """
    live = g if live is None else live
    out = np.zeros(g, dtype=np.uint8)
    while True:
        out[:live] = rng.integers(0, 256, size=live, dtype=np.uint8)
        if out.any():
            return out


def _as_pieces(sources, piece_size=None) -> np.ndarray:
    arr = np.array([np.frombuffer(bytes(s), dtype=np.uint8) for s in sources]) if sources else None
    if arr is None or arr.ndim != 2:
        raise ValueError("source pieces must be non-empty and of equal length")
    if piece_size is not None and arr.shape[1] != piece_size:
        raise ValueError(f"source pieces must be {piece_size} bytes")
    return arr


def encode(sources, coeffs, content_id=None, generation_id: int = 0) -> CodedPiece:
    """Linear combination of the source pieces under ``coeffs``."""
    src = _as_pieces(sources)
    c = np.asarray(coeffs, dtype=np.uint8)
    if c.ndim != 1 or len(c) != len(src):
        raise ValueError(f"expected {len(src)} coefficients, got {c.size}")
    nz = np.flatnonzero(c)
    if nz.size:
        payload = np.bitwise_xor.reduce(MUL[c[nz, None], src[nz]], axis=0)
    else:
        payload = np.zeros(src.shape[1], dtype=np.uint8)
    return CodedPiece(content_id, generation_id, c.copy(), payload)


class GenerationBuffer:
    """Received rows of one generation, kept in reduced row echelon form.

    ``live`` is the number of real source pieces; the remaining ``g - live``
    columns are zero padding, so full rank for a short final generation is
    ``live`` rather than ``g``.
    """

    def __init__(self, g: int = DEFAULT_GENERATION_SIZE, piece_size: int = DEFAULT_PIECE_SIZE,
                 content_id=None, generation_id: int = 0, live: int | None = None):
        if g < 1:
            raise ValueError("generation size must be >= 1")
        if piece_size < 0:
            raise ValueError("piece_size must be >= 0")
        self.g = g
        self.piece_size = piece_size
        self.content_id = content_id
        self.generation_id = generation_id
        self.live = g if live is None else live
        if not 1 <= self.live <= g:
            raise ValueError("live piece count must lie in [1, g]")
        self._rows = np.zeros((g, g + piece_size), dtype=np.uint8)
        self._pivots = np.zeros(g, dtype=np.int64)
        self._rank = 0

    @property
    def rank(self) -> int:
        return self._rank

    @property
    def full(self) -> bool:
        return self._rank >= self.live

    @property
    def deficit(self) -> int:
        return self.live - self._rank

    def coefficient_rows(self) -> np.ndarray:
        return self._rows[: self._rank, : self.g].copy()

    def rows(self) -> np.ndarray:
        return self._rows[: self._rank].copy()

    def copy(self, coefficients_only: bool = False) -> "GenerationBuffer":
        ps = 0 if coefficients_only else self.piece_size
        out = GenerationBuffer(self.g, ps, self.content_id, self.generation_id, self.live)
        out._rows[: self._rank] = self._rows[: self._rank, : self.g + ps]
        out._pivots[: self._rank] = self._pivots[: self._rank]
        out._rank = self._rank
        return out

    def _check(self, piece: CodedPiece):
        if piece.content_id != self.content_id or piece.generation_id != self.generation_id:
            raise ValueError(
                f"piece belongs to ({piece.content_id!r}, {piece.generation_id}), "
                f"buffer holds ({self.content_id!r}, {self.generation_id})")
        if len(piece.coeffs) != self.g:
            raise ValueError(f"coefficient vector length {len(piece.coeffs)} != g={self.g}")
        if len(piece.payload) != self.piece_size:
            raise ValueError(f"payload length {len(piece.payload)} != piece_size={self.piece_size}")

    def absorb(self, piece: CodedPiece) -> bool:
        """Add ``piece`` if it is innovative. Returns whether rank grew."""
        self._check(piece)
        return self.absorb_row(piece.row())

    def reduce(self, row: np.ndarray) -> np.ndarray:
        """Residual of ``row`` after eliminating every stored pivot."""
        row = np.array(row, dtype=np.uint8)
        r = self._rank
        if r:
            c = row[self._pivots[:r]]
            nz = c.nonzero()[0]
            if len(nz):
                row ^= np.bitwise_xor.reduce(MUL[c[nz, None], self._rows[nz, : row.size]], axis=0)
        return row

    def contains(self, coeffs: np.ndarray) -> bool:
        """True when the coefficient vector lies in the stored row span."""
        return not self.reduce(np.asarray(coeffs, dtype=np.uint8)[: self.g]).any()

    def absorb_row(self, row: np.ndarray) -> bool:
        if self._rank >= self.g:
            return False
        row = self.reduce(row[: self.g + self.piece_size])
        nzc = row[: self.g].nonzero()[0]
        if not len(nzc):
            return False
        p = int(nzc[0])
        row = MUL[INV[row[p]], row]
        r = self._rank
        if r:
            col = self._rows[:r, p]
            nz = col.nonzero()[0]
            if len(nz):
                self._rows[nz] ^= MUL[col[nz, None], row[None, :]]
        self._rows[r] = row
        self._pivots[r] = p
        self._rank = r + 1
        return True

    def recode(self, rng: np.random.Generator) -> CodedPiece:
        """Random combination of the stored rows (never the zero combination)."""
        if self._rank == 0:
            raise ValueError("cannot recode from an empty buffer")
        c = random_coeffs(rng, self._rank)
        nz = np.flatnonzero(c)
        row = np.bitwise_xor.reduce(MUL[c[nz, None], self._rows[nz]], axis=0)
        return CodedPiece(self.content_id, self.generation_id,
                          row[: self.g].copy(), row[self.g:].copy())

    def decode(self) -> list[bytes]:
        """Recover the g source pieces (padding pieces come back as zeros)."""
        if self._rank < self.live:
            raise NotDecodable(f"rank {self._rank} < {self.live}: not yet decodable")
        order = np.argsort(self._pivots[: self._rank])
        rows = self._rows[: self._rank][order]
        out = [bytes(self.piece_size)] * self.g
        for i, p in enumerate(self._pivots[: self._rank][order]):
            out[int(p)] = rows[i, self.g:].tobytes()
        return out

    def __repr__(self):
        return (f"GenerationBuffer(content={self.content_id!r}, gen={self.generation_id}, "
                f"rank={self._rank}/{self.live})")


def union_rank(*buffers: GenerationBuffer) -> int:
    """Dimension of the sum of the coefficient spans of ``buffers``."""
    buffers = [b for b in buffers if b is not None]
    if not buffers:
        return 0
    base = max(buffers, key=lambda b: b.rank).copy(coefficients_only=True)
    for b in buffers:
        if b is base:
            continue
        for row in b.coefficient_rows():
            base.absorb_row(row)
    return base.rank


def generation_layout(size_bytes: int, piece_size: int, g: int) -> list[int]:
    """Live piece count of each generation for a content of ``size_bytes``."""
    if size_bytes < 1 or piece_size < 1 or g < 1:
        raise ValueError("size, piece_size and g must be positive")
    n = math.ceil(size_bytes / piece_size)
    return [min(g, n - start) for start in range(0, n, g)]


def segment(data: bytes, piece_size: int = DEFAULT_PIECE_SIZE,
            g: int = DEFAULT_GENERATION_SIZE) -> list[list[bytes]]:
    """Split ``data`` into zero-padded generations of g pieces each."""
    if not data:
        raise ValueError("cannot segment empty content")
    gens = []
    n = math.ceil(len(data) / piece_size)
    for start in range(0, n, g):
        pieces = []
        for i in range(start, start + g):
            chunk = data[i * piece_size:(i + 1) * piece_size]
            pieces.append(chunk.ljust(piece_size, b"\0"))
        gens.append(pieces)
    return gens


def reassemble(generations: list[list[bytes]], size_bytes: int) -> bytes:
    return b"".join(b"".join(pieces) for pieces in generations)[:size_bytes]
