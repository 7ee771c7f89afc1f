"""Transform blocks and overcomplete dictionaries.

A :class:`TransformBlock` is a ``p x cols`` synthesis matrix that is applied
matrix-free where a fast transform exists. A :class:`Dictionary` is the
horizontal concatenation ``B = [Phi_1 Phi_2 ...]`` of blocks sharing the
same row count.

All ``apply``/``adjoint`` methods operate along axis 0, so a 2-D array is
treated as a stack of column vectors.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.fft

from .errors import DimensionError

__all__ = [
    "BlockKind",
    "TransformBlock",
    "Dictionary",
    "build_identity",
    "build_dft",
    "build_dct",
    "build_haar",
    "build_learned",
    "concat",
    "apply",
    "adjoint_apply",
    "parse_dictionary_spec",
    "write_matrix",
    "read_matrix",
]


class BlockKind(str, Enum):
    IDENTITY = "identity"
    DFT = "dft"
    DCT = "dct"
    HAAR = "haar"
    LEARNED = "learned"


def _haar_analysis(x, levels):
    # Output order: [scaling, detail level L, ..., detail level 1].
    details = []
    a = x
    for _ in range(levels):
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / np.sqrt(2.0))
        a = (even + odd) / np.sqrt(2.0)
    return np.concatenate([a] + details[::-1], axis=0)


def _haar_synthesis(c, levels):
    p = c.shape[0]
    size = p >> levels
    a = c[:size]
    pos = size
    for _ in range(levels):
        d = c[pos:pos + size]
        pos += size
        out = np.empty((2 * size,) + c.shape[1:], dtype=np.result_type(a, d))
        out[0::2] = (a + d) / np.sqrt(2.0)
        out[1::2] = (a - d) / np.sqrt(2.0)
        a = out
        size *= 2
    return a


def _real_linear(fn, x):
    # scipy's DCT is only defined on real input; split complex data.
    if np.iscomplexobj(x):
        return fn(x.real) + 1j * fn(x.imag)
    return fn(x)


@dataclass(frozen=True, eq=False)
class TransformBlock:
    """One synthesis block of a dictionary.

    Parameters
    ----------
    kind : BlockKind
        Transform family.
    p : int
        Number of rows (signal length).
    cols : int
        Number of columns (coefficients contributed to the dictionary).
    levels : int, optional
        Decomposition depth, only for :attr:`BlockKind.HAAR`.
    matrix : ndarray, optional
        Explicit ``p x cols`` matrix, only for :attr:`BlockKind.LEARNED`.
    """

    kind: BlockKind
    p: int
    cols: int
    levels: int = 0
    matrix: np.ndarray = field(default=None, repr=False)

    @property
    def is_real(self):
        return self.kind is not BlockKind.DFT and (
            self.matrix is None or not np.iscomplexobj(self.matrix))

    @property
    def label(self):
        if self.kind is BlockKind.HAAR:
            return f"haar{self.levels}"
        return self.kind.value

    def _check(self, x, n):
        x = np.asarray(x)
        if x.ndim not in (1, 2) or x.shape[0] != n:
            raise DimensionError(
                f"{self.label} block expects {n} rows, got shape {x.shape}")
        return x

    def apply(self, c):
        """Synthesis ``Phi @ c``."""
        c = self._check(c, self.cols)
        kind = self.kind
        if kind is BlockKind.IDENTITY:
            return c.copy()
        if kind is BlockKind.DFT:
            return np.fft.ifft(c, axis=0, norm="ortho")
        if kind is BlockKind.DCT:
            return _real_linear(
                lambda v: scipy.fft.idct(v, type=2, axis=0, norm="ortho"), c)
        if kind is BlockKind.HAAR:
            return _haar_synthesis(c, self.levels)
        return self.matrix @ c

    def adjoint(self, v):
        """Analysis ``Phi^H @ v``."""
        v = self._check(v, self.p)
        kind = self.kind
        if kind is BlockKind.IDENTITY:
            return v.copy()
        if kind is BlockKind.DFT:
            return np.fft.fft(v, axis=0, norm="ortho")
        if kind is BlockKind.DCT:
            return _real_linear(
                lambda u: scipy.fft.dct(u, type=2, axis=0, norm="ortho"), v)
        if kind is BlockKind.HAAR:
            return _haar_analysis(v, self.levels)
        return self.matrix.conj().T @ v

    def materialize(self):
        """Dense ``p x cols`` matrix (complex for DFT, real otherwise)."""
        if self.matrix is not None:
            return self.matrix.copy()
        dtype = complex if self.kind is BlockKind.DFT else float
        return np.asarray(self.apply(np.eye(self.cols, dtype=dtype)))


def build_identity(p):
    """Return the ``p x p`` identity block."""
    _positive(p, "p")
    return TransformBlock(BlockKind.IDENTITY, p, p)


def build_dft(p):
    """Return the unitary DFT synthesis block.

    Entry ``(j, k)`` is ``exp(2j*pi*j*k/p) / sqrt(p)``; the adjoint is the
    orthonormal forward FFT.
    """
    _positive(p, "p")
    return TransformBlock(BlockKind.DFT, p, p)


def build_dct(p):
    """Return the orthonormal DCT-II synthesis block (columns are basis vectors)."""
    _positive(p, "p")
    return TransformBlock(BlockKind.DCT, p, p)


def build_haar(p, levels):
    """Return the orthonormal Haar synthesis block with `levels` decomposition steps.

    Coefficients are ordered ``[scaling, detail L, ..., detail 1]``.

    Raises
    ------
    DimensionError
        If ``p`` is not divisible by ``2**levels``.
    """
    _positive(p, "p")
    _positive(levels, "levels")
    if p % (1 << levels):
        raise DimensionError(f"p={p} is not divisible by 2**{levels}")
    return TransformBlock(BlockKind.HAAR, p, p, levels=levels)


def build_learned(matrix, tol=1e-8):
    """Wrap a column-orthonormal ``p x k`` matrix as a block."""
    m = np.array(matrix, copy=True)
    if m.ndim != 2 or m.shape[1] > m.shape[0] or m.shape[1] < 1:
        raise DimensionError(f"learned block needs p >= k >= 1, got {m.shape}")
    gram = m.conj().T @ m
    err = np.max(np.abs(gram - np.eye(m.shape[1])))
    if err > tol:
        raise ValueError(f"learned block columns are not orthonormal (err={err:.2e})")
    m.setflags(write=False)
    return TransformBlock(BlockKind.LEARNED, m.shape[0], m.shape[1], matrix=m)


def _positive(value, name):
    if int(value) != value or value < 1:
        raise DimensionError(f"{name} must be a positive integer, got {value!r}")


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Horizontal concatenation of transform blocks."""

    blocks: tuple

    @property
    def p(self):
        return self.blocks[0].p

    @property
    def q(self):
        return sum(b.cols for b in self.blocks)

    @property
    def offsets(self):
        return np.cumsum([0] + [b.cols for b in self.blocks])

    @property
    def is_real(self):
        return all(b.is_real for b in self.blocks)

    @property
    def label(self):
        return "+".join(b.label for b in self.blocks)

    def split(self, c):
        """Split a coefficient vector into per-block pieces."""
        c = np.asarray(c)
        if c.shape[0] != self.q:
            raise DimensionError(f"expected {self.q} coefficients, got {c.shape[0]}")
        off = self.offsets
        return [c[off[i]:off[i + 1]] for i in range(len(self.blocks))]

    def apply(self, c):
        """Synthesis ``B @ c``."""
        parts = self.split(c)
        out = self.blocks[0].apply(parts[0])
        for block, part in zip(self.blocks[1:], parts[1:]):
            out = out + block.apply(part)
        return out

    def adjoint(self, v):
        """Analysis ``B^H @ v``."""
        v = np.asarray(v)
        if v.shape[0] != self.p:
            raise DimensionError(f"expected length {self.p}, got {v.shape[0]}")
        return np.concatenate([b.adjoint(v) for b in self.blocks], axis=0)

    def components(self, c):
        """Per-block synthesized signals ``[Phi_1 c_1, Phi_2 c_2, ...]``."""
        return [b.apply(part) for b, part in zip(self.blocks, self.split(c))]

    def columns(self, idx):
        """Dense ``p x len(idx)`` matrix of the selected dictionary columns."""
        idx = np.asarray(idx, dtype=int)
        dtype = float if self.is_real else complex
        out = np.zeros((self.p, idx.size), dtype=dtype)
        off = self.offsets
        for i, block in enumerate(self.blocks):
            mask = (idx >= off[i]) & (idx < off[i + 1])
            if not mask.any():
                continue
            local = idx[mask] - off[i]
            if block.matrix is not None:
                out[:, mask] = block.matrix[:, local]
            else:
                e = np.zeros((block.cols, local.size), dtype=dtype)
                e[local, np.arange(local.size)] = 1.0
                out[:, mask] = block.apply(e)
        return out

    def materialize(self):
        """Dense ``p x q`` matrix."""
        return np.concatenate([b.materialize() for b in self.blocks], axis=1)


def concat(blocks):
    """Concatenate blocks into a :class:`Dictionary`.

    Raises
    ------
    DimensionError
        If the list is empty or row counts differ.
    """
    blocks = tuple(blocks)
    if not blocks:
        raise DimensionError("a dictionary needs at least one block")
    rows = {b.p for b in blocks}
    if len(rows) != 1:
        raise DimensionError(f"blocks have mismatched row counts {sorted(rows)}")
    return Dictionary(blocks)


def apply(d, c):
    return d.apply(c)


def adjoint_apply(d, v):
    return d.adjoint(v)


def parse_dictionary_spec(text, p):
    """Build a dictionary from a spec such as ``"identity,dft"`` or ``"haar:5,dct"``."""
    builders = {"identity": build_identity, "dft": build_dft, "dct": build_dct}
    blocks = []
    for token in text.split(","):
        name, _, arg = token.strip().lower().partition(":")
        if name == "haar":
            blocks.append(build_haar(p, int(arg or 1)))
        elif name in builders and not arg:
            blocks.append(builders[name](p))
        else:
            raise ValueError(f"unknown dictionary block {token!r}")
    return concat(blocks)


# Binary layout: <p:int32 LE><cols:int32 LE> then column-major (re, im) float64 pairs.
_HEADER = struct.Struct("<ii")


def write_matrix(path, matrix):
    m = np.asarray(matrix, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {m.shape}")
    pairs = np.empty((m.shape[1], m.shape[0], 2), dtype="<f8")
    pairs[..., 0] = m.real.T
    pairs[..., 1] = m.imag.T
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*m.shape))
        fh.write(pairs.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DimensionError(f"{path}: truncated header")
    rows, cols = _HEADER.unpack_from(raw)
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if rows < 0 or cols < 0 or body.size != 2 * rows * cols:
        raise DimensionError(f"{path}: payload does not match header {rows}x{cols}")
    pairs = body.reshape(cols, rows, 2)
    m = (pairs[..., 0] + 1j * pairs[..., 1]).T
    if not np.any(m.imag):
        m = m.real
    return np.ascontiguousarray(m)
