"""Dense tensor kernels: unfolding, mode products, structured products, factorizations.

Dense tensors are plain :class:`numpy.ndarray` objects of dtype float64. Mode
indices are zero-based. Unfoldings follow the column-major convention where the
column index runs over the remaining modes in increasing order with the first
remaining mode varying fastest.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import reduce
from typing import BinaryIO, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array sizes are not conformable."""


class ModeError(IndexError):
    """Raised when a mode index is outside ``0 <= k < ndim``."""


def _check_mode(ndim: int, k: int) -> int:
    if not (0 <= k < ndim):
        raise ModeError(f"mode {k} out of range for order-{ndim} tensor")
    return k


def unfold(t: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` unfolding of ``t`` as an ``n_k x prod(n_j, j != k)`` matrix."""
    t = np.asarray(t)
    _check_mode(t.ndim, k)
    return np.reshape(np.moveaxis(t, k, 0), (t.shape[k], -1), order="F")


def fold(m: np.ndarray, k: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), k)
    rest = shape[:k] + shape[k + 1 :]
    m = np.asarray(m)
    if m.shape != (shape[k], int(np.prod(rest, dtype=np.int64))):
        raise DimensionError(f"matrix of shape {m.shape} cannot fold to {shape} along mode {k}")
    return np.moveaxis(np.reshape(m, (shape[k],) + rest, order="F"), 0, k)


def ttm(t: np.ndarray, a: np.ndarray, k: int) -> np.ndarray:
    """Mode-``k`` tensor-times-matrix product ``t x_k a``."""
    t = np.asarray(t)
    a = np.asarray(a)
    _check_mode(t.ndim, k)
    if a.ndim != 2 or a.shape[1] != t.shape[k]:
        raise DimensionError(f"matrix {a.shape} does not act on mode {k} of size {t.shape[k]}")
    shape = t.shape
    pre = math.prod(shape[:k])
    out = np.matmul(a, t.reshape(pre, shape[k], -1))
    return out.reshape(shape[:k] + (a.shape[0],) + shape[k + 1 :])


def multi_ttm(t: np.ndarray, mats: Sequence[np.ndarray | None], skip: int | None = None) -> np.ndarray:
    """Apply ``mats[j]`` along every mode ``j``; ``None`` entries and ``skip`` are left alone."""
    for j, a in enumerate(mats):
        if a is None or j == skip:
            continue
        t = ttm(t, a, j)
    return t


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product."""
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; column ``j`` is ``kron(a[:, j], b[:, j])``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"Khatri-Rao needs equal column counts, got {a.shape} and {b.shape}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(kron, mats)


def khatri_rao_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    return reduce(khatri_rao, mats)


def qr_econ(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Economy Householder QR with a nonnegative diagonal in ``R``."""
    q, r = np.linalg.qr(np.asarray(a, dtype=float), mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs, r * signs[:, None]


def svd_econ(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD returning ``(U, s, V)`` with ``a = U diag(s) V^T``."""
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    return u, s, vt.T


def sym_eig(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of the symmetric part of ``a``, eigenvalues descending."""
    a = np.asarray(a, dtype=float)
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return w[::-1], v[:, ::-1]


@dataclass(frozen=True)
class RngSeed:
    """Root seed plus a stream path; equal values give identical draws."""

    seed: int = 0
    stream: tuple[int, ...] = ()

    def child(self, *indices: int) -> "RngSeed":
        return RngSeed(self.seed, self.stream + tuple(int(i) for i in indices))

    def generator(self) -> np.random.Generator:
        entropy = [int(self.seed) & 0xFFFFFFFFFFFFFFFF, *(int(s) & 0xFFFFFFFFFFFFFFFF for s in self.stream)]
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def gaussian_matrices(shapes: Sequence[tuple[int, int]], seed: int | RngSeed = 0) -> list[np.ndarray]:
    """Several Gaussian matrices drawn in sequence from one stream."""
    g = as_seed(seed).generator()
    return [g.standard_normal(shape) for shape in shapes]


def as_seed(seed: int | RngSeed | None) -> RngSeed:
    if isinstance(seed, RngSeed):
        return seed
    return RngSeed(0 if seed is None else int(seed))


def gaussian_matrix(rows: int, cols: int, seed: int | RngSeed = 0, stream: int | None = None) -> np.ndarray:
    """Matrix of i.i.d. standard normal entries, reproducible from ``(seed, stream)``."""
    if rows < 1 or cols < 1:
        raise DimensionError("gaussian_matrix needs positive sizes")
    s = as_seed(seed)
    if stream is not None:
        s = s.child(stream)
    return s.generator().standard_normal((rows, cols))


_MAGIC = b"TSKT"


def write_tensor(f: BinaryIO, t: np.ndarray) -> None:
    """Write ``t`` as magic, order, uint64 shape, then little-endian float64 column-major data."""
    t = np.asarray(t, dtype=float)
    f.write(_MAGIC)
    f.write(struct.pack("<I", t.ndim))
    f.write(struct.pack(f"<{t.ndim}Q", *t.shape))
    f.write(np.asarray(t, dtype="<f8").tobytes(order="F"))


def read_tensor(f: BinaryIO) -> np.ndarray:
    magic = f.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad tensor header {magic!r}")
    (ndim,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(f.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ValueError("truncated tensor payload")
    return np.reshape(data.astype(float), shape, order="F")
