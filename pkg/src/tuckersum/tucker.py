"""Tucker tensors and the deterministic baseline arithmetic.

A :class:`TuckerTensor` is a core plus one factor matrix per mode. Factors are
not assumed to be orthonormal. The core is either a dense array or a
:class:`BlockDiagonalCore`, which is what formal sums produce: disjoint blocks
along the super-diagonal, never densified until rounding needs it.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from . import memtrack
from .kernels import DimensionError, multi_ttm, qr_econ, read_tensor, ttm, write_tensor

DEFAULT_MAX_ELEMENTS = 2**27


class DensificationError(MemoryError):
    """Refusal to build a dense array above the configured element cap."""


@dataclass(frozen=True)
class BlockDiagonalCore:
    """Super-diagonal block core; ``blocks[b]`` sits at index ``offsets[b]``."""

    blocks: tuple[np.ndarray, ...]
    offsets: tuple[tuple[int, ...], ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        if not self.blocks or len(self.blocks) != len(self.offsets):
            raise DimensionError("block core needs one offset per block and at least one block")
        ndim = len(self.shape)
        end = [0] * ndim
        for blk, off in zip(self.blocks, self.offsets):
            if blk.ndim != ndim or len(off) != ndim:
                raise DimensionError("block order does not match core order")
            for k in range(ndim):
                if off[k] < end[k]:
                    raise DimensionError("blocks overlap or offsets are not increasing")
                end[k] = off[k] + blk.shape[k]
        if any(e > s for e, s in zip(end, self.shape)):
            raise DimensionError("blocks exceed the core shape")

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def slices(self, b: int) -> tuple[slice, ...]:
        return tuple(slice(o, o + s) for o, s in zip(self.offsets[b], self.blocks[b].shape))

    def densify(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for b, blk in enumerate(self.blocks):
            out[self.slices(b)] = blk
        return out

    def frobenius(self) -> float:
        return float(np.sqrt(sum(np.vdot(b, b) for b in self.blocks)))

    def scaled(self, alpha: float) -> "BlockDiagonalCore":
        return BlockDiagonalCore(tuple(alpha * b for b in self.blocks), self.offsets, self.shape)


class TuckerTensor:
    """``[[core; factors[0], ..., factors[N-1]]]``.

    Instances are treated as immutable values; operations return new tensors.
    """

    __slots__ = ("core", "factors")

    def __init__(self, core, factors: Sequence[np.ndarray]):
        factors = tuple(np.asarray(u, dtype=float) for u in factors)
        if isinstance(core, BlockDiagonalCore):
            shape = core.shape
        else:
            core = np.asarray(core, dtype=float)
            if core.ndim == 0:
                core = core.reshape((1,) * len(factors))
            shape = core.shape
        if len(shape) != len(factors) or len(factors) < 1:
            raise DimensionError(f"core of order {len(shape)} with {len(factors)} factors")
        for k, u in enumerate(factors):
            if u.ndim != 2 or u.shape[1] != shape[k]:
                raise DimensionError(f"factor {k} has shape {u.shape}, core mode size {shape[k]}")
        self.core = core
        self.factors = factors

    @property
    def ndim(self) -> int:
        return len(self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(u.shape[1] for u in self.factors)

    @property
    def is_block(self) -> bool:
        return isinstance(self.core, BlockDiagonalCore)

    def dense_core(self) -> np.ndarray:
        return self.core.densify() if self.is_block else self.core

    def core_norm(self) -> float:
        return self.core.frobenius() if self.is_block else float(np.linalg.norm(self.core))

    def terms(self) -> Iterator[tuple[np.ndarray, tuple[np.ndarray, ...]]]:
        """Yield ``(core block, factor column slices)`` for every stored block."""
        if not self.is_block:
            yield self.core, self.factors
            return
        for b, blk in enumerate(self.core.blocks):
            sl = self.core.slices(b)
            yield blk, tuple(u[:, s] for u, s in zip(self.factors, sl))

    def split(self) -> list["TuckerTensor"]:
        return [TuckerTensor(blk, us) for blk, us in self.terms()]

    def scaled(self, alpha: float) -> "TuckerTensor":
        core = self.core.scaled(alpha) if self.is_block else alpha * self.core
        return TuckerTensor(core, self.factors)

    def with_factor(self, k: int, u: np.ndarray) -> "TuckerTensor":
        factors = list(self.factors)
        factors[k] = u
        return TuckerTensor(self.core, factors)

    def full(self, max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
        return reconstruct(self, max_elements)

    def norm(self) -> float:
        return tucker_norm(self)

    def __repr__(self) -> str:
        kind = f"{len(self.core.blocks)} blocks" if self.is_block else "dense core"
        return f"TuckerTensor(dims={self.dims}, ranks={self.ranks}, {kind})"


def reconstruct(x: TuckerTensor, max_elements: int = DEFAULT_MAX_ELEMENTS) -> np.ndarray:
    """Dense tensor ``core x_1 U_1 ... x_N U_N``; refuses outputs above ``max_elements``."""
    size = int(np.prod(x.dims, dtype=np.int64))
    if size > max_elements:
        raise DensificationError(f"refusing to densify {x.dims} ({size} elements > {max_elements})")
    out = None
    for blk, us in x.terms():
        part = multi_ttm(blk, us)
        out = part if out is None else out + part
    return out


def _check_same_dims(xs: Sequence[TuckerTensor]) -> None:
    dims = xs[0].dims
    for x in xs[1:]:
        if x.dims != dims:
            raise DimensionError(f"dimension mismatch: {x.dims} vs {dims}")


def absorb_factors(x: TuckerTensor, mats: Sequence[np.ndarray], label: str = "absorb") -> np.ndarray:
    """Dense core of ``core x_1 mats[0] ... x_N mats[N-1]``.

    Block cores are processed block by block, grouped by block shape, so the
    only full-size allocation is the output itself.
    """
    out_shape = tuple(m.shape[0] for m in mats)
    memtrack.record(label, out_shape)
    if not x.is_block:
        return multi_ttm(x.core, mats)
    core = x.core
    groups: dict[tuple[int, ...], list[int]] = {}
    for b, blk in enumerate(core.blocks):
        groups.setdefault(blk.shape, []).append(b)
    out = np.zeros(out_shape)
    q_lead = int(np.prod(out_shape[:-1], dtype=np.int64))
    for shape, members in groups.items():
        chunk = max(1, (1 << 23) // max(1, q_lead * shape[-1]))
        for start in range(0, len(members), chunk):
            idx = members[start : start + chunk]
            out += _absorb_group(core, idx, mats, out_shape)
    return out


def _absorb_group(core: BlockDiagonalCore, idx: list[int], mats, out_shape) -> np.ndarray:
    ndim = core.ndim
    g = len(idx)
    stacked = np.stack([core.blocks[b] for b in idx])
    rs = [
        np.stack([mats[k][:, core.offsets[b][k] : core.offsets[b][k] + core.blocks[b].shape[k]] for b in idx])
        for k in range(ndim)
    ]
    # t has layout (g, q_0..q_{k-1}, r_k..r_{N-1})
    t = stacked
    for k in range(ndim - 1):
        lead = int(np.prod(out_shape[:k], dtype=np.int64))
        rk = t.shape[1 + k]
        tail = int(np.prod(t.shape[2 + k :], dtype=np.int64))
        t3 = t.reshape(g, lead, rk, tail)
        t = np.matmul(rs[k][:, None, :, :], t3).reshape((g,) + out_shape[: k + 1] + t.shape[2 + k :])
    q_lead = int(np.prod(out_shape[:-1], dtype=np.int64))
    t = t.reshape(g, q_lead, t.shape[-1])
    res = np.tensordot(t, rs[-1], axes=([0, 2], [0, 2]))
    return res.reshape(out_shape)


def tucker_norm(x: TuckerTensor) -> float:
    """Frobenius norm via QR of the factors; never forms the full tensor."""
    rs = [qr_econ(u)[1] for u in x.factors]
    return float(np.linalg.norm(absorb_factors(x, rs, label="norm")))


def tucker_inner(x: TuckerTensor, y: TuckerTensor) -> float:
    """``<full(x), full(y)>`` computed from per-mode Gram products."""
    _check_same_dims([x, y])
    grams = [u.T @ v for u, v in zip(x.factors, y.factors)]
    xs = [(blk, x.core.slices(b)) for b, blk in enumerate(x.core.blocks)] if x.is_block else [(x.core, None)]
    ys = [(blk, y.core.slices(b)) for b, blk in enumerate(y.core.blocks)] if y.is_block else [(y.core, None)]
    total = 0.0
    for bx, sx in xs:
        for by, sy in ys:
            mats = []
            for k, gk in enumerate(grams):
                rows = sx[k] if sx is not None else slice(None)
                cols = sy[k] if sy is not None else slice(None)
                mats.append(gk[rows, cols])
            total += float(np.vdot(bx, multi_ttm(by, mats)))
    return total


def _flatten(xs: Sequence[TuckerTensor], weights: Sequence[float]) -> TuckerTensor:
    if len(xs) == 0:
        raise ValueError("cannot sum an empty collection")
    if len(xs) != len(weights):
        raise DimensionError("need one weight per summand")
    _check_same_dims(xs)
    ndim = xs[0].ndim
    blocks, offsets = [], []
    pos = [0] * ndim
    for x, w in zip(xs, weights):
        if x.is_block:
            for blk, off in zip(x.core.blocks, x.core.offsets):
                blocks.append(w * blk)
                offsets.append(tuple(p + o for p, o in zip(pos, off)))
        else:
            blocks.append(w * x.core)
            offsets.append(tuple(pos))
        pos = [p + r for p, r in zip(pos, x.ranks)]
    factors = [np.hstack([x.factors[k] for x in xs]) for k in range(ndim)]
    return TuckerTensor(BlockDiagonalCore(tuple(blocks), tuple(offsets), tuple(pos)), factors)


def tucker_axby(alpha: float, x: TuckerTensor, beta: float, y: TuckerTensor) -> TuckerTensor:
    """``alpha*x + beta*y`` by factor concatenation and a block-diagonal core."""
    return _flatten([x, y], [alpha, beta])


def formal_sum(xs: Sequence[TuckerTensor], weights: Sequence[float] | None = None) -> TuckerTensor:
    """Weighted formal sum of Tucker tensors, ranks adding up."""
    if weights is None:
        weights = [1.0] * len(xs)
    if len(xs) == 1 and not xs[0].is_block:
        return xs[0] if weights[0] == 1 else xs[0].scaled(weights[0])
    return _flatten(xs, weights)


def truncation_rank(s: np.ndarray, threshold: float, exact_zero_only: bool = False) -> int:
    """Smallest ``r >= 1`` whose discarded squared singular values sum to at most ``threshold``."""
    if s.size == 0:
        return 1
    if exact_zero_only:
        return max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
    tail = np.cumsum((s**2)[::-1])[::-1]  # tail[j] = sum_{i>=j} s_i^2
    tail = np.append(tail, 0.0)
    ok = np.nonzero(tail[1:] <= threshold)[0]
    return int(ok[0]) + 1


def _left_svd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left singular vectors and singular values of ``a``."""
    q, m = a.shape
    if m > 2 * q:
        # a^T = Q R  =>  a = R^T Q^T, same left singular pairs as R^T
        r = np.linalg.qr(a.T, mode="r")
        u, s, _ = np.linalg.svd(r.T, full_matrices=False)
        return u, s
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    return u, s


def st_hosvd(core: np.ndarray, tol: float) -> tuple[np.ndarray, list[np.ndarray]]:
    """Sequentially truncated HOSVD of a dense core at relative tolerance ``tol``.

    Returns the truncated core and the per-mode orthonormal bases ``P_n`` so that
    ``core ~= new_core x_1 P_1 ... x_N P_N``.
    """
    ndim = core.ndim
    theta = tol**2 * float(np.vdot(core, core)) / ndim
    bases = []
    for n in range(ndim):
        # column order is irrelevant for the left singular pairs, so skip the unfold copy
        u, s = _left_svd(np.moveaxis(core, n, 0).reshape(core.shape[n], -1))
        r = truncation_rank(s, theta, exact_zero_only=(tol == 0))
        p = u[:, :r]
        bases.append(p)
        core = ttm(core, p.T, n)
    return core, bases


def tucker_rounding(x: TuckerTensor, tau: float) -> TuckerTensor:
    """QR-orthogonalize the factors, absorb ``R`` into the core, then ST-HOSVD at ``tau``."""
    if tau < 0:
        raise ValueError("tolerance must be nonnegative")
    qs, rs = zip(*(qr_econ(u) for u in x.factors))
    core = absorb_factors(x, rs, label="rounding-phase1")
    core, bases = st_hosvd(core, tau)
    return TuckerTensor(core, [q @ p for q, p in zip(qs, bases)])


_TUCKER_MAGIC = b"TSKK"


def write_tucker(f: BinaryIO, x: TuckerTensor) -> None:
    f.write(_TUCKER_MAGIC)
    f.write(struct.pack("<II", x.ndim, 1 if x.is_block else 0))
    for u in x.factors:
        write_tensor(f, u)
    if x.is_block:
        f.write(struct.pack("<I", len(x.core.blocks)))
        f.write(struct.pack(f"<{x.ndim}Q", *x.core.shape))
        for blk, off in zip(x.core.blocks, x.core.offsets):
            f.write(struct.pack(f"<{x.ndim}Q", *off))
            write_tensor(f, blk)
    else:
        write_tensor(f, x.core)


def read_tucker(f: BinaryIO) -> TuckerTensor:
    if f.read(4) != _TUCKER_MAGIC:
        raise ValueError("bad Tucker header")
    ndim, kind = struct.unpack("<II", f.read(8))
    factors = [read_tensor(f) for _ in range(ndim)]
    if kind == 0:
        return TuckerTensor(read_tensor(f), factors)
    (nblocks,) = struct.unpack("<I", f.read(4))
    shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim))
    blocks, offsets = [], []
    for _ in range(nblocks):
        offsets.append(tuple(int(o) for o in struct.unpack(f"<{ndim}Q", f.read(8 * ndim))))
        blocks.append(read_tensor(f))
    core = BlockDiagonalCore(tuple(blocks), tuple(offsets), tuple(int(s) for s in shape))
    return TuckerTensor(core, factors)
