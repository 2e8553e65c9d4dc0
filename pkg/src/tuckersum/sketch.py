"""Randomized sketching-based summation of Tucker tensors.

Two range finders are provided: a Khatri-Rao sketch with one uniform sketch
width shared by all modes, and a Kronecker sketch with per-mode widths whose
complementary products set the sketch size of each unfolding. Both reuse one
Gaussian test matrix per mode across all summands and all mode sketches, touch
only factor matrices and individual summand cores, and finish with an ST-HOSVD
of the projected core.

Summands whose core is block-diagonal (formal sums) are split into their
blocks first, so every block is treated as its own summand.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import memtrack
from .kernels import DimensionError, RngSeed, as_seed, gaussian_matrices, khatri_rao_all, qr_econ, sym_eig, ttm
from .tucker import TuckerTensor, formal_sum, st_hosvd, tucker_axby, tucker_rounding


class Strategy(str, enum.Enum):
    LAZY = "lazy"
    EAGER = "eager"
    KRP = "krp"
    KRON = "kron"


@dataclass(frozen=True)
class SketchPlan:
    """Per-mode sketch sizes chosen by :func:`effective_subrank`."""

    effective_ranks: tuple[int, ...]
    targets: tuple[int, ...]
    kron_dims: tuple[int, ...]
    krp_dim: int
    oversampling: tuple[int, ...]
    tolerance: float
    seed: RngSeed = field(default_factory=RngSeed)

    @property
    def ndim(self) -> int:
        return len(self.targets)

    def kron_widths(self) -> tuple[int, ...]:
        """Achieved ``prod_{j != n} s_j`` for every mode."""
        return tuple(
            math.prod(s for j, s in enumerate(self.kron_dims) if j != n) for n in range(self.ndim)
        )

    def is_feasible(self, dims: Sequence[int] | None = None) -> bool:
        widths = self.kron_widths()
        for n, (w, l) in enumerate(zip(widths, self.targets)):
            need = l
            if dims is not None:
                need = min(l, math.prod(d for j, d in enumerate(dims) if j != n))
            if w < need:
                return False
        return True

    def report(self) -> str:
        lines = [f"tolerance={self.tolerance:g} krp_dim={self.krp_dim}"]
        for n, (r, l, s, w) in enumerate(
            zip(self.effective_ranks, self.targets, self.kron_dims, self.kron_widths())
        ):
            lines.append(f"mode {n}: r_eff={r} target={l} kron_s={s} kron_width={w}")
        return "\n".join(lines)

    def with_seed(self, seed: int | RngSeed) -> "SketchPlan":
        return SketchPlan(
            self.effective_ranks, self.targets, self.kron_dims, self.krp_dim,
            self.oversampling, self.tolerance, as_seed(seed),
        )


@dataclass
class SumRequest:
    summands: Sequence[TuckerTensor]
    weights: Sequence[float] | None = None
    tolerance: float = 1e-6
    oversampling: int | Sequence[int] = 2
    strategy: Strategy = Strategy.KRP
    seed: int | RngSeed = 0
    plan: SketchPlan | None = None
    rank_trace: list | None = None


def _terms(summands: Sequence[TuckerTensor], weights: Sequence[float] | None):
    """Flatten summands into ``(scaled core block, factor slices)`` pairs, dropping zero weights."""
    if len(summands) == 0:
        raise ValueError("cannot sum an empty collection")
    if weights is None:
        weights = [1.0] * len(summands)
    if len(weights) != len(summands):
        raise DimensionError("need one weight per summand")
    dims = summands[0].dims
    out = []
    for x, w in zip(summands, weights):
        if x.dims != dims:
            raise DimensionError(f"dimension mismatch: {x.dims} vs {dims}")
        if w == 0:
            continue
        for blk, us in x.terms():
            out.append((w * blk, us))
    return dims, out


def _kron_sketch_dims(targets: Sequence[int], dims: Sequence[int]) -> tuple[int, ...]:
    ndim = len(targets)
    if ndim == 1:
        return (min(targets[0], dims[0]),)
    c = math.prod(targets) ** (1.0 / (ndim - 1))
    s = [min(dims[i], max(1, math.ceil(c / l - 1e-9))) for i, l in enumerate(targets)]
    # capping at the mode size can break prod_{j!=n} s_j >= l_n; grow the smallest uncapped mode
    for n in range(ndim):
        need = min(targets[n], math.prod(d for j, d in enumerate(dims) if j != n))
        while math.prod(s[j] for j in range(ndim) if j != n) < need:
            free = [j for j in range(ndim) if j != n and s[j] < dims[j]]
            j = min(free, key=lambda j: s[j])
            s[j] += 1
    return tuple(s)


def effective_subrank(
    summands: Sequence[TuckerTensor],
    weights: Sequence[float] | None = None,
    tol: float = 1e-6,
    oversampling: int | Sequence[int] = 2,
    seed: int | RngSeed = 0,
) -> SketchPlan:
    """Estimate per-mode effective ranks of a weighted sum and derive sketch sizes.

    For each mode the factors are concatenated with weights ``|w_i| * ||G_i||_F``
    and the spectrum of their Gram matrix is truncated at a relative
    ``tol**2 / N`` share of its trace. The smaller of ``V^T V`` and ``V V^T`` is
    decomposed; both carry the same nonzero eigenvalues.
    """
    dims, terms = _terms(summands, weights)
    ndim = len(dims)
    p = (int(oversampling),) * ndim if np.isscalar(oversampling) else tuple(int(v) for v in oversampling)
    if len(p) != ndim:
        raise DimensionError("oversampling needs one entry per mode")
    r_eff = []
    for n in range(ndim):
        if terms:
            v = np.hstack([np.linalg.norm(blk) * us[n] for blk, us in terms])
        else:
            v = np.zeros((dims[n], 1))
        gram = v.T @ v if v.shape[1] <= v.shape[0] else v @ v.T
        lam = np.maximum(0.0, sym_eig(gram)[0])
        lam = np.sort(lam)[::-1]
        threshold = tol**2 / ndim * float(lam.sum())
        tail = np.append(np.cumsum(lam[::-1])[::-1], 0.0)
        r_eff.append(int(np.nonzero(tail[1:] <= threshold)[0][0]) + 1)
    targets = tuple(r + pn for r, pn in zip(r_eff, p))
    return SketchPlan(
        effective_ranks=tuple(r_eff),
        targets=targets,
        kron_dims=_kron_sketch_dims(targets, dims),
        krp_dim=max(targets),
        oversampling=p,
        tolerance=tol,
        seed=as_seed(seed),
    )


def _core_times_krp(core: np.ndarray, mats: Sequence[np.ndarray], n: int) -> np.ndarray:
    """``G_(n) (KRP of mats[j], j != n)`` as an ``r_n x s`` matrix.

    Only the Khatri-Rao product of the small ``r_j x s`` matrices is formed; its
    row count equals the core size divided by ``r_n``.
    """
    others = [m for j, m in enumerate(mats) if j != n]
    if not others:
        return core.reshape(core.shape[0], 1)
    perm = (n,) + tuple(j for j in range(core.ndim) if j != n)
    # C-order flattening of the remaining modes puts the last mode fastest,
    # which matches khatri_rao(first, ..., last)
    krp = khatri_rao_all(others)
    memtrack.record("sketch-core", krp.shape)
    return core.transpose(perm).reshape(core.shape[n], -1) @ krp


def _project_and_compress(dims, terms, bases, tol, label):
    shape = tuple(b.shape[1] for b in bases)
    memtrack.record("projected-core", shape)
    h = np.zeros(shape)
    for blk, us in terms:
        part = blk
        for k, (b, u) in enumerate(zip(bases, us)):
            part = ttm(part, b.T @ u, k)
        h += part
    core, ps = st_hosvd(h, tol)
    memtrack.record("output-core", core.shape)
    return TuckerTensor(core, [b @ p for b, p in zip(bases, ps)])


def krp_sum(
    summands: Sequence[TuckerTensor],
    weights: Sequence[float] | None = None,
    tol: float = 1e-6,
    oversampling: int | Sequence[int] = 2,
    seed: int | RngSeed = 0,
    plan: SketchPlan | None = None,
) -> TuckerTensor:
    """Weighted sum with a Khatri-Rao range finder followed by ST-HOSVD at ``tol``."""
    dims, terms = _terms(summands, weights)
    if plan is None:
        plan = effective_subrank(summands, weights, tol, oversampling, seed)
    root = plan.seed
    s = plan.krp_dim
    omegas = gaussian_matrices([(n_k, s) for n_k in dims], root)
    ys = [np.zeros((n_k, s)) for n_k in dims]
    for blk, us in terms:
        ms = [u.T @ om for u, om in zip(us, omegas)]
        for n in range(len(dims)):
            ys[n] += us[n] @ _core_times_krp(blk, ms, n)
    bases = [qr_econ(y)[0] for y in ys]
    return _project_and_compress(dims, terms, bases, tol, "krp")


def kron_sum(
    summands: Sequence[TuckerTensor],
    weights: Sequence[float] | None = None,
    tol: float = 1e-6,
    oversampling: int | Sequence[int] = 2,
    seed: int | RngSeed = 0,
    plan: SketchPlan | None = None,
) -> TuckerTensor:
    """Weighted sum with a Kronecker-structured range finder followed by ST-HOSVD at ``tol``."""
    dims, terms = _terms(summands, weights)
    if plan is None:
        plan = effective_subrank(summands, weights, tol, oversampling, seed)
    root = plan.seed
    omegas = gaussian_matrices(list(zip(dims, plan.kron_dims)), root)
    widths = plan.kron_widths()
    ys = [np.zeros((n_k, w)) for n_k, w in zip(dims, widths)]
    ndim = len(dims)
    for blk, us in terms:
        ms = [om.T @ u for om, u in zip(omegas, us)]
        for n in range(ndim):
            v = blk
            for j in range(ndim):
                if j != n:
                    v = ttm(v, ms[j], j)
            memtrack.record("sketch-core", v.shape)
            ys[n] += us[n] @ np.moveaxis(v, n, 0).reshape(v.shape[n], -1)
    bases = [qr_econ(y)[0] for y in ys]
    return _project_and_compress(dims, terms, bases, tol, "kron")


def lazy_sum(summands, weights=None, tol: float = 1e-6) -> TuckerTensor:
    """Formal sum of everything, then one rounding."""
    if len(summands) == 0:
        raise ValueError("cannot sum an empty collection")
    return tucker_rounding(formal_sum(list(summands), weights), tol)


def eager_sum(summands, weights=None, tol: float = 1e-6, rank_trace: list | None = None) -> TuckerTensor:
    """Left fold of pairwise additions, rounding after every addition."""
    if len(summands) == 0:
        raise ValueError("cannot sum an empty collection")
    if weights is None:
        weights = [1.0] * len(summands)
    if len(weights) != len(summands):
        raise DimensionError("need one weight per summand")
    acc = summands[0].scaled(weights[0])
    if len(summands) == 1:
        acc = tucker_rounding(acc, tol)
    for x, w in zip(summands[1:], weights[1:]):
        acc = tucker_rounding(tucker_axby(1.0, acc, w, x), tol)
        if rank_trace is not None:
            rank_trace.append(acc.ranks)
    return acc


def round_sum(req: SumRequest) -> TuckerTensor:
    """Dispatch a summation request to its strategy."""
    strategy = Strategy(req.strategy)
    if strategy is Strategy.LAZY:
        return lazy_sum(req.summands, req.weights, req.tolerance)
    if strategy is Strategy.EAGER:
        return eager_sum(req.summands, req.weights, req.tolerance, req.rank_trace)
    fn = krp_sum if strategy is Strategy.KRP else kron_sum
    return fn(req.summands, req.weights, req.tolerance, req.oversampling, req.seed, req.plan)


def sum_tucker(summands, weights=None, tol: float = 1e-6, strategy: Strategy | str = Strategy.KRP, **kw) -> TuckerTensor:
    """Keyword shortcut for :func:`round_sum`."""
    return round_sum(SumRequest(list(summands), weights, tol, strategy=Strategy(strategy), **kw))
