"""Parametric diffusion with disk inclusions ("cookie" problem).

The coefficient is ``sigma = 1 + sum_mu xi_mu chi_mu`` on the unit square with
homogeneous Dirichlet data and a constant source. Space is discretized with the
5-point finite-difference stencil on an ``m x m`` cell grid; the coefficient on
each grid edge is the mean of the two cells sharing that edge. Matrices are
left unscaled (interior Laplacian row ``4, -1, -1, -1, -1``) and the load is
``f h**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .tucker import TuckerTensor, formal_sum

DEFAULT_CENTERS = ((0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75))


class GeometryError(ValueError):
    pass


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CookieConfig:
    m: int = 32
    n_params: int = 4
    n_samples: int = 8
    xi_range: tuple[float, float] = (1.0, 10.0)
    source: float = 1.0
    radius: float = 0.15
    centers: tuple[tuple[float, float], ...] = DEFAULT_CENTERS
    length: float = 1.0

    def __post_init__(self):
        if self.m < 3:
            raise ValueError("grid needs at least 3 cells per side")
        if self.n_samples < 2:
            raise ValueError("need at least two parameter samples")
        if not 0 <= self.n_params <= len(self.centers):
            raise GeometryError(f"{self.n_params} inclusions requested, {len(self.centers)} centers given")
        lo, hi = self.xi_range
        if not lo <= hi:
            raise ValueError("empty parameter range")
        disks = self.disks()
        for c, r in disks:
            if r <= 0 or min(c) - r < 0 or max(c) + r > self.length:
                raise GeometryError(f"inclusion at {c} with radius {r} leaves the domain")
        for a in range(len(disks)):
            for b in range(a + 1, len(disks)):
                (ca, ra), (cb, rb) = disks[a], disks[b]
                if np.hypot(ca[0] - cb[0], ca[1] - cb[1]) <= ra + rb:
                    raise GeometryError(f"inclusions {a} and {b} overlap")

    def disks(self) -> list[tuple[tuple[float, float], float]]:
        return [(tuple(c), self.radius) for c in self.centers[: self.n_params]]

    def samples(self) -> np.ndarray:
        return np.linspace(self.xi_range[0], self.xi_range[1], self.n_samples)


def _cell_indicator(cfg: CookieConfig, center, radius) -> np.ndarray:
    h = cfg.length / cfg.m
    c = (np.arange(cfg.m) + 0.5) * h
    xx, yy = np.meshgrid(c, c, indexing="ij")
    return ((xx - center[0]) ** 2 + (yy - center[1]) ** 2 < radius**2).astype(float)


def _edge_stiffness(cell: np.ndarray) -> sp.csr_matrix:
    """5-point operator on interior nodes with edge weights averaged from ``cell``."""
    m = cell.shape[0]
    n = m - 1
    idx = lambda i, j: (i - 1) + n * (j - 1)  # noqa: E731  interior node (i, j), i fastest
    rows, cols, vals = [], [], []

    def add(a, b, w):
        # a is interior; b may be a boundary node (None), eliminated by Dirichlet data
        rows.append(a); cols.append(a); vals.append(w)
        if b is not None:
            rows.append(b); cols.append(b); vals.append(w)
            rows.append(a); cols.append(b); vals.append(-w)
            rows.append(b); cols.append(a); vals.append(-w)

    inside = lambda i, j: 1 <= i <= n and 1 <= j <= n  # noqa: E731
    # horizontal edges (i, j) - (i + 1, j) lie between cells (i, j - 1) and (i, j)
    for i in range(0, m):
        for j in range(1, m):
            w = 0.5 * (cell[i, j - 1] + cell[i, j])
            if w == 0:
                continue
            a, b = (i, j), (i + 1, j)
            ia, ib = inside(*a), inside(*b)
            if ia and ib:
                add(idx(*a), idx(*b), w)
            elif ia:
                add(idx(*a), None, w)
            elif ib:
                add(idx(*b), None, w)
    # vertical edges (i, j) - (i, j + 1) lie between cells (i - 1, j) and (i, j)
    for i in range(1, m):
        for j in range(0, m):
            w = 0.5 * (cell[i - 1, j] + cell[i, j])
            if w == 0:
                continue
            a, b = (i, j), (i, j + 1)
            ia, ib = inside(*a), inside(*b)
            if ia and ib:
                add(idx(*a), idx(*b), w)
            elif ia:
                add(idx(*a), None, w)
            elif ib:
                add(idx(*b), None, w)
    a = sp.csr_matrix((vals, (rows, cols)), shape=(n * n, n * n))
    a.sum_duplicates()
    a.eliminate_zeros()
    a.sort_indices()
    return a


def assemble_cookie(cfg: CookieConfig) -> tuple[list[sp.csr_matrix], np.ndarray]:
    """Matrices ``A_0, ..., A_P`` (CSR) and the load vector ``b``."""
    ops = [_edge_stiffness(np.ones((cfg.m, cfg.m)))]
    for center, radius in cfg.disks():
        ops.append(_edge_stiffness(_cell_indicator(cfg, center, radius)))
    h = cfg.length / cfg.m
    b = np.full((cfg.m - 1) ** 2, cfg.source * h * h)
    return ops, b


def _act(entry, u: np.ndarray) -> np.ndarray:
    if entry is None:
        return u
    if isinstance(entry, np.ndarray) and entry.ndim == 1:
        return entry[:, None] * u
    return np.asarray(entry @ u)


def _entry_dense(entry, n: int) -> np.ndarray:
    if entry is None:
        return np.eye(n)
    if isinstance(entry, np.ndarray) and entry.ndim == 1:
        return np.diag(entry)
    if sp.issparse(entry):
        return entry.toarray()
    return np.asarray(entry, dtype=float)


@dataclass
class KroneckerSumOperator:
    """``sum_t  E_t0 (x) E_t1 (x) ...`` with each factor acting on its own mode.

    A mode entry is a sparse or dense matrix, a 1-D array holding a diagonal,
    or ``None`` for the identity.
    """

    terms: list[list]
    dims: tuple[int, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("operator needs at least one term")
        for t in self.terms:
            if len(t) != len(self.dims):
                raise ValueError("every term needs one entry per mode")
            for e, n in zip(t, self.dims):
                if e is None:
                    continue
                shape = (e.shape[0], e.shape[0]) if isinstance(e, np.ndarray) and e.ndim == 1 else e.shape
                if shape != (n, n):
                    raise ValueError(f"mode entry of shape {shape} does not match size {n}")

    def __call__(self, x: TuckerTensor) -> TuckerTensor:
        return apply_operator(self, x)

    def dense(self) -> np.ndarray:
        """Matrix acting on column-major vectorizations (small sizes only)."""
        total = None
        for t in self.terms:
            mat = np.ones((1, 1))
            for e, n in zip(t, self.dims):
                mat = np.kron(_entry_dense(e, n), mat)
            total = mat if total is None else total + mat
        return total


def build_operator(ops: Sequence, samples: Sequence[float], b: np.ndarray | None = None):
    """Kronecker-sum operator over ``(space, xi_1, ..., xi_P)`` and the rank-1 right-hand side."""
    samples = np.asarray(samples, dtype=float)
    if np.any(np.diff(samples) < 0):
        raise ValueError("parameter samples must be sorted")
    n_params = len(ops) - 1
    nx = ops[0].shape[0]
    dims = (nx,) + (len(samples),) * n_params
    terms = [[ops[0]] + [None] * n_params]
    for mu in range(1, n_params + 1):
        t = [ops[mu]] + [None] * n_params
        t[mu] = samples.copy()
        terms.append(t)
    op = KroneckerSumOperator(terms, dims)
    if b is None:
        return op, None
    rhs = TuckerTensor(np.ones((1,) * len(dims)), [np.asarray(b, float)[:, None]] + [np.ones((len(samples), 1))] * n_params)
    return op, rhs


def apply_operator(op: KroneckerSumOperator, x: TuckerTensor) -> TuckerTensor:
    """Formal sum over operator terms; each term maps the factors, the core is shared."""
    if x.dims != op.dims:
        raise ValueError(f"operator dims {op.dims} do not match tensor dims {x.dims}")
    parts = []
    for t in op.terms:
        parts.append(TuckerTensor(x.core, [_act(e, u) for e, u in zip(t, x.factors)]))
    return parts[0] if len(parts) == 1 else formal_sum(parts)


@dataclass
class Preconditioner:
    """Mode-0 solve ``x -> x x_0 M^{-1}`` with a sparse LU factorization of ``M``."""

    solve: Callable[[np.ndarray], np.ndarray]
    matrix: sp.spmatrix | None = field(default=None, repr=False)

    def __call__(self, x: TuckerTensor) -> TuckerTensor:
        return x.with_factor(0, self.solve(x.factors[0]))


def reference_preconditioner(ops: Sequence) -> Preconditioner:
    m = sp.csc_matrix(sum(ops[1:], ops[0]))
    try:
        lu = spla.splu(m)
    except RuntimeError as exc:
        raise FactorizationError(f"reference matrix is singular: {exc}") from exc
    return Preconditioner(lambda u: lu.solve(np.asarray(u, dtype=float)), m)


def identity_preconditioner() -> Preconditioner:
    return Preconditioner(lambda u: u)


def dense_solve(cfg: CookieConfig) -> np.ndarray:
    """Reference solution on the full parameter grid by one sparse solve per sample point."""
    ops, b = assemble_cookie(cfg)
    xi = cfg.samples()
    shape = (len(b),) + (len(xi),) * cfg.n_params
    out = np.zeros(shape)
    for idx in np.ndindex(*shape[1:]):
        a = ops[0] + sum(xi[i] * ops[mu + 1] for mu, i in enumerate(idx))
        out[(slice(None),) + idx] = spla.spsolve(sp.csc_matrix(a), b)
    return out
