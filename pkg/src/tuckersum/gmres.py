"""Right-preconditioned GMRES on Tucker tensors.

Krylov vectors are Tucker tensors; every linear combination is formed by a
compressed sum (:func:`tuckersum.sketch.round_sum`) with the configured
strategy. The small Hessenberg least-squares problem is updated with Givens
rotations, so the residual estimate is available after each iteration.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import as_seed
from .sketch import Strategy, SumRequest, round_sum
from .tucker import TuckerTensor, tucker_inner, tucker_norm, tucker_rounding


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-5
    max_iter: int = 20
    inner_tol: float = 1e-7
    strategy: Strategy = Strategy.LAZY
    oversampling: int = 5
    seed: int = 0
    compress_after_apply: bool = True
    # breakdown when h_{k+1,k} falls below this fraction of the norm before orthogonalization
    breakdown_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.inner_tol > self.tol:
            raise ValueError("inner truncation tolerance must not exceed the solver tolerance")


@dataclass
class GmresResult:
    x: TuckerTensor
    residuals: list[float]
    converged: bool
    iterations: int
    breakdown: bool = False
    max_ranks: list[int] = field(default_factory=list)
    wall_times: list[float] = field(default_factory=list)
    krylov_ranks: list[tuple[int, ...]] = field(default_factory=list)
    # preconditioned solution before the closing truncation at ``tol``
    x_unrounded: TuckerTensor | None = None

    @property
    def relative_residuals(self) -> list[float]:
        return [r / self.residuals[0] for r in self.residuals] if self.residuals else []

    def write_csv(self, path) -> None:
        """Columns ``iter, residual_estimate, max_rank, wall_time_s``; row 0 is the initial residual."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iter", "residual_estimate", "max_rank", "wall_time_s"])
            for i, r in enumerate(self.residuals):
                w.writerow([i, repr(float(r)), self.max_ranks[i], repr(float(self.wall_times[i]))])


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def tucker_gmres(
    op: Callable[[TuckerTensor], TuckerTensor],
    b: TuckerTensor,
    precond: Callable[[TuckerTensor], TuckerTensor] | None = None,
    cfg: GmresConfig = GmresConfig(),
) -> GmresResult:
    """Solve ``op(X) = b`` with right preconditioning ``X = precond(Y)``."""
    precond = precond if precond is not None else (lambda x: x)
    strategy = Strategy(cfg.strategy)
    root = as_seed(cfg.seed)
    calls = [0]

    def rsum(xs, ws) -> TuckerTensor:
        calls[0] += 1
        return round_sum(
            SumRequest(xs, ws, cfg.inner_tol, cfg.oversampling, strategy, root.child(calls[0]))
        )

    t0 = time.perf_counter()
    beta = tucker_norm(b)
    kmax = cfg.max_iter
    h = np.zeros((kmax + 1, kmax))
    g = np.zeros(kmax + 1)
    g[0] = beta
    cs = np.zeros(kmax)
    sn = np.zeros(kmax)
    residuals = [beta]
    max_ranks = [max(b.ranks)]
    times = [0.0]
    if beta == 0.0:
        return GmresResult(b.scaled(0.0), residuals, True, 0, False, max_ranks, times, [b.ranks], b.scaled(0.0))
    basis = [b.scaled(1.0 / beta)]
    converged = breakdown = False
    k = 0
    for k in range(kmax):
        w = op(precond(basis[k]))
        if cfg.compress_after_apply:
            w = rsum([w], [1.0])
        wnorm = tucker_norm(w)
        for j in range(k + 1):
            h[j, k] = tucker_inner(basis[j], w)
        w = rsum(basis[: k + 1] + [w], [-h[j, k] for j in range(k + 1)] + [1.0])
        h[k + 1, k] = tucker_norm(w)
        for j in range(k):
            h[j, k], h[j + 1, k] = cs[j] * h[j, k] + sn[j] * h[j + 1, k], -sn[j] * h[j, k] + cs[j] * h[j + 1, k]
        hk1 = h[k + 1, k]
        cs[k], sn[k] = _givens(h[k, k], hk1)
        h[k, k] = cs[k] * h[k, k] + sn[k] * hk1
        h[k + 1, k] = 0.0
        g[k + 1] = -sn[k] * g[k]
        g[k] = cs[k] * g[k]
        residuals.append(abs(g[k + 1]))
        max_ranks.append(max(w.ranks))
        times.append(time.perf_counter() - t0)
        if hk1 <= cfg.breakdown_tol * max(wnorm, np.finfo(float).tiny):
            breakdown = True
            converged = True
            break
        basis.append(w.scaled(1.0 / hk1))
        if residuals[-1] < cfg.tol * beta:
            converged = True
            break
    n = k + 1
    y = np.linalg.solve(np.triu(h[:n, :n]), g[:n])
    ysum = rsum(basis[:n], list(y))
    x_full = precond(ysum)
    x = tucker_rounding(x_full, cfg.tol)
    return GmresResult(x, residuals, converged, n, breakdown, max_ranks, times, [v.ranks for v in basis], x_full)


def true_residual(op, x: TuckerTensor, b: TuckerTensor) -> float:
    """``||op(x) - b||_F / ||b||_F`` from Tucker inner products.

    Expanding the square loses about half the digits, which leaves a floor near
    ``1e-8`` relative; ample for checking a ``1e-5`` solve.
    """
    ax = op(x)
    bb = tucker_inner(b, b)
    sq = tucker_inner(ax, ax) - 2.0 * tucker_inner(ax, b) + bb
    return float(np.sqrt(max(sq, 0.0) / bb))
