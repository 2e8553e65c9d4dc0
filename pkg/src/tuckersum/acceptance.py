"""Executable acceptance checks at desk scale.

Each ``criterion_*`` function runs one check and returns a
:class:`CriterionResult`; :func:`run_all` runs a selection in order. The
checks only assert relative scalings and signs for timings.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import bench, memtrack, ndg
from .cookie import CookieConfig, dense_solve
from .gmres import GmresConfig, true_residual, tucker_gmres
from .kernels import RngSeed, khatri_rao_all, kron_all, multi_ttm, unfold
from .sketch import Strategy, SumRequest, effective_subrank, kron_sum, krp_sum, lazy_sum, round_sum
from .tucker import TuckerTensor, reconstruct, tucker_rounding


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)
    elapsed_s: float = 0.0
    budget_s: float = math.inf

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = ", ".join(f"{k}={_short(v)}" for k, v in self.details.items())
        return f"{status} criterion {self.number} ({self.name}) [{self.elapsed_s:.1f}s / {self.budget_s:.0f}s] {info}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "(" + ",".join(str(_short(x)) for x in v) + ")"
    return str(v)


def _rel(a, b) -> float:
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / (nb if nb > 0 else 1.0))


def _timed(number: int, name: str, budget: float, fn: Callable[[], tuple[bool, dict]]) -> CriterionResult:
    t0 = time.perf_counter()
    ok, details = fn()
    elapsed = time.perf_counter() - t0
    return CriterionResult(number, name, bool(ok and elapsed < budget), details, elapsed, budget)


def random_tucker(g: np.random.Generator, dims: Sequence[int], ranks: Sequence[int]) -> TuckerTensor:
    return TuckerTensor(g.standard_normal(tuple(ranks)), [g.standard_normal((n, r)) for n, r in zip(dims, ranks)])


def random_sum_instance(seed: int, max_elements: int = 2**24):
    """Random order, sizes, ranks, summand count, weights and tolerance."""
    g = RngSeed(seed, (7,)).generator()
    order = int(g.integers(2, 5))
    while True:
        dims = tuple(int(v) for v in g.integers(4, 40, size=order))
        if math.prod(dims) <= min(max_elements, 2**18):
            break
    d = int(g.integers(2, 9))
    summands = [random_tucker(g, dims, [int(v) for v in g.integers(1, 4, size=order)]) for _ in range(d)]
    weights = list(g.standard_normal(d))
    tol = float(10.0 ** -g.integers(6, 11))
    return summands, weights, tol


# ---------------------------------------------------------------- 1


def criterion_1(n_seeds: int = 20, oversampling: int = 5) -> CriterionResult:
    def run():
        worst = {"lazy": 0.0, "krp": 0.0, "kron": 0.0}
        skipped = 0
        ok = True
        for seed in range(n_seeds):
            summands, weights, tol = random_sum_instance(seed)
            dense = sum(w * reconstruct(x) for x, w in zip(summands, weights))
            bound = max(tol, 1e-10)
            plan = effective_subrank(summands, weights, tol, oversampling, RngSeed(seed, (8,)))
            true_ranks = [np.linalg.matrix_rank(unfold(dense, k), tol=1e-10 * np.linalg.norm(dense)) for k in range(dense.ndim)]
            covered = all(r <= l for r, l in zip(true_ranks, plan.targets))
            for strat in ("lazy", "krp", "kron"):
                if strat != "lazy" and not covered:
                    skipped += 1
                    continue
                y = round_sum(SumRequest(summands, weights, tol, oversampling, Strategy(strat), plan=plan))
                err = _rel(reconstruct(y), dense)
                worst[strat] = max(worst[strat], err / bound)
                ok &= err <= bound
        return ok, {"worst_err_over_bound": tuple(worst.values()), "sketch_checks_skipped": skipped}

    return _timed(1, "oracle equivalence", 120, run)


# ---------------------------------------------------------------- 2


def criterion_2(n_instances: int = 10, tol: float = 1e-11) -> CriterionResult:
    def run():
        worst = [0.0, 0.0, 0.0]
        for i in range(n_instances):
            g = RngSeed(i, (2,)).generator()
            order = int(g.integers(3, 5))
            dims = [int(v) for v in g.integers(3, 9, size=order)]
            ranks = [int(v) for v in g.integers(1, 5, size=order)]
            x = random_tucker(g, dims, ranks)
            full = reconstruct(x)
            core, us = x.dense_core(), x.factors
            k = int(g.integers(order))
            others = [j for j in range(order) if j != k][::-1]
            # unfolding identity
            rhs = us[k] @ unfold(core, k) @ kron_all([us[j] for j in others]).T
            worst[0] = max(worst[0], _rel(unfold(full, k), rhs))
            # MTTKRP
            s = int(g.integers(1, 6))
            a = {j: g.standard_normal((dims[j], s)) for j in range(order)}
            lhs = unfold(full, k) @ khatri_rao_all([a[j] for j in others])
            rhs = us[k] @ unfold(core, k) @ khatri_rao_all([us[j].T @ a[j] for j in others])
            worst[1] = max(worst[1], _rel(lhs, rhs))
            # multi-TTM
            b = [g.standard_normal((int(g.integers(1, 6)), n)) for n in dims]
            mats = [None if j == k else b[j] for j in range(order)]
            lhs = multi_ttm(full, mats)
            moved = TuckerTensor(core, [u if j == k else b[j] @ u for j, u in enumerate(us)])
            worst[2] = max(worst[2], _rel(lhs, reconstruct(moved)))
        return max(worst) <= tol, {"unfold": worst[0], "mttkrp": worst[1], "multi_ttm": worst[2]}

    return _timed(2, "Tucker identities", 30, run)


# ---------------------------------------------------------------- 3


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def criterion_3(seed: int = 0, trials: int = 3) -> CriterionResult:
    def run():
        spec = bench.ExperimentSpec("synthetic-lowrank", strategies=("lazy", "krp", "kron"), trials=trials, seed=seed)
        rows = bench.run_experiment(spec)
        ds = spec.get("d")
        ok = True
        details: dict[str, Any] = {}
        for strat in ("krp", "kron"):
            for r in bench.select(rows, strategy=strat):
                if r.metric.startswith("rank_mode") and r.value != spec.get("rank"):
                    ok = False
        errs = [r.value for r in rows if r.metric == "rel_error_vs_lazy" and r.strategy != "lazy"]
        details["max_err_vs_lazy"] = max(errs)
        ok &= max(errs) <= 1e-10
        slopes = {}
        for strat in ("lazy", "krp", "kron"):
            med = [bench.select(rows, strategy=strat, sweep=f"d={d}", metric="wall_time_median")[0].value for d in ds]
            slopes[strat] = loglog_slope(ds, med)
        details["slopes"] = (slopes["lazy"], slopes["krp"], slopes["kron"])
        ok &= slopes["krp"] <= 1.4 and slopes["krp"] < slopes["lazy"]
        return ok, details

    return _timed(3, "synthetic low-rank", 300, run)


# ---------------------------------------------------------------- 4


def criterion_4(seed: int = 0) -> CriterionResult:
    def run():
        spec = bench.ExperimentSpec("cancellation", seed=seed, trials=1)
        p = spec.params
        target, summands = bench.cancellation_instance(
            p["n"], p["order"], p["d"], p["target"], p["noise_rank"], tuple(p["noise_range"]), RngSeed(seed).child(0)
        )
        # pair +noise_i with -noise_i so the dense reference does not lose digits to the 1e6 noise
        half = len(summands) // 2
        exact = sum(reconstruct(summands[i]) + reconstruct(summands[i + half]) for i in range(half))
        exact_err = _rel(exact, reconstruct(target))
        rows = bench.run_experiment(spec)
        err = {s: bench.select(rows, strategy=s, metric="rel_error_vs_target")[0].value for s in spec.strategies}
        mid = p["d"] // 2
        eager_mid = bench.select(rows, strategy="eager", sweep=f"step={mid}", metric="intermediate_max_rank")[0].value
        krp_rank = bench.select(rows, strategy="krp", metric="output_max_rank")[0].value
        ok = (err["eager"] >= 0.1
              and all(err[s] <= 1e-9 for s in ("lazy", "krp", "kron"))
              and eager_mid > 2 * krp_rank)
        return ok, {
            "exact_sum_err": exact_err, "eager": err["eager"], "lazy": err["lazy"], "krp": err["krp"],
            "kron": err["kron"], "eager_mid_rank": int(eager_mid), "krp_rank": int(krp_rank),
        }

    return _timed(4, "cancellation", 180, run)


# ---------------------------------------------------------------- 5


def criterion_5(seed: int = 0) -> CriterionResult:
    def run():
        details: dict[str, Any] = {}
        _, op, rhs, pre = bench.cookie_problem(32, 4, 8)
        sols = {}
        for strat in ("lazy", "krp"):
            res = tucker_gmres(op, rhs, pre, GmresConfig(strategy=Strategy(strat), seed=seed))
            sols[strat] = res
        lazy = sols["lazy"]
        details["lazy_iters"] = lazy.iterations
        details["lazy_residual"] = lazy.relative_residuals[-1]
        details["lazy_true_residual"] = true_residual(op, lazy.x_unrounded, rhs)
        details["krp_vs_lazy"] = _rel(reconstruct(sols["krp"].x), reconstruct(lazy.x))
        ok = lazy.converged and lazy.iterations <= 20 and details["lazy_residual"] <= 1e-5
        ok &= details["krp_vs_lazy"] <= 1e-4
        cfg = CookieConfig(m=16, n_params=4, n_samples=4)
        _, op16, rhs16, pre16 = bench.cookie_problem(16, 4, 4)
        small = tucker_gmres(op16, rhs16, pre16, GmresConfig(strategy=Strategy.LAZY, seed=seed))
        details["m16_vs_direct"] = _rel(reconstruct(small.x), dense_solve(cfg))
        ok &= details["m16_vs_direct"] <= 1e-4
        return ok, details

    return _timed(5, "cookie GMRES", 600, run)


# ---------------------------------------------------------------- 6


def criterion_6(seed: int = 0) -> CriterionResult:
    def run():
        spec = bench.ExperimentSpec("ndg-convergence", seed=seed)
        rows = bench.run_experiment(spec)
        tol = spec.get("tol")
        ok = True
        orders = []
        for k in spec.get("degrees"):
            nxs = bench._nx_list(spec.params, k)
            pair = f"k={k},N_xi={spec.get('n_xi')[0]},N_x={nxs[-2]}->{nxs[-1]}"
            o = [r.value for r in bench.select(rows, sweep=pair, metric="observed_order")]
            orders.append(min(o, key=lambda v: -abs(v - (k + 1))))
            ok &= all(abs(v - (k + 1)) <= 0.2 for v in o)
        spread = 0.0
        for r in bench.select(rows, strategy="lazy", metric="l1_error"):
            others = [q.value for q in bench.select(rows, sweep=r.sweep, metric="l1_error")]
            spread = max(spread, max(others) - min(others))
        ok &= spread <= 10 * tol
        return ok, {"worst_orders": tuple(orders), "max_l1_spread": spread}

    return _timed(6, "NDG convergence", 900, run)


# ---------------------------------------------------------------- 7


def criterion_7(seed: int = 0, trials: int = 3) -> CriterionResult:
    def run():
        spec = bench.ExperimentSpec("ndg-speedup", params={"n_xi": (64,)}, strategies=("lazy", "krp"), trials=trials, seed=seed)
        rows = bench.run_experiment(spec)
        med = {s: bench.select(rows, strategy=s, metric="wall_time_median")[0].value for s in ("lazy", "krp")}
        return med["krp"] <= med["lazy"], {"lazy_s": med["lazy"], "krp_s": med["krp"], "speedup": med["lazy"] / med["krp"]}

    return _timed(7, "NDG speedup sign", 600, run)


# ---------------------------------------------------------------- 8


def criterion_8(seed: int = 0, n: int = 200, order: int = 3, rank: int = 2) -> CriterionResult:
    def run():
        g = RngSeed(seed, (8,)).generator()
        # all summands share one low-rank range so a single plan fits every d
        qs = [np.linalg.qr(g.standard_normal((n, 6)))[0] for _ in range(order)]
        make = lambda: TuckerTensor(g.standard_normal((rank,) * order), [q @ g.standard_normal((6, rank)) for q in qs])  # noqa: E731
        pool = [make() for _ in range(40)]
        plan = effective_subrank(pool, None, 1e-8, 2, RngSeed(seed, (9,)))
        peaks = {}
        for name, fn in (("krp", krp_sum), ("kron", kron_sum)):
            for d in (10, 40):
                with memtrack.track_core_allocations() as t:
                    fn(pool[:d], None, 1e-8, plan=plan)
                peaks[(name, d)] = t.peak
        lazy = {}
        for d in (10, 40):
            with memtrack.track_core_allocations() as t:
                lazy_sum(pool[:d], None, 1e-8)
            lazy[d] = t.peak_for("rounding-phase1")
        ok = peaks[("krp", 10)] == peaks[("krp", 40)] and peaks[("kron", 10)] == peaks[("kron", 40)]
        ok &= all(lazy[d] == (d * rank) ** order for d in (10, 40))
        return ok, {
            "krp_peaks": (peaks[("krp", 10)], peaks[("krp", 40)]),
            "kron_peaks": (peaks[("kron", 10)], peaks[("kron", 40)]),
            "lazy_phase1": (lazy[10], lazy[40]),
        }

    return _timed(8, "d-independent memory", 60, run)


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
    5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8,
}


def run_all(numbers: Sequence[int] | None = None, seed: int = 0, echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    out = []
    for num in numbers or sorted(CRITERIA):
        fn = CRITERIA[num]
        res = fn() if num in (1, 2) else fn(seed=seed)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
