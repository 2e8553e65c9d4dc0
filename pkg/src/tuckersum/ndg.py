"""Nodal DG solver for a 1D linear transport equation with a 3D velocity parameter.

Solves ``f_t + xi_x f_x = 0`` on ``x in [0, 2 pi)`` (periodic) for every point of a
tensor grid over ``xi = (xi_x, xi_y, xi_z) in [-Xi, Xi]^3``. Each element carries
``k + 1`` Gauss-Legendre nodes and the nodal value at every node is a third-order
Tucker tensor over the velocity grid. Time stepping is forward Euler; each nodal
update is one weighted tensor sum compressed by :func:`tuckersum.sketch.round_sum`.

Upwinding splits the advection speed as ``xi_x = max(xi_x, 0) + min(xi_x, 0)``.
Both parts act on mode 0 as diagonal matrices, so every stencil contribution is
the neighbour's Tucker tensor with its first factor row-scaled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .kernels import RngSeed, as_seed
from .sketch import Strategy, SumRequest, effective_subrank, round_sum
from .tucker import TuckerTensor, formal_sum, reconstruct

TWO_PI = 2.0 * np.pi

RANK6_AMPLITUDES = (1 / 2, 1 / 4, 3 / 20, 1 / 5, 9 / 10, 1 / 100)
RANK6_FREQUENCIES = (1.0, 1 / 100, 2.0, 1 / 5, 7 / 10, 10.0)
RANK6_SHIFTS = (
    (-1 / 20, 0.0, 0.0),
    (1 / 20, 0.0, 0.0),
    (0.0, -3 / 40, 0.0),
    (0.0, 3 / 40, 0.0),
    (0.0, 0.0, -1 / 40),
    (0.0, 0.0, 1 / 40),
)


@dataclass(frozen=True)
class NdgConfig:
    nx: int = 16
    degree: int = 1
    n_xi: int = 8
    xi_max: float = 6.0
    t_final: float = 0.25
    tol: float = 1e-6
    oversampling: int = 2
    strategy: Strategy = Strategy.KRP
    seed: int = 0
    ic: str = "rank1"
    # "accuracy": dt = theta * dx**(k+1); "speedup": dt = theta * dx
    timestep: str = "accuracy"
    cfl: float | None = None
    xi_grid: str = "centers"

    def __post_init__(self):
        if self.nx < 2:
            raise ValueError("need at least two elements")
        if self.degree not in (0, 1, 2, 3):
            raise ValueError("degree must be in 0..3")
        if self.n_xi < 2:
            raise ValueError("need at least two velocity points")
        if self.timestep not in ("accuracy", "speedup"):
            raise ValueError(f"unknown timestep rule {self.timestep!r}")
        if self.xi_grid not in ("centers", "endpoints"):
            raise ValueError(f"unknown velocity grid {self.xi_grid!r}")

    @property
    def dx(self) -> float:
        return TWO_PI / self.nx

    @property
    def theta(self) -> float:
        if self.cfl is not None:
            return self.cfl
        k = self.degree
        if self.timestep == "accuracy":
            return 0.1 / ((2 * k + 3) * self.xi_max)
        return 0.1 / ((2 * k + 1) * self.xi_max)

    def nominal_dt(self) -> float:
        power = self.degree + 1 if self.timestep == "accuracy" else 1
        return self.theta * self.dx**power

    def n_steps(self) -> int:
        """Step count; the step size is shrunk slightly so the run ends exactly at ``t_final``."""
        return max(1, math.ceil(self.t_final / self.nominal_dt() - 1e-9))

    def dt(self) -> float:
        return self.t_final / self.n_steps()

    def xi_axis(self) -> np.ndarray:
        if self.xi_grid == "centers":
            hv = 2 * self.xi_max / self.n_xi
            return -self.xi_max + (np.arange(self.n_xi) + 0.5) * hv
        return np.linspace(-self.xi_max, self.xi_max, self.n_xi)

    def xi_weight(self) -> float:
        """Quadrature width ``h_v`` of one velocity cell."""
        if self.xi_grid == "centers":
            return 2 * self.xi_max / self.n_xi
        return 2 * self.xi_max / (self.n_xi - 1)


def gl_nodes_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule with ``n`` points on ``[-1, 1]``."""
    if not 1 <= n <= 8:
        raise ValueError("supported rule sizes are 1..8")
    return np.polynomial.legendre.leggauss(n)


def _lagrange(nodes: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    v = np.ones_like(x, dtype=float)
    for q, r in enumerate(nodes):
        if q != p:
            v = v * (x - r) / (nodes[p] - r)
    return v


def _lagrange_deriv(nodes: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    for m in range(len(nodes)):
        if m == p:
            continue
        v = np.ones_like(x, dtype=float) / (nodes[p] - nodes[m])
        for q in range(len(nodes)):
            if q != p and q != m:
                v = v * (x - nodes[q]) / (nodes[p] - nodes[q])
        out = out + v
    return out


@dataclass(frozen=True)
class DgCoefficients:
    """Reference-element data for the nodal upwind scheme.

    ``volume[p, q] = w_q * L_p'(r_q)``; ``left``/``right`` hold ``L_p(-1)`` and
    ``L_p(1)``; ``inv_mass = 1 / w_p``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    volume: np.ndarray
    left: np.ndarray
    right: np.ndarray
    inv_mass: np.ndarray

    @property
    def degree(self) -> int:
        return len(self.nodes) - 1

    def stencil(self, h: float) -> dict[str, np.ndarray]:
        """Scalar weights of the four split contributions, indexed ``[p, q]``.

        ``"plus_self"`` multiplies ``D+ C_q^i``, ``"minus_self"`` ``D- C_q^i``,
        ``"plus_left"`` ``D+ C_q^{i-1}`` and ``"minus_right"`` ``D- C_q^{i+1}``.
        """
        s = (2.0 / h) * self.inv_mass[:, None]
        a, lo, hi = self.volume, self.left, self.right
        return {
            "plus_self": s * (a - np.outer(hi, hi)),
            "minus_self": s * (a + np.outer(lo, lo)),
            "plus_left": s * np.outer(lo, hi),
            "minus_right": -s * np.outer(hi, lo),
        }


def dg_coefficients(k: int) -> DgCoefficients:
    if k not in (0, 1, 2, 3):
        raise ValueError("degree must be in 0..3")
    r, w = gl_nodes_weights(k + 1)
    volume = np.array([[w[q] * _lagrange_deriv(r, p, np.array(r[q])) for q in range(k + 1)] for p in range(k + 1)])
    one = np.array(1.0)
    left = np.array([_lagrange(r, p, -one) for p in range(k + 1)])
    right = np.array([_lagrange(r, p, one) for p in range(k + 1)])
    return DgCoefficients(r, w, volume, left, right, 1.0 / w)


@dataclass
class NdgState:
    coeffs: list[list[TuckerTensor]]
    t: float
    x: np.ndarray
    xi: np.ndarray
    step: int = 0
    rank_history: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def nx(self) -> int:
        return len(self.coeffs)

    @property
    def n_nodes(self) -> int:
        return len(self.coeffs[0])

    def max_ranks(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.max([c.ranks for row in self.coeffs for c in row], axis=0))


def element_nodes(cfg: NdgConfig) -> np.ndarray:
    r, _ = gl_nodes_weights(cfg.degree + 1)
    h = cfg.dx
    return (np.arange(cfg.nx)[:, None] + 0.5) * h + r[None, :] * (h / 2)


def _gauss(xi: np.ndarray, shift: float = 0.0) -> np.ndarray:
    return np.exp(-0.5 * (xi - shift) ** 2)


_NORMALIZER = (2 * np.pi) ** -1.5


def _components(ic: str):
    """``(amplitude, frequency, shift)`` triples of the separable initial profiles."""
    if ic == "rank1":
        return [(0.5, 1.0, (0.0, 0.0, 0.0))]
    if ic == "rank6":
        return list(zip(RANK6_AMPLITUDES, RANK6_FREQUENCIES, RANK6_SHIFTS))
    if ic == "constant":
        return [(0.0, 0.0, (0.0, 0.0, 0.0))]
    raise ValueError(f"unknown initial condition {ic!r}")


def exact_node_tensor(cfg: NdgConfig, x: float, t: float) -> TuckerTensor:
    """Exact solution at one spatial point as a Tucker tensor (rank 1 per component).

    The shifted profile ``sin(omega (x - t xi_x))`` depends on ``xi_x`` and is
    folded into the mode-0 factor.
    """
    xi = cfg.xi_axis()
    parts = []
    for a, om, beta in _components(cfg.ic):
        u0 = (1.0 + a * np.sin(om * (x - t * xi))) * _gauss(xi, beta[0])
        parts.append(
            TuckerTensor(
                np.full((1, 1, 1), _NORMALIZER),
                [u0[:, None], _gauss(xi, beta[1])[:, None], _gauss(xi, beta[2])[:, None]],
            )
        )
    return parts[0] if len(parts) == 1 else formal_sum(parts)


def initial_condition(cfg: NdgConfig) -> NdgState:
    x = element_nodes(cfg)
    coeffs = [[exact_node_tensor(cfg, float(x[i, p]), 0.0) for p in range(x.shape[1])] for i in range(cfg.nx)]
    return NdgState(coeffs, 0.0, x, cfg.xi_axis())


def _split_velocity(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return np.maximum(xi, 0.0), np.minimum(xi, 0.0)


def rhs_terms(state: NdgState, coef: DgCoefficients, h: float) -> list[list[tuple[list[TuckerTensor], list[float]]]]:
    """Per-node ``(summands, weights)`` lists whose weighted sum is ``dC_p^i/dt``."""
    dplus, dminus = _split_velocity(state.xi)
    plus = [[c.with_factor(0, dplus[:, None] * c.factors[0]) for c in row] for row in state.coeffs]
    minus = [[c.with_factor(0, dminus[:, None] * c.factors[0]) for c in row] for row in state.coeffs]
    w = coef.stencil(h)
    nx, nq = state.nx, state.n_nodes
    out = []
    for i in range(nx):
        row = []
        left, right = (i - 1) % nx, (i + 1) % nx
        for p in range(nq):
            summands, weights = [], []
            for key, src in (
                ("plus_self", plus[i]),
                ("minus_self", minus[i]),
                ("plus_left", plus[left]),
                ("minus_right", minus[right]),
            ):
                for q in range(nq):
                    wt = float(w[key][p, q])
                    if wt != 0.0:
                        summands.append(src[q])
                        weights.append(wt)
            row.append((summands, weights))
        out.append(row)
    return out


def _shared_plan(state: NdgState, requests, cfg: NdgConfig):
    """One sketch plan per step, estimated at the node with the largest ranks."""
    if Strategy(cfg.strategy) not in (Strategy.KRP, Strategy.KRON):
        return None
    i, p = max(
        ((i, p) for i in range(state.nx) for p in range(state.n_nodes)),
        key=lambda ip: sum(state.coeffs[ip[0]][ip[1]].ranks),
    )
    summands, weights = requests[i][p]
    return effective_subrank(summands, weights, cfg.tol, cfg.oversampling, cfg.seed)


def ndg_rhs(state: NdgState, cfg: NdgConfig) -> list[list[TuckerTensor]]:
    """Compressed right-hand side tensors for every node."""
    coef = dg_coefficients(cfg.degree)
    reqs = rhs_terms(state, coef, cfg.dx)
    plan = _shared_plan(state, reqs, cfg)
    root = as_seed(cfg.seed).child(state.step)
    out = []
    for i, row in enumerate(reqs):
        out_row = []
        for p, (summands, weights) in enumerate(row):
            seed = root.child(i, p)
            out_row.append(
                round_sum(
                    SumRequest(
                        summands, weights, cfg.tol, cfg.oversampling, Strategy(cfg.strategy), seed,
                        None if plan is None else plan.with_seed(seed),
                    )
                )
            )
        out.append(out_row)
    return out


def step_forward_euler(state: NdgState, cfg: NdgConfig, dt: float | None = None) -> NdgState:
    """One forward Euler step; the update ``C + dt * rhs`` is a single compressed sum per node."""
    dt = cfg.dt() if dt is None else dt
    coef = dg_coefficients(cfg.degree)
    reqs = rhs_terms(state, coef, cfg.dx)
    full = [
        [([state.coeffs[i][p]] + s, [1.0] + [dt * v for v in w]) for p, (s, w) in enumerate(row)]
        for i, row in enumerate(reqs)
    ]
    plan = _shared_plan(state, full, cfg)
    root = as_seed(cfg.seed).child(state.step)
    new = []
    for i, row in enumerate(full):
        new_row = []
        for p, (summands, weights) in enumerate(row):
            seed = root.child(i, p)
            new_row.append(
                round_sum(
                    SumRequest(
                        summands, weights, cfg.tol, cfg.oversampling, Strategy(cfg.strategy), seed,
                        None if plan is None else plan.with_seed(seed),
                    )
                )
            )
        new.append(new_row)
    out = NdgState(new, state.t + dt, state.x, state.xi, state.step + 1, list(state.rank_history))
    out.rank_history.append(out.max_ranks())
    return out


def solve(cfg: NdgConfig, state: NdgState | None = None) -> NdgState:
    """Integrate from the initial condition (or ``state``) to ``cfg.t_final``."""
    if state is None:
        state = initial_condition(cfg)
    dt = cfg.dt()
    for _ in range(cfg.n_steps()):
        state = step_forward_euler(state, cfg, dt)
    state.t = cfg.t_final
    return state


def tensor_total(x: TuckerTensor) -> float:
    """Sum of all entries without forming the full tensor."""
    total = 0.0
    for blk, us in x.terms():
        v = blk
        for k, u in enumerate(us):
            v = np.tensordot(u.sum(axis=0), v, axes=(0, 0))
        total += float(v)
    return total


def total_mass(state: NdgState, cfg: NdgConfig) -> float:
    _, w = gl_nodes_weights(cfg.degree + 1)
    scale = 0.5 * cfg.dx * cfg.xi_weight() ** 3
    return scale * sum(w[p] * tensor_total(state.coeffs[i][p]) for i in range(state.nx) for p in range(state.n_nodes))


def l1_error(state: NdgState, cfg: NdgConfig, t: float | None = None) -> float:
    """Quadrature L1 error against the characteristic solution, one node at a time."""
    t = state.t if t is None else t
    _, w = gl_nodes_weights(cfg.degree + 1)
    scale = 0.5 * cfg.dx * cfg.xi_weight() ** 3
    err = 0.0
    for i in range(state.nx):
        for p in range(state.n_nodes):
            exact = reconstruct(exact_node_tensor(cfg, float(state.x[i, p]), t))
            err += w[p] * float(np.abs(reconstruct(state.coeffs[i][p]) - exact).sum())
    return scale * err


def observed_orders(errors: Sequence[float]) -> list[float]:
    """``log2`` ratios of consecutive errors under mesh halving."""
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))


def with_overrides(cfg: NdgConfig, **kw) -> NdgConfig:
    return replace(cfg, **kw)
