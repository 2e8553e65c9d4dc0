import csv

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import random_tucker, rel
from tuckersum import cookie as ck
from tuckersum.gmres import GmresConfig, true_residual, tucker_gmres
from tuckersum.sketch import Strategy
from tuckersum.tucker import TuckerTensor, reconstruct


def _laplacian(n):
    t = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    i = sp.identity(n)
    return (sp.kron(i, t) + sp.kron(t, i)).toarray()


def test_background_operator_is_five_point_laplacian():
    ops, b = ck.assemble_cookie(ck.CookieConfig(m=6, n_params=2))
    np.testing.assert_allclose(ops[0].toarray(), _laplacian(5))
    np.testing.assert_allclose(b, 1.0 / 36)


def test_inclusion_operators():
    cfg = ck.CookieConfig(m=16)
    ops, _ = ck.assemble_cookie(cfg)
    assert len(ops) == 5
    for a in ops[1:]:
        d = a.toarray()
        np.testing.assert_allclose(d, d.T)
        assert np.linalg.eigvalsh(d).min() > -1e-12
        assert 0 < a.nnz < ops[0].nnz
    # disjoint disks touch disjoint sets of nodes
    supports = [set(np.nonzero(a.diagonal())[0]) for a in ops[1:]]
    for i in range(4):
        for j in range(i + 1, 4):
            assert not supports[i] & supports[j]


def test_poisson_peak_value():
    # -lap u = 1 on the unit square peaks near 0.07367 at the centre
    cfg = ck.CookieConfig(m=32, n_params=0)
    ops, b = ck.assemble_cookie(cfg)
    u = sp.linalg.spsolve(sp.csc_matrix(ops[0]), b)
    assert u.max() == pytest.approx(0.07367, rel=5e-3)


def test_geometry_validation():
    with pytest.raises(ck.GeometryError):
        ck.CookieConfig(centers=((0.3, 0.3), (0.4, 0.4)), n_params=2)
    with pytest.raises(ck.GeometryError):
        ck.CookieConfig(centers=((0.05, 0.5),), n_params=1)
    with pytest.raises(ck.GeometryError):
        ck.CookieConfig(n_params=5)
    with pytest.raises(ValueError):
        ck.CookieConfig(m=2)


def test_kronecker_operator_dense_oracle(rng):
    ops, b = ck.assemble_cookie(ck.CookieConfig(m=5, n_params=2))
    op, rhs = ck.build_operator(ops, [1.0, 2.0, 4.0], b)
    x = random_tucker(rng, op.dims, (2, 2, 2))
    got = reconstruct(op(x)).ravel(order="F")
    expect = op.dense() @ reconstruct(x).ravel(order="F")
    np.testing.assert_allclose(got, expect, rtol=1e-12, atol=1e-12)
    assert rhs.ranks == (1, 1, 1)
    with pytest.raises(ValueError):
        op(random_tucker(rng, (3, 3, 3), (1, 1, 1)))
    with pytest.raises(ValueError):
        ck.build_operator(ops, [2.0, 1.0])


def test_operator_validation():
    with pytest.raises(ValueError):
        ck.KroneckerSumOperator([], (2,))
    with pytest.raises(ValueError):
        ck.KroneckerSumOperator([[np.eye(3)]], (2,))


def test_direct_solution_positive():
    u = ck.dense_solve(ck.CookieConfig(m=8, n_params=2, n_samples=3))
    assert u.shape == (49, 3, 3)
    assert np.all(u > 0)
    # stiffer inclusions lower the solution mean
    assert u[:, 2, 2].mean() < u[:, 0, 0].mean()


def test_gmres_identity_one_iteration(rng):
    op = ck.KroneckerSumOperator([[None, None]], (4, 3))
    b = random_tucker(rng, (4, 3), (1, 1))
    res = tucker_gmres(op, b, cfg=GmresConfig(tol=1e-8, inner_tol=1e-10))
    assert res.iterations == 1 and res.converged
    assert rel(reconstruct(res.x), reconstruct(b)) < 1e-10


def test_gmres_zero_rhs():
    op = ck.KroneckerSumOperator([[None, None]], (4, 3))
    b = TuckerTensor(np.zeros((1, 1)), [np.ones((4, 1)), np.ones((3, 1))])
    res = tucker_gmres(op, b)
    assert res.converged and res.iterations == 0


@pytest.mark.parametrize("strategy", [Strategy.LAZY, Strategy.KRP])
def test_gmres_small_cookie_matches_direct(strategy, tmp_path):
    cfg = ck.CookieConfig(m=8, n_params=2, n_samples=3)
    ops, b = ck.assemble_cookie(cfg)
    op, rhs = ck.build_operator(ops, cfg.samples(), b)
    pre = ck.reference_preconditioner(ops)
    res = tucker_gmres(op, rhs, pre, GmresConfig(tol=1e-8, inner_tol=1e-10, strategy=strategy, max_iter=30))
    assert res.converged
    assert res.relative_residuals[-1] <= 1e-8
    assert rel(reconstruct(res.x), ck.dense_solve(cfg)) < 1e-6
    assert true_residual(op, res.x_unrounded, rhs) < 1e-7
    path = tmp_path / "hist.csv"
    res.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["iter", "residual_estimate", "max_rank", "wall_time_s"]
    assert len(rows) == res.iterations + 2


def test_gmres_residuals_nonincreasing():
    cfg = ck.CookieConfig(m=8, n_params=2, n_samples=3)
    ops, b = ck.assemble_cookie(cfg)
    op, rhs = ck.build_operator(ops, cfg.samples(), b)
    res = tucker_gmres(op, rhs, None, GmresConfig(tol=1e-6, inner_tol=1e-9, max_iter=8))
    r = res.residuals
    assert all(b2 <= a2 * (1 + 1e-12) for a2, b2 in zip(r, r[1:]))


def test_gmres_config_validation():
    with pytest.raises(ValueError):
        GmresConfig(tol=1e-6, inner_tol=1e-5)
    with pytest.raises(ValueError):
        GmresConfig(max_iter=0)


def test_singular_preconditioner_reported():
    z = sp.csr_matrix((4, 4))
    with pytest.raises(ck.FactorizationError):
        ck.reference_preconditioner([z])
