import numpy as np
import pytest
import scipy.linalg as la

from hessrb.eigensolvers import (
    GeneralizedEigenPairs,
    dense_gevp,
    fix_signs,
    randomized_gevp,
    weighted_qr,
)

TOY = np.array([[2.0, -2.0], [-2.0, 2.0]])


def _ident(x):
    return np.array(x, dtype=float)


def _random_pair(K=64, seed=0, decay=0.2):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((K, K))
    Cinv = B @ B.T / K + np.eye(K)
    R = la.cholesky(Cinv)
    V, _ = np.linalg.qr(rng.standard_normal((K, K)))
    lam = decay ** np.arange(K) * np.where(rng.random(K) < 0.3, -1, 1)
    # H = R^T V diag(lam) V^T R has generalized eigenvalues lam w.r.t. Cinv
    H = R.T @ (V * lam) @ V.T @ R
    return 0.5 * (H + H.T), Cinv, lam


def test_toy_randomized_and_dense():
    for pairs in (
        randomized_gevp(lambda x: TOY @ x, _ident, _ident, 2, 2, 0, seed=1),
        dense_gevp(TOY, np.eye(2), 2),
    ):
        assert abs(pairs.eigenvalues[0] - 4) <= 1e-12
        assert abs(pairs.eigenvalues[1]) <= 1e-12
        phi = pairs.eigenvectors[:, 0]
        assert np.allclose(np.abs(phi), np.sqrt(2) / 2, atol=1e-12)
        assert phi[0] * phi[1] < 0


def test_toy_flags_rank_deficiency():
    pairs = randomized_gevp(lambda x: TOY @ x, _ident, _ident, 2, 2, 0, seed=1)
    assert pairs.rank_deficient
    assert pairs.hessian_actions == 4


def test_identity_pair():
    pairs = randomized_gevp(_ident, _ident, _ident, 12, 4, 3, seed=2)
    assert np.allclose(pairs.eigenvalues, 1, atol=1e-12)
    assert np.allclose(dense_gevp(np.eye(5), np.eye(5), 5).eigenvalues, 1, atol=1e-12)


def test_randomized_matches_dense_on_decaying_spectrum():
    H, Cinv, lam = _random_pair()
    C = np.linalg.inv(Cinv)
    count = {"n": 0}

    def Hact(x):
        count["n"] += 1
        return H @ x

    r = randomized_gevp(Hact, lambda x: C @ x, lambda x: Cinv @ x, 64, 10, 10, seed=3)
    d = dense_gevp(H, Cinv, 10)
    assert count["n"] == 2 * 20 == r.hessian_actions
    assert np.allclose(r.eigenvalues, d.eigenvalues, rtol=1e-8, atol=0)
    assert np.allclose(np.sort(np.abs(d.eigenvalues))[::-1], np.sort(np.abs(lam))[::-1][:10], rtol=1e-10)
    G = r.eigenvectors.T @ Cinv @ r.eigenvectors
    assert np.abs(G - np.eye(10)).max() <= 1e-8
    res = H @ r.eigenvectors - (Cinv @ r.eigenvectors) * r.eigenvalues
    assert np.linalg.norm(res, axis=0).max() <= 1e-6 * abs(r.eigenvalues[0])
    # same sign convention on both paths
    assert np.allclose(r.eigenvectors, d.eigenvectors, atol=1e-6)


def test_ordering_and_signs():
    H, Cinv, _ = _random_pair(seed=4)
    d = dense_gevp(H, Cinv, 20)
    a = np.abs(d.eigenvalues)
    assert np.all(a[:-1] >= a[1:])
    for j in range(20):
        v = d.eigenvectors[:, j]
        assert v[np.argmax(np.abs(v))] >= 0


def test_determinism():
    H, Cinv, _ = _random_pair(seed=5)
    C = np.linalg.inv(Cinv)
    args = (lambda x: H @ x, lambda x: C @ x, lambda x: Cinv @ x, 64, 5, 5)
    a, b = randomized_gevp(*args, seed=9), randomized_gevp(*args, seed=9)
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenvectors, b.eigenvectors)


def test_argument_checks():
    with pytest.raises(ValueError):
        randomized_gevp(_ident, _ident, _ident, 4, 0, 1)
    with pytest.raises(ValueError):
        randomized_gevp(_ident, _ident, _ident, 4, 3, 2)
    with pytest.raises(ValueError):
        dense_gevp(np.eye(2), -np.eye(2), 1)


def test_weighted_qr_plain():
    Y = np.random.default_rng(0).standard_normal((10, 4))
    Q, R = weighted_qr(Y, _ident)
    assert np.abs(Q.T @ Q - np.eye(4)).max() <= 1e-12
    assert np.linalg.norm(Q @ R - Y) <= 1e-10 * np.linalg.norm(Y)


def test_weighted_qr_weighted_and_ill_conditioned():
    rng = np.random.default_rng(1)
    B = rng.standard_normal((12, 12))
    W = B @ B.T + np.eye(12)
    base = rng.standard_normal(12)
    Y = np.column_stack([base + 1e-10 * rng.standard_normal(12) for _ in range(3)] + [rng.standard_normal(12)])
    Q, R = weighted_qr(Y, lambda x: W @ x)
    kept = np.diag(R) != 0
    G = Q[:, kept].T @ W @ Q[:, kept]
    assert np.abs(G - np.eye(kept.sum())).max() <= 1e-8
    assert np.linalg.norm(Q @ R - Y) <= 1e-8 * np.linalg.norm(Y)


def test_weighted_qr_drops_zero_columns():
    Y = np.column_stack([np.ones(3), np.zeros(3), np.arange(3.0)])
    Q, R = weighted_qr(Y, _ident)
    assert R[1, 1] == 0 and not Q[:, 1].any()
    with pytest.raises(ValueError):
        weighted_qr(np.ones((2, 3)), _ident)


def test_fix_signs():
    V = np.array([[1.0, 0.2], [-3.0, -0.1]])
    fix_signs(V)
    assert np.array_equal(V, [[-1.0, 0.2], [3.0, -0.1]])


def test_eigenpairs_text_roundtrip(tmp_path):
    H, Cinv, _ = _random_pair(K=8, seed=6)
    d = dense_gevp(H, Cinv, 3)
    path = tmp_path / "eig.txt"
    d.save(path)
    header = path.read_text().splitlines()[0]
    assert header == "8 3"
    back = GeneralizedEigenPairs.load(path)
    assert np.array_equal(back.eigenvalues, d.eigenvalues)
    assert np.array_equal(back.eigenvectors, d.eigenvectors)
    t = d.truncate(2)
    assert t.count == 2 and t.dimension == 8
