import numpy as np
import pytest
import scipy.linalg as la

from hessrb.adjoints import full_hessian
from hessrb.eigensolvers import dense_gevp
from hessrb.linalg import apply_columns
from hessrb.sampling import (
    SubspaceSampler,
    build_averaged_subspace,
    build_combined_subspace,
    build_local_subspace,
    build_multi_qoi_subspace,
    draw_random_set,
    draw_training_set,
    local_eigenpairs,
    project_to_subspace,
)
from hessrb.mesh_fem import assemble_qoi_vector


def _gram(problem, basis):
    return basis.T @ apply_columns(problem.distribution.precision_action, basis)


def _max_angle(A, B, W=None):
    """Largest principal angle between column spans (in the W inner product)."""
    if W is not None:
        R = la.cholesky(W)
        A, B = R @ A, R @ B
    return la.subspace_angles(A, B).max()


def test_projection_algebra(uniform16, rng):
    sampler = build_local_subspace(uniform16, 5, 10, seed=0)
    p = uniform16.distribution.sample(rng)
    q = project_to_subspace(sampler, p)
    assert np.linalg.norm(project_to_subspace(sampler, q) - q) <= 1e-10 * np.linalg.norm(q)
    assert np.array_equal(project_to_subspace(sampler, np.zeros(16)), np.zeros(16))
    Phi = sampler.basis
    assert np.abs(sampler.project(Phi.T) - Phi.T).max() <= 1e-10
    assert np.abs(sampler.gram() - np.eye(5)).max() <= 1e-8


def test_complete_basis_is_identity(uniform16, rng):
    sampler = build_local_subspace(uniform16, 16, 0, seed=0, method="dense")
    p = uniform16.distribution.sample(rng)
    assert np.abs(sampler.project(p) - p).max() <= 1e-8
    X = sampler.draw(5000, seed=3)
    plain = draw_random_set(uniform16.distribution, 5000, seed=3)
    assert np.abs(X - plain).max() <= 1e-8


def test_gaussian_direct_moments(lognormal9):
    sampler = build_local_subspace(lognormal9, 3, 10, seed=1)
    assert sampler.mode == "gaussian-direct"
    n = 10_000
    X = draw_training_set(sampler, n, seed=2)
    w = sampler.coordinates(X)
    assert np.abs(w.mean(0)).max() <= 3 / np.sqrt(n)
    assert np.abs(w.var(0) - 1).max() <= 0.05


def test_sampler_validation(uniform16, lognormal9):
    with pytest.raises(ValueError):
        SubspaceSampler(np.eye(16)[:, :2], uniform16.distribution, "gaussian-direct")
    with pytest.raises(ValueError):
        SubspaceSampler(np.eye(5)[:, :2], uniform16.distribution)
    with pytest.raises(ValueError):
        build_local_subspace(uniform16, 0, 10)
    with pytest.raises(ValueError):
        build_local_subspace(uniform16, 10, 10)
    s = build_local_subspace(uniform16, 2, 2, seed=0)
    with pytest.raises(ValueError):
        s.draw(0)


def test_seed_determinism(uniform16):
    a = build_local_subspace(uniform16, 4, 6, seed=7).draw(20, seed=1)
    b = build_local_subspace(uniform16, 4, 6, seed=7).draw(20, seed=1)
    assert np.array_equal(a, b)


def test_local_randomized_vs_dense(uniform16):
    # L + c = K: the probe block spans the whole space and the Ritz step is exact
    r = local_eigenpairs(uniform16, 6, 10, seed=0)
    d = local_eigenpairs(uniform16, 6, 10, method="dense")
    assert np.allclose(r.eigenvalues, d.eigenvalues, rtol=1e-10, atol=0)
    assert _max_angle(r.eigenvectors, d.eigenvectors) <= 1e-8
    # with fewer probes only the dominant, well separated pair is accurate
    r = local_eigenpairs(uniform16, 5, 10, seed=0)
    assert abs(r.eigenvalues[0] / d.eigenvalues[0] - 1) <= 1e-8
    assert _max_angle(r.eigenvectors[:, :1], d.eigenvectors[:, :1]) <= 1e-4


def test_averaged_single_sample_equals_local(uniform16):
    loc = build_local_subspace(uniform16, 5, 10, seed=3)
    avg = build_averaged_subspace(uniform16, 1, 5, 10, seed=3, samples=[np.zeros(16)])
    assert np.allclose(loc.basis, avg.basis, atol=1e-12)


def test_averaged_band(uniform16):
    loc = build_local_subspace(uniform16, 5, 10, seed=3, method="dense")
    avg = build_averaged_subspace(uniform16, 10, 5, 10, seed=3, method="dense")
    ratio = np.abs(avg.eigenvalues[:3]) / np.abs(loc.eigenvalues[:3])
    assert np.all((ratio > 0.5) & (ratio < 2.0))


def test_combined_single_sample(uniform16):
    loc = build_local_subspace(uniform16, 5, 10, seed=4)
    comb = build_combined_subspace(uniform16, 1, 5, 5, 10, seed=4, samples=[np.zeros(16)])
    assert _max_angle(loc.basis, comb.basis) <= 1e-8
    assert np.abs(comb.gram() - np.eye(5)).max() <= 1e-8
    sig = comb.info["singular_values"]
    assert np.all(sig[:-1] >= sig[1:])


def test_combined_gaussian_orthonormal(lognormal9):
    comb = build_combined_subspace(lognormal9, 3, 4, 6, 10, seed=2)
    assert comb.rank == 6
    assert np.abs(_gram(lognormal9, comb.basis) - np.eye(6)).max() <= 1e-8


def test_combined_validation(uniform16):
    with pytest.raises(ValueError):
        build_combined_subspace(uniform16, 1, 2, 5, 5, seed=0, samples=[np.zeros(16)])
    with pytest.raises(ValueError):
        build_combined_subspace(uniform16, 2, [2], 2, 5, seed=0, samples=[np.zeros(16)] * 2)


def test_multi_qoi_single_equals_local(uniform16):
    loc = build_local_subspace(uniform16, 4, 10, seed=5)
    for strategy in ("averaged", "concat-svd"):
        multi = build_multi_qoi_subspace(uniform16, [uniform16.qoi_vector], strategy, 4, 10, seed=5)
        assert _max_angle(loc.basis, multi.basis) <= 1e-8
        assert np.abs(multi.gram() - np.eye(4)).max() <= 1e-8
    with pytest.raises(ValueError):
        build_multi_qoi_subspace(uniform16, [uniform16.qoi_vector], "nope", 4, 10)
    with pytest.raises(ValueError):
        build_multi_qoi_subspace(uniform16, [], "averaged", 4, 10)


def test_multi_qoi_identical_qois(uniform16, rng):
    s = uniform16.qoi_vector
    a = build_multi_qoi_subspace(uniform16, [s, s], "averaged", 4, 10, seed=6)
    b = build_multi_qoi_subspace(uniform16, [s], "averaged", 4, 10, seed=6)
    assert np.allclose(a.eigenvalues, b.eigenvalues, rtol=1e-12)


def test_multi_qoi_disjoint_regions_capture(uniform16):
    pb = uniform16
    L = 3
    s1 = assemble_qoi_vector(pb.mesh, ((0.0, 0.1), (0.0, 0.1)))
    s2 = assemble_qoi_vector(pb.mesh, ((0.6, 0.9), (0.6, 0.9)))
    comb = build_multi_qoi_subspace(
        pb, [s1, s2], "concat-svd", 2 * L, 0, method="dense", per_qoi_L=L
    )
    for s in (s1, s2):
        H = full_hessian(pb.with_qoi(s), np.zeros(16))
        top = dense_gevp(H, np.eye(16), L).eigenvectors
        # top-L space of each QoI lies inside the combined span
        resid = top - comb.basis @ (comb.basis.T @ top)
        assert np.linalg.norm(resid) <= 1e-6 * np.linalg.norm(top)
