import numpy as np
import pytest

from tailmc.data import DataError, RatingDataset, load_ratings
from tailmc.numeric import SeededStream
from tailmc.synthgen import (
    apply_mask,
    dense_pattern,
    factor_scale,
    full_matrix,
    generate_lowrank,
    orthonormal_factor,
    write_synthetic,
)


def mgs_basis(A):
    """Modified Gram-Schmidt with one reorthogonalisation pass."""
    Q = np.array(A, dtype=np.float64)
    for j in range(Q.shape[1]):
        for _ in range(2):
            for k in range(j):
                Q[:, j] -= (Q[:, k] @ Q[:, j]) * Q[:, k]
        Q[:, j] /= np.linalg.norm(Q[:, j])
    return Q


def test_single_entry_factor_is_unit():
    U = orthonormal_factor(1, 1, seed=3)
    assert U.shape == (1, 1) and abs(abs(U[0, 0]) - 1.0) < 1e-15


@pytest.mark.parametrize("seed", [0, 1, 17, 2024])
def test_factor_orthonormal(seed):
    U = orthonormal_factor(100, 5, seed)
    assert np.max(np.abs(U.T @ U - np.eye(5))) < 1e-10


def test_factor_spans_raw_draw_like_independent_basis():
    raw = SeededStream(9).random((50, 5))
    U = orthonormal_factor(50, 5, 9)
    V = mgs_basis(raw)
    assert np.max(np.abs(U @ U.T @ raw - raw)) < 1e-8
    assert np.max(np.abs(U @ U.T - V @ V.T)) < 1e-10


def test_factor_rank_too_large():
    with pytest.raises(ValueError):
        orthonormal_factor(3, 4, 0)


def test_lowrank_scalar_case():
    P, Q = generate_lowrank(1, 1, 1, seed=5)
    assert abs(abs((P @ Q.T)[0, 0]) - 10.0) < 1e-12


def test_lowrank_exact_rank_and_scale():
    P, Q = generate_lowrank(200, 150, 5, seed=2)
    R = P @ Q.T
    s = np.linalg.svd(R, compute_uv=False)
    assert np.sum(s > 1e-8 * s[0]) == 5
    assert abs(np.max(np.abs(R)) - 10.0) < 1e-9
    assert R.min() >= -10.0 - 1e-9
    full = full_matrix(P, Q)
    assert full.min() >= -10.0 and full.max() <= 10.0


def test_lowrank_scale_recovered():
    P, Q = generate_lowrank(40, 30, 3, seed=0)
    alpha = factor_scale(P)
    assert np.allclose(np.linalg.norm(P, axis=0), alpha, rtol=1e-12)
    assert np.allclose(np.linalg.norm(Q, axis=0), alpha, rtol=1e-12)


def test_lowrank_deterministic():
    a = generate_lowrank(30, 20, 4, seed=11)
    b = generate_lowrank(30, 20, 4, seed=11)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    c = generate_lowrank(30, 20, 4, seed=12)
    assert not np.array_equal(a[0], c[0])


def test_mask_pattern_projection():
    full = np.array([[1.0, 2.0], [3.0, 4.0]])
    pat = RatingDataset([0, 1], [0, 1], [0.0, 0.0], ("a", "b"), ("x", "y"))
    ds = apply_mask(full, pattern=pat)
    assert sorted(zip(ds.users.tolist(), ds.items.tolist(), ds.ratings.tolist())) == [
        (0, 0, 1.0), (1, 1, 4.0)]


def test_mask_density_one_and_dense_pattern():
    full = np.arange(12.0).reshape(3, 4)
    a = apply_mask(full, density=1.0, seed=0)
    b = apply_mask(full, pattern=dense_pattern(3, 4))
    assert len(a) == len(b) == 12
    assert list(a) == list(b)


def test_mask_density_count_and_values():
    P, Q = generate_lowrank(100, 100, 2, seed=0)
    full = full_matrix(P, Q)
    ds = apply_mask(full, density=0.3, seed=4)
    assert len(ds) == 3000
    pos = {(u, i) for u, i, _ in ds}
    assert len(pos) == 3000
    for u, i, r in ds:
        assert r == full[u, i]


def test_mask_out_of_range_pattern():
    pat = RatingDataset([0], [5], [0.0], ("a",), tuple(range(6)))
    with pytest.raises(DataError):
        apply_mask(np.zeros((2, 2)), pattern=pat)


def test_mask_requires_one_source():
    with pytest.raises(ValueError):
        apply_mask(np.zeros((2, 2)))


def test_write_synthetic_sidecar(tmp_path):
    P, Q = generate_lowrank(10, 8, 2, seed=1)
    ds = apply_mask(full_matrix(P, Q), density=0.5, seed=1)
    path, meta = write_synthetic(ds, tmp_path / "syn.csv", {"n": 10, "alpha": factor_scale(P)})
    assert list(load_ratings(path)) == [(str(u), str(i), r) for u, i, r in ds]
    lines = dict(line.split("=", 1) for line in meta.read_text().splitlines())
    assert lines["n"] == "10" and float(lines["alpha"]) == factor_scale(P)
