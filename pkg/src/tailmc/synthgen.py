"""Exact-rank synthetic rating matrices and observation masks.

A rank-``r`` matrix is built from two random ``[0, 1]`` factors: each is
replaced by an orthonormal basis of its column space (``U_A``, ``U_B``), both
are scaled by a common ``alpha``, and ``R = P Q^T`` with ``P = alpha U_A``,
``Q = alpha U_B``.  ``alpha`` is fixed so that the largest ``|R|`` entry is
exactly 10, which keeps every rating in ``[-10, 10]``.
"""

from pathlib import Path

import numpy as np

from tailmc.data import DataError, RatingDataset, save_ratings
from tailmc.numeric import SeededStream, derive_seed

__all__ = [
    "RATING_BOUND",
    "orthonormal_factor",
    "generate_lowrank",
    "factor_scale",
    "full_matrix",
    "dense_pattern",
    "apply_mask",
    "write_synthetic",
]

RATING_BOUND = 10.0
MAX_RETRIES = 5
# |R_jj| below this fraction of max |R_kk| means the draw is numerically rank deficient
_RANK_TOL = 1e-10


def orthonormal_factor(rows, rank, seed):
    """Orthonormal basis (``rows x rank``) of the span of a uniform ``[0, 1]`` draw.

    Householder QR (LAPACK via numpy) with the sign of each column fixed so
    that ``R`` has a positive diagonal, which makes the basis unique for a
    given draw.  A numerically rank-deficient draw is redrawn from a derived
    seed, at most ``MAX_RETRIES`` times.
    """
    if rank < 1 or rank > rows:
        raise ValueError(f"need 1 <= rank <= rows, got rank={rank}, rows={rows}")
    for attempt in range(MAX_RETRIES + 1):
        s = seed if attempt == 0 else derive_seed(seed, attempt)
        A = SeededStream(s).random((rows, rank))
        U, R = np.linalg.qr(A)
        d = np.diag(R)
        if np.min(np.abs(d)) > _RANK_TOL * np.max(np.abs(d)):
            return U * np.sign(d)
    raise ValueError(f"rank-deficient draw for rows={rows}, rank={rank} after {MAX_RETRIES} retries")


def generate_lowrank(n, m, rank, seed):
    """User and item factors ``(P, Q)`` whose product is an exact rank-``rank`` matrix.

    ``max |P Q^T| == 10`` up to rounding.
    """
    if rank > min(n, m):
        raise ValueError(f"rank {rank} exceeds min(n, m) = {min(n, m)}")
    UA = orthonormal_factor(n, rank, derive_seed(seed, 0))
    UB = orthonormal_factor(m, rank, derive_seed(seed, 1))
    alpha = np.sqrt(RATING_BOUND / np.max(np.abs(UA @ UB.T)))
    return alpha * UA, alpha * UB


def factor_scale(P):
    """Recover ``alpha`` from a generated factor (its columns all have norm ``alpha``)."""
    return float(np.linalg.norm(P[:, 0]))


def full_matrix(P, Q):
    # clip only absorbs last-ulp overshoot of the +-10 extreme entry
    return np.clip(P @ Q.T, -RATING_BOUND, RATING_BOUND)


def dense_pattern(n, m):
    """Every (row, column) pair of an ``n x m`` matrix, as a pattern dataset."""
    users = np.repeat(np.arange(n), m)
    items = np.tile(np.arange(m), n)
    return RatingDataset(users, items, np.zeros(n * m), tuple(range(n)), tuple(range(m)))


def apply_mask(full, pattern=None, density=None, seed=0):
    """Observe ``full`` at the positions of ``pattern`` or of a uniform random mask.

    With a ``pattern`` dataset, its dense user / item indices are the row /
    column positions, so a real dataset's sparsity pattern can be laid over a
    synthetic matrix.  With ``density``, ``round(density * n * m)`` distinct
    cells are drawn uniformly.  Identifiers in the result are the row and
    column numbers.
    """
    full = np.asarray(full, dtype=np.float64)
    n, m = full.shape
    if (pattern is None) == (density is None):
        raise ValueError("give exactly one of pattern or density")
    if pattern is not None:
        users, items = pattern.users, pattern.items
        if len(pattern) and (users.max() >= n or items.max() >= m):
            raise DataError(f"pattern index outside a {n}x{m} matrix")
    else:
        if not 0.0 < density <= 1.0:
            raise ValueError(f"density must lie in (0, 1], got {density}")
        k = int(round(density * n * m))
        cells = np.sort(SeededStream(seed).gen.choice(n * m, size=k, replace=False))
        users, items = cells // m, cells % m
    ds = RatingDataset(users, items, full[users, items], tuple(range(n)), tuple(range(m)))
    return ds.compact()


def write_synthetic(ds, path, meta):
    """Write the masked triples plus a ``key=value`` sidecar (``<path>.meta``)."""
    path = Path(path)
    save_ratings(ds, path)
    meta_path = path.with_name(path.name + ".meta")
    with meta_path.open("w", encoding="utf-8") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value!r}\n" if isinstance(value, float) else f"{key}={value}\n")
    return path, meta_path
