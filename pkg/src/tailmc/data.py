"""Rating triples: ingestion, frequency tables, splits, quartiles, subsampling."""

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from tailmc.numeric import SeededStream

log = logging.getLogger(__name__)

__all__ = [
    "RatingTriple",
    "RatingDataset",
    "FrequencyTable",
    "QuartileMap",
    "DataError",
    "load_ratings",
    "save_ratings",
    "compute_frequencies",
    "split",
    "write_split",
    "assign_quartiles",
    "skewed_subsample",
]

QUARTILE_LABELS = ("Q1", "Q2", "Q3", "Q4")


class DataError(ValueError):
    """Malformed or inconsistent rating data."""


class RatingTriple(NamedTuple):
    user: Any
    item: Any
    rating: float


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Observed ratings stored column-wise against dense entity indices.

    ``user_ids[k]`` is the identifier of the user with dense index ``k``;
    likewise for items.  Splits share their parent's identifier tables, so an
    index means the same entity in train, validation and test.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple
    item_ids: tuple
    user_index: dict = field(init=False, repr=False)
    item_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "users", np.asarray(self.users, dtype=np.int64))
        object.__setattr__(self, "items", np.asarray(self.items, dtype=np.int64))
        object.__setattr__(self, "ratings", np.asarray(self.ratings, dtype=np.float64))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "user_index", {u: k for k, u in enumerate(self.user_ids)})
        object.__setattr__(self, "item_index", {i: k for k, i in enumerate(self.item_ids)})
        if not (self.users.shape == self.items.shape == self.ratings.shape):
            raise DataError("users, items and ratings must have equal length")
        if not np.all(np.isfinite(self.ratings)):
            raise DataError("ratings must be finite")

    @classmethod
    def from_triples(cls, triples):
        """Build a dataset, assigning dense indices in order of first appearance."""
        uidx, iidx = {}, {}
        users, items, ratings = [], [], []
        seen = set()
        for user, item, rating in triples:
            if (user, item) in seen:
                raise DataError(f"duplicate (user, item) pair: ({user!r}, {item!r})")
            seen.add((user, item))
            users.append(uidx.setdefault(user, len(uidx)))
            items.append(iidx.setdefault(item, len(iidx)))
            ratings.append(float(rating))
        return cls(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64),
                   np.array(ratings, dtype=np.float64), tuple(uidx), tuple(iidx))

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def __len__(self):
        return self.ratings.shape[0]

    def __iter__(self):
        for u, i, r in zip(self.users, self.items, self.ratings):
            yield RatingTriple(self.user_ids[u], self.item_ids[i], float(r))

    def subset(self, idx):
        """Rows ``idx`` (indices or boolean mask), keeping this dataset's index maps."""
        return RatingDataset(self.users[idx], self.items[idx], self.ratings[idx],
                             self.user_ids, self.item_ids)

    def compact(self):
        """Drop identifiers with no ratings; indices renumbered by first appearance."""
        users, user_ids = _renumber(self.users, self.user_ids)
        items, item_ids = _renumber(self.items, self.item_ids)
        return RatingDataset(users, items, self.ratings.copy(), user_ids, item_ids)

    def global_mean(self):
        return float(self.ratings.mean()) if len(self) else 0.0


def _renumber(idx, ids):
    uniq, first = np.unique(idx, return_index=True)
    uniq = uniq[np.argsort(first, kind="stable")]
    remap = np.empty(len(ids), dtype=np.int64)
    remap[uniq] = np.arange(uniq.shape[0])
    return remap[idx], tuple(ids[k] for k in uniq)


@dataclass(frozen=True, eq=False)
class FrequencyTable:
    """Per-entity rating counts and their max-normalised values, by dense index."""

    user_freq: np.ndarray
    item_freq: np.ndarray
    user_norm: np.ndarray
    item_norm: np.ndarray
    user_ids: tuple = ()
    item_ids: tuple = ()

    def min_norm(self, users, items):
        """``min(user_norm[u], item_norm[i])`` per rating."""
        return np.minimum(self.user_norm[users], self.item_norm[items])


@dataclass(frozen=True, eq=False)
class QuartileMap:
    """Quartile label 0..3 (Q1..Q4) per dense user / item index."""

    user_quartile: np.ndarray
    item_quartile: np.ndarray


def _detect_sep(line):
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None


def load_ratings(path):
    """Read ``user<sep>item<sep>rating`` lines; ``sep`` is tab or comma.

    Blank lines and lines starting with ``#`` are skipped.  The separator is
    taken from the first data line and must be used throughout the file.
    """
    path = Path(path)
    sep = None
    triples = []
    seen = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if sep is None:
                sep = _detect_sep(line)
                if sep is None:
                    raise DataError(f"{path}:{lineno}: no tab or comma separator")
            parts = [p.strip() for p in line.split(sep)]
            if len(parts) != 3 or not parts[0] or not parts[1]:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {line!r}")
            try:
                rating = float(parts[2])
            except ValueError:
                raise DataError(f"{path}:{lineno}: rating is not a number: {parts[2]!r}") from None
            if not np.isfinite(rating):
                raise DataError(f"{path}:{lineno}: rating is not finite: {parts[2]!r}")
            key = (parts[0], parts[1])
            if key in seen:
                raise DataError(f"{path}:{lineno}: duplicate pair {key} (first at line {seen[key]})")
            seen[key] = lineno
            triples.append((parts[0], parts[1], rating))
    if not triples:
        raise DataError(f"{path}: no ratings")
    return RatingDataset.from_triples(triples)


def save_ratings(ds, path, sep=","):
    """Write ``ds`` in the format read by :func:`load_ratings` (ratings round-trip exactly)."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for u, i, r in ds:
            fh.write(f"{u}{sep}{i}{sep}{r!r}\n")


def compute_frequencies(ds):
    if len(ds) == 0:
        raise DataError("cannot compute frequencies of an empty dataset")
    uf = np.bincount(ds.users, minlength=ds.n_users)
    itf = np.bincount(ds.items, minlength=ds.n_items)
    return FrequencyTable(
        user_freq=uf,
        item_freq=itf,
        user_norm=uf / uf.max(),
        item_norm=itf / itf.max(),
        user_ids=ds.user_ids,
        item_ids=ds.item_ids,
    )


def split(ds, val_frac=0.2, test_frac=0.2, seed=0):
    """Random disjoint train/validation/test partition of the triples.

    Validation and test sizes are ``round(frac * len(ds))``; train gets the
    rest.  Each part keeps the input order and ``ds``'s index maps.
    """
    if not (0.0 <= val_frac < 1.0 and 0.0 <= test_frac < 1.0 and val_frac + test_frac < 1.0):
        raise DataError(f"invalid split fractions val={val_frac}, test={test_frac}")
    n = len(ds)
    n_val = int(round(val_frac * n))
    n_test = int(round(test_frac * n))
    perm = SeededStream(seed).permutation(n)
    part = np.zeros(n, dtype=np.int8)
    part[perm[:n_val]] = 1
    part[perm[n_val:n_val + n_test]] = 2
    return ds.subset(part == 0), ds.subset(part == 1), ds.subset(part == 2)


def write_split(parts, prefix, sep=","):
    """Write (train, val, test) to ``prefix.train``, ``prefix.val``, ``prefix.test``."""
    paths = []
    for suffix, part in zip((".train", ".val", ".test"), parts):
        p = Path(str(prefix) + suffix)
        save_ratings(part, p, sep=sep)
        paths.append(p)
    return paths


def _sort_key(ids):
    try:
        sorted(ids[:2])
        return lambda k: ids[k]
    except TypeError:
        return lambda k: str(ids[k])


def _quartiles(counts, ids):
    # Entities with no (training) ratings are not ranked; they land in Q1.
    labels = np.zeros(counts.shape[0], dtype=np.int8)
    ranked = [k for k in range(counts.shape[0]) if counts[k] > 0]
    idkey = _sort_key(ids) if ids else (lambda k: k)
    ranked.sort(key=lambda k: (counts[k], idkey(k)))
    n = len(ranked)
    if n < 4:
        warnings.warn(f"only {n} entities with ratings; labelling all of them Q1", stacklevel=3)
        return labels
    base, extra = divmod(n, 4)
    start = 0
    for q in range(4):
        size = base + (1 if q < extra else 0)
        labels[ranked[start:start + size]] = q
        start += size
    return labels


def assign_quartiles(freq):
    """Split users and items into four near-equal groups by ascending count.

    Ties are broken by identifier.  When the count is not divisible by four
    the lowest quartiles take one extra entity each.
    """
    return QuartileMap(
        user_quartile=_quartiles(np.asarray(freq.user_freq), freq.user_ids),
        item_quartile=_quartiles(np.asarray(freq.item_freq), freq.item_ids),
    )


def _thin_groups(keys, n_groups, candidates, gen):
    # For each group present among `candidates`, keep a uniformly chosen
    # subset whose size is uniform on [1, group size].
    order = candidates[np.argsort(keys[candidates], kind="stable")]
    counts = np.bincount(keys[order], minlength=n_groups)
    keep = []
    start = 0
    for g in range(n_groups):
        c = counts[g]
        if c == 0:
            continue
        members = order[start:start + c]
        start += c
        target = int(gen.integers(1, c + 1))
        keep.append(gen.choice(members, size=target, replace=False))
    return np.sort(np.concatenate(keep))


def skewed_subsample(ds, seed=0):
    """Two-phase random thinning that produces a long-tailed rating distribution.

    First every user keeps a random number (uniform on 1..f_u) of their
    ratings, chosen uniformly; then every item does the same over whatever
    survived the first pass.  A user left with nothing by the item pass gets
    back one of their first-pass ratings, so every user keeps at least one.
    The result is re-indexed so it only contains entities that still have
    ratings.
    """
    if len(ds) == 0:
        raise DataError("cannot subsample an empty dataset")
    gen = SeededStream(seed).gen
    all_rows = np.arange(len(ds))
    first = _thin_groups(ds.users, ds.n_users, all_rows, gen)
    rows = _thin_groups(ds.items, ds.n_items, first, gen)
    had = np.bincount(ds.users[first], minlength=ds.n_users) > 0
    kept = np.bincount(ds.users[rows], minlength=ds.n_users) > 0
    lost = np.flatnonzero(had & ~kept)
    if lost.size:
        back = [gen.choice(first[ds.users[first] == u]) for u in lost]
        rows = np.sort(np.concatenate([rows, np.array(back, dtype=rows.dtype)]))
    return ds.subset(rows).compact()
