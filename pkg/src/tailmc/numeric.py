"""Random streams and the small closed-form kernels shared by the models."""

import math

import numpy as np
from scipy.special import gammaln

__all__ = [
    "SeededStream",
    "derive_seed",
    "sigmoid_rank_count",
    "active_rank_counts",
    "poisson_sample",
    "poisson_draws",
    "poisson_cdf_cutoff",
    "inverse_frequency_weight",
]

# Inversion is exact and cheap while exp(-lam) is well above underflow and the
# expected search length (~lam) is short; beyond that use PTRS rejection.
_INVERSION_MAX_LAM = 30.0


class SeededStream:
    """A reproducible random stream backed by numpy's PCG64 bit generator.

    PCG64 (O'Neill's 128-bit-state permuted congruential generator with
    64-bit output) is the documented algorithm for every random draw in the
    package: factor initialisation, epoch shuffles, splits, subsampling and
    Poisson variates.  Given the same seed, the sequence is identical across
    runs and platforms.

    A stream is not meant to be shared between threads.  Workers get their
    own stream through :meth:`split`, which uses ``seed XOR worker``.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self):
        return f"SeededStream(seed={self.seed})"

    def split(self, worker):
        return SeededStream(self.seed ^ int(worker))

    def random(self, size=None):
        return self.gen.random(size)

    def uniform(self, low, high, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        """Integers in ``[low, high)`` (numpy semantics)."""
        return self.gen.integers(low, high, size=size)

    def permutation(self, n):
        return self.gen.permutation(n)


def derive_seed(seed, *keys):
    """Deterministically derive an independent 63-bit seed from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def active_rank_counts(f_min, r, k, z):
    """Vectorised :func:`sigmoid_rank_count`; returns an int64 array."""
    f_min = np.asarray(f_min, dtype=np.float64)
    # r * sigmoid(k (f - z)), written to stay finite for any sign of the exponent
    x = k * (f_min - z)
    sig = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    raw = r * sig
    counts = np.floor(raw + 0.5).astype(np.int64)
    return np.clip(counts, 1, int(r))


def sigmoid_rank_count(f_min, r, k, z):
    """Number of leading latent coordinates active for a rating.

    ``clamp(round(r / (1 + exp(-k (f_min - z)))), 1, r)``, rounding halves up.
    """
    return int(active_rank_counts(np.array([f_min]), r, k, z)[0])


def inverse_frequency_weight(f_min, rho):
    """Error weight ``1 / (1 + rho * f_min)``; works on scalars and arrays."""
    return 1.0 / (1.0 + rho * np.asarray(f_min, dtype=np.float64))


def _poisson_inversion(lams, u):
    # sequential search: smallest x with CDF(x) >= u
    out = np.zeros(lams.shape[0], dtype=np.int64)
    p = np.exp(-lams)
    s = p.copy()
    todo = u > s
    x = 0
    limit = int(np.max(lams) + 40.0 * math.sqrt(np.max(lams)) + 40.0)
    while todo.any() and x < limit:
        x += 1
        p = np.where(todo, p * lams / x, p)
        s = np.where(todo, s + p, s)
        out[todo] = x
        todo &= u > s
    return out


def _poisson_ptrs(lams, stream):
    # Hormann's transformed rejection with squeeze (PTRS), vectorised over
    # whatever is still pending after each round.
    out = np.empty(lams.shape[0], dtype=np.int64)
    slam = np.sqrt(lams)
    loglam = np.log(lams)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    pending = np.arange(lams.shape[0])
    while pending.size:
        uv = stream.random((2, pending.size))
        U = uv[0] - 0.5
        V = uv[1]
        us = 0.5 - np.abs(U)
        lam_p, a_p, b_p = lams[pending], a[pending], b[pending]
        k = np.floor((2.0 * a_p / us + b_p) * U + lam_p + 0.43)
        quick = (us >= 0.07) & (V <= vr[pending])
        reject = (k < 0) | ((us < 0.013) & (V > us))
        kk = np.maximum(k, 0.0)
        lg = gammaln(kk + 1.0)
        with np.errstate(divide="ignore"):
            slow = (np.log(V) + np.log(invalpha[pending]) - np.log(a_p / (us * us) + b_p)
                    <= -lam_p + kk * loglam[pending] - lg)
        accept = quick | (~reject & slow)
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
    return out


def poisson_draws(lams, stream):
    """One Poisson variate per entry of ``lams`` (all > 0), drawn from ``stream``.

    Entries with ``lam <= 30`` use inversion with one uniform each; larger
    ones use PTRS rejection.  Both are exact-distribution samplers.
    """
    lams = np.asarray(lams, dtype=np.float64)
    if lams.size and not np.all(lams > 0):
        raise ValueError("Poisson mean must be positive")
    out = np.empty(lams.shape, dtype=np.int64)
    flat = lams.ravel()
    res = out.ravel()
    small = flat <= _INVERSION_MAX_LAM
    if small.any():
        res[small] = _poisson_inversion(flat[small], stream.random(int(small.sum())))
    if (~small).any():
        res[~small] = _poisson_ptrs(flat[~small], stream)
    return res.reshape(lams.shape)


def poisson_sample(lam, stream):
    """A single Poisson(``lam``) draw; advances ``stream``."""
    if not lam > 0:
        raise ValueError(f"Poisson mean must be positive, got {lam}")
    return int(poisson_draws(np.array([lam]), stream)[0])


def poisson_cdf_cutoff(lam, epsilon=1e-6):
    """Smallest ``s`` with ``P(X <= s) >= 1 - epsilon`` for ``X ~ Poisson(lam)``.

    Sums pmf terms one at a time, each evaluated in log space so that large
    means do not underflow ``exp(-lam)``.
    """
    if not lam > 0:
        raise ValueError(f"Poisson mean must be positive, got {lam}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    target = 1.0 - epsilon
    loglam = math.log(lam)
    # past this point the remaining mass is below double precision
    s_max = int(lam + 60.0 * math.sqrt(lam) + 60.0)
    cdf = 0.0
    s = 0
    while True:
        cdf += math.exp(s * loglam - lam - math.lgamma(s + 1.0))
        if cdf >= target or s >= s_max:
            return s
        s += 1
