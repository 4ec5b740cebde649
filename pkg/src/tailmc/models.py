"""Latent factor models trained by SGD: MF and its frequency-adaptive variants.

All four variants share one training loop (:func:`_fit`) and differ only in
two per-rating arrays handed to the SGD kernel:

========== ============================================ =====================
kind       active leading coordinates                   error weight
========== ============================================ =====================
MF         r                                            1
TMF        sigmoid count of min normalised frequency    1
TMF_DROPOUT Poisson(sigmoid count), redrawn every epoch 1
IFWMF      r                                            1 / (1 + rho f_min)
========== ============================================ =====================
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from tailmc.data import FrequencyTable, compute_frequencies
from tailmc.kernels import predict_batch, sgd_epoch
from tailmc.numeric import (
    SeededStream,
    active_rank_counts,
    derive_seed,
    inverse_frequency_weight,
    poisson_cdf_cutoff,
    poisson_draws,
)

log = logging.getLogger(__name__)

__all__ = [
    "Kind",
    "TrainConfig",
    "TruncationConfig",
    "LatentModel",
    "DivergenceError",
    "train_mf",
    "train_tmf",
    "train_tmf_dropout",
    "train_ifwmf",
    "train",
    "predict_mf",
    "predict_tmf",
    "predict_tmf_dropout",
    "predict_many",
    "rating_loss",
    "rating_gradient",
    "objective",
    "save_model",
    "load_model",
]

INIT_SCALE = 0.01
DEFAULT_EPSILON = 1e-6


class Kind(str, Enum):
    MF = "mf"
    TMF = "tmf"
    TMF_DROPOUT = "tmf-dropout"
    IFWMF = "ifwmf"


class DivergenceError(FloatingPointError):
    def __init__(self, epoch, kind=None):
        self.epoch = epoch
        super().__init__(f"{kind.value + ' ' if kind else ''}training diverged at epoch {epoch}")


@dataclass(frozen=True)
class TrainConfig:
    """SGD hyperparameters.

    ``reg`` is the L2 weight on the factors (searched as lambda); ``lr`` is the
    step size.  ``max_epochs=0`` returns the initialisation untouched.
    """

    rank: int = 10
    reg: float = 0.01
    lr: float = 0.005
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.reg < 0:
            raise ValueError(f"reg must be >= 0, got {self.reg}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass(frozen=True)
class TruncationConfig:
    """Sigmoid steepness ``k`` and midpoint ``z`` for the active-rank count."""

    steepness: float
    midpoint: float

    def __post_init__(self):
        if not self.steepness > 0:
            raise ValueError(f"steepness must be > 0, got {self.steepness}")
        if not -1.0 <= self.midpoint <= 1.0:
            raise ValueError(f"midpoint must lie in [-1, 1], got {self.midpoint}")


@dataclass(eq=False)
class LatentModel:
    P: np.ndarray
    Q: np.ndarray
    kind: Kind
    config: TrainConfig
    freq: FrequencyTable
    global_mean: float
    trunc: TruncationConfig | None = None
    rho: float | None = None
    epsilon: float = DEFAULT_EPSILON
    history: list = field(default_factory=list)
    best_epoch: int = 0

    def __post_init__(self):
        self.kind = Kind(self.kind)
        needs_trunc = self.kind in (Kind.TMF, Kind.TMF_DROPOUT)
        if needs_trunc != (self.trunc is not None):
            raise ValueError(f"{self.kind.value}: trunc is {'required' if needs_trunc else 'not allowed'}")
        if (self.kind is Kind.IFWMF) != (self.rho is not None):
            raise ValueError(f"{self.kind.value}: rho is {'required' if self.kind is Kind.IFWMF else 'not allowed'}")
        if self.P.shape[1] != self.Q.shape[1]:
            raise ValueError("P and Q must share the rank")

    @property
    def rank(self):
        return self.P.shape[1]

    def predict(self, users, items, freq=None):
        return predict_many(self, users, items, freq)


def _init_factors(stream, n, m, r):
    P = stream.uniform(-INIT_SCALE, INIT_SCALE, (n, r))
    Q = stream.uniform(-INIT_SCALE, INIT_SCALE, (m, r))
    return P, Q


def _as_index(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def _sigmoid_counts(freq, users, items, r, trunc):
    return active_rank_counts(freq.min_norm(users, items), r, trunc.steepness, trunc.midpoint)


def _cutoff_counts(lams, r, epsilon):
    # CDF cutoff per distinct integer mean, clamped to [1, r]
    table = {int(v): min(max(poisson_cdf_cutoff(float(v), epsilon), 1), r) for v in np.unique(lams)}
    return np.array([table[int(v)] for v in lams], dtype=np.int64) if lams.size else lams.astype(np.int64)


def _active_for(model, users, items, freq):
    r = model.rank
    if model.kind in (Kind.MF, Kind.IFWMF):
        return np.full(users.shape[0], r, dtype=np.int64)
    counts = _sigmoid_counts(freq, users, items, r, model.trunc)
    if model.kind is Kind.TMF:
        return counts
    return _cutoff_counts(counts, r, model.epsilon)


def predict_many(model, users, items, freq=None):
    """Predictions for index arrays ``users``, ``items`` with the model's own rule.

    Entities that had no training ratings get the training mean.  ``freq``
    defaults to the training frequencies stored on the model.
    """
    users = _as_index(users)
    items = _as_index(items)
    freq = model.freq if freq is None else freq
    if users.size and (users.max() >= model.P.shape[0] or items.max() >= model.Q.shape[0]
                       or users.min() < 0 or items.min() < 0):
        raise IndexError("user or item index out of range")
    seen = (model.freq.user_freq[users] > 0) & (model.freq.item_freq[items] > 0)
    out = np.full(users.shape[0], model.global_mean)
    if seen.any():
        u, i = users[seen], items[seen]
        out[seen] = predict_batch(model.P, model.Q, u, i, _active_for(model, u, i, freq))
    return out


def _predict_one(model, kind, u, i, freq):
    if model.kind is not kind:
        raise ValueError(f"expected a {kind.value} model, got {model.kind.value}")
    return float(predict_many(model, [u], [i], freq)[0])


def predict_mf(model, u, i):
    """``p_u . q_i``."""
    return _predict_one(model, Kind.MF, u, i, None)


def predict_tmf(model, u, i, freq=None):
    """Dot product over the first ``k_ui`` coordinates (sigmoid count)."""
    return _predict_one(model, Kind.TMF, u, i, freq)


def predict_tmf_dropout(model, u, i, freq=None):
    """Dot product over the first ``s`` coordinates, ``s`` the Poisson CDF cutoff of ``k_ui``."""
    return _predict_one(model, Kind.TMF_DROPOUT, u, i, freq)


def rating_loss(p, q, rating, active, weight, reg):
    """Loss of one rating: ``w/2 e^2 + reg/2 (|p[:a]|^2 + |q[:a]|^2)``."""
    p = np.asarray(p, dtype=np.float64)[:active]
    q = np.asarray(q, dtype=np.float64)[:active]
    e = p @ q - rating
    return 0.5 * weight * e * e + 0.5 * reg * (p @ p + q @ q)


def rating_gradient(p, q, rating, active, weight, reg):
    """Analytic gradient of :func:`rating_loss`; zero on inactive coordinates."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    gp = np.zeros_like(p)
    gq = np.zeros_like(q)
    e = p[:active] @ q[:active] - rating
    gp[:active] = weight * e * q[:active] + reg * p[:active]
    gq[:active] = weight * e * p[:active] + reg * q[:active]
    return gp, gq


def objective(P, Q, users, items, ratings, active, weights, reg):
    """Sum of :func:`rating_loss` over all ratings."""
    e = predict_batch(P, Q, users, items, active) - ratings
    idx = active - 1
    pn = np.cumsum(P * P, axis=1)[users, idx]
    qn = np.cumsum(Q * Q, axis=1)[items, idx]
    return float(0.5 * np.sum(weights * e * e) + 0.5 * reg * np.sum(pn + qn))


def _rmse(pred, actual):
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def _fit(kind, train, val, cfg, freq, trunc=None, rho=None, stream=None, epsilon=DEFAULT_EPSILON):
    if len(train) == 0:
        raise ValueError("training set is empty")
    freq = compute_frequencies(train) if freq is None else freq
    r = cfg.rank
    users, items, ratings = train.users, train.items, train.ratings
    n = len(train)

    weights = np.ones(n)
    if kind is Kind.IFWMF:
        if rho < 0:
            raise ValueError(f"rho must be >= 0, got {rho}")
        weights = inverse_frequency_weight(freq.min_norm(users, items), rho)
    if kind in (Kind.TMF, Kind.TMF_DROPOUT):
        counts = _sigmoid_counts(freq, users, items, r, trunc)
    else:
        counts = np.full(n, r, dtype=np.int64)
    if kind is Kind.TMF_DROPOUT and stream is None:
        stream = SeededStream(derive_seed(cfg.seed, 1))

    rng = SeededStream(cfg.seed)
    P, Q = _init_factors(rng, train.n_users, train.n_items, r)
    model = LatentModel(P, Q, kind, cfg, freq, train.global_mean(), trunc=trunc, rho=rho,
                        epsilon=epsilon)
    loss_active = counts if kind is not Kind.TMF_DROPOUT else _cutoff_counts(counts, r, epsilon)

    use_val = val is not None and len(val) > 0
    best = (np.inf, P.copy(), Q.copy(), 0)
    bad = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        if kind is Kind.TMF_DROPOUT:
            active = np.minimum(np.maximum(poisson_draws(counts, stream), 1), r)
        else:
            active = counts
        sq = sgd_epoch(P, Q, users, items, ratings, order, active, weights, cfg.lr, cfg.reg)
        if not (np.isfinite(sq) and np.all(np.isfinite(P)) and np.all(np.isfinite(Q))):
            raise DivergenceError(epoch, kind)
        with np.errstate(over="ignore", invalid="ignore"):
            rec = {
                "epoch": epoch,
                "train_sse": float(sq),
                "loss": objective(P, Q, users, items, ratings, loss_active, weights, cfg.reg),
            }
            if use_val:
                rec["val_rmse"] = _rmse(predict_many(model, val.users, val.items), val.ratings)
        if not all(np.isfinite(v) for v in rec.values()):
            raise DivergenceError(epoch, kind)
        model.history.append(rec)
        if not use_val:
            continue
        if rec["val_rmse"] < best[0]:
            best = (rec["val_rmse"], P.copy(), Q.copy(), epoch)
            bad = 0
        else:
            bad += 1
            if bad >= cfg.patience:
                log.debug("%s early stop at epoch %d (best %d)", kind.value, epoch, best[3])
                break

    if use_val and cfg.max_epochs > 0:
        model.P, model.Q, model.best_epoch = best[1], best[2], best[3]
    else:
        model.best_epoch = cfg.max_epochs
    return model


def train_mf(train, val, cfg, freq=None):
    """Plain SGD matrix factorisation with early stopping on validation RMSE."""
    return _fit(Kind.MF, train, val, cfg, freq)


def train_tmf(train, val, cfg, trunc, freq=None):
    """Truncated MF: each rating trains only its leading ``k_ui`` coordinates."""
    return _fit(Kind.TMF, train, val, cfg, freq, trunc=trunc)


def train_tmf_dropout(train, val, cfg, trunc, freq=None, stream=None, epsilon=DEFAULT_EPSILON):
    """Truncated MF whose active count is redrawn from Poisson(``k_ui``) at every visit.

    Draws are clamped to ``[1, r]``.  They come from ``stream`` (default: a
    stream derived from ``cfg.seed``), kept separate from the shuffle stream.
    """
    return _fit(Kind.TMF_DROPOUT, train, val, cfg, freq, trunc=trunc, stream=stream,
                epsilon=epsilon)


def train_ifwmf(train, val, cfg, rho, freq=None):
    """MF with each squared error weighted by ``1 / (1 + rho f_min)``."""
    return _fit(Kind.IFWMF, train, val, cfg, freq, rho=float(rho))


def train(kind, train_ds, val_ds, cfg, freq=None, trunc=None, rho=None, epsilon=DEFAULT_EPSILON):
    """Dispatch on ``kind``; arguments a kind does not use are ignored."""
    kind = Kind(kind)
    if kind is Kind.MF:
        return train_mf(train_ds, val_ds, cfg, freq)
    if kind is Kind.TMF:
        return train_tmf(train_ds, val_ds, cfg, trunc, freq)
    if kind is Kind.TMF_DROPOUT:
        return train_tmf_dropout(train_ds, val_ds, cfg, trunc, freq, epsilon=epsilon)
    return train_ifwmf(train_ds, val_ds, cfg, rho, freq)


def _model_meta(model):
    return {
        "kind": model.kind.value,
        "config": asdict(model.config),
        "trunc": asdict(model.trunc) if model.trunc else None,
        "rho": model.rho,
        "epsilon": model.epsilon,
        "global_mean": model.global_mean.hex(),
        "best_epoch": model.best_epoch,
        "history": model.history,
    }


def _model_arrays(model, prefix=""):
    f = model.freq
    return {
        prefix + "P": model.P,
        prefix + "Q": model.Q,
        prefix + "user_freq": f.user_freq,
        prefix + "item_freq": f.item_freq,
        prefix + "user_norm": f.user_norm,
        prefix + "item_norm": f.item_norm,
    }


def _model_from(meta, arrays, prefix=""):
    freq = FrequencyTable(arrays[prefix + "user_freq"], arrays[prefix + "item_freq"],
                          arrays[prefix + "user_norm"], arrays[prefix + "item_norm"])
    trunc = TruncationConfig(**meta["trunc"]) if meta["trunc"] else None
    return LatentModel(
        P=arrays[prefix + "P"], Q=arrays[prefix + "Q"], kind=Kind(meta["kind"]),
        config=TrainConfig(**meta["config"]), freq=freq,
        global_mean=float.fromhex(meta["global_mean"]), trunc=trunc, rho=meta["rho"],
        epsilon=meta["epsilon"], history=meta["history"], best_epoch=meta["best_epoch"],
    )


def save_model(model, path):
    """Write a bit-exact ``.npz`` container (factors, frequencies, JSON metadata)."""
    np.savez(Path(path), meta=np.array(json.dumps(_model_meta(model))), **_model_arrays(model))


def load_model(path):
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    return _model_from(json.loads(str(arrays.pop("meta"))), arrays)
