"""FARP: route each prediction to the MF model that did best on its quartile."""

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tailmc.data import FrequencyTable, QuartileMap, assign_quartiles, compute_frequencies
from tailmc.models import _model_arrays, _model_from, _model_meta, predict_many, train_mf

__all__ = ["FarpEnsemble", "farp_fit", "farp_predict", "farp_predict_many",
           "save_ensemble", "load_ensemble"]


@dataclass(eq=False)
class FarpEnsemble:
    """Candidate MF models plus the chosen candidate per user / item quartile.

    ``user_choice[q]`` and ``item_choice[q]`` index into ``models``.
    """

    models: list
    user_choice: np.ndarray
    item_choice: np.ndarray
    quartiles: QuartileMap
    freq: FrequencyTable
    val_rmse: np.ndarray | None = None  # (n_models, 9): overall, user Q1..Q4, item Q1..Q4

    def predict(self, users, items):
        return farp_predict_many(self, users, items)

    def ranks(self):
        """Ranks chosen for (user Q1..Q4, item Q1..Q4)."""
        return ([self.models[k].rank for k in self.user_choice],
                [self.models[k].rank for k in self.item_choice])


def _rmse(err):
    return float(np.sqrt(np.mean(err * err))) if err.size else np.nan


def _select(scores, overall, label):
    choice = np.empty(4, dtype=np.int64)
    for q in range(4):
        col = scores[:, q]
        if np.all(np.isnan(col)):
            warnings.warn(f"no validation ratings for {label} Q{q + 1}; using the overall best model",
                          stacklevel=3)
            choice[q] = int(np.argmin(overall))
        else:
            # first minimum wins ties
            choice[q] = int(np.nanargmin(col))
    return choice


def farp_fit(train, val, candidate_cfgs, freq=None, quartiles=None, workers=1, models=None):
    """Train one MF model per candidate config and pick a winner per quartile.

    For user quartile ``q`` the winner minimises validation RMSE over the
    validation ratings whose user is in ``q``; items likewise.  Already
    trained candidates can be passed as ``models`` to skip training.
    """
    if models is None:
        if not candidate_cfgs:
            raise ValueError("need at least one candidate configuration")
        freq = compute_frequencies(train) if freq is None else freq
        if workers > 1 and len(candidate_cfgs) > 1:
            with ThreadPoolExecutor(workers) as ex:
                models = list(ex.map(lambda c: train_mf(train, val, c, freq), candidate_cfgs))
        else:
            models = [train_mf(train, val, c, freq) for c in candidate_cfgs]
    else:
        models = list(models)
        freq = models[0].freq if freq is None else freq
    quartiles = assign_quartiles(freq) if quartiles is None else quartiles

    uq = quartiles.user_quartile[val.users]
    iq = quartiles.item_quartile[val.items]
    scores = np.full((len(models), 9), np.nan)
    for k, model in enumerate(models):
        err = predict_many(model, val.users, val.items) - val.ratings
        scores[k, 0] = _rmse(err)
        for q in range(4):
            scores[k, 1 + q] = _rmse(err[uq == q])
            scores[k, 5 + q] = _rmse(err[iq == q])
    overall = np.where(np.isnan(scores[:, 0]), np.inf, scores[:, 0])
    return FarpEnsemble(
        models=models,
        user_choice=_select(scores[:, 1:5], overall, "user"),
        item_choice=_select(scores[:, 5:9], overall, "item"),
        quartiles=quartiles,
        freq=freq,
        val_rmse=scores,
    )


def _route(ens, users, items):
    fu = ens.freq.user_freq[users]
    fi = ens.freq.item_freq[items]
    by_user = ens.user_choice[ens.quartiles.user_quartile[users]]
    by_item = ens.item_choice[ens.quartiles.item_quartile[items]]
    # the rarer side decides; ties go to the user
    return np.where(fi < fu, by_item, by_user)


def farp_predict_many(ens, users, items):
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    route = _route(ens, users, items)
    out = np.empty(users.shape[0])
    for k in np.unique(route):
        sel = route == k
        out[sel] = predict_many(ens.models[k], users[sel], items[sel])
    return out


def farp_predict(ens, u, i):
    return float(farp_predict_many(ens, [u], [i])[0])


def save_ensemble(ens, path):
    meta = {
        "models": [_model_meta(m) for m in ens.models],
        "user_choice": ens.user_choice.tolist(),
        "item_choice": ens.item_choice.tolist(),
    }
    arrays = {"user_quartile": ens.quartiles.user_quartile,
              "item_quartile": ens.quartiles.item_quartile}
    for k, m in enumerate(ens.models):
        arrays.update(_model_arrays(m, prefix=f"m{k}_"))
    np.savez(Path(path), meta=np.array(json.dumps(meta)), **arrays)


def load_ensemble(path):
    with np.load(Path(path), allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(str(arrays.pop("meta")))
    models = [_model_from(mm, arrays, prefix=f"m{k}_") for k, mm in enumerate(meta["models"])]
    return FarpEnsemble(
        models=models,
        user_choice=np.array(meta["user_choice"], dtype=np.int64),
        item_choice=np.array(meta["item_choice"], dtype=np.int64),
        quartiles=QuartileMap(arrays["user_quartile"], arrays["item_quartile"]),
        freq=models[0].freq,
    )
