import warnings

import numpy as np
import pytest

from conftest import flat_freq
from tailmc.data import QuartileMap, assign_quartiles
from tailmc.ensemble import FarpEnsemble, farp_fit, farp_predict, farp_predict_many, load_ensemble, save_ensemble
from tailmc.models import Kind, LatentModel, TrainConfig, predict_many, predict_mf, train_mf


def _fixed(P, Q, freq):
    return LatentModel(np.asarray(P, float), np.asarray(Q, float), Kind.MF,
                       TrainConfig(rank=np.shape(P)[1]), freq, 0.0)


def test_single_candidate_fills_every_slot(small_split):
    tr, va, te, freq = small_split
    ens = farp_fit(tr, va, [TrainConfig(rank=2, lr=0.01, max_epochs=20)], freq=freq)
    assert ens.user_choice.tolist() == [0] * 4 and ens.item_choice.tolist() == [0] * 4
    np.testing.assert_array_equal(ens.predict(te.users, te.items),
                                  predict_many(ens.models[0], te.users, te.items))


def test_single_candidate_trajectory_equals_mf(small_split):
    tr, va, _, freq = small_split
    cfg = TrainConfig(rank=3, lr=0.01, max_epochs=25, seed=4)
    ens = farp_fit(tr, va, [cfg], freq=freq)
    mf = train_mf(tr, va, cfg, freq)
    assert ens.models[0].history == mf.history
    assert np.array_equal(ens.models[0].P, mf.P)


def test_dominating_candidate_wins_everywhere(small_split):
    tr, va, _, freq = small_split
    untrained = TrainConfig(rank=2, lr=0.01, max_epochs=0)
    trained = TrainConfig(rank=2, lr=0.02, max_epochs=200)
    ens = farp_fit(tr, va, [untrained, trained], freq=freq)
    assert ens.user_choice.tolist() == [1] * 4 and ens.item_choice.tolist() == [1] * 4


def test_selection_invariant_to_candidate_order(small_split):
    tr, va, _, freq = small_split
    cfgs = [TrainConfig(rank=r, lr=0.01, max_epochs=40) for r in (1, 2, 4)]
    a = farp_fit(tr, va, cfgs, freq=freq)
    b = farp_fit(tr, va, cfgs[::-1], freq=freq)
    assert a.ranks() == b.ranks()


def test_parallel_candidates_match_serial(small_split):
    tr, va, te, freq = small_split
    cfgs = [TrainConfig(rank=r, lr=0.01, max_epochs=15) for r in (1, 3)]
    a = farp_fit(tr, va, cfgs, freq=freq)
    b = farp_fit(tr, va, cfgs, freq=freq, workers=2)
    np.testing.assert_array_equal(a.predict(te.users, te.items), b.predict(te.users, te.items))


def _routing_ensemble():
    # user 0 is rare (f=3), item 0 is popular (f=100); user 1 and item 1 both have f=50
    freq = flat_freq(2, 2, user_counts=[3, 50], item_counts=[100, 50])
    models = [_fixed(np.full((2, 1), k + 1.0), np.ones((2, 1)), freq) for k in range(8)]
    quart = QuartileMap(np.array([0, 3], dtype=np.int8), np.array([3, 1], dtype=np.int8))
    return FarpEnsemble(models, np.array([0, 1, 2, 3]), np.array([4, 5, 6, 7]), quart, freq)


def test_route_to_rarer_side():
    ens = _routing_ensemble()
    assert farp_predict(ens, 0, 0) == 1.0  # f_u < f_i: user Q1 model
    assert farp_predict(ens, 1, 1) == 4.0  # tie: user Q4 model
    assert farp_predict(ens, 1, 0) == 4.0  # f_u = 50 < 100
    assert farp_predict(ens, 0, 1) == 1.0


def test_route_to_item_when_item_rarer():
    freq = flat_freq(1, 1, user_counts=[10], item_counts=[2])
    models = [_fixed([[1.0]], [[1.0]], freq), _fixed([[2.0]], [[1.0]], freq)]
    ens = FarpEnsemble(models, np.zeros(4, int), np.ones(4, int),
                       QuartileMap(np.zeros(1, np.int8), np.zeros(1, np.int8)), freq)
    assert farp_predict(ens, 0, 0) == 2.0


def test_one_model_ensemble_equals_mf():
    gen = np.random.default_rng(0)
    freq = flat_freq(4, 3, user_counts=[1, 2, 3, 4], item_counts=[5, 1, 2])
    m = _fixed(gen.normal(size=(4, 2)), gen.normal(size=(3, 2)), freq)
    ens = FarpEnsemble([m], np.zeros(4, int), np.zeros(4, int), assign_quartiles(freq), freq)
    for u in range(4):
        for i in range(3):
            assert farp_predict(ens, u, i) == predict_mf(m, u, i)


def test_empty_quartile_falls_back_with_warning(small_split):
    tr, va, _, freq = small_split
    cfgs = [TrainConfig(rank=r, lr=0.01, max_epochs=10) for r in (1, 2)]
    quart = assign_quartiles(freq)
    # every item labelled Q4, so item Q1-Q3 get no validation ratings
    q = QuartileMap(quart.user_quartile, np.full_like(quart.item_quartile, 3))
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        ens = farp_fit(tr, va, cfgs, freq=freq, quartiles=q)
    assert len(rec) == 3
    best = int(np.argmin(ens.val_rmse[:, 0]))
    assert ens.item_choice[:3].tolist() == [best] * 3


def test_no_candidates():
    with pytest.raises(ValueError):
        farp_fit(None, None, [])


def test_ensemble_round_trip(tmp_path, small_split):
    tr, va, te, freq = small_split
    ens = farp_fit(tr, va, [TrainConfig(rank=r, lr=0.01, max_epochs=10) for r in (1, 3)], freq=freq)
    save_ensemble(ens, tmp_path / "e.npz")
    back = load_ensemble(tmp_path / "e.npz")
    assert back.ranks() == ens.ranks()
    np.testing.assert_array_equal(farp_predict_many(back, te.users, te.items),
                                  farp_predict_many(ens, te.users, te.items))
