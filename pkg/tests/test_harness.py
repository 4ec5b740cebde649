import numpy as np
import pytest

from tailmc import harness as H
from tailmc.data import compute_frequencies, split

TINY = dict(synthetic_n=40, synthetic_m=30, synthetic_rank=2, lr=0.01, max_epochs=40)


def _cfg(**kw):
    grid = kw.pop("grid", {})
    return H.load_config(**{**TINY, **kw}, grid=grid)


def _data(seed=0, skew=True):
    cfg = _cfg(seed=seed, synthetic_skew=skew)
    ds, _ = H.build_dataset(cfg)
    return split(ds, 0.2, 0.2, seed=seed)


def test_default_grid_is_the_published_one():
    assert H.DEFAULT_GRID == {
        "reg": (0.001, 0.01, 0.1, 1.0, 10.0),
        "rank": (1, 5, 10, 15, 25, 50, 75, 100),
        "rho": (1.0, 10.0, 50.0),
        "steepness": (1.0, 5.0, 10.0, 20.0, 40.0),
        "midpoint": (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75),
    }


def test_grid_cells_order_and_axes():
    grid = dict(H.DEFAULT_GRID, reg=(0.1, 1.0), rank=(2, 3), rho=(1.0, 5.0))
    cells = H.grid_cells("ifwmf", grid)
    assert cells[:3] == [{"reg": 0.1, "rank": 2, "rho": 1.0}, {"reg": 0.1, "rank": 2, "rho": 5.0},
                         {"reg": 0.1, "rank": 3, "rho": 1.0}]
    assert len(cells) == 8
    assert H.grid_cells("mf", grid)[1] == {"reg": 0.1, "rank": 3}
    assert len(H.grid_cells("tmf", grid)) == 2 * 2 * 5 * 7


def test_config_validation():
    with pytest.raises(H.ConfigError):
        _cfg(method="svd")
    with pytest.raises(H.ConfigError):
        _cfg(repeats=0)
    with pytest.raises(H.ConfigError):
        H.ExperimentConfig(grid=dict(H.DEFAULT_GRID, reg=()))


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[experiment]\nmethod = tmf\nrepeats = 2\n[synthetic]\nn = 12\nskew = no\n"
                 "[train]\nlr = 0.02\n[grid]\nreg = 0.1, 1\nrank = 3\n")
    cfg = H.load_config(p, repeats=4, grid={"rho": (7.0,)})
    assert (cfg.method, cfg.repeats, cfg.synthetic_n, cfg.synthetic_skew, cfg.lr) == (
        "tmf", 4, 12, False, 0.02)
    assert cfg.grid["reg"] == (0.1, 1.0) and cfg.grid["rank"] == (3,) and cfg.grid["rho"] == (7.0,)
    p.write_text("[nope]\nx = 1\n")
    with pytest.raises(H.ConfigError):
        H.load_config(p)


def test_single_cell_wins():
    tr, va, _ = _data()
    g = H.grid_search(_cfg(grid={"reg": (0.01,), "rank": (2,)}), tr, va)
    assert g.winner == 0 and g.best == {"reg": 0.01, "rank": 2}


def test_trained_cell_beats_untrained_cell():
    tr, va, _ = _data(skew=False)
    # shift ratings so the data has a clearly nonzero mean
    shift = lambda d: type(d)(d.users, d.items, d.ratings + 5.0, d.user_ids, d.item_ids)  # noqa: E731
    tr, va = shift(tr), shift(va)
    cfg = _cfg(grid={"reg": (0.01,), "rank": (2,)}, max_epochs=300)
    trained = H.grid_search(cfg, tr, va)
    untrained = H.grid_search(_cfg(grid={"reg": (0.01,), "rank": (2,)}, max_epochs=0), tr, va)
    scores = [untrained.val_rmse[0], trained.val_rmse[0]]
    assert H._argmin_first(scores) == 1


def test_winner_is_argmin_with_first_tie():
    assert H._argmin_first([3.0, None, 1.0, 1.0]) == 2
    assert H._argmin_first([None, None]) is None


def test_all_cells_failed_raises():
    tr, va, _ = _data()
    with pytest.raises(RuntimeError, match="all 1 grid cells failed"):
        H.grid_search(_cfg(grid={"reg": (0.01,), "rank": (2,)}, lr=50.0), tr, va)


def test_mixed_failed_cell_excluded():
    tr, va, _ = _data()
    # lr * reg = 2.5 makes the shrinkage step itself unstable
    cfg = _cfg(grid={"reg": (0.01, 50.0), "rank": (2,)}, lr=0.05)
    g = H.grid_search(cfg, tr, va)
    assert g.val_rmse[1] is None and g.winner == 0
    for s, e in zip(g.val_rmse, g.errors):
        assert (s is None) == (e is not None)


def test_serial_and_parallel_grid_identical():
    tr, va, _ = _data(1)
    grid = {"reg": (0.01, 0.1), "rank": (1, 2, 3)}
    a = H.grid_search(_cfg(grid=grid), tr, va)
    b = H.grid_search(_cfg(grid=grid, workers=3), tr, va)
    assert a.val_rmse == b.val_rmse and a.winner == b.winner


@pytest.mark.parametrize("method", ["tmf", "tmf-dropout", "ifwmf", "farp"])
def test_every_method_runs_a_grid(method):
    tr, va, _ = _data()
    grid = {"reg": (0.01,), "rank": (2, 3), "rho": (1.0,), "steepness": (5.0,), "midpoint": (0.0,)}
    g = H.grid_search(_cfg(method=method, grid=grid), tr, va, compute_frequencies(tr))
    assert g.best_rmse == min(s for s in g.val_rmse if s is not None)
    if method == "farp":
        assert g.best["ranks"] == (2, 3)


def test_experiment_one_repeat_average_is_identity():
    res = H.run_experiment(_cfg(grid={"reg": (0.01,), "rank": (2,)}))
    assert res.average.overall_rmse == res.reports[0].overall_rmse
    assert [c[1] for c in res.average.bucket_curve] == [c[1] for c in res.reports[0].bucket_curve]
    assert res.average.item_quartiles == [(float(n), v) for n, v in res.reports[0].item_quartiles]


def test_experiment_identical_seeds_identical_reports():
    res = H.run_experiment(_cfg(grid={"reg": (0.01,), "rank": (2,)}, repeats=3), split_seeds=[4, 4, 4])
    first = res.reports[0]
    for rep in res.reports[1:]:
        assert rep == first
    assert res.average.overall_rmse == first.overall_rmse


def test_experiment_outputs_deterministic(tmp_path):
    cfg = _cfg(grid={"reg": (0.01,), "rank": (1, 2)}, repeats=2, method="tmf-dropout")
    cfg.grid = dict(cfg.grid, steepness=(5.0,), midpoint=(0.0,))
    for name in ("a", "b"):
        H.write_experiment(H.run_experiment(cfg), tmp_path / name)
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.txt" in files and "repeat1_mae.csv" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    manifest = (tmp_path / "a" / "manifest.txt").read_text().splitlines()
    assert "repeat1_grid.csv\tseed=1" in manifest


def test_synthetic_study_uniform_recovery_and_bookkeeping(tmp_path):
    study = H.run_synthetic_study(n=60, m=50, ranks=(2,), seeds=(0,), density=0.6, skew=False,
                                  regs=(0.001,), lr=0.02, max_epochs=300)
    assert study[2]["mean"].overall_rmse < 0.2
    study = H.run_synthetic_study(n=40, m=30, ranks=(2,), seeds=(0, 1, 2, 3, 4), regs=(0.01,),
                                  max_epochs=20)
    H.write_study(study, tmp_path)
    rows = (tmp_path / "study_curves.csv").read_text().splitlines()[1:]
    per_bucket = [r for r in rows if r.split(",")[2] == "1"]
    assert len(per_bucket) == 6  # five seeds plus the mean
    assert (tmp_path / "study_trend.json").exists() and (tmp_path / "manifest.txt").exists()


def test_build_dataset_from_file(tmp_path):
    from tailmc.data import save_ratings

    ds, _ = H.build_dataset(_cfg())
    save_ratings(ds, tmp_path / "r.csv")
    back, meta = H.build_dataset(_cfg(data=str(tmp_path / "r.csv")))
    assert len(back) == len(ds) and meta["source"].endswith("r.csv")
    assert np.array_equal(back.ratings, ds.ratings)
