"""Experiment orchestration: configuration, grid search, repeats, synthetic studies."""

import configparser
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from tailmc import evaluation as ev
from tailmc.data import (
    assign_quartiles,
    compute_frequencies,
    load_ratings,
    skewed_subsample,
    split,
)
from tailmc.ensemble import farp_fit
from tailmc.models import DivergenceError, Kind, TrainConfig, TruncationConfig, predict_many, train
from tailmc.synthgen import apply_mask, factor_scale, full_matrix, generate_lowrank

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_GRID",
    "METHODS",
    "ExperimentConfig",
    "GridResult",
    "ExperimentResult",
    "load_config",
    "build_dataset",
    "grid_cells",
    "grid_search",
    "run_experiment",
    "run_synthetic_study",
    "write_experiment",
    "write_study",
    "write_manifest",
    "grid_rows",
]

METHODS = ("mf", "tmf", "tmf-dropout", "ifwmf", "farp")

DEFAULT_GRID = {
    "reg": (0.001, 0.01, 0.1, 1.0, 10.0),
    "rank": (1, 5, 10, 15, 25, 50, 75, 100),
    "rho": (1.0, 10.0, 50.0),
    "steepness": (1.0, 5.0, 10.0, 20.0, 40.0),
    "midpoint": (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75),
}
GRID_KEYS = ("reg", "rank", "rho", "steepness", "midpoint")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    Either ``data`` (a ratings file) or the ``synthetic_*`` fields describe the
    dataset.  A synthetic dataset is an ``n x m`` rank-``synthetic_rank``
    matrix observed through a uniform mask of ``synthetic_density``,
    optionally passed through :func:`~tailmc.data.skewed_subsample`.
    """

    method: str = "mf"
    data: str | None = None
    synthetic_n: int = 300
    synthetic_m: int = 200
    synthetic_rank: int = 5
    synthetic_density: float = 0.4
    synthetic_skew: bool = True
    grid: dict = field(default_factory=lambda: {k: tuple(v) for k, v in DEFAULT_GRID.items()})
    lr: float = 0.005
    max_epochs: int = 200
    patience: int = 5
    epsilon: float = 1e-6
    val_frac: float = 0.2
    test_frac: float = 0.2
    repeats: int = 1
    seed: int = 0
    workers: int = 1
    buckets: int = 10
    threshold: float = 0.5
    out: str = "out"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        for key in GRID_KEYS:
            if not self.grid.get(key):
                raise ConfigError(f"grid '{key}' must be nonempty")
        self.grid = {k: tuple(self.grid[k]) for k in GRID_KEYS}


_SECTIONS = {
    "experiment": ("method", "repeats", "seed", "workers", "out"),
    "data": ("data",),
    "synthetic": ("synthetic_n", "synthetic_m", "synthetic_rank", "synthetic_density",
                  "synthetic_skew"),
    "train": ("lr", "max_epochs", "patience", "epsilon"),
    "split": ("val_frac", "test_frac"),
    "eval": ("buckets", "threshold"),
}


def _convert(name, raw):
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    t = types[name]
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw.strip()


def load_config(path=None, **overrides):
    """Read an INI-style config and apply keyword overrides (``None`` values ignored).

    Sections: ``[experiment]``, ``[data]`` (``path``), ``[synthetic]`` (``n``,
    ``m``, ``rank``, ``density``, ``skew``), ``[train]``, ``[split]``,
    ``[eval]`` and ``[grid]`` with comma-separated lists for ``reg``,
    ``rank``, ``rho``, ``steepness``, ``midpoint``.
    """
    values = {}
    grid = {k: tuple(v) for k, v in DEFAULT_GRID.items()}
    if path is not None:
        cp = configparser.ConfigParser()
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config {path}")
        for section in cp.sections():
            if section == "grid":
                for key, raw in cp.items("grid"):
                    if key not in GRID_KEYS:
                        raise ConfigError(f"unknown grid key {key!r}")
                    conv = int if key == "rank" else float
                    grid[key] = tuple(conv(x) for x in raw.replace(",", " ").split())
                continue
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp.items(section):
                name = key
                if section == "synthetic":
                    name = "synthetic_" + key
                elif section == "data" and key == "path":
                    name = "data"
                if name not in _SECTIONS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                values[name] = _convert(name, raw)
    grid_over = overrides.pop("grid", None) or {}
    grid.update({k: tuple(v) for k, v in grid_over.items() if v})
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(grid=grid, **values)


def build_dataset(cfg):
    """The experiment's full rating dataset (loaded or synthesised) plus metadata."""
    if cfg.data:
        return load_ratings(cfg.data), {"source": str(cfg.data)}
    P, Q = generate_lowrank(cfg.synthetic_n, cfg.synthetic_m, cfg.synthetic_rank, cfg.seed)
    full = full_matrix(P, Q)
    ds = apply_mask(full, density=cfg.synthetic_density, seed=cfg.seed)
    if cfg.synthetic_skew:
        ds = skewed_subsample(ds, seed=cfg.seed)
    meta = {"n": cfg.synthetic_n, "m": cfg.synthetic_m, "r": cfg.synthetic_rank,
            "seed": cfg.seed, "alpha": factor_scale(P), "density": cfg.synthetic_density,
            "skew": cfg.synthetic_skew}
    return ds, meta


def grid_cells(method, grid):
    """Grid cells for ``method`` in tie-breaking order: lexicographic over (reg, rank, rho, k, z).

    Dimensions a method does not use are left out.
    """
    kind = "mf" if method == "farp" else method
    used = {"reg", "rank"}
    if kind == "ifwmf":
        used.add("rho")
    if kind in ("tmf", "tmf-dropout"):
        used |= {"steepness", "midpoint"}
    axes = [grid[k] if k in used else (None,) for k in GRID_KEYS]
    cells = []
    for combo in itertools.product(*axes):
        cells.append({k: v for k, v in zip(GRID_KEYS, combo) if v is not None})
    return cells


@dataclass(eq=False)
class GridResult:
    method: str
    cells: list
    val_rmse: list  # None for failed cells
    errors: list
    winner: int
    model: object  # trained winner (LatentModel or FarpEnsemble)
    models: list = field(default_factory=list, repr=False)

    @property
    def best(self):
        return self.cells[self.winner]

    @property
    def best_rmse(self):
        return self.val_rmse[self.winner]


def _train_cell(method, cell, train_ds, val_ds, freq, cfg):
    tc = TrainConfig(rank=int(cell["rank"]), reg=float(cell["reg"]), lr=cfg.lr,
                     max_epochs=cfg.max_epochs, patience=cfg.patience, seed=cfg.seed)
    trunc = None
    if "steepness" in cell:
        trunc = TruncationConfig(cell["steepness"], cell["midpoint"])
    kind = Kind.MF if method == "farp" else Kind(method)
    try:
        model = train(kind, train_ds, val_ds, tc, freq=freq, trunc=trunc, rho=cell.get("rho"),
                      epsilon=cfg.epsilon)
    except DivergenceError as exc:
        return None, None, str(exc)
    score = ev.rmse(predict_many(model, val_ds.users, val_ds.items), val_ds.ratings)
    if not np.isfinite(score):
        return None, None, "non-finite validation RMSE"
    return model, score, None


def _argmin_first(scores):
    best = None
    for k, s in enumerate(scores):
        if s is not None and (best is None or s < scores[best]):
            best = k
    return best


def grid_search(cfg, train_ds, val_ds, freq=None):
    """Train one model per grid cell and keep the one with the lowest validation RMSE.

    Cells that diverge are recorded and skipped.  For FARP the grid is the MF
    grid; the candidate pool is then every rank at the best MF ``reg``.
    """
    freq = compute_frequencies(train_ds) if freq is None else freq
    cells = grid_cells(cfg.method, cfg.grid)

    def run(cell):
        return _train_cell(cfg.method, cell, train_ds, val_ds, freq, cfg)

    if cfg.workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(run, cells))
    else:
        results = [run(c) for c in cells]
    models = [r[0] for r in results]
    scores = [r[1] for r in results]
    errors = [r[2] for r in results]
    for c, e in zip(cells, errors):
        if e:
            log.warning("grid cell %s failed: %s", c, e)
    winner = _argmin_first(scores)
    if winner is None:
        raise RuntimeError(f"all {len(cells)} grid cells failed for {cfg.method}")

    if cfg.method != "farp":
        return GridResult(cfg.method, cells, scores, errors, winner, models[winner], models)

    best_reg = cells[winner]["reg"]
    pool = [k for k, c in enumerate(cells) if c["reg"] == best_reg and models[k] is not None]
    ens = farp_fit(train_ds, val_ds, None, freq=freq, models=[models[k] for k in pool])
    farp_score = ev.rmse(ens.predict(val_ds.users, val_ds.items), val_ds.ratings)
    cells = cells + [{"reg": best_reg, "ranks": tuple(cells[k]["rank"] for k in pool)}]
    return GridResult("farp", cells, scores + [farp_score], errors + [None], len(cells) - 1,
                      ens, models + [ens])


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    dataset_meta: dict
    grids: list
    reports: list
    mae: list
    split_seeds: list
    average: ev.EvalReport = None


def run_experiment(cfg, dataset=None, split_seeds=None):
    """Repeat split -> grid search -> test evaluation; average the test reports.

    Repeat ``k`` splits with seed ``cfg.seed + k`` unless ``split_seeds`` is
    given.
    """
    if dataset is None:
        ds, meta = build_dataset(cfg)
    else:
        ds, meta = dataset, {"source": "in-memory"}
    seeds = list(split_seeds) if split_seeds is not None else [cfg.seed + k for k in range(cfg.repeats)]
    grids, reports, maes = [], [], []
    for s in seeds:
        tr, va, te = split(ds, cfg.val_frac, cfg.test_frac, seed=s)
        freq = compute_frequencies(tr)
        quart = assign_quartiles(freq)
        g = grid_search(cfg, tr, va, freq)
        pred = g.model.predict(te.users, te.items)
        rep = ev.evaluate(lambda u, i, p=pred: p, te, quart, freq, cfg.buckets, cfg.threshold)
        grids.append(g)
        reports.append(rep)
        maes.append(ev.mae_accuracy(None, te, freq, cfg.threshold, predictions=pred))
    res = ExperimentResult(cfg, meta, grids, reports, maes, seeds)
    res.average = ev.average_reports(reports)
    return res


def grid_rows(g):
    rows = []
    for k, (cell, score, err) in enumerate(zip(g.cells, g.val_rmse, g.errors)):
        params = ";".join(f"{key}={cell[key]}" for key in sorted(cell))
        rows.append((k, params, score, "failed" if err else ("winner" if k == g.winner else "ok")))
    return rows


def write_experiment(res, out):
    """Write per-repeat and averaged CSVs, a JSON summary, and the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    method = res.config.method
    artifacts = []
    for k, (g, rep, mae, s) in enumerate(zip(res.grids, res.reports, res.mae, res.split_seeds)):
        tag = f"repeat{k}"
        ev.write_csv(out / f"{tag}_grid.csv", ("cell", "params", "val_rmse", "status"), grid_rows(g))
        ev.write_quartile_csv(rep, out / f"{tag}_quartiles.csv")
        ev.write_curve_csv(rep, out / f"{tag}_curve.csv")
        ev.write_mae_csv(mae, out / f"{tag}_mae.csv")
        artifacts += [(f"{tag}_{kind}.csv", s) for kind in ("grid", "quartiles", "curve", "mae")]
    ev.write_quartile_csv(res.average, out / "quartiles.csv")
    ev.write_curve_csv(res.average, out / "curve.csv")
    summary = {
        "method": method,
        "average": ev.report_summary(res.average, method),
        "repeats": [dict(ev.report_summary(r, method), split_seed=s, best=_jsonable(g.best))
                    for r, g, s in zip(res.reports, res.grids, res.split_seeds)],
        "dataset": _jsonable(res.dataset_meta),
    }
    ev.write_summary_json(summary, out / "summary.json")
    artifacts += [("quartiles.csv", res.config.seed), ("curve.csv", res.config.seed),
                  ("summary.json", res.config.seed)]
    write_manifest(out, artifacts)
    return out


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.item() if hasattr(o, "item") else str(o)))


def write_manifest(out, artifacts):
    """``manifest.txt``: one ``<file>\\tseed=<seed>`` line per produced artifact."""
    path = Path(out) / "manifest.txt"
    with path.open("w", encoding="utf-8") as fh:
        for name, seed in artifacts:
            fh.write(f"{name}\tseed={seed}\n")
    return path


def run_synthetic_study(n=300, m=200, ranks=(5, 20), seeds=(0, 1, 2, 3, 4), density=0.4,
                        skew=True, model_rank=None, regs=(0.001, 0.01, 0.1, 1.0, 10.0),
                        lr=0.01, max_epochs=200, patience=5, buckets=10, workers=1):
    """MF on exact-rank synthetic matrices under a (skewed) mask, for each rank and seed.

    For every ``rank`` and ``seed``: generate the matrix, mask it, split
    60/20/20, pick ``reg`` on validation, and evaluate on test.  The model
    rank equals the matrix rank unless ``model_rank`` is given.  Returns a
    dict ``{rank: {"runs": [EvalReport per seed], "mean": EvalReport}}``.
    """
    out = {}
    for rank in ranks:
        runs = []
        for seed in seeds:
            cfg = ExperimentConfig(
                method="mf", synthetic_n=n, synthetic_m=m, synthetic_rank=rank,
                synthetic_density=density, synthetic_skew=skew, lr=lr, max_epochs=max_epochs,
                patience=patience, seed=seed, workers=workers, buckets=buckets,
                grid=dict(DEFAULT_GRID, reg=tuple(regs), rank=(model_rank or rank,)),
            )
            res = run_experiment(cfg, split_seeds=[seed])
            runs.append(res.reports[0])
        out[rank] = {"runs": runs, "mean": ev.average_reports(runs), "seeds": list(seeds)}
    return out


def write_study(study, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    curve_rows, quart_rows, artifacts = [], [], []
    for rank, block in study.items():
        labelled = list(zip(block["seeds"], block["runs"])) + [("mean", block["mean"])]
        for seed, rep in labelled:
            for b, (mf, r) in enumerate(rep.bucket_curve):
                curve_rows.append((rank, seed, b + 1, mf, r))
            for side, cells in (("user", rep.user_quartiles), ("item", rep.item_quartiles)):
                for q, (count, r) in enumerate(cells):
                    quart_rows.append((rank, seed, f"{side}_Q{q + 1}", count, r))
        artifacts += [(f"rank{rank}", s) for s in block["seeds"]]
    ev.write_csv(out / "study_curves.csv", ("rank", "seed", "bucket", "mean_freq", "rmse"), curve_rows)
    ev.write_csv(out / "study_quartiles.csv", ("rank", "seed", "cell", "count", "rmse"), quart_rows)
    trend = {}
    for rank, block in study.items():
        curve = block["mean"].bucket_curve
        trend[str(rank)] = {
            "spearman_freq_vs_rmse": ev.spearman([c[0] for c in curve], [c[1] for c in curve]),
            "item_Q1_rmse": block["mean"].item_quartiles[0][1],
            "item_Q4_rmse": block["mean"].item_quartiles[3][1],
            "user_Q1_rmse": block["mean"].user_quartiles[0][1],
        }
    ev.write_summary_json(trend, out / "study_trend.json")
    write_manifest(out, [("study_curves.csv", "see rows"), ("study_quartiles.csv", "see rows"),
                         ("study_trend.json", "see rows")] + artifacts)
    return out
