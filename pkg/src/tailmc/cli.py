"""Command line entry point: ``tailmc <subcommand> [flags]``.

Every subcommand accepts ``--config``, ``--seed``, ``--method``, ``--out``
and ``--workers``; flags override values read from the config file.  All
artifacts land under ``--out`` together with ``manifest.txt``.  On failure a
single JSON object ``{"error": ..., "type": ..., "command": ...}`` is printed
to stderr and the exit status is nonzero.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from tailmc import evaluation as ev
from tailmc import harness
from tailmc.data import (
    RatingDataset,
    compute_frequencies,
    load_ratings,
    save_ratings,
    skewed_subsample,
    split,
    write_split,
)
from tailmc.ensemble import farp_fit, save_ensemble
from tailmc.models import TrainConfig, TruncationConfig, save_model, train
from tailmc.synthgen import apply_mask, factor_scale, full_matrix, generate_lowrank, write_synthetic

EXIT_USAGE = 2
EXIT_FAILURE = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(argparse.ArgumentError(None, message), self.prog, EXIT_USAGE)


def _fail(exc, command, code=EXIT_FAILURE):
    line = {"error": str(exc), "type": type(exc).__name__, "command": command}
    print(json.dumps(line, sort_keys=True), file=sys.stderr)
    sys.exit(code)


def _common(p):
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=harness.METHODS)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int)


def _floats(text):
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text):
    return tuple(int(x) for x in text.replace(",", " ").split())


def build_parser():
    parser = _Parser(prog="tailmc", description="Frequency-adaptive matrix completion")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="synthesise a masked low-rank rating matrix")
    _common(p)
    p.add_argument("--n", type=int, dest="synthetic_n")
    p.add_argument("--m", type=int, dest="synthetic_m")
    p.add_argument("--rank", type=int, dest="synthetic_rank")
    p.add_argument("--density", type=float, dest="synthetic_density")
    p.add_argument("--skew", action=argparse.BooleanOptionalAction, dest="synthetic_skew")

    p = sub.add_parser("subsample", help="skewed two-phase subsampling of a ratings file")
    _common(p)
    p.add_argument("--input", required=True)

    p = sub.add_parser("split", help="random train/validation/test split")
    _common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--val-frac", type=float, dest="val_frac")
    p.add_argument("--test-frac", type=float, dest="test_frac")

    p = sub.add_parser("train", help="train one model with fixed hyperparameters")
    _common(p)
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--val", dest="val_path")
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--reg", type=float, default=0.01)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--rho", type=float, default=10.0)
    p.add_argument("--k", type=float, default=10.0, dest="steepness")
    p.add_argument("--z", type=float, default=0.0, dest="midpoint")
    p.add_argument("--ranks", type=_ints, help="FARP candidate ranks (default: --rank only)")

    for name, text in (("grid", "grid search on one split"), ("experiment", "repeated grid search")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--data", help="ratings file (default: synthetic from config)")
        p.add_argument("--repeats", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--max-epochs", type=int, dest="max_epochs")
        for key, conv in (("reg", _floats), ("rank", _ints), ("rho", _floats),
                          ("k", _floats), ("z", _floats)):
            p.add_argument(f"--grid-{key}", type=conv, dest=f"grid_{key}")

    p = sub.add_parser("study-synthetic", help="MF rank study on skewed synthetic matrices")
    _common(p)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--ranks", type=_ints, default=(5, 20))
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, counted from --seed")
    p.add_argument("--density", type=float, default=0.4)
    p.add_argument("--skew", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-epochs", type=int, default=200, dest="max_epochs")
    return parser


_GRID_FLAGS = {"grid_reg": "reg", "grid_rank": "rank", "grid_rho": "rho",
               "grid_k": "steepness", "grid_z": "midpoint"}
_CONFIG_FLAGS = ("seed", "method", "out", "workers", "data", "repeats", "lr", "max_epochs",
                 "val_frac", "test_frac", "synthetic_n", "synthetic_m", "synthetic_rank",
                 "synthetic_density", "synthetic_skew")


def _config(args):
    over = {k: getattr(args, k) for k in _CONFIG_FLAGS if hasattr(args, k)}
    over["grid"] = {g: getattr(args, f) for f, g in _GRID_FLAGS.items() if getattr(args, f, None)}
    return harness.load_config(args.config, **over)


def _outdir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args):
    cfg = _config(args)
    out = _outdir(cfg)
    P, Q = generate_lowrank(cfg.synthetic_n, cfg.synthetic_m, cfg.synthetic_rank, cfg.seed)
    ds = apply_mask(full_matrix(P, Q), density=cfg.synthetic_density, seed=cfg.seed)
    if cfg.synthetic_skew:
        ds = skewed_subsample(ds, seed=cfg.seed)
    meta = {"n": cfg.synthetic_n, "m": cfg.synthetic_m, "r": cfg.synthetic_rank, "seed": cfg.seed,
            "alpha": factor_scale(P), "density": cfg.synthetic_density,
            "skew": cfg.synthetic_skew, "ratings": len(ds)}
    path, meta_path = write_synthetic(ds, out / "ratings.csv", meta)
    harness.write_manifest(out, [(path.name, cfg.seed), (meta_path.name, cfg.seed)])
    return {"ratings": len(ds), "users": ds.n_users, "items": ds.n_items}


def cmd_subsample(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ds = skewed_subsample(load_ratings(args.input), seed=cfg.seed)
    save_ratings(ds, out / "subsampled.csv")
    harness.write_manifest(out, [("subsampled.csv", cfg.seed)])
    return {"ratings": len(ds), "users": ds.n_users, "items": ds.n_items}


def cmd_split(args):
    cfg = _config(args)
    out = _outdir(cfg)
    parts = split(load_ratings(args.input), cfg.val_frac, cfg.test_frac, seed=cfg.seed)
    paths = write_split(parts, out / "split")
    harness.write_manifest(out, [(p.name, cfg.seed) for p in paths])
    return {"train": len(parts[0]), "val": len(parts[1]), "test": len(parts[2])}


def cmd_train(args):
    cfg = _config(args)
    out = _outdir(cfg)
    tr = load_ratings(args.train_path)
    va = None
    if args.val_path:
        va = _align(load_ratings(args.val_path), tr)
    tc = TrainConfig(rank=args.rank, reg=args.reg, lr=cfg.lr, max_epochs=cfg.max_epochs,
                     patience=cfg.patience, seed=cfg.seed)
    freq = compute_frequencies(tr)
    if cfg.method == "farp":
        ranks = args.ranks or (args.rank,)
        cands = [TrainConfig(rank=r, reg=args.reg, lr=cfg.lr, max_epochs=cfg.max_epochs,
                             patience=cfg.patience, seed=cfg.seed) for r in ranks]
        if va is None:
            raise ValueError("farp needs --val to pick per-quartile models")
        model = farp_fit(tr, va, cands, freq=freq, workers=cfg.workers)
        save_ensemble(model, out / "model.npz")
    else:
        trunc = TruncationConfig(args.steepness, args.midpoint)
        model = train(cfg.method, tr, va, tc, freq=freq, trunc=trunc, rho=args.rho,
                      epsilon=cfg.epsilon)
        save_model(model, out / "model.npz")
    result = {"method": cfg.method}
    if va is not None:
        result["val_rmse"] = ev.rmse(model.predict(va.users, va.items), va.ratings)
    harness.write_manifest(out, [("model.npz", cfg.seed)])
    return result


def _align(other, ref):
    """Re-index ``other`` into ``ref``'s user/item numbering; unseen ids are dropped."""
    keep = [(u, i, r) for u, i, r in other if u in ref.user_index and i in ref.item_index]
    if not keep:
        raise ValueError("validation file shares no users/items with the training file")
    users = [ref.user_index[u] for u, _, _ in keep]
    items = [ref.item_index[i] for _, i, _ in keep]
    return RatingDataset(users, items, [r for _, _, r in keep], ref.user_ids, ref.item_ids)


def cmd_grid(args):
    cfg = _config(args)
    out = _outdir(cfg)
    ds, _ = harness.build_dataset(cfg)
    tr, va, _ = split(ds, cfg.val_frac, cfg.test_frac, seed=cfg.seed)
    g = harness.grid_search(cfg, tr, va)
    ev.write_csv(out / "grid.csv", ("cell", "params", "val_rmse", "status"), harness.grid_rows(g))
    harness.write_manifest(out, [("grid.csv", cfg.seed)])
    return {"best": g.best, "val_rmse": g.best_rmse}


def cmd_experiment(args):
    cfg = _config(args)
    res = harness.run_experiment(cfg)
    harness.write_experiment(res, cfg.out)
    return {"overall_rmse": res.average.overall_rmse, "repeats": cfg.repeats}


def cmd_study(args):
    cfg = _config(args)
    seeds = tuple(range(cfg.seed, cfg.seed + args.seeds))
    study = harness.run_synthetic_study(
        n=args.n, m=args.m, ranks=args.ranks, seeds=seeds, density=args.density,
        skew=args.skew, lr=args.lr, max_epochs=args.max_epochs, workers=cfg.workers)
    harness.write_study(study, cfg.out)
    return {str(r): b["mean"].overall_rmse for r, b in study.items()}


COMMANDS = {
    "generate": cmd_generate,
    "subsample": cmd_subsample,
    "split": cmd_split,
    "train": cmd_train,
    "grid": cmd_grid,
    "experiment": cmd_experiment,
    "study-synthetic": cmd_study,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes one JSON line
        _fail(exc, args.command)
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
