"""Command-line interface: ``sinflow {train,eval,sample,density-grid,recon-analysis}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, prepare
from .data import DataError, load_csv, save_csv
from .io import atomic_write
from .layers import DEFAULT_MAX_ITER, DEFAULT_TOL
from .model import FlowModel, ModelSpec
from .training import TrainConfig, TrainingAborted, train, write_history

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
DEFAULT_CAPS = "1,2,5,10,20,50,100"


# -- train --------------------------------------------------------------------------------

_TRAIN_OVERRIDES = [
    # flag, section, field, type, help
    ("--steps", "train", "steps", int, "optimizer steps"),
    ("--batch-size", "train", "batch_size", int, "minibatch size"),
    ("--lr", "train", "lr", float, "initial learning rate"),
    ("--schedule", "train", "schedule", str, "learning-rate schedule: none, exponential or cosine"),
    ("--blocks", "model", "blocks", int, "number of LDU blocks"),
    ("--dscales", "model", "dscales", int, "sinusoidal D-scale layers per block"),
    ("--K", "model", "K", int, "sinusoids per transformer"),
    ("--hidden", "model", "hidden", lambda s: [int(v) for v in s.split(",")],
     "comma-separated conditioner hidden sizes"),
]


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    d = cfg.to_dict()
    if getattr(args, "dataset", None):
        d["dataset"] = {"kind": "toy", "name": args.dataset}
    for _, section, name, _, _ in _TRAIN_OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            d[section][name] = value
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    return RunConfig.from_dict(d)


def _nll_line(label, x, model, st) -> str:
    lp = model.log_prob(x)
    n = x.shape[0]
    se = float(np.std(lp) / math.sqrt(n))
    nll = -float(np.mean(lp))
    return f"{label}: {nll:.5f} +/- {se:.5f} nats (standardized), {nll - st.log_det():.5f} (raw), n={n}"


def cmd_train(args) -> int:
    cfg = _run_config(args)
    prep = prepare(cfg)
    model = FlowModel(cfg.model, prep.standardizer)
    out = Path(cfg.out)
    try:
        res = train(model, prep.train, prep.val, cfg.train)
    except TrainingAborted as exc:
        model.load_parameters(exc.last_good)
        save_checkpoint(out / "aborted.ckpt.json", Checkpoint.from_model(cfg, model, 0, float("nan")))
        raise
    save_checkpoint(out / "best.ckpt.json", Checkpoint.from_model(cfg, res.model, res.best_step, res.best_val_nll))
    save_checkpoint(out / "final.ckpt.json",
                    Checkpoint.from_model(cfg, res.final_model, cfg.train.steps, res.best_val_nll))
    write_history(out / "history.csv", res.history)
    print(f"wrote {out / 'best.ckpt.json'}, {out / 'final.ckpt.json'}, {out / 'history.csv'}")
    print(f"best step {res.best_step}")
    for tag, m in (("best", res.model), ("final", res.final_model)):
        print(_nll_line(f"{tag} val NLL", prep.val, m, prep.standardizer))
        print(_nll_line(f"{tag} test NLL", prep.test, m, prep.standardizer))
    return EXIT_OK


# -- eval ---------------------------------------------------------------------------------

def _eval_data(args, ckpt: Checkpoint):
    """Raw rows to evaluate plus an optional exact log-density oracle."""
    if args.data:
        ds = load_csv(args.data, args.header)
        return ds.x, None
    prep = prepare(ckpt.config)
    part = getattr(prep.splits, args.split)
    return part.x, part.logpdf


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    x_raw, oracle = _eval_data(args, ckpt)
    if x_raw.shape[1] != model.D:
        raise DataError(f"data has {x_raw.shape[1]} columns but the model expects {model.D}")
    st = ckpt.standardizer
    print(_nll_line(f"{args.split if not args.data else 'data'} NLL", st.apply(x_raw), model, st))
    if oracle is not None:
        true_nll = -float(np.mean(oracle(x_raw)))
        raw_nll = -float(np.mean(model.log_prob_raw(x_raw)))
        print(f"true NLL (oracle): {true_nll:.5f} nats (raw), gap {raw_nll - true_nll:.5f}")
    return EXIT_OK


# -- sample -------------------------------------------------------------------------------

def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    res = model.sample(args.n, seed=args.seed, tol=args.tol, max_iter=args.max_iter)
    x = ckpt.standardizer.invert(res.x)
    header = ["x"] if model.D == 1 else ["x", "y"] if model.D == 2 else [f"x{j}" for j in range(model.D)]
    save_csv(args.out, x, header)
    print(f"wrote {args.n} samples to {args.out}")
    for name, it in res.stats.mean_iterations().items():
        print(f"  {name}: mean iterations {it:.1f}")
    print(f"sequential fallbacks: {res.stats.fallbacks}; non-converged fixed-point runs: {res.stats.nonconverged()}")
    return EXIT_OK


# -- density grid -------------------------------------------------------------------------

def cmd_density_grid(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    if model.D > 2:
        raise ConfigError(f"density-grid supports D=1 or D=2 models, got D={model.D}; "
                          "marginal slices of higher-dimensional models are unsupported")
    if args.resolution < 2:
        raise ConfigError(f"--resolution must be >= 2, got {args.resolution}")
    b = args.bounds
    if model.D == 1:
        xs = np.linspace(b[0], b[1], args.resolution)
        lp = model.log_prob_raw(xs[:, None])
        lines = ["x,log_density"] + [f"{u!r},{v!r}" for u, v in zip(xs.tolist(), lp.tolist())]
    else:
        if len(b) != 4:
            raise ConfigError("--bounds needs four values (xmin xmax ymin ymax) for a 2D model")
        gx = np.linspace(b[0], b[1], args.resolution)
        gy = np.linspace(b[2], b[3], args.resolution)
        pts = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
        lp = model.log_prob_raw(pts)
        lines = ["x,y,log_density"] + [f"{u!r},{v!r},{w!r}" for (u, v), w in zip(pts.tolist(), lp.tolist())]
    atomic_write(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} grid points to {args.out}")
    return EXIT_OK


# -- reconstruction analysis ----------------------------------------------------------

def _caps(text: str) -> list:
    try:
        caps = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--caps must be comma-separated integers, got {text!r}") from None
    if not caps or caps[0] < 1 or any(b <= a for a, b in zip(caps, caps[1:])):
        raise ConfigError(f"--caps must be a non-empty ascending list of positive integers, got {text!r}")
    return caps


def recon_curve(model, x, caps, tol):
    """Rows of ``(cap, mean l2 error, fraction of layer-row inversions converged)``."""
    rows, last_stats = [], None
    for cap in caps:
        _, err, stats = model.reconstruct(x, max_iter=cap, tol=tol)
        rows.append((cap, err, stats.row_convergence_fraction(cap)))
        last_stats = stats
    return rows, last_stats


def cmd_recon_analysis(args) -> int:
    caps = _caps(args.caps)
    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.model()
    if args.data:
        x = ckpt.standardizer.apply(load_csv(args.data, args.header).x)
    else:
        x = prepare(ckpt.config).test
    if x.shape[1] != model.D:
        raise DataError(f"data has {x.shape[1]} columns but the model expects {model.D}")
    x = x[:args.n]
    rows, stats = recon_curve(model, x, caps, args.tol)
    lines = ["max_iter,mean_l2_error,converged_fraction"] + [f"{c},{e!r},{f!r}" for c, e, f in rows]
    atomic_write(args.out, "\n".join(lines) + "\n")
    for c, e, f in rows:
        print(f"cap {c:>5}: mean l2 error {e:.3e}, converged {100 * f:.2f}%")
    print(f"per-layer inversions converged within {args.report_cap} iterations "
          f"(cap {caps[-1]} run): {100 * stats.row_convergence_fraction(args.report_cap):.2f}%")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="sinflow", description="Sinusoidal Flow density estimation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    m, t = ModelSpec(), TrainConfig()
    # override flags default to None so only explicit ones replace config values
    tr = sub.add_parser("train", help="train a flow from a JSON config")
    tr.add_argument("--config", help="run config JSON; flags below override it")
    tr.add_argument("--out", help="output directory (default: config 'out', else runs/default)")
    tr.add_argument("--seed", type=int, help="run seed for data, split, init and batches (default: 0)")
    tr.add_argument("--dataset", help="toy dataset name, replacing the config dataset")
    defaults = {"steps": t.steps, "batch_size": t.batch_size, "lr": t.lr, "schedule": t.schedule,
                "blocks": m.blocks, "dscales": m.dscales, "K": m.K, "hidden": ",".join(map(str, m.hidden))}
    for flag, _, name, typ, text in _TRAIN_OVERRIDES:
        tr.add_argument(flag, dest=name, type=typ, help=f"{text} (default: {defaults[name]})")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="report mean NLL of a checkpoint", formatter_class=fmt)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "val", "test"), default="test",
                    help="split of the checkpoint's own dataset")
    ev.add_argument("--data", help="raw CSV to evaluate instead of a split")
    ev.add_argument("--header", action="store_true", help="CSV has a header row")
    ev.set_defaults(func=cmd_eval)

    sa = sub.add_parser("sample", help="draw samples by inverting the flow", formatter_class=fmt)
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--n", type=int, default=1000, help="number of samples")
    sa.add_argument("--seed", type=int, default=0)
    sa.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sa.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    sa.add_argument("--out", default="samples.csv")
    sa.set_defaults(func=cmd_sample)

    dg = sub.add_parser("density-grid", help="export log density on a raw-coordinate grid", formatter_class=fmt)
    dg.add_argument("--checkpoint", required=True)
    dg.add_argument("--bounds", type=float, nargs="+", default=[-4.0, 4.0, -4.0, 4.0],
                    help="xmin xmax [ymin ymax]")
    dg.add_argument("--resolution", type=int, default=100, help="points per axis")
    dg.add_argument("--out", default="density.csv")
    dg.set_defaults(func=cmd_density_grid)

    ra = sub.add_parser("recon-analysis", help="reconstruction error against iteration cap", formatter_class=fmt)
    ra.add_argument("--checkpoint", required=True)
    ra.add_argument("--caps", default=DEFAULT_CAPS, help="ascending iteration caps")
    ra.add_argument("--tol", type=float, default=DEFAULT_TOL)
    ra.add_argument("--n", type=int, default=1000, help="rows of the test split to use")
    ra.add_argument("--data", help="raw CSV to use instead of the test split")
    ra.add_argument("--header", action="store_true", help="CSV has a header row")
    ra.add_argument("--report-cap", type=int, default=70, help="iteration count for the convergence summary")
    ra.add_argument("--out", default="recon.csv")
    ra.set_defaults(func=cmd_recon_analysis)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
