"""Command line: ``chaosnet <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 finished but
some run diverged.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _floats(text):
    """``a,b,c`` or ``start:stop:count`` (inclusive linspace)."""
    if ":" in text:
        a, b, n = text.split(":")
        return [float(v) for v in np.linspace(float(a), float(b), int(n))]
    return [float(v) for v in text.split(",") if v]


def _kv(pairs):
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise ValueError(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _dataset(args, profile):
    from .experiments.config import PROFILES

    if args.dataset.startswith("synth2d"):
        kind = args.dataset.split(":", 1)[1] if ":" in args.dataset else "clusters"
        return {"name": "synth2d", "kind": kind, "seed": args.seed}
    p = PROFILES[profile]
    d = {"name": "mnist", "n_train": p["n_train"], "n_test": p["n_test"]}
    if getattr(args, "data_dir", None):
        d["data_dir"] = args.data_dir
    return d


def cmd_fetch_data(args):
    from .data import fetch_mnist

    fetch_mnist(args.dir, mirrors=args.mirror or None)
    return EXIT_OK


def cmd_train(args):
    from .experiments.config import ExperimentConfig, PROFILES, load_config
    from .experiments.sweep import load_dataset, model_kwargs
    from . import models as M
    from .training import TrainingDivergenceError, train

    if args.config:
        cfg = load_config(args.config)
    else:
        p = PROFILES[args.profile]
        tr = {"epochs": args.epochs or p["epochs"], "seed": args.seed}
        if args.lr is not None:
            tr["lr"] = args.lr
        cfg = ExperimentConfig(family=args.family, model=_kv(args.set), train=tr,
                               dataset=_dataset(args, args.profile), out_dir=args.out, seed=args.seed,
                               profile=args.profile)
    train_set, test_set = load_dataset(cfg.dataset)
    model = M.build({"family": cfg.family, **model_kwargs(cfg, 0, 0)}, seed=cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    cfg.to_json(os.path.join(args.out, "config.json"))
    try:
        hist = train(model, train_set, test_set, cfg.train_config(),
                     on_epoch=lambda h: print(f"epoch {h.epochs[-1]}: train_loss {h.train_loss[-1]:.4f} "
                                              f"test_acc {h.test_acc[-1]:.4f}", flush=True))
    except TrainingDivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    if hist.best_params is not None and not args.keep_last:
        model.set_params(hist.best_params)
    model.save(os.path.join(args.out, "checkpoint"))
    hist.to_csv(os.path.join(args.out, "history.csv"))
    hist.to_json(os.path.join(args.out, "summary.json"), cfg.tol)
    print(json.dumps(hist.summary(cfg.tol)))
    return EXIT_OK


def cmd_sweep(args):
    from .experiments.config import load_config, preset
    from .experiments.sweep import run_sweep

    if args.config:
        cfg = load_config(args.config)
        if args.profile:
            cfg = cfg.with_profile(args.profile)
    else:
        cfg = preset(args.preset, args.profile or "desk", seed=args.seed)
    d = cfg.to_dict()
    if args.out:
        d["out_dir"] = args.out
    if args.seed is not None and args.config:
        d["seed"] = args.seed
    if args.epochs:
        d["train"]["epochs"] = args.epochs
    if args.ftmle_samples is not None:
        d["ftmle_samples"] = args.ftmle_samples
    cfg = type(cfg).from_dict(d)
    grid = run_sweep(cfg, jobs=args.jobs, resume=not args.no_resume, log=print)
    print(f"grid written to {cfg.out_dir}")
    return EXIT_DIVERGED if grid.any_diverged else EXIT_OK


def cmd_bifurcation(args):
    from .experiments.analysis import bifurcation_scan, write_bifurcation_csv

    rows = bifurcation_scan(args.family, _floats(args.values), T=args.T, dim=args.dim, dt=args.dt,
                            n_init=args.n_init, seed=args.seed, mle_T=args.mle_T)
    write_bifurcation_csv(args.out, rows)
    for r in rows:
        print(f"{r['param']:g}: mle {r['mle']:.4f} points {len(r['points'])} {r['status']}")
    return EXIT_DIVERGED if any(r["status"] != "ok" for r in rows) else EXIT_OK


def cmd_mle(args):
    from .experiments.analysis import _initial, _system
    from .lyapunov import lyapunov_time, mle_benettin
    from .numerics import RngStream

    gen = RngStream(args.seed, 3).generator()
    sysm = _system(args.family, args.param, args.dim)
    x0 = _initial(args.family, sysm, gen)
    if args.family == "esn":
        mle = mle_benettin(sysm, x0, int(args.T_total), 1, rng=gen)
    else:
        dt = args.dt or (0.005 if args.family == "csto" else 0.01)
        renorm = args.renorm or (0.1 if args.family == "csto" else 1.0)
        mle = mle_benettin(sysm, x0, args.T_total, renorm, dt=dt, rng=gen)
    lt = lyapunov_time(mle)
    print(json.dumps({"family": args.family, "param": args.param, "mle": mle,
                      "lyapunov_time": "inf" if math.isinf(lt) else lt}))
    return EXIT_OK


def _checkpoint_inputs(args, model):
    from .data import load_mnist, synth_2d

    if args.dataset.startswith("synth2d"):
        kind = args.dataset.split(":", 1)[1] if ":" in args.dataset else "clusters"
        ds, grid = synth_2d(kind, 1000, args.samples, seed=args.seed)
        return grid, None, True
    te = load_mnist("test", getattr(args, "data_dir", None)).subset(args.samples)
    return te.inputs, te.labels, False


def cmd_ftmle(args):
    from .experiments.analysis import ftmle_map, ftmle_report
    from .models import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    X, _, is_grid = _checkpoint_inputs(args, model)
    layers = args.layers.split(",") if args.layers else None
    rep = ftmle_report(model, X, layers=layers, out_csv=args.out, seed=args.seed)
    if is_grid and args.map:
        ftmle_map(model, X, out_csv=args.map, seed=args.seed)
    if args.plot:
        from .experiments.plotting import ridgeline_svg

        with open(args.plot, "w") as fh:
            fh.write(ridgeline_svg(args.out))
    summary = {"overall": rep.overall.summary(), "layers": {n: r.summary() for n, r in rep.per_layer}}
    print(json.dumps(summary))
    return EXIT_OK


def cmd_pca(args):
    from .experiments.analysis import pca_states
    from .models import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    X, y, _ = _checkpoint_inputs(args, model)
    res = pca_states(model, X, y if y is not None else np.zeros(len(X), int), args.stage, out_csv=args.out)
    print(json.dumps({"explained_variance": res["explained_variance"].tolist(),
                      "total_variance": res["total_variance"]}))
    return EXIT_OK


def cmd_noise(args):
    from .data import load_mnist
    from .experiments.analysis import noise_study, write_rows_csv
    from .models import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    te = load_mnist("test", args.data_dir).subset(args.samples)
    rows = noise_study(model, te.inputs, te.labels, _floats(args.sn), args.kinds.split(","),
                       args.trials, args.seed)
    write_rows_csv(args.out, rows, ["kind", "sn_ratio", "mean_error", "std_error", "clean_error", "trials"])
    for r in rows:
        print(f"{r['kind']} sn={r['sn_ratio']:g}: error {r['mean_error']:.4f} +- {r['std_error']:.4f}")
    return EXIT_OK


def cmd_plot(args):
    from .experiments.plotting import plot

    plot(args.csv, args.out, kind=args.kind, value=args.value, lyapunov_csv=args.lyapunov,
         x=args.x, y=args.y, color=args.color)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="chaosnet", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--profile", choices=["desk", "paper"], default=None)
    ap.add_argument("--jobs", type=int, default=1)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        # accept the global flags after the subcommand too
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--profile", choices=["desk", "paper"], default=argparse.SUPPRESS)
        p.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
        return p

    p = common(sub.add_parser("fetch-data", help="download MNIST IDX files and verify checksums"))
    p.add_argument("--dir", default=None)
    p.add_argument("--mirror", action="append", help="base URL; repeat to add fallbacks")
    p.set_defaults(func=cmd_fetch_data)

    p = common(sub.add_parser("train", help="train one model and save a checkpoint"))
    p.add_argument("--family", default="ffesn")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="model builder argument")
    p.add_argument("--config")
    p.add_argument("--dataset", default="mnist", help="mnist or synth2d[:clusters|rings|moons]")
    p.add_argument("--data-dir")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--keep-last", action="store_true", help="save final rather than best parameters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("sweep", help="train a (parameter x horizon) grid"))
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--config")
    g.add_argument("--preset", choices=["ffesn", "lorenz", "csto"])
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--ftmle-samples", type=int)
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("bifurcation", help="final-quarter extrema and MLE over a parameter range"))
    p.add_argument("--family", choices=["lorenz", "csto", "esn", "linear"], required=True)
    p.add_argument("--values", required=True, help="a,b,c or start:stop:count")
    p.add_argument("--T", type=float, default=20.0)
    p.add_argument("--dim", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--n-init", type=int, default=4)
    p.add_argument("--mle-T", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bifurcation)

    p = common(sub.add_parser("mle", help="maximal Lyapunov exponent of one autonomous backbone"))
    p.add_argument("--family", choices=["lorenz", "csto", "esn", "linear"], required=True)
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--dim", type=int, default=20)
    p.add_argument("--T-total", type=float, default=100.0)
    p.add_argument("--renorm", type=float)
    p.add_argument("--dt", type=float)
    p.set_defaults(func=cmd_mle)

    for name, fn, helptext in (("ftmle", cmd_ftmle, "per-sample FTMLE of a checkpoint"),
                               ("pca", cmd_pca, "PCA of backbone states"),
                               ("noise", cmd_noise, "error under observational/dynamical noise")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", default="mnist")
        p.add_argument("--data-dir")
        p.add_argument("--samples", type=int, default=200 if name != "noise" else 2000)
        p.add_argument("--out", required=True)
        p.set_defaults(func=fn)
    sub.choices["ftmle"].add_argument("--layers", help="comma separated layer names")
    sub.choices["ftmle"].add_argument("--map", help="also write an (x, y, lambda) grid CSV for 2-D inputs")
    sub.choices["ftmle"].add_argument("--plot", help="write a ridgeline SVG")
    sub.choices["pca"].add_argument("--stage", choices=["initial", "final"], default="final")
    sub.choices["noise"].add_argument("--sn", default="1e12,1e3,1e2,1e1,1,0.1")
    sub.choices["noise"].add_argument("--kinds", default="observational,dynamical")
    sub.choices["noise"].add_argument("--trials", type=int, default=5)

    p = common(sub.add_parser("plot", help="render a CSV artifact as SVG"))
    p.add_argument("--csv", required=True)
    p.add_argument("--kind", choices=["heatmap", "ridgeline", "scatter"])
    p.add_argument("--value", default="loglabel")
    p.add_argument("--lyapunov")
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--color")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None):
    from .data import DataError, IdxParseError
    from .dynamics import DivergenceError
    from .experiments.config import ConfigError
    from .experiments.plotting import CsvParseError
    from .models import CheckpointError

    parser = build_parser()
    args = parser.parse_args(argv)
    if args.profile is None and args.command != "sweep":
        args.profile = "desk"
    try:
        return args.func(args)
    except (DataError, IdxParseError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, CheckpointError, CsvParseError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
