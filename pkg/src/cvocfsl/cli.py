"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Reports land in ``--out`` or, failing that, in ``$CVOCFSL_OUT_DIR`` (default: cwd).
"""
import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (EpisodeShape, RunConfig, SyntheticSpec, apply_point, episode_rows, parse_grid,
                    run_episodes, summarize, synthetic_sin)
from .cst import CstConfig
from .cvoc import CvocConfig
from .episodes import load_embeddings, load_semantic_table
from .errors import InputError
from .pipeline import METHODS, PipelineConfig
from .propagation import PropagationConfig
from .semantic import SinTrainConfig, load_sin, save_sin, sin_train

OUT_DIR_ENV = "CVOCFSL_OUT_DIR"
SCHEMA_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return None if math.isnan(f) or math.isinf(f) else f
    return obj


def _add_data_args(p):
    g = p.add_argument_group("data")
    src = g.add_mutually_exclusive_group()
    src.add_argument("--synthetic", metavar="SPEC", nargs="?", const="",
                     help="synthetic Gaussian tasks, e.g. 'sep=6,d=32,dt=16'")
    src.add_argument("--embeddings", metavar="PATH", help="embedding file (csv or packed binary)")
    g.add_argument("--format", choices=["csv", "binary"], help="embedding file format")
    g.add_argument("--semantic", metavar="PATH", help="semantic vectors CSV: class_id,t0,t1,...")
    g.add_argument("--n", type=int, default=5, help="ways")
    g.add_argument("--k", type=int, default=1, help="shots")
    g.add_argument("--q", type=int, default=15, help="queries per class")
    g.add_argument("--u", type=int, default=100, help="unlabeled samples per class")
    g.add_argument("--distractors", type=int, default=0, help="distractor classes")
    g.add_argument("--distractor-per-class", type=int, default=None,
                   help="unlabeled samples per distractor class (default: --u)")
    g.add_argument("--seed", type=int, default=0, help="root seed")


def _add_method_args(p):
    g = p.add_argument_group("clustering")
    g.add_argument("--lam", type=float, default=0.01)
    g.add_argument("--w-intra", type=float, default=0.5)
    g.add_argument("--w-inter", type=float, default=0.5)
    g.add_argument("--cvoc-iters", type=int, default=10)
    g.add_argument("--variance-mode", choices=["classwise", "episode"], default="classwise")
    g.add_argument("--no-clamp", action="store_true", help="let support rows be relabelled")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--tau", type=float, default=0.1)
    g.add_argument("--eps-log", type=float, default=1e-8)
    g = p.add_argument_group("separation tuner")
    g.add_argument("--cst-eps", type=float, default=2.0)
    g.add_argument("--cst-beta0", type=float, default=0.05)
    g.add_argument("--cst-gamma", type=float, default=0.005)
    g.add_argument("--cst-alpha", type=float, default=0.02)
    g.add_argument("--cst-iters", type=int, default=1)
    g = p.add_argument_group("propagation")
    g.add_argument("--alpha-ep", type=float, default=0.5)
    g.add_argument("--alpha-lp", type=float, default=0.5)
    g.add_argument("--knn", type=int, default=10)
    g.add_argument("--sigma", type=float, default=None)
    g.add_argument("--unbalanced", action="store_true", help="plain (unbalanced) label propagation")
    g = p.add_argument_group("pseudo-labeling and semantics")
    g.add_argument("--keep", type=float, default=80.0, help="percent of the pool kept")
    g.add_argument("--blend", type=float, default=0.9, help="prototype blend weight s")
    g.add_argument("--no-recompute", action="store_true",
                   help="pseudo-label from pre-refinement logits")
    g.add_argument("--sin-checkpoint", metavar="PATH")
    _add_sin_train_args(p)


def _add_sin_train_args(p):
    g = p.add_argument_group("semantic network training")
    g.add_argument("--sin-hidden", type=int, default=32)
    g.add_argument("--sin-epochs", type=int, default=300)
    g.add_argument("--sin-batch", type=int, default=32)
    g.add_argument("--sin-lr", type=float, default=3e-3)
    g.add_argument("--sin-wd", type=float, default=1e-4)
    g.add_argument("--sin-seed", type=int, default=0)


def _sin_cfg(a):
    return SinTrainConfig(epochs=a.sin_epochs, batch_size=a.sin_batch, lr=a.sin_lr,
                          weight_decay=a.sin_wd, seed=a.sin_seed)


def build_parser():
    p = _Parser(prog="cvocfsl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("episode", help="run one episode")
    _add_data_args(e)
    _add_method_args(e)
    e.add_argument("--method", choices=METHODS, default="full")
    e.add_argument("--out", metavar="PATH")

    b = sub.add_parser("bench", help="compare methods over a shared seeded episode sequence")
    _add_data_args(b)
    _add_method_args(b)
    b.add_argument("--methods", default="kmeans,cvoc+cst", help="comma-separated methods")
    b.add_argument("--episodes", type=int, default=1000)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", metavar="PREFIX", help="writes PREFIX.json, PREFIX.csv, PREFIX.episodes.csv")

    s = sub.add_parser("sweep", help="grid over w_intra/w_inter, keep or blend")
    _add_data_args(s)
    _add_method_args(s)
    s.add_argument("--method", choices=METHODS, default="full")
    s.add_argument("--grid", required=True, help="e.g. 'w_intra=0,0.5,1;w_inter=0,0.5,1' or 'keep=0,20,40'")
    s.add_argument("--episodes", type=int, default=200)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", metavar="PREFIX", help="writes PREFIX.csv and PREFIX.json")

    t = sub.add_parser("train-sin", help="train and save a semantic injection network")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--synthetic", metavar="SPEC", nargs="?", const="")
    src.add_argument("--embeddings", metavar="PATH", help="base-class embeddings")
    t.add_argument("--format", choices=["csv", "binary"])
    t.add_argument("--semantic", metavar="PATH")
    _add_sin_train_args(t)
    t.add_argument("--out", metavar="PATH", required=True)
    return p


def run_config(a, methods):
    dpc = a.distractor_per_class if a.distractor_per_class is not None else (a.u if a.distractors else 0)
    cvoc = CvocConfig(lam=a.lam, w_intra=a.w_intra, w_inter=a.w_inter, max_iters=a.cvoc_iters,
                      variance_mode=a.variance_mode, clamp_support=not a.no_clamp, tol=a.tol,
                      eps_log=a.eps_log, tau=a.tau)
    cst = CstConfig(eps_margin=a.cst_eps, beta0=a.cst_beta0, gamma=a.cst_gamma, alpha0=a.cst_alpha,
                    iterations=a.cst_iters, w_intra=a.w_intra, w_inter=a.w_inter)
    prop = PropagationConfig(alpha_ep=a.alpha_ep, alpha_lp=a.alpha_lp, knn_k=a.knn, sigma=a.sigma)
    pipe = PipelineConfig(method=methods[0], cvoc=cvoc, cst=cst, propagation=prop,
                          keep_percent=a.keep, blend=a.blend, balanced_lp=not a.unbalanced,
                          recompute_logits=not a.no_recompute)
    shape = EpisodeShape(a.n, a.k, a.q, a.u, a.distractors, dpc)
    synthetic = SyntheticSpec.parse(a.synthetic) if a.synthetic is not None else None
    if synthetic is None and a.embeddings is None:
        raise UsageError("pass --synthetic SPEC or --embeddings PATH")
    return RunConfig(pipeline=pipe, shape=shape, synthetic=synthetic, embeddings=a.embeddings,
                     embeddings_format=a.format, semantic=a.semantic, sin_checkpoint=a.sin_checkpoint,
                     sin_train=_sin_cfg(a), sin_hidden=a.sin_hidden, seed=a.seed,
                     episodes=getattr(a, "episodes", 1), methods=list(methods))


def prepare(run):
    """Load data and, when a method needs it, the semantic network."""
    dataset = None
    if run.embeddings is not None:
        dataset = load_embeddings(run.embeddings, run.embeddings_format, run.semantic)
    elif run.semantic is not None:
        raise InputError("--semantic applies to --embeddings; synthetic tasks carry their own vectors")
    sin = None
    if "full" in run.methods:
        if run.sin_checkpoint:
            sin = load_sin(run.sin_checkpoint)
        elif run.synthetic is not None:
            sin = synthetic_sin(run)
        else:
            raise InputError("method 'full' on embedding files needs --sin-checkpoint")
        if dataset is not None and dataset.semantic is None:
            raise InputError("method 'full' needs --semantic vectors for the episode classes")
    return dataset, sin


def _out_path(arg, default_name):
    if arg:
        return Path(arg)
    return Path(os.environ.get(OUT_DIR_ENV, ".")) / default_name


def _write_json(path, payload):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, allow_nan=False) + "\n")


def _write_csv(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = []
    for r in rows:
        fields.extend(k for k in r if k not in fields)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow(_jsonable(r))


def cmd_episode(a):
    run = run_config(a, [a.method])
    dataset, sin = prepare(run)
    reports = run_episodes(run, dataset, sin)[0]
    payload = {"kind": "episode", "schema_version": SCHEMA_VERSION, "config": run.to_dict(),
               "reports": [r.to_dict() for r in reports]}
    print(json.dumps(_jsonable(payload["reports"][0]), indent=2))
    _write_json(_out_path(a.out, f"episode_{run.seed}.json"), payload)
    return payload


def _methods(text):
    ms = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in ms if m not in METHODS]
    if not ms or bad:
        raise UsageError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    return ms


def cmd_bench(a):
    methods = _methods(a.methods)
    run = run_config(a, methods)
    dataset, sin = prepare(run)
    results = run_episodes(run, dataset, sin, a.workers)
    summary = summarize(results, methods, run.seed)
    rows = episode_rows(results)
    payload = {"kind": "bench", "schema_version": SCHEMA_VERSION, "config": run.to_dict(),
               "summary": summary, "episodes": rows}
    prefix = _out_path(a.out, "bench")
    _write_json(prefix.with_suffix(".json"), payload)
    _write_csv(prefix.with_suffix(".csv"), summary)
    _write_csv(prefix.with_suffix(".episodes.csv"), rows)
    for r in summary:
        print(f"{r['method']:>9}  query {r['query_acc_mean']:.4f} +/- {r['query_acc_ci95']:.4f}"
              f"  pool {r['pool_acc_mean']:.4f} +/- {r['pool_acc_ci95']:.4f}")
    return payload


def cmd_sweep(a):
    run = run_config(a, [a.method])
    dataset, sin = prepare(run)
    rows = []
    for point in parse_grid(a.grid):
        r = apply_point(run, point)
        row = summarize(run_episodes(r, dataset, sin, a.workers), [a.method], run.seed)[0]
        rows.append({**point, **row})
        print(", ".join(f"{k}={v:g}" for k, v in point.items()),
              f" query {row['query_acc_mean']:.4f} +/- {row['query_acc_ci95']:.4f}")
    payload = {"kind": "sweep", "schema_version": SCHEMA_VERSION, "config": run.to_dict(),
               "grid": a.grid, "rows": rows}
    prefix = _out_path(a.out, "sweep")
    _write_csv(prefix.with_suffix(".csv"), rows)
    _write_json(prefix.with_suffix(".json"), payload)
    return payload


def cmd_train_sin(a):
    cfg = _sin_cfg(a)
    if a.synthetic is not None:
        run = RunConfig(synthetic=SyntheticSpec.parse(a.synthetic), sin_train=cfg, sin_hidden=a.sin_hidden)
        net = synthetic_sin(run)
    else:
        if not a.semantic:
            raise InputError("training on embeddings needs --semantic")
        ds = load_embeddings(a.embeddings, a.format)
        table = load_semantic_table(a.semantic)
        X = np.asarray(ds.features, dtype=np.float64)
        pairs = [(X[ds.labels == c].mean(axis=0), t)
                 for c, t in zip(range(ds.num_classes), table.lookup(list(range(ds.num_classes))))]
        net = sin_train(pairs, cfg, hidden=a.sin_hidden)
    save_sin(net, a.out)
    print(f"saved semantic network ({net.d}+{net.d_t} -> {net.hidden} -> {net.d}) to {a.out}")
    return net


COMMANDS = {"episode": cmd_episode, "bench": cmd_bench, "sweep": cmd_sweep, "train-sin": cmd_train_sin}


def main(argv=None):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        COMMANDS[a.command](a)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def run():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
