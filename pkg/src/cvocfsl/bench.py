"""Seeded episode runner shared by the ``episode``, ``bench`` and ``sweep`` commands.

Episode ``i`` of a run with root seed ``r`` uses seed ``r + i``; every row of a
report carries that seed, and ``episode --seed r+i`` reproduces it.
"""
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from .episodes import (EmbeddingDataset, generate_synthetic_task, sample_episode,
                       synthetic_prototype_pairs)
from .errors import InputError
from .metrics import mean_ci95
from .pipeline import PipelineConfig, evaluate_episode
from .semantic import SinNetwork, SinTrainConfig, sin_train


@dataclass
class SyntheticSpec:
    separation: float = 6.0
    d: int = 32
    n_classes: Optional[int] = None
    d_t: int = 16
    semantic_seed: int = 0
    base_classes: int = 64

    @classmethod
    def parse(cls, text):
        """Parse ``"sep=6,d=32,classes=10,dt=16"``."""
        keys = {"sep": "separation", "separation": "separation", "d": "d", "classes": "n_classes",
                "dt": "d_t", "sem_seed": "semantic_seed", "base": "base_classes"}
        spec = cls()
        if not text:
            return spec
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise InputError(f"bad synthetic option {part!r}; expected key=value")
            k, v = (s.strip() for s in part.split("=", 1))
            if k not in keys:
                raise InputError(f"unknown synthetic option {k!r}")
            attr = keys[k]
            try:
                setattr(spec, attr, float(v) if attr == "separation" else int(v))
            except ValueError:
                raise InputError(f"bad value for {k}: {v!r}") from None
        return spec


@dataclass
class EpisodeShape:
    n_way: int = 5
    k_shot: int = 1
    n_query: int = 15
    n_unlabeled: int = 100
    distractor_classes: int = 0
    distractor_per_class: int = 0


@dataclass
class RunConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    shape: EpisodeShape = field(default_factory=EpisodeShape)
    synthetic: Optional[SyntheticSpec] = None
    embeddings: Optional[str] = None
    embeddings_format: Optional[str] = None
    semantic: Optional[str] = None
    sin_checkpoint: Optional[str] = None
    sin_train: SinTrainConfig = field(default_factory=lambda: SinTrainConfig(epochs=300, batch_size=32, lr=3e-3))
    sin_hidden: int = 32
    seed: int = 0
    episodes: int = 1
    methods: List[str] = field(default_factory=lambda: ["full"])

    def to_dict(self):
        return asdict(self)


def make_episode(run, seed, dataset: Optional[EmbeddingDataset] = None):
    sh = run.shape
    if run.synthetic is not None:
        sp = run.synthetic
        return generate_synthetic_task(
            n_classes=sp.n_classes, d=sp.d, separation=sp.separation, n_way=sh.n_way,
            k_shot=sh.k_shot, n_query=sh.n_query, n_unlabeled=sh.n_unlabeled,
            distractor_classes=sh.distractor_classes, distractor_per_class=sh.distractor_per_class,
            seed=seed, d_t=sp.d_t, semantic_seed=sp.semantic_seed)
    if dataset is None:
        raise InputError("no data source: pass a synthetic spec or an embeddings file")
    return sample_episode(dataset, sh.n_way, sh.k_shot, sh.n_query, sh.n_unlabeled,
                          sh.distractor_classes, sh.distractor_per_class, seed)


def synthetic_sin(run):
    """Train the semantic network on a base world disjoint from every episode."""
    sp = run.synthetic
    P, T = synthetic_prototype_pairs(sp.base_classes, sp.d, sp.separation, sp.d_t,
                                     seed=run.sin_train.seed, semantic_seed=sp.semantic_seed)
    return sin_train(list(zip(P, T)), run.sin_train, hidden=run.sin_hidden)


def _evaluate(args):
    run, seed, dataset, sin = args
    ep = make_episode(run, seed, dataset)
    rows = []
    for m in run.methods:
        cfg = replace(run.pipeline, method=m)
        rows.append(evaluate_episode(ep, cfg, sin=sin if m == "full" else None, seed=seed))
    return rows


def run_episodes(run, dataset=None, sin: Optional[SinNetwork] = None, workers=1):
    """Evaluate every method on episodes ``seed .. seed+episodes-1``; rows in episode order."""
    if run.episodes < 1:
        raise InputError("episodes must be >= 1")
    jobs = [(run, run.seed + i, dataset, sin) for i in range(run.episodes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_evaluate(j) for j in jobs]
    return results


def summarize(results, methods, root_seed):
    rows = []
    for mi, m in enumerate(methods):
        q = [r[mi].query_accuracy for r in results]
        p = [r[mi].pool_accuracy for r in results]
        row = {"method": m, "episodes": len(results), "root_seed": root_seed,
               "query_acc_mean": float(np.mean(q)), "query_acc_ci95": 0.0,
               "pool_acc_mean": float(np.nanmean(p)) if not np.all(np.isnan(p)) else float("nan"),
               "pool_acc_ci95": 0.0}
        if len(results) > 1:
            row["query_acc_ci95"] = mean_ci95(q)[1]
            pv = np.asarray(p)[~np.isnan(p)]
            row["pool_acc_ci95"] = mean_ci95(pv)[1] if pv.size > 1 else 0.0
        rows.append(row)
    return rows


def episode_rows(results):
    out = []
    for i, reports in enumerate(results):
        for r in reports:
            out.append({"episode": i, "seed": r.seed, "method": r.method,
                        "query_accuracy": r.query_accuracy, "pool_accuracy": r.pool_accuracy})
    return out


SWEEP_KEYS = {"w_intra", "w_inter", "keep", "blend"}


def parse_grid(text):
    """``"w_intra=0,0.5,1;w_inter=0,0.5"`` -> ordered list of parameter dicts."""
    axes: Dict[str, List[float]] = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise InputError(f"bad grid axis {part!r}")
        k, vals = (s.strip() for s in part.split("=", 1))
        if k not in SWEEP_KEYS:
            raise InputError(f"cannot sweep {k!r}; choose from {sorted(SWEEP_KEYS)}")
        try:
            axes[k] = [float(v) for v in vals.split(",") if v.strip()]
        except ValueError:
            raise InputError(f"bad grid values for {k}") from None
        if not axes[k]:
            raise InputError(f"empty grid axis {k}")
    if not axes:
        raise InputError("empty grid")
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def apply_point(run, point):
    pc = run.pipeline
    cvoc, cst = pc.cvoc, pc.cst
    if "w_intra" in point:
        cvoc = replace(cvoc, w_intra=point["w_intra"])
        cst = replace(cst, w_intra=point["w_intra"])
    if "w_inter" in point:
        cvoc = replace(cvoc, w_inter=point["w_inter"])
        cst = replace(cst, w_inter=point["w_inter"])
    pc = replace(pc, cvoc=cvoc, cst=cst,
                 keep_percent=point.get("keep", pc.keep_percent),
                 blend=point.get("blend", pc.blend))
    return replace(run, pipeline=pc)
