"""Desk-scale experiment runners.

Every runner returns an :class:`ExperimentReport`, a JSON-serialisable record
of the configuration it ran with, its metrics, and per-stage wall-clock time.
Apart from the timing fields a report is a pure function of its config.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, EtaUnreachable, InsufficientData, SizeLimitExceeded
from .features import Dataset, FeatureBag, NegativeBag
from .joint import _as_matrix, train_multiclass
from .kernel_map import KernelMapConfig, embed
from .pooling import PoolConfig, average_pool, compute_svmp, max_pool, pool_dataset, prefix_bag
from .svm import SquaredHingeProblem
from .synth import SynthConfig, _child_seed, generate

SCHEMA = 1
TRAIN_FRACTION = 0.7


@dataclass
class ExperimentReport:
    name: str
    config: dict
    metrics: dict
    timing_ms: dict = field(default_factory=dict)
    seed: int | None = None
    schema: int = SCHEMA
    notes: str = ""

    def __post_init__(self):
        for key, value in _leaves(self.metrics):
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"metric {key} = {value} outside [0, 1]")

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def without_timing(self):
        d = self.to_dict()
        d.pop("timing_ms")
        return d


def _leaves(obj, prefix=""):
    """(path, value) for numeric leaves under keys named like metrics."""
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _leaves(v, f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _leaves(v, f"{prefix}[{i}]")
    elif prefix.rsplit(".", 1)[-1] in ("accuracy", "map", "eta_unreachable_rate"):
        yield prefix, obj


def dataset_fingerprint(ds: Dataset):
    h = hashlib.sha256()
    for bag in ds.bags:
        h.update(bag.source_id.encode())
        h.update(repr(bag.label).encode())
        h.update(np.ascontiguousarray(bag.features).tobytes())
    if ds.negatives is not None:
        h.update(np.ascontiguousarray(ds.negatives.features).tobytes())
    return h.hexdigest()[:16]


class _Clock:
    def __init__(self):
        self.ms = {}

    def __call__(self, stage):
        clock = self

        class _Stage:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.ms[stage] = clock.ms.get(stage, 0.0) + 1e3 * (time.perf_counter() - self.t0)

        return _Stage()


# -- shipped fixture -----------------------------------------------------------

# eta low enough that 10-frame prefixes (anticipation at k = 1) stay poolable
FIXTURE_POOL = PoolConfig(eta=0.2, normalize=True)


def planted_fixture(seed, discriminative_fraction=0.2):
    """3 classes x 20 bags of 50 frames in 16 dimensions, signal-to-noise 20.

    Negatives are drawn tighter than the background (sigma 0.25) so that
    short prefixes can still be separated from them at ``FIXTURE_POOL``.
    """
    cfg = SynthConfig(3, 20, 50, 16, discriminative_fraction, 1.5, 0.075, 1.0, 50, 0.25, seed)
    return generate(cfg)[0]


# -- splits and metrics -------------------------------------------------------


def split_indices(labels, seed, train_fraction=TRAIN_FRACTION):
    """Stratified train/test split; each class keeps at least one bag on each side."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(_child_seed(seed, 2))
    train, test = [], []
    for cls in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 2:
            raise InsufficientData(f"class {cls} has {idx.size} bag(s); a split needs >= 2")
        idx = rng.permutation(idx)
        k = min(max(int(round(train_fraction * idx.size)), 1), idx.size - 1)
        train.extend(idx[:k].tolist())
        test.extend(idx[k:].tolist())
    return sorted(train), sorted(test)


def average_precision(scores, relevant):
    """Mean of precision@rank over the relevant items (ties by stable order)."""
    relevant = np.asarray(relevant, dtype=bool)
    if not relevant.any():
        return None
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    hits = relevant[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, ranks.size + 1) / ranks))


def mean_average_precision(scores, targets, classes):
    """mAP over classes; ``targets`` is a label vector or an ``(m, d)`` indicator matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[:, None] == np.asarray(classes)[None, :]
    aps = [average_precision(scores[:, j], targets[:, j]) for j in range(len(classes))]
    aps = [a for a in aps if a is not None]
    return float(np.mean(aps)) if aps else None


def _metrics(scores, classes, labels):
    pred = np.asarray(classes)[np.argmax(scores, axis=1)]
    return {
        "accuracy": float(np.mean(pred == np.asarray(labels))),
        "map": mean_average_precision(scores, labels, classes),
    }


# -- pooling comparison -------------------------------------------------------


class Fusion(str, enum.Enum):
    SCORE = "score"  # average the classifier scores of the linear and kernelised descriptors
    CONCAT = "concat"  # one classifier on [SVMP, NSVMP]


def _nonneg_shift(train_ds, bags):
    """Offset from the training frames only; held-out frames are clipped at zero."""
    frames = [b.features for b in train_ds.bags] + [train_ds.negatives.features]
    offset = np.vstack(frames).min(axis=0)
    return offset, [np.maximum(b.features - offset, 0.0) for b in bags]


def _subset(ds: Dataset, idx):
    return Dataset([ds.bags[i] for i in idx], ds.negatives, ds.global_mean, ds.centered)


def _evaluate(train: Dataset, test: Dataset, pool_cfg, c2, map_cfg, fusion, threads, clock):
    ytr, yte = train.labels, test.labels
    results, scores, descs = {}, {}, {}

    def fit_and_score(name, dtr, dte):
        with clock(f"train_{name}"):
            bank = train_multiclass(dtr, ytr, c2, threads=threads)
        scores[name] = bank.scores(dte)
        descs[name] = (dtr, dte)
        results[name] = _metrics(scores[name], bank.classes, yte)

    for name, fn in (("average", average_pool), ("max", max_pool)):
        with clock(f"pool_{name}"):
            dtr = np.array([fn(b) for b in train.bags])
            dte = np.array([fn(b) for b in test.bags])
        fit_and_score(name, dtr, dte)
    with clock("pool_svmp"):
        dtr = _as_matrix(pool_dataset(train, pool_cfg, threads))
        dte = _as_matrix(pool_dataset(test, pool_cfg, threads))
    fit_and_score("svmp", dtr, dte)
    if map_cfg is not None:
        with clock("pool_nsvmp"):
            offset, tr_frames = _nonneg_shift(train, train.bags)
            _, te_frames = _nonneg_shift(train, test.bags)
            neg = embed(np.maximum(train.negatives.features - offset, 0.0), map_cfg)
            dtr = _as_matrix([compute_svmp(embed(X, map_cfg), neg, pool_cfg) for X in tr_frames])
            dte = _as_matrix([compute_svmp(embed(X, map_cfg), neg, pool_cfg) for X in te_frames])
        fit_and_score("nsvmp", dtr, dte)
        if fusion is not None:
            fusion = Fusion(fusion)
            if fusion is Fusion.SCORE:
                classes = sorted(set(ytr))
                fused = 0.5 * (scores["svmp"] + scores["nsvmp"])
                results["fusion_score"] = _metrics(fused, classes, yte)
            else:
                dtr = np.hstack([descs["svmp"][0], descs["nsvmp"][0]])
                dte = np.hstack([descs["svmp"][1], descs["nsvmp"][1]])
                fit_and_score("fusion_concat", dtr, dte)
    return results


def _base_config(ds, pool_cfg, split_seed, c2, map_cfg, fusion):
    return {
        "dataset": {"fingerprint": dataset_fingerprint(ds), "bags": len(ds.bags), "dim": ds.dim},
        "pool": pool_cfg.to_dict(),
        "split_seed": split_seed,
        "train_fraction": TRAIN_FRACTION,
        "c2": c2,
        "kernel_map": None if map_cfg is None else {
            "kernel": map_cfg.kernel.value, "order": map_cfg.order, "period": map_cfg.period},
        "fusion": None if fusion is None else Fusion(fusion).value,
    }


def _split(ds, split_seed):
    if ds.negatives is None:
        raise InsufficientData("dataset has no negative bag")
    if any(lab is None for lab in ds.labels):
        raise InsufficientData("every bag needs a label")
    tr, te = split_indices(ds.labels, split_seed)
    return _subset(ds, tr), _subset(ds, te)


def compare_pooling(ds: Dataset, pool_cfg: PoolConfig = PoolConfig(), split_seed=0, *, c2=1.0,
                    map_cfg: KernelMapConfig | None = None, fusion=None, threads=1) -> ExperimentReport:
    """Test accuracy of average, max and SVM pooling under one stratified 70/30 split."""
    pool_cfg.validate()
    train, test = _split(ds, split_seed)
    clock = _Clock()
    metrics = _evaluate(train, test, pool_cfg, c2, map_cfg, fusion, threads, clock)
    cfg = _base_config(ds, pool_cfg, split_seed, c2, map_cfg, fusion)
    cfg["train_ids"] = [b.source_id for b in train.bags]
    cfg["test_ids"] = [b.source_id for b in test.bags]
    return ExperimentReport("compare", cfg, metrics, clock.ms, split_seed)


def anticipation_curve(ds: Dataset, pool_cfg: PoolConfig = PoolConfig(), split_seed=0, *, c2=1.0,
                       threads=1) -> ExperimentReport:
    """Accuracy when only the first ``ceil(k n / 5)`` frames of each bag are seen, k = 1..5."""
    pool_cfg.validate()
    train, test = _split(ds, split_seed)
    clock = _Clock()
    curve = {}
    for k in range(1, 6):
        tr = replace(train, bags=tuple(prefix_bag(b, k) for b in train.bags))
        te = replace(test, bags=tuple(prefix_bag(b, k) for b in test.bags))
        curve[str(k)] = _evaluate(tr, te, pool_cfg, c2, None, None, threads, clock)
    cfg = _base_config(ds, pool_cfg, split_seed, c2, None, None)
    return ExperimentReport("anticipate", cfg, {"k": curve}, clock.ms, split_seed)


# -- parameter sweeps ---------------------------------------------------------


class SweepParameter(str, enum.Enum):
    ETA = "eta"
    C = "c"
    POS_BAG_SIZE = "pos_bag_size"
    NEG_BAG_SIZE = "neg_bag_size"


def fixed_c_config(pool_cfg: PoolConfig, c):
    """A schedule holding the single value ``c`` (eta 0 accepts the first fit)."""
    return replace(pool_cfg, eta=0.0, c_init=c / pool_cfg.c_multiplier, c_cap=c)


def _subsample_frames(ds, m, seed):
    rng = np.random.default_rng(_child_seed(seed, 3))
    bags = []
    for bag in ds.bags:
        if m > bag.n:
            raise ConfigError(f"pos_bag_size {m} exceeds bag length {bag.n}")
        keep = np.sort(rng.permutation(bag.n)[:m])
        bags.append(replace(bag, features=bag.features[keep]))
    return replace(ds, bags=tuple(bags))


def _subsample_negatives(ds, m, seed):
    neg = ds.negatives
    if m > neg.n:
        raise ConfigError(f"neg_bag_size {m} exceeds the {neg.n} available negatives")
    rng = np.random.default_rng(_child_seed(seed, 4))
    keep = np.sort(rng.permutation(neg.n)[:m])
    return replace(ds, negatives=NegativeBag(neg.features[keep], neg.origin))


def sweep(ds: Dataset, parameter, grid, pool_cfg: PoolConfig = PoolConfig(), split_seed=0, *, c2=1.0,
          threads=1) -> ExperimentReport:
    """Re-run :func:`compare_pooling` along one parameter.

    Bags whose eta cannot be reached do not abort the sweep: the point gets
    ``svmp: None`` and the fraction of failing bags is recorded.
    """
    try:
        parameter = SweepParameter(parameter)
    except ValueError:
        raise ConfigError(f"unknown sweep parameter {parameter!r}") from None
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    pool_cfg.validate()
    clock = _Clock()
    series = []
    for value in grid:
        cfg, data = pool_cfg, ds
        if parameter is SweepParameter.ETA:
            cfg = replace(pool_cfg, eta=float(value))
        elif parameter is SweepParameter.C:
            cfg = fixed_c_config(pool_cfg, float(value))
        elif parameter is SweepParameter.POS_BAG_SIZE:
            data = _subsample_frames(ds, int(value), split_seed)
        else:
            data = _subsample_negatives(ds, int(value), split_seed)
        cfg.validate()
        train, test = _split(data, split_seed)
        point = {"value": value, "eta_unreachable_rate": 0.0}
        try:
            point.update(_evaluate(train, test, cfg, c2, None, None, threads, clock))
        except EtaUnreachable:
            failed = _eta_failures(data, cfg, threads)
            point["eta_unreachable_rate"] = len(failed) / len(data.bags)
            point["failed_bags"] = failed
            point.update(_evaluate_baselines(train, test, c2, threads, clock))
            point["svmp"] = None
        series.append(point)
    cfg_out = _base_config(ds, pool_cfg, split_seed, c2, None, None)
    cfg_out["parameter"] = parameter.value
    cfg_out["grid"] = grid
    return ExperimentReport("sweep", cfg_out, {"series": series}, clock.ms, split_seed)


def _eta_failures(ds, cfg, threads):
    try:
        pool_dataset(ds, cfg, threads)
    except EtaUnreachable as exc:
        return sorted(str(f.bag_id) for f in getattr(exc, "failures", [exc]))
    return []


def _evaluate_baselines(train, test, c2, threads, clock):
    out = {}
    for name, fn in (("average", average_pool), ("max", max_pool)):
        dtr = np.array([fn(b) for b in train.bags])
        dte = np.array([fn(b) for b in test.bags])
        with clock(f"train_{name}"):
            bank = train_multiclass(dtr, train.labels, c2, threads=threads)
        out[name] = _metrics(bank.scores(dte), bank.classes, test.labels)
    return out


# -- timing -------------------------------------------------------------------


def timing_curve(frame_counts, dim, pool_cfg: PoolConfig = PoolConfig(), *, neg_count=50, seed=0,
                 repeats=3) -> ExperimentReport:
    """Per-descriptor wall-clock time against bag length, best of ``repeats``.

    Bags are standard Gaussian frames with a shifted cluster making up a
    fifth of the bag; negatives are white noise.
    """
    counts = [int(c) for c in frame_counts]
    if not counts:
        raise ConfigError("frame_counts is empty")
    if any(c < 1 for c in counts) or counts != sorted(counts):
        raise ConfigError("frame_counts must be positive and ascending")
    pool_cfg.validate()
    rng = np.random.default_rng(_child_seed(seed, 5))
    neg = rng.standard_normal((neg_count, dim))
    compute_svmp(rng.standard_normal((counts[0], dim)), neg, pool_cfg)  # warm-up
    times = []
    for n in counts:
        X = rng.standard_normal((n, dim))
        X[: max(1, n // 5), 0] += 3.0
        best = math.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            compute_svmp(X, neg, pool_cfg)
            best = min(best, time.perf_counter() - t0)
        times.append(1e3 * best)
    slope = float(np.polyfit(counts, times, 1)[0]) if len(counts) > 1 else None
    cfg = {"frame_counts": counts, "dim": dim, "pool": pool_cfg.to_dict(), "neg_count": neg_count,
           "repeats": repeats}
    timing = {"per_descriptor_ms": dict(zip(map(str, counts), times)), "slope_ms_per_frame": slope}
    return ExperimentReport("timing", cfg, {}, timing, seed)


# -- relaxation diagnostic ----------------------------------------------------


def enumeration_gap(bag, neg, eta, pool_cfg: PoolConfig = PoolConfig()):
    """Relative gap between the C-schedule descriptor and the best eta-feasible relabelling.

    Every subset ``S`` of the bag with ``|S| >= eta n`` is labelled positive,
    the rest of the bag joins the negatives, and the SVM is solved at the C
    the schedule ended on. Returns ``(schedule - best) / |best|``; since the whole
    bag is one of the subsets the gap is never negative.
    """
    P = bag.features if isinstance(bag, FeatureBag) else np.atleast_2d(np.asarray(bag, dtype=np.float64))
    N = neg.features if hasattr(neg, "features") else np.atleast_2d(np.asarray(neg, dtype=np.float64))
    n = P.shape[0]
    if n > 12:
        raise SizeLimitExceeded(f"enumeration limited to bags of <= 12 frames, got {n}")
    cfg = replace(pool_cfg, eta=eta)
    desc = compute_svmp(P, N, cfg)
    c = desc.c_used
    X = np.vstack([P, N])
    y_all = np.concatenate([np.ones(n), -np.ones(N.shape[0])])
    alg = SquaredHingeProblem(X, y_all, cfg.method).solve(c, cfg.tol, cfg.max_iter).objective
    best = math.inf
    min_size = max(1, math.ceil(eta * n - 1e-12))
    for size in range(min_size, n + 1):
        for subset in itertools.combinations(range(n), size):
            y = -np.ones(X.shape[0])
            y[list(subset)] = 1.0
            fit = SquaredHingeProblem(X, y, cfg.method).solve(c, cfg.tol, cfg.max_iter)
            best = min(best, fit.objective)
    return (alg - best) / abs(best)
