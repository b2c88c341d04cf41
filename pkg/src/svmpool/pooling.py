"""SVM pooling descriptors and the average/max pooling baselines."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import BagTooShort, ConfigError, DimensionMismatch, EtaUnreachable, InsufficientData
from .features import FeatureBag, NegativeBag
from .svm import Hyperplane, SquaredHingeProblem, predict


@dataclass(frozen=True)
class PoolConfig:
    eta: float = 0.9
    c_init: float = 1e-4
    c_multiplier: float = 2.0
    c_cap: float = 1e4
    max_outer_iter: int = 64
    tol: float | None = None
    max_iter: int = 100
    normalize: bool = False
    method: str = "auto"

    def validate(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if not self.c_init > 0:
            raise ConfigError("c_init must be > 0")
        if not self.c_multiplier > 1:
            raise ConfigError("c_multiplier must be > 1")
        if not self.c_cap > 0:
            raise ConfigError("c_cap must be > 0")
        if self.max_outer_iter < 1:
            raise ConfigError("max_outer_iter must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)

    def schedule(self):
        """The C values the schedule may try, in order."""
        out = []
        c = self.c_init
        for _ in range(self.max_outer_iter):
            c *= self.c_multiplier
            if c > self.c_cap * (1 + 1e-12):
                break
            out.append(c)
        return out


@dataclass(frozen=True)
class SvmpDescriptor:
    w: np.ndarray
    b: float
    c_used: float
    fraction_achieved: float
    iterations: int
    c_trace: tuple = field(default=(), repr=False)
    objective: float = float("nan")

    @property
    def hyperplane(self):
        return Hyperplane(self.w, self.b)

    def as_vector(self):
        return np.append(self.w, self.b)

    def meta(self):
        return {
            "c_used": self.c_used,
            "fraction_achieved": self.fraction_achieved,
            "iterations": self.iterations,
        }


def _frames(bag):
    return bag.features if isinstance(bag, (FeatureBag, NegativeBag)) else np.atleast_2d(
        np.asarray(bag, dtype=np.float64)
    )


def canonical_order(X):
    """Row order that depends only on the multiset of rows.

    Rows are compared as raw bytes, which is a total order on bit patterns
    (not the numeric order) and costs one ``memcmp`` per comparison instead
    of one sort pass per column.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    keys = X.view(np.dtype((np.void, X.dtype.itemsize * X.shape[1]))).ravel()
    return np.argsort(keys, kind="stable")


def classified_fraction(h: Hyperplane, bag):
    X = _frames(bag)
    if X.shape[1] != h.dim:
        raise DimensionMismatch(f"bag has dimension {X.shape[1]}, hyperplane {h.dim}")
    return float(np.count_nonzero(predict(h, X) >= 0.0)) / X.shape[0]


def compute_svmp(bag, neg, cfg: PoolConfig = PoolConfig(), *, bag_id=None) -> SvmpDescriptor:
    """Grow C geometrically until a fraction ``eta`` of the bag scores >= 0.

    All bag frames are labeled +1 and all negatives -1. Frames are put in a
    canonical order first, so the result does not depend on frame order.
    """
    cfg.validate()
    P = _frames(bag)
    N = _frames(neg)
    if P.shape[0] < 1:
        raise InsufficientData("empty bag")
    if P.shape[1] != N.shape[1]:
        raise DimensionMismatch(f"bag dimension {P.shape[1]} != negatives dimension {N.shape[1]}")
    P = P[canonical_order(P)]
    X = np.vstack([P, N])
    y = np.concatenate([np.ones(P.shape[0]), -np.ones(N.shape[0])])
    problem = SquaredHingeProblem(X, y, cfg.method)

    tried = []
    state = None
    fraction = 0.0
    for c in cfg.schedule():
        fit = problem.solve(c, cfg.tol, cfg.max_iter, init=state)
        state = problem.state
        tried.append(c)
        fraction = float(np.count_nonzero(predict(fit.hyperplane, P) >= 0.0)) / P.shape[0]
        if fraction >= cfg.eta:
            w, b = fit.hyperplane.w, fit.hyperplane.b
            if cfg.normalize:
                norm = math.hypot(float(np.linalg.norm(w)), b)
                if norm > 0:
                    w, b = w / norm, b / norm
            return SvmpDescriptor(w, b, c, fraction, len(tried), tuple(tried), fit.objective)
    raise EtaUnreachable(
        f"bag {bag_id!r}: fraction {fraction:.3f} < eta {cfg.eta} after C reached "
        f"{tried[-1] if tried else cfg.c_init:g}",
        bag_id=bag_id,
        c_last=tried[-1] if tried else None,
        fraction=fraction,
    )


def _map_ordered(fn, items, threads):
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _pool_many(bags, neg, fn, threads):
    def one(bag):
        try:
            return fn(bag)
        except EtaUnreachable as exc:
            return exc

    results = _map_ordered(one, list(bags), threads)
    failures = [r for r in results if isinstance(r, EtaUnreachable)]
    if failures:
        err = EtaUnreachable(
            f"{len(failures)} bag(s) could not reach eta: "
            + ", ".join(str(f.bag_id) for f in failures),
            bag_id=failures[0].bag_id,
            c_last=failures[0].c_last,
            fraction=failures[0].fraction,
        )
        err.failures = failures
        raise err
    return results


def pool_dataset(ds, cfg: PoolConfig = PoolConfig(), threads=1):
    """One descriptor per bag against the shared negatives, in bag order."""
    if ds.negatives is None:
        raise InsufficientData("dataset has no negative bag")
    return _pool_many(
        ds.bags, ds.negatives, lambda bag: compute_svmp(bag, ds.negatives, cfg, bag_id=bag.source_id), threads
    )


def prefix_length(n, k):
    return math.ceil(k * n / 5)


def prefix_bag(bag: FeatureBag, k):
    if not 1 <= k <= 5:
        raise ConfigError("k must lie in 1..5")
    if bag.n < 5:
        raise BagTooShort(f"bag {bag.source_id!r} has {bag.n} frames, prefixes need >= 5")
    return replace(bag, features=bag.features[: prefix_length(bag.n, k)])


def prefix_pool(bag: FeatureBag, neg, cfg: PoolConfig, k) -> SvmpDescriptor:
    """SVMP of the first ``ceil(k n / 5)`` frames (action anticipation)."""
    return compute_svmp(prefix_bag(bag, k), neg, cfg, bag_id=bag.source_id)


def average_pool(bag):
    X = _frames(bag)
    if X.shape[0] < 1:
        raise InsufficientData("empty bag")
    return X.mean(axis=0)


def max_pool(bag):
    X = _frames(bag)
    if X.shape[0] < 1:
        raise InsufficientData("empty bag")
    return X.max(axis=0)
