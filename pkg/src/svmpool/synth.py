"""Planted-feature synthetic datasets.

Each bag of class ``c`` holds ``round(rho * n)`` discriminative frames drawn
around the prototype ``s * e_c`` and background frames from a zero-mean
Gaussian shared by all classes. Negatives are Gaussian white noise.

Randomness comes from numpy's PCG64 generator (``numpy.random.default_rng``),
seeded from the config. Outputs are rounded to float32 precision so they
survive the binary format unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .features import Dataset, FeatureBag, NegativeBag, Origin


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 3
    bags_per_class: int = 20
    frames_per_bag: int = 50
    dim: int = 16
    discriminative_fraction: float = 0.2
    class_separation: float = 2.0
    noise_sigma: float = 0.1
    background_sigma: float = 1.0
    neg_count: int = 50
    neg_sigma: float | None = None  # defaults to background_sigma
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.num_classes > self.dim:
            raise ConfigError("prototypes sit on coordinate axes, so num_classes must be <= dim")
        if self.bags_per_class < 1 or self.frames_per_bag < 1 or self.dim < 1:
            raise ConfigError("bags_per_class, frames_per_bag and dim must be >= 1")
        if not 0.0 < self.discriminative_fraction <= 1.0:
            raise ConfigError("discriminative_fraction must lie in (0, 1]")
        if self.planted_count < 1:
            raise ConfigError("discriminative_fraction * frames_per_bag must round to >= 1")
        for name in ("class_separation", "noise_sigma", "background_sigma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.neg_count < 1:
            raise ConfigError("neg_count must be >= 1")
        if self.neg_sigma is not None and self.neg_sigma < 0:
            raise ConfigError("neg_sigma must be >= 0")
        return self

    @property
    def planted_count(self):
        return int(round(self.discriminative_fraction * self.frames_per_bag))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GroundTruthMask:
    masks: tuple  # one boolean array per bag, True = planted frame

    def to_json(self, bag_ids):
        return json.dumps(
            {"schema": 1, "masks": {bid: m.astype(int).tolist() for bid, m in zip(bag_ids, self.masks)}}
        )


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def prototypes(cfg: SynthConfig):
    """Class prototypes, row ``c - 1`` for class ``c``."""
    return cfg.class_separation * np.eye(cfg.num_classes, cfg.dim)


def _child_seed(seed, stream):
    return int(np.random.SeedSequence([int(seed) & (2**64 - 1), stream]).generate_state(1, np.uint64)[0])


def white_noise_negatives(count, dim, sigma=1.0, seed=0) -> NegativeBag:
    if count < 1 or dim < 1:
        raise ConfigError("count and dim must be >= 1")
    if sigma < 0:
        raise ConfigError("sigma must be >= 0")
    rng = np.random.default_rng(seed)
    return NegativeBag(_f32(sigma * rng.standard_normal((count, dim))), Origin.WHITE_NOISE)


def generate(cfg: SynthConfig):
    cfg.validate()
    rng = np.random.default_rng(_child_seed(cfg.seed, 0))
    mus = prototypes(cfg)
    n, p, k = cfg.frames_per_bag, cfg.dim, cfg.planted_count
    bags, masks = [], []
    for c in range(1, cfg.num_classes + 1):
        for j in range(cfg.bags_per_class):
            frames = cfg.background_sigma * rng.standard_normal((n, p))
            planted = np.sort(rng.permutation(n)[:k])
            frames[planted] = mus[c - 1] + cfg.noise_sigma * rng.standard_normal((k, p))
            mask = np.zeros(n, dtype=bool)
            mask[planted] = True
            bags.append(FeatureBag(_f32(frames), c, f"c{c}_b{j:03d}"))
            masks.append(mask)
    sigma_w = cfg.background_sigma if cfg.neg_sigma is None else cfg.neg_sigma
    negatives = white_noise_negatives(cfg.neg_count, p, sigma_w, _child_seed(cfg.seed, 1))
    return Dataset(bags, negatives), GroundTruthMask(tuple(masks))
