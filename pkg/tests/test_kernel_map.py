import numpy as np
import pytest

from svmpool.errors import NegativeInput
from svmpool.evaluation import compare_pooling, fixed_c_config
from svmpool.features import Dataset, FeatureBag, NegativeBag
from svmpool.kernel_map import (
    TOLERANCES,
    Kernel,
    KernelMapConfig,
    compute_nsvmp,
    embed,
    kernel_exact,
    max_normalized_error,
    shift_to_nonnegative,
    spectrum,
)
from svmpool.pooling import PoolConfig, compute_svmp


def test_chi2_closed_form_values():
    assert kernel_exact(Kernel.CHI2, [1.0], [1.0]) == 1.0
    assert kernel_exact(Kernel.CHI2, [1.0], [0.0]) == 0.0
    assert kernel_exact(Kernel.CHI2, [0.5], [0.25]) == pytest.approx(1 / 3, rel=1e-15)


@pytest.mark.parametrize("kernel", list(Kernel))
def test_self_similarity_and_homogeneity(kernel):
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.random(6), rng.random(6)
        c = rng.uniform(0.1, 10)
        assert kernel_exact(kernel, x, x) == pytest.approx(x.sum(), rel=1e-12)
        assert kernel_exact(kernel, c * x, c * y) == pytest.approx(c * kernel_exact(kernel, x, y), rel=1e-12)
        assert kernel_exact(kernel, x, y) >= 0.0


def test_negative_input_rejected():
    with pytest.raises(NegativeInput):
        kernel_exact(Kernel.CHI2, [-0.1], [1.0])
    with pytest.raises(NegativeInput):
        embed(np.array([0.3, -1e-9]))


def test_spectrum_at_zero():
    assert spectrum(Kernel.CHI2, 0.0) == 1.0
    assert spectrum(Kernel.INTERSECTION, 0.0) == pytest.approx(2 / np.pi)
    assert spectrum(Kernel.JENSEN_SHANNON, 0.0) == pytest.approx(2 / np.log(4))


def test_zero_maps_to_zero():
    assert np.array_equal(embed(np.zeros(4)), np.zeros(4 * 7))


def test_embedding_width_and_descriptor_length():
    rng = np.random.default_rng(1)
    cfg = KernelMapConfig(order=2)
    assert embed(rng.random(4), cfg).shape == (20,)
    bag = FeatureBag(rng.random((10, 4)) + 1.0, 1, "x")
    neg = NegativeBag(rng.random((10, 4)))
    d = compute_nsvmp(bag, neg, PoolConfig(eta=0.5), cfg)
    assert d.as_vector().shape == (21,)


def test_matches_scikit_learn_sampler():
    sklearn = pytest.importorskip("sklearn.kernel_approximation")
    rng = np.random.default_rng(2)
    X = rng.random((5, 3))
    ref = sklearn.AdditiveChi2Sampler(sample_steps=4, sample_interval=0.45).fit_transform(X)
    ours = embed(X, KernelMapConfig(Kernel.CHI2, 3, 0.45))
    # same components, different column layout
    np.testing.assert_allclose(ours @ ours.T, ref @ ref.T, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("key", sorted(TOLERANCES, key=str))
def test_recorded_tolerances_hold(key):
    kernel, order, period = key
    assert max_normalized_error(kernel, order, period) <= TOLERANCES[key]


def test_self_product_close_to_exact():
    rng = np.random.default_rng(3)
    cfg = KernelMapConfig()
    for x in rng.random((200, 8)):
        e = embed(x, cfg)
        assert e @ e == pytest.approx(kernel_exact(cfg.kernel, x, x), rel=0.01)


def test_embedding_homogeneity():
    rng = np.random.default_rng(4)
    cfg = KernelMapConfig()
    x, y = rng.random(8), rng.random(8)
    scale = np.sqrt(kernel_exact(cfg.kernel, x, x) * kernel_exact(cfg.kernel, y, y))
    for c in (0.5, 2.0, 7.0):
        lhs = embed(c * x, cfg) @ embed(c * y, cfg)
        assert abs(lhs - c * kernel_exact(cfg.kernel, x, y)) <= c * TOLERANCES[(Kernel.CHI2, 3, 0.45)] * scale


def test_order_zero_is_linear_svmp_on_square_roots():
    rng = np.random.default_rng(5)
    bag = rng.random((12, 3)) + 0.5
    neg = rng.random((20, 3))
    cfg = KernelMapConfig(order=0, period=0.5)
    scale = np.sqrt(cfg.period * spectrum(cfg.kernel, 0.0))
    pool = PoolConfig(eta=0.5)
    a = compute_nsvmp(bag, neg, pool, cfg)
    b = compute_svmp(scale * np.sqrt(bag), scale * np.sqrt(neg), pool)
    np.testing.assert_allclose(a.as_vector(), b.as_vector(), rtol=1e-12, atol=1e-14)


def test_shift_to_nonnegative():
    ds = Dataset([FeatureBag([[-1.0, 2.0], [0.0, 3.0]], 1, "a")], NegativeBag([[0.5, -4.0]]))
    shifted, offset = shift_to_nonnegative(ds)
    assert offset.tolist() == [-1.0, -4.0]
    assert shifted.all_features().min() == 0.0


def rings(seed, bags=15, n=20):
    rng = np.random.default_rng(seed)
    out = []
    for label, radius in ((1, 1.0), (2, 2.5)):
        for j in range(bags):
            ang = rng.uniform(0, 2 * np.pi, n)
            rad = radius + 0.15 * rng.standard_normal(n)
            out.append(FeatureBag(np.c_[rad * np.cos(ang), rad * np.sin(ang)], label, f"r{label}_{j}"))
    return Dataset(out, NegativeBag(0.3 * rng.standard_normal((50, 2))))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_rings_need_the_kernel_map(seed):
    # radius bands: no linear descriptor separates them, the chi2 map does
    cfg = fixed_c_config(PoolConfig(normalize=True), 10.0)
    m = compare_pooling(rings(seed), cfg, seed, map_cfg=KernelMapConfig(), c2=10.0).metrics
    assert m["nsvmp"]["accuracy"] > m["svmp"]["accuracy"]
