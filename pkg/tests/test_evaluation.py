import json

import numpy as np
import pytest

from svmpool.errors import ConfigError, InsufficientData, SizeLimitExceeded
from svmpool.evaluation import (
    FIXTURE_POOL,
    ExperimentReport,
    anticipation_curve,
    average_precision,
    compare_pooling,
    enumeration_gap,
    fixed_c_config,
    mean_average_precision,
    planted_fixture,
    split_indices,
    sweep,
    timing_curve,
)
from svmpool.features import Dataset, FeatureBag, NegativeBag
from svmpool.kernel_map import KernelMapConfig
from svmpool.pooling import PoolConfig

ONE_TEST_BAG = 1 / 18 + 1e-12  # 6 held-out bags per class


@pytest.fixture(scope="module")
def fixture0():
    return planted_fixture(0)


def test_split_is_stratified_and_disjoint():
    labels = [1] * 10 + [2] * 7 + [3] * 2
    tr, te = split_indices(labels, 4)
    assert not set(tr) & set(te)
    assert sorted(tr + te) == list(range(19))
    for cls in (1, 2, 3):
        assert any(labels[i] == cls for i in tr) and any(labels[i] == cls for i in te)
    assert split_indices(labels, 4) == (tr, te)
    assert split_indices(labels, 5) != (tr, te)
    with pytest.raises(InsufficientData):
        split_indices([1, 1, 2], 0)


def test_compare_report_is_reproducible(fixture0):
    a = compare_pooling(fixture0, FIXTURE_POOL, 0)
    b = compare_pooling(fixture0, FIXTURE_POOL, 0)
    assert a.without_timing() == b.without_timing()
    assert not set(a.config["train_ids"]) & set(a.config["test_ids"])
    assert set(a.metrics) == {"average", "max", "svmp"}
    again = ExperimentReport.from_json(a.to_json())
    assert again.without_timing() == a.without_timing() and again.schema == 1


def test_report_rejects_out_of_range_metrics():
    with pytest.raises(ValueError):
        ExperimentReport("x", {}, {"svmp": {"accuracy": 1.2}})
    ExperimentReport("x", {}, {"svmp": None, "series": [{"eta_unreachable_rate": 0.5}]})


def test_svmp_beats_max_pooling_on_fixture(fixture0):
    m = compare_pooling(fixture0, FIXTURE_POOL, 0).metrics
    assert m["svmp"]["accuracy"] >= m["max"]["accuracy"] + 0.10


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_methods_saturate_when_every_frame_is_discriminative(seed):
    m = compare_pooling(planted_fixture(seed, 1.0), FIXTURE_POOL, seed).metrics
    accs = [m[k]["accuracy"] for k in ("average", "max", "svmp")]
    assert max(accs) - min(accs) <= 0.05


def test_kernel_map_and_fusion_entries(fixture0):
    m = compare_pooling(fixture0, FIXTURE_POOL, 0, map_cfg=KernelMapConfig(), fusion="score").metrics
    assert {"nsvmp", "fusion_score"} <= set(m)
    m = compare_pooling(fixture0, FIXTURE_POOL, 0, map_cfg=KernelMapConfig(), fusion="concat").metrics
    assert "fusion_concat" in m


def test_full_prefix_point_equals_comparison(fixture0):
    curve = anticipation_curve(fixture0, FIXTURE_POOL, 0)
    assert sorted(curve.metrics["k"]) == ["1", "2", "3", "4", "5"]
    assert curve.metrics["k"]["5"] == compare_pooling(fixture0, FIXTURE_POOL, 0).metrics


def test_anticipation_advantage_largest_with_least_data(fixture0):
    k = anticipation_curve(fixture0, FIXTURE_POOL, 0).metrics["k"]
    gap = {i: k[i]["svmp"]["accuracy"] - k[i]["average"]["accuracy"] for i in ("1", "5")}
    assert gap["1"] >= gap["5"]


def test_c_sweep_has_one_point_per_value(fixture0):
    grid = [10.0**e for e in range(-4, 5)]
    series = sweep(fixture0, "c", grid, FIXTURE_POOL, 0).metrics["series"]
    assert [p["value"] for p in series] == grid
    assert all(0 <= p["svmp"]["accuracy"] <= 1 for p in series)


def test_eta_sweep_records_unreachable_points(fixture0):
    series = sweep(fixture0, "eta", [0.0, 0.5, 0.9, 1.0], FIXTURE_POOL, 0).metrics["series"]
    rates = [p["eta_unreachable_rate"] for p in series]
    assert rates[0] == 0.0 and rates[-1] > 0.0
    assert rates == sorted(rates)
    last = series[-1]
    assert last["svmp"] is None and last["failed_bags"] and "average" in last


def test_negative_bag_size_plateaus(fixture0):
    series = sweep(fixture0, "neg_bag_size", [5, 10, 30, 50], FIXTURE_POOL, 0).metrics["series"]
    acc = [p["svmp"]["accuracy"] for p in series]
    assert all(b >= a - ONE_TEST_BAG for a, b in zip(acc, acc[1:]))
    assert abs(acc[3] - acc[2]) <= ONE_TEST_BAG


def test_pos_bag_size_sweep_and_bad_grids(fixture0):
    series = sweep(fixture0, "pos_bag_size", [25, 50], FIXTURE_POOL, 0).metrics["series"]
    assert len(series) == 2
    with pytest.raises(ConfigError):
        sweep(fixture0, "c", [], FIXTURE_POOL)
    with pytest.raises(ConfigError):
        sweep(fixture0, "gamma", [1.0], FIXTURE_POOL)
    with pytest.raises(ConfigError):
        sweep(fixture0, "pos_bag_size", [51], FIXTURE_POOL)


def test_timing_curve_report():
    rep = timing_curve([20, 40], 32, PoolConfig(eta=0.2), repeats=1)
    assert set(rep.timing_ms["per_descriptor_ms"]) == {"20", "40"}
    assert rep.timing_ms["slope_ms_per_frame"] is not None
    for bad in ([], [40, 20], [0, 5]):
        with pytest.raises(ConfigError):
            timing_curve(bad, 8)


def test_enumeration_gap():
    rng = np.random.default_rng(0)
    neg = rng.standard_normal((15, 2))
    mixed = np.vstack([rng.normal(3.0, 0.2, (4, 2)), rng.standard_normal((4, 2))])
    separable = rng.normal(5.0, 0.1, (6, 2))
    assert enumeration_gap(separable, neg, 1.0) == 0.0
    # the gap vanishes once the schedule starts at a C where the bag is separated;
    # from the default tiny C, dropping frames to the negative side is cheaper
    assert abs(enumeration_gap(separable, neg, 0.5, fixed_c_config(PoolConfig(), 10.0))) <= 1e-6
    assert enumeration_gap(separable, neg, 0.5) > 0.0
    assert enumeration_gap(mixed, neg, 0.5) >= -1e-9  # diagnostic value, sign only
    with pytest.raises(SizeLimitExceeded):
        enumeration_gap(rng.standard_normal((13, 2)), neg, 0.5)


def test_average_precision_examples():
    assert average_precision([0.9, 0.8, 0.1], [True, False, True]) == pytest.approx((1 + 2 / 3) / 2)
    assert average_precision([0.1, 0.2], [False, False]) is None
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
    assert mean_average_precision(scores, [1, 2, 1], [1, 2]) == 1.0


def test_missing_negatives_or_labels():
    bags = [FeatureBag(np.ones((2, 2)) * i, 1 + i % 2, str(i)) for i in range(4)]
    with pytest.raises(InsufficientData):
        compare_pooling(Dataset(bags, None))
    unlabeled = [FeatureBag(np.ones((2, 2)), None, "u")] + bags
    with pytest.raises(InsufficientData):
        compare_pooling(Dataset(unlabeled, NegativeBag(np.zeros((2, 2)))))
